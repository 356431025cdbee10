//! Time-domain integration of the equivalent circuit.
//!
//! Unknowns are the FG charge (scaled to volts by the total FG capacitance)
//! and the voltage of every floating terminal. Each is governed by
//! `dQ/dt = I`: for the floating gate `Q` is the stored charge and `I` the
//! gate current; for a terminal node `Q` is the charge on its plates of the
//! junction and coupling capacitors and `I` the channel plus junction
//! current into it. Writing the balance in charge form makes the
//! displacement current through every capacitor exact, including the part
//! driven by the applied waveforms.
//!
//! Node charges use variable-step BDF2 with a backward-Euler restart at
//! every waveform corner; their local error comes from the distance
//! between the Newton solution and a polynomial predictor. The FG charge,
//! which is slow, uses the trapezoidal rule on the same steps, so the
//! stored charge is exactly the quadrature of the gate current at the
//! accepted points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, DeviceState};
use crate::error::{Error, Result};
use crate::network::{solve_dc, BiasCondition, Branches, TerminalBias};
use crate::waveform::{Drive, TerminalDrives};

/// Step and tolerance control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientOptions {
    pub rtol: f64,
    /// Absolute tolerance on node voltages (V).
    pub atol: f64,
    /// Absolute tolerance on the FG charge (C).
    pub atol_charge: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// First step after t = 0 and after every waveform corner.
    pub h_start: f64,
    pub max_newton: usize,
    /// Trace points kept per waveform segment. Accepted steps beyond this
    /// are thinned uniformly.
    pub max_points: usize,
    /// Multiplies every capacitor in the node charge balances. The FG
    /// coupling ratios are unaffected, so `0` gives a quasi-static network
    /// with no displacement current at all.
    pub capacitance_scale: f64,
}

impl Default for TransientOptions {
    fn default() -> Self {
        TransientOptions {
            rtol: 1e-6,
            atol: 1e-6,
            atol_charge: 1e-21,
            h_min: 1e-12,
            h_max: 1e-5,
            h_start: 1e-11,
            max_newton: 10,
            max_points: 10_000,
            capacitance_scale: 1.0,
        }
    }
}

impl TransientOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.atol_charge > 0.0
            && self.h_min > 0.0
            && self.h_start >= self.h_min
            && self.h_max >= self.h_start
            && self.max_newton >= 2
            && self.max_points >= 2
            && self.capacitance_scale >= 0.0
            && self.capacitance_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid transient options {self:?}")))
        }
    }
}

/// Sampled waveforms of one simulation. Terminal currents are positive
/// into the device; a floating terminal carries none.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    pub time: Vec<f64>,
    pub v_d: Vec<f64>,
    pub v_sr: Vec<f64>,
    pub v_si: Vec<f64>,
    pub v_fg: Vec<f64>,
    pub i_d: Vec<f64>,
    pub i_sr: Vec<f64>,
    pub i_si: Vec<f64>,
    pub q_fg: Vec<f64>,
    /// dQ_FG/dt.
    pub gate_current: Vec<f64>,
    pub stats: StepStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_failures: usize,
}

impl TransientTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Trapezoidal integral of the gate current over the trace.
    pub fn integrated_gate_charge(&self) -> f64 {
        self.time
            .windows(2)
            .zip(self.gate_current.windows(2))
            .map(|(t, g)| 0.5 * (t[1] - t[0]) * (g[0] + g[1]))
            .sum()
    }

    pub fn final_q_fg(&self) -> Option<f64> {
        self.q_fg.last().copied()
    }

    fn push(&mut self, s: &Sample) {
        self.time.push(s.t);
        self.v_d.push(s.v[0]);
        self.v_sr.push(s.v[1]);
        self.v_si.push(s.v[2]);
        self.v_fg.push(s.v_fg);
        self.i_d.push(s.i_ext[0]);
        self.i_sr.push(s.i_ext[1]);
        self.i_si.push(s.i_ext[2]);
        self.q_fg.push(s.q_fg);
        self.gate_current.push(s.gate);
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    t: f64,
    v: [f64; 3],
    v_fg: f64,
    i_ext: [f64; 3],
    q_fg: f64,
    gate: f64,
}

/// Solution point kept for the multistep formula.
#[derive(Debug, Clone)]
struct Point {
    t: f64,
    x: DVector<f64>,
    /// FG charge followed by the three node charges.
    charge: [f64; 4],
    gate: f64,
}

struct System<'a> {
    p: &'a DeviceParams,
    st: &'a DeviceState,
    drives: [Drive; 3],
    floating: Vec<usize>,
    scale: f64,
    c_t: f64,
    /// Junction plus coupling capacitance of each node.
    c_node: [f64; 3],
    c_couple: [f64; 3],
    c_junction: [f64; 3],
}

impl<'a> System<'a> {
    fn new(p: &'a DeviceParams, st: &'a DeviceState, drives: &TerminalDrives, scale: f64) -> Self {
        let drives = drives.as_array();
        let floating = (0..3).filter(|&k| drives[k].is_floating()).collect();
        let c_couple = [p.c_gd, p.c_gsr, p.c_gsi];
        let c_junction = [p.c_db, p.c_srb, p.c_sib];
        System {
            p,
            st,
            drives,
            floating,
            scale,
            c_t: p.c_total(),
            c_node: [0, 1, 2].map(|k| c_couple[k] + c_junction[k]),
            c_couple,
            c_junction,
        }
    }

    fn dim(&self) -> usize {
        1 + self.floating.len()
    }

    fn voltages(&self, x: &DVector<f64>, t: f64) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (k, d) in self.drives.iter().enumerate() {
            if let Some(u) = d.value(t) {
                v[k] = u;
            }
        }
        for (j, &k) in self.floating.iter().enumerate() {
            v[k] = x[1 + j];
        }
        v
    }

    fn charges(&self, q: f64, v: [f64; 3], v_fg: f64) -> [f64; 4] {
        let mut c = [q, 0.0, 0.0, 0.0];
        for k in 0..3 {
            c[k + 1] =
                self.scale * (self.c_junction[k] * v[k] + self.c_couple[k] * (v[k] - v_fg));
        }
        c
    }

    /// Charges, flows into each charge and voltages at (x, t).
    fn eval(&self, x: &DVector<f64>, t: f64) -> ([f64; 4], [f64; 4], [f64; 3], f64) {
        let q = x[0] * self.c_t;
        let v = self.voltages(x, t);
        let b = Branches::evaluate(self.p, q, v);
        let gate = b.gate_current(self.p, self.st, v[2]);
        let inflow = b.inflow();
        let flow = [gate, inflow[0], inflow[1], inflow[2]];
        (self.charges(q, v, b.v_fg), flow, v, b.v_fg)
    }

    fn point(&self, x: DVector<f64>, t: f64) -> Point {
        let (charge, flow, ..) = self.eval(&x, t);
        Point {
            t,
            x,
            charge,
            gate: flow[0],
        }
    }

    /// Error scale of unknown i: the FG charge is held in volts across c_t.
    fn tolerance(&self, x: &DVector<f64>, i: usize, opts: &TransientOptions) -> f64 {
        let atol = if i == 0 { opts.atol_charge / self.c_t } else { opts.atol };
        atol + opts.rtol * x[i].abs()
    }

    /// Per-unknown charge index and normalising capacitance.
    fn slot(&self, i: usize) -> (usize, f64) {
        if i == 0 {
            (0, self.c_t)
        } else {
            let k = self.floating[i - 1];
            (k + 1, self.c_node[k])
        }
    }

    /// Step residuals in volts. Nodes: `a0·Q(x) + hist − h·I(x)` over a0
    /// and the node capacitance. FG charge: the trapezoidal rule.
    fn residual(&self, x: &DVector<f64>, t: f64, h: f64, f: &Formula) -> DVector<f64> {
        let (charge, flow, ..) = self.eval(x, t);
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                let (c, norm) = self.slot(i);
                if c == 0 {
                    (charge[0] - f.q_prev - 0.5 * h * (f.gate_prev + flow[0])) / norm
                } else {
                    (f.a0 * charge[c] + f.hist[c] - h * flow[c]) / (f.a0 * norm)
                }
            }),
        )
    }

    fn sample(&self, pt: &Point, f: Option<(&Formula, f64)>) -> Sample {
        let (charge, flow, v, v_fg) = self.eval(&pt.x, pt.t);
        let mut i_ext = [0.0; 3];
        for k in 0..3 {
            if self.drives[k].is_floating() {
                continue;
            }
            let dq = match f {
                Some((f, h)) => (f.a0 * charge[k + 1] + f.hist[k + 1]) / h,
                None => 0.0,
            };
            i_ext[k] = dq - flow[k + 1];
        }
        Sample {
            t: pt.t,
            v,
            v_fg,
            i_ext,
            q_fg: charge[0],
            gate: flow[0],
        }
    }
}

/// Node derivative formula `dQ/dt ≈ (a0·Q_{n+1} + hist)/h`, plus the
/// previous FG charge and gate current for the trapezoidal rule.
struct Formula {
    a0: f64,
    hist: [f64; 4],
    q_prev: f64,
    gate_prev: f64,
}

impl Formula {
    fn euler(prev: &Point) -> Self {
        Formula {
            a0: 1.0,
            hist: prev.charge.map(|c| -c),
            q_prev: prev.charge[0],
            gate_prev: prev.gate,
        }
    }

    fn bdf2(prev: &Point, prev2: &Point, h: f64) -> Self {
        let w = h / (prev.t - prev2.t);
        let mut hist = [0.0; 4];
        for (i, hi) in hist.iter_mut().enumerate() {
            *hi = -(1.0 + w) * prev.charge[i] + w * w / (1.0 + w) * prev2.charge[i];
        }
        Formula {
            a0: (1.0 + 2.0 * w) / (1.0 + w),
            hist,
            q_prev: prev.charge[0],
            gate_prev: prev.gate,
        }
    }
}

enum Newton {
    Converged(DVector<f64>),
    Failed,
}

fn newton(
    sys: &System,
    x0: &DVector<f64>,
    t: f64,
    h: f64,
    f: &Formula,
    opts: &TransientOptions,
) -> Newton {
    let n = sys.dim();
    let mut x = x0.clone();
    for _ in 0..opts.max_newton {
        let r = sys.residual(&x, t, h, f);
        if r.iter().any(|v| !v.is_finite()) {
            return Newton::Failed;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let d = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += d;
            xm[j] -= d;
            let col = (sys.residual(&xp, t, h, f) - sys.residual(&xm, t, h, f)) / (2.0 * d);
            jac.set_column(j, &col);
        }
        let Some(mut dx) = jac.lu().solve(&(-r)) else {
            return Newton::Failed;
        };
        let big = dx.amax();
        if !big.is_finite() {
            return Newton::Failed;
        }
        if big > 0.5 {
            dx *= 0.5 / big;
        }
        x += &dx;
        // The FG charge is tested per unit time (see step_control), so its
        // Newton error must sit well below the node voltages'.
        let small = (0..n).all(|i| {
            let frac = if i == 0 { 1e-3 / EPUS_CAP } else { 1e-3 };
            let lim = frac * sys.tolerance(&x, i, opts);
            dx[i].abs() <= lim.max(4.0 * f64::EPSILON * x[i].abs())
        });
        if small {
            return Newton::Converged(x);
        }
    }
    Newton::Failed
}

fn weighted(sys: &System, err: &DVector<f64>, x: &DVector<f64>, opts: &TransientOptions, i: usize) -> f64 {
    err[i].abs() / sys.tolerance(x, i, opts)
}

/// Steps shorter than span / EPUS_CAP are held to tolerance / EPUS_CAP
/// instead, which keeps the requirement above rounding level at corners.
const EPUS_CAP: f64 = 1e4;

/// Step-size factor from the error estimates and whether the step passes.
///
/// Node voltages are held to the tolerance per step. The FG charge is
/// held to it per unit of simulated time (error per unit step), so the
/// accumulated charge error over the run stays within the tolerance: a
/// pulse train's outcome is decided by the sum of many small steps.
fn step_control(
    sys: &System,
    err: &DVector<f64>,
    x: &DVector<f64>,
    opts: &TransientOptions,
    order: usize,
    step: f64,
    span: f64,
) -> (bool, f64) {
    let e_q = weighted(sys, err, x, opts, 0) * (span / step).min(EPUS_CAP);
    let e_v = (1..err.len())
        .map(|i| weighted(sys, err, x, opts, i))
        .fold(0.0, f64::max);
    // Trapezoidal error ~ h^3, per unit step ~ h^2.
    let f_q = 0.9 * e_q.max(1e-10).powf(-0.5);
    let f_v = 0.9 * e_v.max(1e-10).powf(-1.0 / (order as f64 + 1.0));
    (e_q <= 1.0 && e_v <= 1.0, f_q.min(f_v))
}

/// Trapezoidal local error `h^3/12 · q'''`, with q''' from the second
/// divided difference of the gate current over the last three points.
fn trapezoid_error(a: &Point, b: &Point, c: &Point) -> f64 {
    let d1 = (b.gate - a.gate) / (b.t - a.t);
    let d2 = (c.gate - b.gate) / (c.t - b.t);
    let q3 = 2.0 * (d2 - d1) / (c.t - a.t);
    let h = c.t - b.t;
    h * h * h / 12.0 * q3
}

/// Integrate from t = 0 to `t_end`, starting from the DC operating point
/// of the bias applied at t = 0. On
/// success `st.q_fg` holds the final FG charge.
pub fn simulate(
    p: &DeviceParams,
    st: &mut DeviceState,
    drives: &TerminalDrives,
    t_end: f64,
    opts: &TransientOptions,
) -> Result<TransientTrace> {
    p.validate()?;
    opts.validate()?;
    for d in drives.as_array() {
        if let Drive::Pulse(w) = d {
            w.validate()?;
        }
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Precondition(format!("t_end must be > 0 (got {t_end})")));
    }
    if drives.as_array().iter().all(Drive::is_floating) {
        return Err(Error::IllPosedBias("every terminal is floating"));
    }

    let state = *st;
    let sys = System::new(p, &state, drives, opts.capacitance_scale);
    let mut corners: Vec<f64> = drives
        .breakpoints()
        .into_iter()
        .filter(|&b| b > 0.0 && b < t_end)
        .collect();
    corners.push(t_end);

    // Floating nodes start at the operating point of the t = 0 bias.
    let bias = BiasCondition {
        d: drive_bias(drives.d),
        sr: drive_bias(drives.sr),
        si: drive_bias(drives.si),
    };
    let op = solve_dc(p, &state, &bias)?;
    let v0 = op.voltages();
    let mut x0 = DVector::zeros(sys.dim());
    x0[0] = state.q_fg / sys.c_t;
    for (j, &k) in sys.floating.iter().enumerate() {
        x0[1 + j] = v0[k];
    }
    let start = sys.point(x0, 0.0);

    let mut trace = TransientTrace::default();
    let mut segment = vec![sys.sample(&start, None)];
    let mut hist: Vec<Point> = vec![start];
    let mut h = opts.h_start;
    let mut stats = StepStats::default();
    let mut corner = 0;

    while corner < corners.len() {
        let t_seg = corners[corner];
        let prev = hist.last().unwrap().clone();
        let t_prev = prev.t;
        // Land on the corner without leaving a sliver behind.
        let remaining = t_seg - t_prev;
        let step = if h >= remaining {
            remaining
        } else if 2.0 * h > remaining {
            0.5 * remaining
        } else {
            h
        };
        let t = if step == remaining {
            t_seg
        } else {
            t_prev + step
        };

        // The order follows the number of points since the last corner.
        let order = hist.len().min(3) - 1;
        let formula = match order {
            0 => Formula::euler(&prev),
            1 => Formula::euler(&prev),
            _ => Formula::bdf2(&prev, &hist[hist.len() - 2], step),
        };
        let predictor = match order {
            0 => prev.x.clone(),
            1 => {
                let p1 = &hist[hist.len() - 2];
                let slope = (&prev.x - &p1.x) / (prev.t - p1.t);
                &prev.x + slope * step
            }
            _ => {
                let (a, b) = (&hist[hist.len() - 3], &hist[hist.len() - 2]);
                lagrange2(a, b, &prev, t)
            }
        };

        let x = match newton(&sys, &predictor, t, step, &formula, opts) {
            Newton::Converged(x) => x,
            Newton::Failed => {
                stats.newton_failures += 1;
                h = step / 4.0;
                if h < opts.h_min {
                    return Err(Error::ImplicitSolve { time: t_prev });
                }
                continue;
            }
        };

        let factor = match order {
            0 => 0.0,
            1 => {
                let h1 = prev.t - hist[hist.len() - 2].t;
                step / (2.0 * step + h1)
            }
            _ => 2.0 / 11.0,
        };
        let pt = sys.point(x, t);
        let (ok, grow) = if order == 0 {
            (true, 1.0)
        } else {
            let mut est = (&pt.x - &predictor) * factor;
            est[0] = trapezoid_error(&hist[hist.len() - 2], &prev, &pt) / sys.c_t;
            step_control(&sys, &est, &pt.x, opts, order, step, t_end)
        };
        if !ok {
            stats.rejected += 1;
            h = step * grow.max(0.2);
            if h < opts.h_min {
                return Err(Error::StepUnderflow { time: t_prev });
            }
            continue;
        }

        stats.accepted += 1;
        segment.push(sys.sample(&pt, Some((&formula, step))));
        hist.push(pt);
        if hist.len() > 3 {
            hist.remove(0);
        }
        h = (step * grow.clamp(0.2, 2.0)).min(opts.h_max);

        if t == t_seg {
            flush(&mut trace, &mut segment, opts.max_points);
            corner += 1;
            let last = hist.pop().unwrap();
            hist.clear();
            hist.push(last);
            h = opts.h_start;
        }
    }

    let q_end = hist.last().unwrap().charge[0];
    st.q_fg = q_end;
    trace.stats = stats;
    Ok(trace)
}

fn drive_bias(d: Drive) -> TerminalBias {
    match d.value(0.0) {
        Some(v) => TerminalBias::Driven(v),
        None => TerminalBias::Floating,
    }
}

/// Quadratic through three points, evaluated at `t`.
fn lagrange2(a: &Point, b: &Point, c: &Point, t: f64) -> DVector<f64> {
    let la = (t - b.t) * (t - c.t) / ((a.t - b.t) * (a.t - c.t));
    let lb = (t - a.t) * (t - c.t) / ((b.t - a.t) * (b.t - c.t));
    let lc = (t - a.t) * (t - b.t) / ((c.t - a.t) * (c.t - b.t));
    &a.x * la + &b.x * lb + &c.x * lc
}

/// Move a finished segment into the trace, thinning it to `max_points`.
/// Both segment ends are always kept; the first sample of every segment
/// after the first repeats the previous end and is dropped.
fn flush(trace: &mut TransientTrace, segment: &mut Vec<Sample>, max_points: usize) {
    let n = segment.len();
    let skip_first = !trace.is_empty();
    let keep = |i: usize| -> bool {
        if n <= max_points || i == 0 || i + 1 == n {
            return true;
        }
        // Evenly spaced indices, at most max_points of them.
        let stride = (n - 1) as f64 / (max_points - 1) as f64;
        let k = (i as f64 / stride).floor();
        (k * stride).ceil() as usize == i
    };
    for (i, s) in segment.iter().enumerate() {
        if (i == 0 && skip_first) || !keep(i) {
            continue;
        }
        trace.push(s);
    }
    let last = *segment.last().unwrap();
    segment.clear();
    segment.push(last);
}
