//! DC operating point of the two-transistor equivalent circuit.
//!
//! Topology: drain D is common to both channels; the read channel runs
//! D↔SR and the injection channel D↔SI, both gated by the floating gate.
//! Every terminal has a p-n junction to the grounded substrate. At DC the
//! capacitors carry no current, so the floating gate is fixed by its stored
//! charge (see [`fg_voltage`]) and each floating terminal settles where its
//! channel and junction currents cancel.
//!
//! The literal sub/above-threshold combine is exactly zero at threshold, so
//! a floating node charging through a channel can come to rest at that
//! channel's threshold point as well as at the leakage balance further out.
//! The solver therefore returns the equilibrium a discharged node reaches
//! first when the bias is applied: it brackets the first KCL sign change
//! walking away from 0 V in the direction of the initial net current, then
//! refines with safeguarded Newton. With two floating nodes the second node
//! is solved that way inside the outer search over the first.

use serde::{Deserialize, Serialize};

use crate::device::{channel_current, fg_charge_rate, fg_voltage, DeviceParams, DeviceState};
use crate::error::{Error, Result};

/// The three external terminals. Index order D, SR, SI is used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Drain,
    ReadSource,
    InjSource,
}

impl Terminal {
    pub const ALL: [Terminal; 3] = [Terminal::Drain, Terminal::ReadSource, Terminal::InjSource];

    pub fn index(self) -> usize {
        match self {
            Terminal::Drain => 0,
            Terminal::ReadSource => 1,
            Terminal::InjSource => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Terminal::Drain => "D",
            Terminal::ReadSource => "SR",
            Terminal::InjSource => "SI",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TerminalBias {
    Driven(f64),
    Floating,
}

impl TerminalBias {
    pub fn voltage(self) -> Option<f64> {
        match self {
            TerminalBias::Driven(v) => Some(v),
            TerminalBias::Floating => None,
        }
    }

    pub fn is_floating(self) -> bool {
        matches!(self, TerminalBias::Floating)
    }
}

/// Per-terminal assignment; the substrate is always ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCondition {
    pub d: TerminalBias,
    pub sr: TerminalBias,
    pub si: TerminalBias,
}

impl BiasCondition {
    pub fn driven(v_d: f64, v_sr: f64, v_si: f64) -> Self {
        BiasCondition {
            d: TerminalBias::Driven(v_d),
            sr: TerminalBias::Driven(v_sr),
            si: TerminalBias::Driven(v_si),
        }
    }

    pub fn get(&self, t: Terminal) -> TerminalBias {
        match t {
            Terminal::Drain => self.d,
            Terminal::ReadSource => self.sr,
            Terminal::InjSource => self.si,
        }
    }

    pub fn floating(&self) -> Vec<Terminal> {
        Terminal::ALL
            .into_iter()
            .filter(|&t| self.get(t).is_floating())
            .collect()
    }
}

/// Rows of the operation-configuration table.
///
/// Entries listed as "Floating/GND" default to floating; callers can edit the
/// returned [`BiasCondition`] to ground them instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OperationMode {
    /// 1: read, both sources grounded.
    Read,
    /// 2: read with SI floating.
    ReadSiFloating,
    /// 3: two-terminal program, both sources grounded.
    Program,
    /// 4: program with SR floating.
    ProgramSrFloating,
    /// 5: program inhibit, both sources floating.
    ProgramInhibit,
    /// 6: two-terminal erase, voltage on both sources.
    Erase,
    /// 7: erase on SI only.
    EraseSiOnly,
    /// 8: erase inhibit, drain held at `v_drain`.
    EraseInhibit { v_drain: f64 },
}

impl OperationMode {
    pub fn row(self) -> u8 {
        match self {
            OperationMode::Read => 1,
            OperationMode::ReadSiFloating => 2,
            OperationMode::Program => 3,
            OperationMode::ProgramSrFloating => 4,
            OperationMode::ProgramInhibit => 5,
            OperationMode::Erase => 6,
            OperationMode::EraseSiOnly => 7,
            OperationMode::EraseInhibit { .. } => 8,
        }
    }

    /// Row number to mode. Row 8 needs its inhibit voltage.
    pub fn from_row(row: u8, v_inhibit: Option<f64>) -> Result<Self> {
        Ok(match row {
            1 => OperationMode::Read,
            2 => OperationMode::ReadSiFloating,
            3 => OperationMode::Program,
            4 => OperationMode::ProgramSrFloating,
            5 => OperationMode::ProgramInhibit,
            6 => OperationMode::Erase,
            7 => OperationMode::EraseSiOnly,
            8 => OperationMode::EraseInhibit {
                v_drain: v_inhibit.ok_or_else(|| {
                    Error::Precondition("mode 8 requires an inhibit drain voltage".into())
                })?,
            },
            _ => return Err(Error::Precondition(format!("no operation mode {row}"))),
        })
    }

    pub fn is_read(self) -> bool {
        matches!(self, OperationMode::Read | OperationMode::ReadSiFloating)
    }

    pub fn is_program(self) -> bool {
        matches!(
            self,
            OperationMode::Program | OperationMode::ProgramSrFloating | OperationMode::ProgramInhibit
        )
    }

    pub fn is_erase(self) -> bool {
        matches!(
            self,
            OperationMode::Erase | OperationMode::EraseSiOnly | OperationMode::EraseInhibit { .. }
        )
    }

    /// The terminal that carries the operation voltage.
    pub fn pulsed_terminal(self) -> Terminal {
        if self.is_erase() {
            Terminal::InjSource
        } else {
            Terminal::Drain
        }
    }

    /// Check `v` against the voltage range of this row.
    pub fn check_voltage(self, v: f64) -> Result<()> {
        let row = self.row();
        let (ok, constraint) = if self.is_read() {
            ((0.0..2.5).contains(&v), "0 <= V_R < 2.5 V")
        } else if self.is_program() {
            (v > 4.0, "V_P > 4 V")
        } else {
            (v > 7.0, "V_E > 7 V")
        };
        if !ok {
            return Err(Error::BiasRange {
                row,
                constraint,
                value: v,
            });
        }
        if let OperationMode::EraseInhibit { v_drain } = self {
            if !(v_drain > 1.0 && v_drain < 2.0) {
                return Err(Error::BiasRange {
                    row,
                    constraint: "1 V < V_D < 2 V",
                    value: v_drain,
                });
            }
        }
        Ok(())
    }

    /// Terminal assignment with `v` on the operated terminal and everything
    /// else at its resting level (0 V or floating).
    pub fn bias_with(self, v: f64) -> BiasCondition {
        use TerminalBias::{Driven, Floating};
        let (d, sr, si) = match self {
            OperationMode::Read | OperationMode::Program => (Driven(v), Driven(0.0), Driven(0.0)),
            OperationMode::ReadSiFloating => (Driven(v), Driven(0.0), Floating),
            OperationMode::ProgramSrFloating => (Driven(v), Floating, Driven(0.0)),
            OperationMode::ProgramInhibit => (Driven(v), Floating, Floating),
            OperationMode::Erase => (Floating, Driven(v), Driven(v)),
            OperationMode::EraseSiOnly => (Floating, Floating, Driven(v)),
            OperationMode::EraseInhibit { v_drain } => (Driven(v_drain), Floating, Driven(v)),
        };
        BiasCondition { d, sr, si }
    }
}

/// Validated bias for a table row.
pub fn bias_for_mode(mode: OperationMode, v: f64) -> Result<BiasCondition> {
    mode.check_voltage(v)?;
    Ok(mode.bias_with(v))
}

/// Junction current flowing from the substrate into a terminal at `v_terminal`.
pub fn diode_current(p: &DeviceParams, v_terminal: f64) -> f64 {
    let nvt = p.diode_n * p.thermal_voltage();
    p.diode_i_sat * (-v_terminal / nvt).exp_m1()
}

/// Every branch current at a given set of terminal voltages and FG charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branches {
    pub v_fg: f64,
    /// Read channel, D to SR.
    pub i_read: f64,
    /// Injection channel, D to SI.
    pub i_inj: f64,
    /// Junction currents from substrate into D, SR, SI.
    pub diode: [f64; 3],
}

impl Branches {
    pub fn evaluate(p: &DeviceParams, q_fg: f64, v: [f64; 3]) -> Self {
        let [v_d, v_sr, v_si] = v;
        let v_fg = fg_voltage(p, q_fg, v_sr, v_d, v_si);
        let t = p.temperature;
        Branches {
            v_fg,
            i_read: channel_current(&p.read, v_fg, v_d, v_sr, t, p.m_smooth),
            i_inj: channel_current(&p.inj, v_fg, v_d, v_si, t, p.m_smooth),
            diode: [
                diode_current(p, v_d),
                diode_current(p, v_sr),
                diode_current(p, v_si),
            ],
        }
    }

    /// Net current flowing into each node from the device internals.
    pub fn inflow(&self) -> [f64; 3] {
        [
            -self.i_read - self.i_inj + self.diode[0],
            self.i_read + self.diode[1],
            self.i_inj + self.diode[2],
        ]
    }

    /// dQ_FG/dt at this operating point. Hole injection is driven by the
    /// SI-to-FG potential difference.
    pub fn gate_current(&self, p: &DeviceParams, st: &DeviceState, v_si: f64) -> f64 {
        fg_charge_rate(p, st, self.i_inj.abs(), self.v_fg, v_si - self.v_fg)
    }
}

/// Voltages of node `node` at which one of its channels has zero gate
/// overdrive or zero drain-source voltage, all other nodes held at `v`.
pub fn zero_drive_points(p: &DeviceParams, q_fg: f64, v: [f64; 3], node: usize) -> Vec<f64> {
    let coupling = [p.c_gd, p.c_gsr, p.c_gsi][node] / p.c_total();
    let mut w = v;
    w[node] = 0.0;
    let base = fg_voltage(p, q_fg, w[1], w[0], w[2]);
    let channels: &[(usize, f64)] = match node {
        0 => &[(1, p.read.v_th), (2, p.inj.v_th)],
        1 => &[(0, p.read.v_th)],
        _ => &[(0, p.inj.v_th)],
    };
    let mut out = Vec::new();
    for &(other, v_th) in channels {
        let y = v[other];
        // node as source
        let xs = (base - v_th) / (1.0 - coupling);
        if xs < y {
            out.push(xs);
        }
        // node as drain
        let xd = (y + v_th - base) / coupling;
        if xd > y {
            out.push(xd);
        }
        out.push(y);
    }
    out
}

/// Solved node voltages and branch currents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v_fg: f64,
    pub v_d: f64,
    pub v_sr: f64,
    pub v_si: f64,
    pub i_read_ch: f64,
    pub i_inj_ch: f64,
    pub i_d_diode: f64,
    pub i_sr_diode: f64,
    pub i_si_diode: f64,
    /// External currents into the device at each terminal.
    pub i_d_ext: f64,
    pub i_sr_ext: f64,
    pub i_si_ext: f64,
    /// Largest |net current| left at a floating node.
    pub kcl_residual: f64,
}

impl OperatingPoint {
    fn from_branches(b: &Branches, v: [f64; 3], floating: &[usize]) -> Self {
        let inflow = b.inflow();
        let residual = floating
            .iter()
            .map(|&k| inflow[k].abs())
            .fold(0.0, f64::max);
        let ext = |k: usize| {
            if floating.contains(&k) {
                0.0
            } else {
                -inflow[k]
            }
        };
        OperatingPoint {
            v_fg: b.v_fg,
            v_d: v[0],
            v_sr: v[1],
            v_si: v[2],
            i_read_ch: b.i_read,
            i_inj_ch: b.i_inj,
            i_d_diode: b.diode[0],
            i_sr_diode: b.diode[1],
            i_si_diode: b.diode[2],
            i_d_ext: ext(0),
            i_sr_ext: ext(1),
            i_si_ext: ext(2),
            kcl_residual: residual,
        }
    }

    pub fn voltages(&self) -> [f64; 3] {
        [self.v_d, self.v_sr, self.v_si]
    }

    /// Current leaving the device through SR into the external circuit.
    pub fn sr_current(&self) -> f64 {
        -self.i_sr_ext
    }
}

/// Floating-node DC solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcSolver {
    /// Required |net current| at floating nodes (A).
    pub tol_kcl: f64,
    /// Required width of the bracket around a floating-node voltage (V).
    pub tol_v: f64,
    /// Newton iterations per bracket refinement before bisecting.
    pub max_newton: usize,
    /// Central-difference step for the Newton slope (V).
    pub fd_step: f64,
    /// Admissible floating-node voltages (V).
    pub bracket: (f64, f64),
    /// Coarse scan step when searching for the first bracket (V).
    pub scan_step: f64,
    pub max_iter: usize,
}

impl Default for DcSolver {
    fn default() -> Self {
        DcSolver {
            tol_kcl: 1e-15,
            tol_v: 1e-13,
            max_newton: 60,
            fd_step: 1e-3,
            bracket: (-1.0, 12.0),
            scan_step: 0.05,
            max_iter: 400,
        }
    }
}

/// Solve with the default solver settings.
pub fn solve_dc(p: &DeviceParams, st: &DeviceState, bias: &BiasCondition) -> Result<OperatingPoint> {
    DcSolver::default().solve(p, st, bias)
}

/// SR terminal current of a read in mode 1 or 2.
pub fn read_current(p: &DeviceParams, st: &DeviceState, v_read: f64, mode: OperationMode) -> Result<f64> {
    if !mode.is_read() {
        return Err(Error::Precondition(format!(
            "read_current needs mode 1 or 2, got {}",
            mode.row()
        )));
    }
    let op = solve_dc(p, st, &bias_for_mode(mode, v_read)?)?;
    Ok(op.sr_current())
}

impl DcSolver {
    pub fn solve(&self, p: &DeviceParams, st: &DeviceState, bias: &BiasCondition) -> Result<OperatingPoint> {
        let floating: Vec<usize> = bias.floating().into_iter().map(Terminal::index).collect();
        let mut v = [0.0; 3];
        for t in Terminal::ALL {
            if let Some(x) = bias.get(t).voltage() {
                v[t.index()] = x;
            }
        }
        let q = st.q_fg;
        match floating.as_slice() {
            [] => {}
            [a] => {
                let a = *a;
                let probes = zero_drive_points(p, q, v, a);
                v[a] = self.settle(
                    |x| {
                        let mut w = v;
                        w[a] = x;
                        Branches::evaluate(p, q, w).inflow()[a]
                    },
                    &probes,
                )?;
            }
            [a, b] => {
                let (a, b) = (*a, *b);
                let fixed = v;
                let inner = |xa: f64| -> Result<f64> {
                    let mut w = fixed;
                    w[a] = xa;
                    let probes = zero_drive_points(p, q, w, b);
                    self.settle(
                        |xb| {
                            let mut w = w;
                            w[b] = xb;
                            Branches::evaluate(p, q, w).inflow()[b]
                        },
                        &probes,
                    )
                };
                // Zero-drive points of the outer node move with the inner
                // node; a few fixed-point passes pin them down.
                let mut probes = Vec::new();
                for seed in zero_drive_points(p, q, v, a) {
                    let mut x = seed;
                    for _ in 0..10 {
                        let mut w = v;
                        w[a] = x;
                        w[b] = match inner(x) {
                            Ok(xb) => xb,
                            Err(_) => break,
                        };
                        let moved = zero_drive_points(p, q, w, a);
                        match moved.iter().min_by(|m, n| (*m - x).abs().total_cmp(&(*n - x).abs())) {
                            Some(&m) => x = m,
                            None => break,
                        }
                    }
                    probes.push(x);
                }
                let mut failure = None;
                let va = self.settle(
                    |xa| match inner(xa) {
                        Ok(xb) => {
                            let mut w = v;
                            w[a] = xa;
                            w[b] = xb;
                            Branches::evaluate(p, q, w).inflow()[a]
                        }
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    },
                    &probes,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                let va = va?;
                let vb = inner(va)?;
                v[a] = va;
                v[b] = vb;
            }
            _ => return Err(Error::IllPosedBias("all terminals floating")),
        }
        let br = Branches::evaluate(p, q, v);
        let op = OperatingPoint::from_branches(&br, v, &floating);
        if !(op.kcl_residual <= self.tol_kcl) {
            return Err(Error::NoConvergence {
                residual: op.kcl_residual,
            });
        }
        Ok(op)
    }

    /// Voltage at which a discharged node driven by `inflow` comes to rest:
    /// the first sign change of `inflow` walking from 0 V in the direction
    /// of the initial current, refined to `tol_kcl`.
    ///
    /// `probes` are voltages the walk must visit; passing the channel
    /// zero-drive points guarantees the narrow zero-current notches of the
    /// combine are not stepped over.
    pub fn settle<F: FnMut(f64) -> f64>(&self, mut inflow: F, probes: &[f64]) -> Result<f64> {
        let (lo_lim, hi_lim) = self.bracket;
        let start = 0.0f64.clamp(lo_lim, hi_lim);
        let f0 = inflow(start);
        if f0.is_nan() {
            return Err(Error::NoConvergence { residual: f64::NAN });
        }
        if f0 == 0.0 {
            return Ok(start);
        }
        let dir = f0.signum();
        let limit = if dir > 0.0 { hi_lim } else { lo_lim };
        let mut ahead: Vec<f64> = probes
            .iter()
            .copied()
            .filter(|x| x.is_finite() && (x - start) * dir > 0.0 && (limit - x) * dir >= 0.0)
            .collect();
        ahead.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
        let mut ahead = ahead.into_iter().peekable();

        let mut x0 = start;
        let mut fx0 = f0;
        let mut step = self.scan_step;
        loop {
            let mut x1 = x0 + dir * step;
            while let Some(&pr) = ahead.peek() {
                if (pr - x0) * dir <= 0.0 {
                    ahead.next();
                    continue;
                }
                if (x1 - pr) * dir > 0.0 {
                    x1 = pr;
                }
                break;
            }
            if (x1 - limit) * dir > 0.0 {
                x1 = limit;
            }
            let f1 = inflow(x1);
            if f1.is_nan() {
                return Err(Error::NoConvergence { residual: f64::NAN });
            }
            if f1 == 0.0 {
                return Ok(x1);
            }
            if f1.signum() != dir {
                let (a, fa, b, fb) = if x0 < x1 { (x0, fx0, x1, f1) } else { (x1, f1, x0, fx0) };
                return self.refine(&mut inflow, a, fa, b, fb);
            }
            if x1 == limit {
                return Err(Error::NoConvergence { residual: f1.abs() });
            }
            x0 = x1;
            fx0 = f1;
            step = (step * 1.5).min(self.scan_step * 8.0);
        }
    }

    /// Safeguarded Newton on a sign-changing bracket `[a, b]`.
    fn refine<F: FnMut(f64) -> f64>(&self, inflow: &mut F, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> Result<f64> {
        debug_assert!(a < b && fa.signum() != fb.signum());
        let mut x = 0.5 * (a + b);
        let mut best = (f64::INFINITY, x);
        for it in 0..self.max_iter {
            let fx = inflow(x);
            if fx.is_nan() {
                return Err(Error::NoConvergence { residual: f64::NAN });
            }
            if fx.abs() < best.0 {
                best = (fx.abs(), x);
            }
            if fx == 0.0 || (fx.abs() <= self.tol_kcl && (b - a) < self.tol_v) {
                return Ok(x);
            }
            if fx.signum() == fa.signum() {
                a = x;
                fa = fx;
            } else {
                b = x;
                fb = fx;
            }
            if b - a <= 2.0 * f64::EPSILON * a.abs().max(b.abs()).max(1e-3) {
                // Bracket collapsed to adjacent doubles.
                let pick = if fa.abs() <= fb.abs() { a } else { b };
                return Ok(pick);
            }
            let mut next = 0.5 * (a + b);
            if it < self.max_newton {
                let h = self.fd_step.min(0.25 * (b - a)).max(1e-12);
                let slope = (inflow(x + h) - inflow(x - h)) / (2.0 * h);
                if slope.is_finite() && slope != 0.0 {
                    let xn = x - fx / slope;
                    if xn > a && xn < b {
                        next = xn;
                    }
                }
            }
            x = next;
        }
        if best.0 <= self.tol_kcl {
            Ok(best.1)
        } else {
            Err(Error::NoConvergence { residual: best.0 })
        }
    }
}
