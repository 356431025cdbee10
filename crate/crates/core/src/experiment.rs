//! Pulse-train experiments: program and erase staircases with DC reads in
//! between, program/erase cycling and quasi-static I-V sweeps.

use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, DeviceState};
use crate::error::{Error, Result};
use crate::network::{bias_for_mode, solve_dc, Branches, OperationMode};
use crate::transient::{simulate, TransientOptions};
use crate::waveform::{PulseWaveform, TerminalDrives};

/// DC read sweep performed after every pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadProtocol {
    /// Final sweep voltage; the recorded read current is taken here.
    pub v_read: f64,
    pub n_points: usize,
    /// Time spent at each sweep point (s).
    pub dwell: f64,
    /// Gate currents below this are treated as zero and the FG charge is
    /// left untouched.
    pub freeze_below: f64,
    pub mode: OperationMode,
}

impl Default for ReadProtocol {
    fn default() -> Self {
        ReadProtocol {
            v_read: 2.0,
            n_points: 21,
            dwell: 1e-3,
            freeze_below: 1e-18,
            mode: OperationMode::Read,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub read: ReadProtocol,
    pub transient: TransientOptions,
}

/// Outcome of one read sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadSweep {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    /// FG charge change caused by the sweep itself.
    pub dq_fg: f64,
    pub max_gate_current: f64,
}

impl ReadSweep {
    pub fn read_current(&self) -> f64 {
        *self.current.last().unwrap()
    }
}

/// Sweep 0 → `v_read` at DC. Where the gate current reaches
/// `freeze_below`, the charge it moves during the dwell is added to `st`.
pub fn read_sweep(p: &DeviceParams, st: &mut DeviceState, proto: &ReadProtocol) -> Result<ReadSweep> {
    if !proto.mode.is_read() {
        return Err(Error::Precondition("read sweeps use mode 1 or 2".into()));
    }
    if proto.n_points < 1 || !(proto.dwell >= 0.0) {
        return Err(Error::Precondition("read sweep needs n_points >= 1 and dwell >= 0".into()));
    }
    let q0 = st.q_fg;
    let mut out = ReadSweep {
        voltage: Vec::with_capacity(proto.n_points),
        current: Vec::with_capacity(proto.n_points),
        dq_fg: 0.0,
        max_gate_current: 0.0,
    };
    for v in sweep_points(0.0, proto.v_read, proto.n_points) {
        let op = solve_dc(p, st, &bias_for_mode(proto.mode, v)?)?;
        let gate = Branches::evaluate(p, st.q_fg, op.voltages()).gate_current(p, st, op.v_si);
        out.max_gate_current = out.max_gate_current.max(gate.abs());
        if gate.abs() >= proto.freeze_below {
            st.q_fg += gate * proto.dwell;
        }
        out.voltage.push(v);
        out.current.push(op.sr_current());
    }
    out.dq_fg = st.q_fg - q0;
    Ok(out)
}

fn sweep_points(from: f64, to: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            from
        } else if i + 1 == n {
            to
        } else {
            from + (to - from) * i as f64 / (n - 1) as f64
        }
    })
}

/// Per-pulse record of a staircase. Entry 0 is the read before any pulse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub pulse_index: Vec<usize>,
    /// Pulse index times the pulse width.
    pub accumulated_time: Vec<f64>,
    /// Read current at the protocol's read voltage.
    pub read_current: Vec<f64>,
    /// FG charge after each pulse, before the following read.
    pub q_fg_after_pulse: Vec<f64>,
    /// FG charge moved by each read sweep.
    pub read_dq_fg: Vec<f64>,
    pub pulse_width: f64,
}

impl ExperimentResult {
    pub fn len(&self) -> usize {
        self.pulse_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulse_index.is_empty()
    }

    pub fn pulses(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn last_read(&self) -> f64 {
        *self.read_current.last().unwrap()
    }

    /// FG charge moved by pulse k (k >= 1).
    pub fn pulse_dq_fg(&self, k: usize) -> f64 {
        self.q_fg_after_pulse[k] - (self.q_fg_after_pulse[k - 1] + self.read_dq_fg[k - 1])
    }

    /// Largest |read disturb| relative to the charge moved by the preceding
    /// pulse. Pulses that moved no charge are skipped.
    pub fn read_disturb_ratio(&self) -> f64 {
        (1..self.len())
            .filter(|&k| self.pulse_dq_fg(k) != 0.0)
            .map(|k| (self.read_dq_fg[k] / self.pulse_dq_fg(k)).abs())
            .fold(0.0, f64::max)
    }

    /// Relative change of the read current caused by pulse k.
    pub fn relative_step(&self, k: usize) -> f64 {
        (self.read_current[k] - self.read_current[k - 1]) / self.read_current[k - 1]
    }

    /// First pulse index whose read current satisfies `pred`.
    pub fn first_pulse_where(&self, pred: impl Fn(f64) -> bool) -> Option<usize> {
        (0..self.len())
            .find(|&k| pred(self.read_current[k]))
            .map(|k| self.pulse_index[k])
    }
}

/// Apply up to `max_pulses` pulses, reading after each, stopping early once
/// `stop` holds for a read current.
fn pulse_train(
    p: &DeviceParams,
    st: &mut DeviceState,
    mode: OperationMode,
    pulse: PulseWaveform,
    max_pulses: usize,
    cfg: &ExperimentConfig,
    stop: impl Fn(f64) -> bool,
) -> Result<ExperimentResult> {
    let drives = TerminalDrives::for_mode(mode, pulse);
    let mut res = ExperimentResult {
        pulse_width: pulse.width,
        ..Default::default()
    };
    let record = |res: &mut ExperimentResult, k: usize, st: &mut DeviceState| -> Result<f64> {
        let q = st.q_fg;
        let sweep = read_sweep(p, st, &cfg.read)?;
        res.pulse_index.push(k);
        res.accumulated_time.push(k as f64 * pulse.width);
        res.read_current.push(sweep.read_current());
        res.q_fg_after_pulse.push(q);
        res.read_dq_fg.push(sweep.dq_fg);
        Ok(sweep.read_current())
    };
    let mut i = record(&mut res, 0, st)?;
    for k in 1..=max_pulses {
        if stop(i) {
            break;
        }
        simulate(p, st, &drives, drives.end(), &cfg.transient)?;
        i = record(&mut res, k, st)?;
    }
    Ok(res)
}

fn checked_pulse(mode: OperationMode, v: f64, pulse: &PulseWaveform) -> Result<PulseWaveform> {
    mode.check_voltage(v)?;
    let w = PulseWaveform {
        baseline: 0.0,
        amplitude: v,
        ..*pulse
    };
    w.validate()?;
    Ok(w)
}

/// `n_pulses` program pulses of height `v_p` (shape from `pulse`), with a
/// read after each.
pub fn run_program_experiment(
    p: &DeviceParams,
    st: &mut DeviceState,
    v_p: f64,
    pulse: &PulseWaveform,
    n_pulses: usize,
    mode: OperationMode,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !mode.is_program() {
        return Err(Error::Precondition(format!("mode {} is not a program mode", mode.row())));
    }
    let w = checked_pulse(mode, v_p, pulse)?;
    pulse_train(p, st, mode, w, n_pulses, cfg, |_| false)
}

/// `n_pulses` erase pulses of height `v_e`, with a read after each.
pub fn run_erase_experiment(
    p: &DeviceParams,
    st: &mut DeviceState,
    v_e: f64,
    pulse: &PulseWaveform,
    n_pulses: usize,
    mode: OperationMode,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !mode.is_erase() {
        return Err(Error::Precondition(format!("mode {} is not an erase mode", mode.row())));
    }
    let w = checked_pulse(mode, v_e, pulse)?;
    pulse_train(p, st, mode, w, n_pulses, cfg, |_| false)
}

/// Program until the read current drops below `i_low`.
pub fn program_until(
    p: &DeviceParams,
    st: &mut DeviceState,
    v_p: f64,
    pulse: &PulseWaveform,
    mode: OperationMode,
    i_low: f64,
    budget: usize,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !mode.is_program() {
        return Err(Error::Precondition(format!("mode {} is not a program mode", mode.row())));
    }
    let w = checked_pulse(mode, v_p, pulse)?;
    let r = pulse_train(p, st, mode, w, budget, cfg, |i| i < i_low)?;
    if r.last_read() < i_low {
        Ok(r)
    } else {
        Err(Error::BudgetExceeded {
            phase: "program",
            pulses: budget,
        })
    }
}

/// Erase until the read current rises above `i_high`.
pub fn erase_until(
    p: &DeviceParams,
    st: &mut DeviceState,
    v_e: f64,
    pulse: &PulseWaveform,
    mode: OperationMode,
    i_high: f64,
    budget: usize,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !mode.is_erase() {
        return Err(Error::Precondition(format!("mode {} is not an erase mode", mode.row())));
    }
    let w = checked_pulse(mode, v_e, pulse)?;
    let r = pulse_train(p, st, mode, w, budget, cfg, |i| i > i_high)?;
    if r.last_read() > i_high {
        Ok(r)
    } else {
        Err(Error::BudgetExceeded {
            phase: "erase",
            pulses: budget,
        })
    }
}

/// Program/erase cycling protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub v_p: f64,
    pub v_e: f64,
    pub program_pulse: PulseWaveform,
    pub erase_pulse: PulseWaveform,
    pub program_mode: OperationMode,
    pub erase_mode: OperationMode,
    pub i_low: f64,
    pub i_high: f64,
    /// Pulse budget per phase.
    pub budget: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            v_p: 5.0,
            v_e: 8.0,
            program_pulse: PulseWaveform::new(5.0, 4e-3, 10e-6),
            erase_pulse: PulseWaveform::new(8.0, 200e-6, 10e-6),
            program_mode: OperationMode::ProgramSrFloating,
            erase_mode: OperationMode::EraseSiOnly,
            i_low: 1e-9,
            i_high: 2e-6,
            budget: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub program: ExperimentResult,
    pub erase: ExperimentResult,
}

/// Program below `i_low` then erase above `i_high`, `n_cycles` times.
pub fn run_cycle_experiment(
    p: &DeviceParams,
    st: &mut DeviceState,
    cycle: &CycleConfig,
    n_cycles: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<Cycle>> {
    if n_cycles == 0 {
        return Err(Error::Precondition("n_cycles must be >= 1".into()));
    }
    (0..n_cycles)
        .map(|_| {
            let program = program_until(
                p,
                st,
                cycle.v_p,
                &cycle.program_pulse,
                cycle.program_mode,
                cycle.i_low,
                cycle.budget,
                cfg,
            )?;
            let erase = erase_until(
                p,
                st,
                cycle.v_e,
                &cycle.erase_pulse,
                cycle.erase_mode,
                cycle.i_high,
                cycle.budget,
                cfg,
            )?;
            Ok(Cycle { program, erase })
        })
        .collect()
}

/// Largest read-current difference between any cycle from index `from` on
/// and cycle `from`, relative to the compared value. Cycles with different
/// pulse counts compare as infinitely far apart.
pub fn cycle_spread(cycles: &[Cycle], from: usize) -> f64 {
    let Some(base) = cycles.get(from) else {
        return 0.0;
    };
    let mut worst: f64 = 0.0;
    for c in &cycles[from..] {
        for (a, b) in [(&base.program, &c.program), (&base.erase, &c.erase)] {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            for (x, y) in a.read_current.iter().zip(&b.read_current) {
                worst = worst.max(((x - y) / x).abs());
            }
        }
    }
    worst
}

/// Quasi-static I-V curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvCurve {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
}

/// Read current at `n_points` evenly spaced voltages with the FG charge
/// held fixed.
pub fn dc_sweep(
    p: &DeviceParams,
    st: &DeviceState,
    v_from: f64,
    v_to: f64,
    n_points: usize,
    mode: OperationMode,
) -> Result<IvCurve> {
    if !mode.is_read() {
        return Err(Error::Precondition("dc_sweep uses mode 1 or 2".into()));
    }
    if n_points < 1 || (n_points == 1 && v_from != v_to) {
        return Err(Error::Precondition("dc_sweep needs n_points >= 2".into()));
    }
    let mut curve = IvCurve {
        voltage: Vec::with_capacity(n_points),
        current: Vec::with_capacity(n_points),
    };
    for v in sweep_points(v_from, v_to, n_points) {
        let op = solve_dc(p, st, &bias_for_mode(mode, v)?)?;
        curve.voltage.push(v);
        curve.current.push(op.sr_current());
    }
    Ok(curve)
}
