//! Recipe execution. Every recipe computes all of its outputs before any
//! file is written, so a failed run leaves the output directory untouched.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use yflash_core::array::reverse_read_current;
use yflash_core::experiment::{dc_sweep, erase_until, program_until, run_cycle_experiment, Cycle, CycleConfig};
use yflash_core::trace::{array_from_state, experiment_table, iv_table, state_table, transient_table};
use yflash_core::{
    calibrate, population_stats, read_current, run_erase_experiment, run_program_experiment, simulate,
    sneak_path_report, vmm, ArraySpec, DeviceState, Error, ExperimentResult, IvData, OperationMode,
    PopulationOperation, PopulationSpec, Table, TerminalDrives, TimingProtocol, VmmInput,
};

use crate::config::{Config, PopulationOp, PulseSection, Recipe};

pub enum Output {
    Csv(Table),
    Json(Value),
}

pub struct Run {
    pub files: Vec<(String, Output)>,
    /// One-line human summary.
    pub summary: String,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn record(&self) -> Value {
        let (kind, message) = match self {
            Failure::Config(m) => ("config", m),
            Failure::Numerical(m) => ("numerical", m),
            Failure::Io(m) => ("io", m),
        };
        json!({ "error": { "kind": kind, "message": message, "exit_code": self.exit_code() } })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else if e.is_io() || matches!(e, Error::Format(_)) {
            Failure::Io(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn cfg_err<T>(r: std::result::Result<T, String>) -> Res<T> {
    r.map_err(Failure::Config)
}

/// Relative paths inside the config resolve against the config's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn run(recipe: Recipe, c: &Config, base: &Path) -> Res<Run> {
    let p = &c.device;
    let st = DeviceState::pristine(p).with_charge(c.q_fg);
    let cfg = &c.experiment;
    match recipe {
        Recipe::Sweep => {
            let s = &c.sweep;
            let curve = dc_sweep(p, &st, s.from, s.to, s.points, cfg_err(s.mode())?)?;
            let last = *curve.current.last().unwrap();
            Ok(Run {
                summary: format!("sweep: {} points, I_SR({} V) = {last:.4e} A", curve.voltage.len(), s.to),
                files: vec![("sweep.csv".into(), Output::Csv(iv_table(&curve)))],
            })
        }
        Recipe::PulseRead => {
            let s = &c.pulse_read;
            let pulse = s.pulse();
            let drives = TerminalDrives::for_mode(cfg_err(s.mode())?, pulse);
            let mut st = st;
            let tr = simulate(p, &mut st, &drives, s.t_end.unwrap_or(pulse.end()), &cfg.transient)?;
            let peak = tr.i_d.iter().copied().fold(f64::MIN, f64::max);
            Ok(Run {
                summary: format!("pulse_read: {} points, peak drain current {peak:.4e} A", tr.time.len()),
                files: vec![("pulse_read.csv".into(), Output::Csv(transient_table(&tr)))],
            })
        }
        Recipe::Program => {
            let mut st = st;
            let r = train(p, &mut st, &c.program, cfg, true)?;
            Ok(Run {
                summary: format!("program: {} pulses, last read {:.4e} A", r.pulses(), r.last_read()),
                files: vec![("program.csv".into(), Output::Csv(experiment_table(&r)))],
            })
        }
        Recipe::Erase => {
            let mut st = st;
            if c.erase.prepare {
                let prog = &c.program;
                program_until(
                    p,
                    &mut st,
                    prog.voltage,
                    &prog.pulse(),
                    cfg_err(prog.mode())?,
                    c.cycle.i_low,
                    c.cycle.budget,
                    cfg,
                )?;
            }
            let r = train(p, &mut st, &c.erase.train(), cfg, false)?;
            Ok(Run {
                summary: format!("erase: {} pulses, last read {:.4e} A", r.pulses(), r.last_read()),
                files: vec![("erase.csv".into(), Output::Csv(experiment_table(&r)))],
            })
        }
        Recipe::Cycle => {
            let (prog, erase) = (&c.program, c.erase.train());
            let cycle = CycleConfig {
                v_p: prog.voltage,
                v_e: erase.voltage,
                program_pulse: prog.pulse(),
                erase_pulse: erase.pulse(),
                program_mode: cfg_err(prog.mode())?,
                erase_mode: cfg_err(erase.mode())?,
                i_low: c.cycle.i_low,
                i_high: c.cycle.i_high,
                budget: c.cycle.budget,
            };
            let mut st = st;
            let cycles = run_cycle_experiment(p, &mut st, &cycle, c.cycle.cycles, cfg)?;
            Ok(Run {
                summary: format!(
                    "cycle: {} cycles, pulses per cycle (program, erase) = {:?}",
                    cycles.len(),
                    cycles.iter().map(|x| (x.program.pulses(), x.erase.pulses())).collect::<Vec<_>>()
                ),
                files: vec![("cycle.csv".into(), Output::Csv(cycle_table(&cycles)))],
            })
        }
        Recipe::Mc => mc(c),
        Recipe::Vmm => {
            let a = array(c, base)?;
            let inputs = if c.array.inputs.is_empty() {
                vec![c.array.v_read; a.drain_lines()]
            } else {
                c.array.inputs.clone()
            };
            let out = vmm(&a, &VmmInput::Voltage(inputs))?;
            let table = Table::new()
                .with("source_line", (0..out.len()).map(|k| k as f64).collect())
                .with("current_A", out.clone());
            Ok(Run {
                summary: format!("vmm: {} outputs, total {:.4e} A", out.len(), out.iter().sum::<f64>()),
                files: vec![("vmm.csv".into(), Output::Csv(table))],
            })
        }
        Recipe::Sneak => {
            let a = array(c, base)?;
            let [r, col] = c.array.read_cell;
            let rep = sneak_path_report(&a, (r, col), c.array.v_read)?;
            let reverse = reverse_read_current(&a.params, a.cell(r, col), c.array.v_read)?;
            Ok(Run {
                summary: format!("sneak: signal {:.4e} A, worst sneak {:.4e} A, ratio {:.3e}", rep.signal, rep.worst_sneak, rep.ratio),
                files: vec![(
                    "sneak.json".into(),
                    Output::Json(json!({
                        "read_cell": [r, col],
                        "v_read": c.array.v_read,
                        "signal_A": rep.signal,
                        "worst_sneak_A": rep.worst_sneak,
                        "ratio": rep.ratio,
                        "worst_cell": [rep.worst_cell.0, rep.worst_cell.1],
                        "read_cell_reverse_A": reverse,
                    })),
                )],
            })
        }
        Recipe::Calibrate => {
            let s = &c.calibrate;
            let path = resolve(base, s.data.as_deref().expect("validated"));
            let t = Table::load(&path)?;
            let col = |name: &str| {
                t.column(name)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Failure::Io(format!("{}: no `{name}` column", path.display())))
            };
            let data = IvData {
                voltage: col("v_V")?,
                current: col("i_sr_A")?,
            };
            let rep = calibrate(p, s.q_fg, &data, s.which)?;
            let fitted = rep.params;
            Ok(Run {
                summary: format!(
                    "calibrate: v_th {:.4} V, i_s0 {:.4e} A, k_gain {:.4e} A/V^2, n {:.4}, rms {:.2e} decades",
                    fitted.v_th, fitted.i_s0, fitted.k_gain, fitted.n_ideality, rep.rms_decades
                ),
                files: vec![(
                    "calibration.json".into(),
                    Output::Json(serde_json::to_value(rep).expect("report serializes")),
                )],
            })
        }
    }
}

/// Fixed-length pulse train, or one that stops at `stop_at`.
fn train(
    p: &yflash_core::DeviceParams,
    st: &mut DeviceState,
    s: &PulseSection,
    cfg: &yflash_core::ExperimentConfig,
    program: bool,
) -> Res<ExperimentResult> {
    let mode = cfg_err(s.mode())?;
    let pulse = s.pulse();
    Ok(match (program, s.stop_at) {
        (true, None) => run_program_experiment(p, st, s.voltage, &pulse, s.pulses, mode, cfg)?,
        (true, Some(i)) => program_until(p, st, s.voltage, &pulse, mode, i, s.pulses, cfg)?,
        (false, None) => run_erase_experiment(p, st, s.voltage, &pulse, s.pulses, mode, cfg)?,
        (false, Some(i)) => erase_until(p, st, s.voltage, &pulse, mode, i, s.pulses, cfg)?,
    })
}

fn protocol(s: &PulseSection, threshold: f64, budget: usize) -> Res<TimingProtocol> {
    Ok(TimingProtocol {
        v: s.voltage,
        pulse: s.pulse(),
        mode: cfg_err(s.mode())?,
        threshold,
        budget,
    })
}

fn mc(c: &Config) -> Res<Run> {
    let pop = &c.population;
    let spec = PopulationSpec::new(pop.devices, pop.seed, c.device);
    let prepare = protocol(&c.program, c.cycle.i_low, c.cycle.budget)?;
    let (name, op) = match pop.operation.expect("validated") {
        PopulationOp::Program => ("program", PopulationOperation::Program(prepare)),
        PopulationOp::Erase => (
            "erase",
            PopulationOperation::Erase {
                prepare,
                erase: protocol(&c.erase.train(), c.cycle.i_high, c.cycle.budget)?,
            },
        ),
    };
    let stats = population_stats(&spec, &op, &c.experiment, pop.parallel)?;
    let times = Table::new()
        .with("device", (0..stats.times.len()).map(|k| k as f64).collect())
        .with("v_alpha_V", stats.devices.iter().map(|d| d.v_alpha_d2d).collect())
        .with("beta_V", stats.devices.iter().map(|d| d.beta_d2d).collect())
        .with("time_s", stats.times.clone());
    let states = ArraySpec::from_cells(1, stats.devices.len(), c.device, stats.devices.clone())?;
    let accepted = stats.lognormal_accepted(0.01);
    let summary = json!({
        "operation": name,
        "devices": pop.devices,
        "seed": pop.seed,
        "distinct_times": stats.distinct_times(),
        "ln_time_mean": stats.lognormal_fit.mu,
        "ln_time_sigma": stats.lognormal_fit.sigma,
        "ks_statistic": stats.ks_statistic,
        "ks_p_value": stats.ks_p_value,
        "lognormal_accepted_alpha_0_01": accepted,
    });
    Ok(Run {
        summary: format!(
            "mc: {} {name} times, median {:.4e} s, KS p = {:.3e}{}",
            pop.devices,
            stats.lognormal_fit.mu.exp(),
            stats.ks_p_value,
            if accepted { "" } else { " (log-normal rejected at 0.01)" }
        ),
        files: vec![
            ("mc_times.csv".into(), Output::Csv(times)),
            ("mc_state.csv".into(), Output::Csv(state_table(&states))),
            ("mc_summary.json".into(), Output::Json(summary)),
        ],
    })
}

fn array(c: &Config, base: &Path) -> Res<ArraySpec> {
    let a = match &c.array.state_file {
        Some(f) => array_from_state(&Table::load(&resolve(base, f))?, c.device)?,
        None => {
            let cell = DeviceState::pristine(&c.device).with_charge(c.q_fg);
            ArraySpec::from_cells(c.array.rows, c.array.cols, c.device, vec![cell; c.array.rows * c.array.cols])?
        }
    };
    // Validates every cell's read point before the recipe runs.
    for s in &a.cells {
        read_current(&a.params, s, c.array.v_read, OperationMode::Read)?;
    }
    Ok(a.with_wiring(c.array.wiring))
}

fn cycle_table(cycles: &[Cycle]) -> Table {
    let mut t = Table::new()
        .with("cycle", Vec::new())
        .with("phase", Vec::new())
        .with("pulse_index", Vec::new())
        .with("accumulated_time_s", Vec::new())
        .with("read_current_A", Vec::new())
        .with("q_fg_C", Vec::new())
        .with("read_dq_fg_C", Vec::new());
    for (k, c) in cycles.iter().enumerate() {
        for (phase, r) in [(0.0, &c.program), (1.0, &c.erase)] {
            for i in 0..r.len() {
                let row = [
                    k as f64,
                    phase,
                    r.pulse_index[i] as f64,
                    r.accumulated_time[i],
                    r.read_current[i],
                    r.q_fg_after_pulse[i],
                    r.read_dq_fg[i],
                ];
                for (col, v) in t.columns.iter_mut().zip(row) {
                    col.1.push(v);
                }
            }
        }
    }
    t
}

/// Write every output into `dir`, creating it if needed.
pub fn write(dir: &Path, run: &Run, resolved: &Config) -> Res<()> {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let json = |v: &Value| serde_json::to_string_pretty(v).expect("json") + "\n";
    for (name, out) in &run.files {
        let path = dir.join(name);
        match out {
            Output::Csv(t) => t.save(&path)?,
            Output::Json(v) => std::fs::write(&path, json(v)).map_err(io)?,
        }
    }
    let cfg = serde_json::to_value(resolved).expect("config serializes");
    std::fs::write(dir.join("config.json"), json(&cfg)).map_err(io)?;
    Ok(())
}
