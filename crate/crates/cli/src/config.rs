//! Recipe configuration files.
//!
//! One JSON object per experiment. Every section has defaults, so a file
//! only lists what it changes. Unknown keys are rejected.

use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use yflash_core::{DeviceParams, ExperimentConfig, OperationMode, PulseWaveform, Which, Wiring};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Recipe {
    /// Quasi-static I-V sweep.
    Sweep,
    /// Transient of a single pulse, displacement currents included.
    PulseRead,
    /// Program pulse train with a read sweep after each pulse.
    Program,
    /// Erase pulse train with a read sweep after each pulse.
    Erase,
    /// Program/erase cycling between two read thresholds.
    Cycle,
    /// Program or erase time statistics over sampled devices.
    Mc,
    /// Vector-matrix multiplication on an array.
    Vmm,
    /// Signal-to-sneak ratio of an array read.
    Sneak,
    /// Fit transistor parameters to measured read I-V data.
    Calibrate,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Sweep => "sweep",
            Recipe::PulseRead => "pulse_read",
            Recipe::Program => "program",
            Recipe::Erase => "erase",
            Recipe::Cycle => "cycle",
            Recipe::Mc => "mc",
            Recipe::Vmm => "vmm",
            Recipe::Sneak => "sneak",
            Recipe::Calibrate => "calibrate",
        }
    }
}

/// Operation-table row plus the drain voltage row 8 needs.
fn mode_of(row: u8, v_inhibit: Option<f64>) -> Result<OperationMode, String> {
    OperationMode::from_row(row, v_inhibit).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Must match the recipe given on the command line when present.
    pub recipe: Option<Recipe>,
    /// Output directory, relative to the working directory.
    pub out: PathBuf,
    pub device: DeviceParams,
    pub experiment: ExperimentConfig,
    /// Initial FG charge (C) of single-device and array recipes.
    pub q_fg: f64,
    pub sweep: SweepSection,
    pub pulse_read: PulseReadSection,
    pub program: PulseSection,
    pub erase: EraseSection,
    pub cycle: CycleSection,
    pub population: PopulationSection,
    pub array: ArraySection,
    pub calibrate: CalibrateSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            recipe: None,
            out: PathBuf::from("out"),
            device: DeviceParams::default(),
            experiment: ExperimentConfig::default(),
            q_fg: 0.0,
            sweep: SweepSection::default(),
            pulse_read: PulseReadSection::default(),
            program: PulseSection {
                voltage: 5.0,
                width: 4e-3,
                edge: 10e-6,
                mode: 4,
                v_inhibit: None,
                pulses: 9,
                stop_at: None,
            },
            erase: EraseSection::default(),
            cycle: CycleSection::default(),
            population: PopulationSection::default(),
            array: ArraySection::default(),
            calibrate: CalibrateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    pub mode: u8,
    pub v_inhibit: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            from: 0.0,
            to: 2.0,
            points: 201,
            mode: 1,
            v_inhibit: None,
        }
    }
}

impl SweepSection {
    pub fn mode(&self) -> Result<OperationMode, String> {
        mode_of(self.mode, self.v_inhibit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseReadSection {
    pub voltage: f64,
    pub width: f64,
    pub edge: f64,
    pub mode: u8,
    pub v_inhibit: Option<f64>,
    /// Simulated time (s); the end of the pulse when unset.
    pub t_end: Option<f64>,
}

impl Default for PulseReadSection {
    fn default() -> Self {
        PulseReadSection {
            voltage: 2.0,
            width: 5e-9,
            edge: 1e-9,
            mode: 1,
            v_inhibit: None,
            t_end: None,
        }
    }
}

impl PulseReadSection {
    pub fn mode(&self) -> Result<OperationMode, String> {
        mode_of(self.mode, self.v_inhibit)
    }

    pub fn pulse(&self) -> PulseWaveform {
        PulseWaveform::new(self.voltage, self.width, self.edge)
    }
}

/// A train of identical pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub voltage: f64,
    pub width: f64,
    pub edge: f64,
    pub mode: u8,
    pub v_inhibit: Option<f64>,
    /// Number of pulses, or the pulse budget when `stop_at` is set.
    pub pulses: usize,
    /// Read current (A) at which the train stops early.
    pub stop_at: Option<f64>,
}

impl Default for PulseSection {
    fn default() -> Self {
        Config::default().program
    }
}

impl PulseSection {
    pub fn mode(&self) -> Result<OperationMode, String> {
        mode_of(self.mode, self.v_inhibit)
    }

    pub fn pulse(&self) -> PulseWaveform {
        PulseWaveform::new(self.voltage, self.width, self.edge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EraseSection {
    pub voltage: f64,
    pub width: f64,
    pub edge: f64,
    pub mode: u8,
    pub v_inhibit: Option<f64>,
    pub pulses: usize,
    pub stop_at: Option<f64>,
    /// Program the device below `cycle.i_low` with the program section
    /// before erasing. Otherwise the erase starts from `q_fg`.
    pub prepare: bool,
}

impl Default for EraseSection {
    fn default() -> Self {
        EraseSection {
            voltage: 8.0,
            width: 200e-6,
            edge: 10e-6,
            mode: 7,
            v_inhibit: None,
            pulses: 20,
            stop_at: None,
            prepare: true,
        }
    }
}

impl EraseSection {
    pub fn train(&self) -> PulseSection {
        PulseSection {
            voltage: self.voltage,
            width: self.width,
            edge: self.edge,
            mode: self.mode,
            v_inhibit: self.v_inhibit,
            pulses: self.pulses,
            stop_at: self.stop_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleSection {
    pub cycles: usize,
    /// Program target: read current below this (A).
    pub i_low: f64,
    /// Erase target: read current above this (A).
    pub i_high: f64,
    /// Pulse budget per phase.
    pub budget: usize,
}

impl Default for CycleSection {
    fn default() -> Self {
        CycleSection {
            cycles: 10,
            i_low: 1e-9,
            i_high: 2e-6,
            budget: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationOp {
    Program,
    Erase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSection {
    pub devices: usize,
    pub seed: u64,
    /// What is timed; required by the `mc` recipe. Thresholds and budget
    /// come from the cycle section, pulses from the program and erase
    /// sections.
    pub operation: Option<PopulationOp>,
    /// Simulate devices on the thread pool.
    pub parallel: bool,
}

impl Default for PopulationSection {
    fn default() -> Self {
        PopulationSection {
            devices: 96,
            seed: 2024,
            operation: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub rows: usize,
    pub cols: usize,
    pub wiring: Wiring,
    /// Cell states written by the `mc` recipe or by hand. Overrides
    /// rows, cols and `q_fg`.
    pub state_file: Option<PathBuf>,
    /// Read voltage per drain line; every line at `v_read` when empty.
    pub inputs: Vec<f64>,
    pub v_read: f64,
    pub read_cell: [usize; 2],
}

impl Default for ArraySection {
    fn default() -> Self {
        ArraySection {
            rows: 2,
            cols: 2,
            wiring: Wiring::DrainRows,
            state_file: None,
            inputs: Vec::new(),
            v_read: 2.0,
            read_cell: [0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    /// CSV with columns `v_V` and `i_sr_A`; required by `calibrate`.
    pub data: Option<PathBuf>,
    pub which: Which,
    /// FG charge (C) of the measured device.
    pub q_fg: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection {
            data: None,
            which: Which::Read,
            q_fg: 0.0,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Checks that need no simulation: parameter ranges, modes and the
    /// keys the recipe depends on.
    pub fn validate(&self, recipe: Recipe) -> Result<(), String> {
        if let Some(r) = self.recipe {
            if r != recipe {
                return Err(format!(
                    "config is for recipe `{}`, command line asks for `{}`",
                    r.name(),
                    recipe.name()
                ));
            }
        }
        self.device.validate().map_err(|e| e.to_string())?;
        self.experiment.transient.validate().map_err(|e| e.to_string())?;
        let pulse = |s: &PulseSection| -> Result<(), String> {
            s.mode()?.check_voltage(s.voltage).map_err(|e| e.to_string())?;
            s.pulse().validate().map_err(|e| e.to_string())
        };
        match recipe {
            Recipe::Sweep => {
                self.sweep.mode()?;
            }
            Recipe::PulseRead => {
                let s = &self.pulse_read;
                s.mode()?.check_voltage(s.voltage).map_err(|e| e.to_string())?;
                s.pulse().validate().map_err(|e| e.to_string())?;
                if s.t_end.is_some_and(|t| !(t > 0.0)) {
                    return Err("pulse_read.t_end must be positive".into());
                }
            }
            Recipe::Program => {
                pulse(&self.program)?;
                if !self.program.mode()?.is_program() {
                    return Err(format!("program.mode {} is not a program row", self.program.mode));
                }
            }
            Recipe::Erase => {
                pulse(&self.erase.train())?;
                if !self.erase.train().mode()?.is_erase() {
                    return Err(format!("erase.mode {} is not an erase row", self.erase.mode));
                }
                if self.erase.prepare {
                    pulse(&self.program)?;
                }
            }
            Recipe::Cycle | Recipe::Mc => {
                pulse(&self.program)?;
                pulse(&self.erase.train())?;
                if recipe == Recipe::Mc && self.population.operation.is_none() {
                    return Err("the mc recipe requires population.operation (program or erase)".into());
                }
            }
            Recipe::Vmm | Recipe::Sneak => {
                if self.array.state_file.is_none() && (self.array.rows == 0 || self.array.cols == 0) {
                    return Err("array.rows and array.cols must be at least 1".into());
                }
            }
            Recipe::Calibrate => {
                if self.calibrate.data.is_none() {
                    return Err("the calibrate recipe requires calibrate.data".into());
                }
            }
        }
        Ok(())
    }
}

/// Every key of the default config with its value, one per line, for
/// `--help`.
pub fn key_listing() -> String {
    let mut lines = Vec::new();
    let v = serde_json::to_value(Config::default()).expect("config serializes");
    flatten("", &v, &mut lines);
    lines.join("\n")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        _ => out.push(format!("  {prefix} = {v}")),
    }
}
