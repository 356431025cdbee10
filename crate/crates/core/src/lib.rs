//! Circuit-level simulator for the Y-Flash two-transistor floating-gate
//! memristor: closed-form device equations, floating-terminal DC solver,
//! stiff transient integration of program/erase pulses, device-to-device
//! variability, crossbar arrays and parameter calibration.

pub mod array;
pub mod calibrate;
pub mod device;
pub mod error;
pub mod experiment;
pub mod network;
pub mod trace;
pub mod transient;
pub mod variability;
pub mod waveform;

pub use device::{DeviceParams, DeviceState, TransistorParams};
pub use error::{Error, Result};
pub use network::{
    bias_for_mode, read_current, solve_dc, BiasCondition, DcSolver, OperatingPoint, OperationMode,
    Terminal, TerminalBias,
};
pub use transient::{simulate, TransientOptions, TransientTrace};
pub use waveform::{Drive, PulseWaveform, TerminalDrives};
pub use experiment::{
    dc_sweep, read_sweep, run_cycle_experiment, run_erase_experiment, run_program_experiment,
    ExperimentConfig, ExperimentResult, ReadProtocol,
};
pub use array::{selective_erase, selective_program, sneak_path_report, vmm, ArraySpec, VmmInput, Wiring};
pub use calibrate::{calibrate, CalibrationReport, IvData, Which};
pub use trace::Table;
pub use variability::{
    population_stats, sample_device, total_erase_time, total_program_time, PopulationOperation,
    PopulationSpec, PopulationStats, TimingProtocol,
};
