//! Crossbar of Y-Flash cells with ideal interconnect.
//!
//! Each cell's drain sits on a "drain line" and both of its sources on a
//! "source line". With the default [`Wiring::DrainRows`] the drain lines are
//! the array rows and the source lines the columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, DeviceState};
use crate::error::{Error, Result};
use crate::network::{read_current, solve_dc, BiasCondition, OperationMode};
use crate::transient::{simulate, TransientOptions};
use crate::waveform::{Drive, PulseWaveform, TerminalDrives};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    #[default]
    DrainRows,
    DrainColumns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub rows: usize,
    pub cols: usize,
    pub params: DeviceParams,
    pub wiring: Wiring,
    /// Row-major, `rows * cols` entries.
    pub cells: Vec<DeviceState>,
}

impl ArraySpec {
    /// Array of pristine cells.
    pub fn pristine(rows: usize, cols: usize, params: DeviceParams) -> Result<Self> {
        Self::from_cells(rows, cols, params, vec![DeviceState::pristine(&params); rows * cols])
    }

    pub fn from_cells(rows: usize, cols: usize, params: DeviceParams, cells: Vec<DeviceState>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Precondition("array needs rows, cols >= 1".into()));
        }
        if cells.len() != rows * cols {
            return Err(Error::Precondition(format!(
                "{} cell states for a {rows}x{cols} array",
                cells.len()
            )));
        }
        params.validate()?;
        Ok(ArraySpec {
            rows,
            cols,
            params,
            wiring: Wiring::default(),
            cells,
        })
    }

    pub fn with_wiring(self, wiring: Wiring) -> Self {
        ArraySpec { wiring, ..self }
    }

    pub fn cell(&self, r: usize, c: usize) -> &DeviceState {
        &self.cells[r * self.cols + c]
    }

    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut DeviceState {
        &mut self.cells[r * self.cols + c]
    }

    pub fn drain_lines(&self) -> usize {
        match self.wiring {
            Wiring::DrainRows => self.rows,
            Wiring::DrainColumns => self.cols,
        }
    }

    pub fn source_lines(&self) -> usize {
        match self.wiring {
            Wiring::DrainRows => self.cols,
            Wiring::DrainColumns => self.rows,
        }
    }

    /// (drain line, source line) of cell (r, c).
    pub fn lines_of(&self, r: usize, c: usize) -> (usize, usize) {
        match self.wiring {
            Wiring::DrainRows => (r, c),
            Wiring::DrainColumns => (c, r),
        }
    }

    /// Cell at the crossing of a drain line and a source line.
    pub fn cell_at_lines(&self, drain: usize, source: usize) -> (usize, usize) {
        match self.wiring {
            Wiring::DrainRows => (drain, source),
            Wiring::DrainColumns => (source, drain),
        }
    }

    /// Read current of every cell at `v_read`, row-major.
    pub fn read_map(&self, v_read: f64) -> Result<Vec<f64>> {
        self.cells
            .par_iter()
            .enumerate()
            .map(|(k, st)| {
                read_current(&self.params, st, v_read, OperationMode::Read).map_err(|e| Error::Cell {
                    row: k / self.cols,
                    col: k % self.cols,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Drain-line inputs of a vector-matrix product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmmInput {
    /// Read voltage per drain line; outputs are currents (A).
    Voltage(Vec<f64>),
    /// Read pulse duration per drain line at `v_read`; outputs are charges (C).
    PulseWidth { v_read: f64, widths: Vec<f64> },
}

/// Per-source-line output: the sum of the cells' read currents (or read
/// current times pulse width). Cells are not modified.
pub fn vmm(array: &ArraySpec, input: &VmmInput) -> Result<Vec<f64>> {
    let n = array.drain_lines();
    let (volts, weights): (Vec<f64>, Vec<f64>) = match input {
        VmmInput::Voltage(v) => (v.clone(), vec![1.0; v.len()]),
        VmmInput::PulseWidth { v_read, widths } => {
            if widths.iter().any(|&t| !(t >= 0.0)) {
                return Err(Error::Precondition("pulse widths must be >= 0".into()));
            }
            (vec![*v_read; widths.len()], widths.clone())
        }
    };
    if volts.len() != n {
        return Err(Error::Precondition(format!(
            "{} inputs for {n} drain lines",
            volts.len()
        )));
    }
    for &v in &volts {
        OperationMode::Read.check_voltage(v)?;
    }
    (0..array.source_lines())
        .into_par_iter()
        .map(|s| {
            let mut acc = 0.0;
            for d in 0..n {
                let (r, c) = array.cell_at_lines(d, s);
                let i = read_current(&array.params, array.cell(r, c), volts[d], OperationMode::Read)
                    .map_err(|e| Error::Cell {
                        row: r,
                        col: c,
                        source: Box::new(e),
                    })?;
                acc += i * weights[d];
            }
            Ok(acc)
        })
        .collect()
}

/// Simulate one pulse on every cell with non-trivial drives. Cells whose
/// drives are `None` see no bias and keep their state exactly.
fn pulse_cells(
    array: &mut ArraySpec,
    end: f64,
    opts: &TransientOptions,
    drives_of: impl Fn(usize, usize) -> Option<TerminalDrives> + Sync,
) -> Result<()> {
    let cols = array.cols;
    let p = array.params;
    let wiring = array.wiring;
    array.cells.par_iter_mut().enumerate().try_for_each(|(k, st)| {
        let (r, c) = (k / cols, k % cols);
        let (d, s) = match wiring {
            Wiring::DrainRows => (r, c),
            Wiring::DrainColumns => (c, r),
        };
        match drives_of(d, s) {
            None => Ok(()),
            Some(drives) => simulate(&p, st, &drives, end, opts).map(|_| ()).map_err(|e| Error::Cell {
                row: r,
                col: c,
                source: Box::new(e),
            }),
        }
    })
}

fn check_cells(array: &ArraySpec, cells: &[(usize, usize)]) -> Result<()> {
    match cells.iter().find(|&&(r, c)| r >= array.rows || c >= array.cols) {
        Some((r, c)) => Err(Error::Precondition(format!(
            "cell ({r}, {c}) outside {}x{} array",
            array.rows, array.cols
        ))),
        None => Ok(()),
    }
}

/// One program pulse on each target cell. Drain lines are handled one at a
/// time: the line of the targets is pulsed to `v_p`, target source lines
/// ground SI with SR floating and every other source line floats both
/// sources. Undriven drain lines stay at 0 V.
pub fn selective_program(
    array: &mut ArraySpec,
    targets: &[(usize, usize)],
    v_p: f64,
    pulse: &PulseWaveform,
    opts: &TransientOptions,
) -> Result<()> {
    check_cells(array, targets)?;
    OperationMode::ProgramSrFloating.check_voltage(v_p)?;
    let pulse = PulseWaveform {
        baseline: 0.0,
        amplitude: v_p,
        ..*pulse
    };
    pulse.validate()?;
    let mut lines: Vec<usize> = targets.iter().map(|&(r, c)| array.lines_of(r, c).0).collect();
    lines.sort_unstable();
    lines.dedup();
    for line in lines {
        let selected: Vec<usize> = targets
            .iter()
            .map(|&(r, c)| array.lines_of(r, c))
            .filter(|&(d, _)| d == line)
            .map(|(_, s)| s)
            .collect();
        pulse_cells(array, pulse.end(), opts, |d, s| {
            if d != line {
                return None;
            }
            let mode = if selected.contains(&s) {
                OperationMode::ProgramSrFloating
            } else {
                OperationMode::ProgramInhibit
            };
            Some(TerminalDrives::for_mode(mode, pulse))
        })?;
    }
    Ok(())
}

/// One erase pulse on the selected source lines. Their SI is pulsed to
/// `v_e` with SR floating. Drain lines listed in `inhibit_lines` are held
/// at `inhibit_v_d`, the rest float. `inhibit_v_d = 0` disables the
/// inhibit, leaving every drain floating. Unselected source lines ground
/// SI and float SR.
pub fn selective_erase(
    array: &mut ArraySpec,
    target_lines: &[usize],
    inhibit_lines: &[usize],
    v_e: f64,
    pulse: &PulseWaveform,
    inhibit_v_d: f64,
    opts: &TransientOptions,
) -> Result<()> {
    if let Some(s) = target_lines.iter().find(|&&s| s >= array.source_lines()) {
        return Err(Error::Precondition(format!("source line {s} out of range")));
    }
    if let Some(d) = inhibit_lines.iter().find(|&&d| d >= array.drain_lines()) {
        return Err(Error::Precondition(format!("drain line {d} out of range")));
    }
    OperationMode::EraseSiOnly.check_voltage(v_e)?;
    if !(inhibit_v_d == 0.0 || (1.0..=2.0).contains(&inhibit_v_d)) {
        return Err(Error::BiasRange {
            row: 8,
            constraint: "1 V <= V_D <= 2 V",
            value: inhibit_v_d,
        });
    }
    if target_lines.is_empty() {
        return Ok(());
    }
    let pulse = PulseWaveform {
        baseline: 0.0,
        amplitude: v_e,
        ..*pulse
    };
    pulse.validate()?;
    pulse_cells(array, pulse.end(), opts, |d, s| {
        let d_drive = if inhibit_v_d != 0.0 && inhibit_lines.contains(&d) {
            Drive::Const(inhibit_v_d)
        } else {
            Drive::Floating
        };
        let si = if target_lines.contains(&s) {
            Drive::Pulse(pulse)
        } else if d_drive.is_floating() {
            // Every terminal floating or grounded with no source of charge.
            return None;
        } else {
            Drive::Const(0.0)
        };
        Some(TerminalDrives {
            d: d_drive,
            sr: Drive::Floating,
            si,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SneakReport {
    /// Forward read current of the selected cell.
    pub signal: f64,
    /// Largest reverse-read current among the cells that close a
    /// three-cell sneak loop around the selected one.
    pub worst_sneak: f64,
    pub ratio: f64,
    /// Cell carrying `worst_sneak`.
    pub worst_cell: (usize, usize),
}

/// Reverse-read current of one cell: drain at 0 V, both sources at `v`.
pub fn reverse_read_current(p: &DeviceParams, st: &DeviceState, v: f64) -> Result<f64> {
    let op = solve_dc(p, st, &BiasCondition::driven(0.0, v, v))?;
    Ok(op.i_d_ext.abs())
}

/// Signal-to-sneak ratio for reading `read_cell` at `v_read`.
///
/// A sneak path from the selected drain line to the selected source line
/// runs forward through a cell on the selected drain line, backwards
/// through a cell on another drain line and another source line, and
/// forward into the selected source line. The middle cell is reverse-biased
/// and bounds the loop current.
pub fn sneak_path_report(array: &ArraySpec, read_cell: (usize, usize), v_read: f64) -> Result<SneakReport> {
    if array.rows < 2 || array.cols < 2 {
        return Err(Error::Precondition("sneak paths need at least a 2x2 array".into()));
    }
    check_cells(array, &[read_cell])?;
    OperationMode::Read.check_voltage(v_read)?;
    let (r0, c0) = read_cell;
    let signal = read_current(&array.params, array.cell(r0, c0), v_read, OperationMode::Read)?;
    let (d0, s0) = array.lines_of(r0, c0);
    let mut worst = (0.0, (0, 0));
    for d in (0..array.drain_lines()).filter(|&d| d != d0) {
        for s in (0..array.source_lines()).filter(|&s| s != s0) {
            let (r, c) = array.cell_at_lines(d, s);
            let i = reverse_read_current(&array.params, array.cell(r, c), v_read)?;
            if i > worst.0 {
                worst = (i, (r, c));
            }
        }
    }
    Ok(SneakReport {
        signal,
        worst_sneak: worst.0,
        ratio: signal / worst.0,
        worst_cell: worst.1,
    })
}
