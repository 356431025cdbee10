//! CSV tables of f64 columns and array state files.
//!
//! Values are written with 17 significant digits so every number parses
//! back to the identical double.

use std::io::{Read, Write};
use std::path::Path;

use crate::array::ArraySpec;
use crate::device::{DeviceParams, DeviceState};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentResult, IvCurve};
use crate::transient::TransientTrace;

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn new() -> Self {
        Table::default()
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> Self {
        self.columns.push((name.to_string(), values));
        self
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.1.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.0 == name).map(|c| c.1.as_slice())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let n = self.rows();
        if let Some((name, _)) = self.columns.iter().find(|c| c.1.len() != n) {
            return Err(Error::Format(format!("column `{name}` length differs")));
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.columns.iter().map(|c| c.0.as_str()))?;
        for i in 0..n {
            out.write_record(self.columns.iter().map(|c| format_f64(c.1[i])))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let names: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
        let mut columns: Vec<(String, Vec<f64>)> = names.into_iter().map(|n| (n, Vec::new())).collect();
        for (line, rec) in input.records().enumerate() {
            let rec = rec?;
            for (col, field) in columns.iter_mut().zip(rec.iter()) {
                let v = field.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("row {}, column `{}`: {e}", line + 1, col.0))
                })?;
                col.1.push(v);
            }
        }
        Ok(Table { columns })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Table::read(std::fs::File::open(path)?)
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn transient_table(tr: &TransientTrace) -> Table {
    Table::new()
        .with("time_s", tr.time.clone())
        .with("v_d_V", tr.v_d.clone())
        .with("v_sr_V", tr.v_sr.clone())
        .with("v_si_V", tr.v_si.clone())
        .with("v_fg_V", tr.v_fg.clone())
        .with("i_d_A", tr.i_d.clone())
        .with("i_sr_A", tr.i_sr.clone())
        .with("i_si_A", tr.i_si.clone())
        .with("i_gate_A", tr.gate_current.clone())
        .with("q_fg_C", tr.q_fg.clone())
}

pub fn experiment_table(r: &ExperimentResult) -> Table {
    Table::new()
        .with("pulse_index", r.pulse_index.iter().map(|&k| k as f64).collect())
        .with("accumulated_time_s", r.accumulated_time.clone())
        .with("read_current_A", r.read_current.clone())
        .with("q_fg_C", r.q_fg_after_pulse.clone())
        .with("read_dq_fg_C", r.read_dq_fg.clone())
}

pub fn iv_table(c: &IvCurve) -> Table {
    Table::new()
        .with("v_V", c.voltage.clone())
        .with("i_sr_A", c.current.clone())
}

/// One line per device: position, stored charge and sampled parameters.
pub fn state_table(a: &ArraySpec) -> Table {
    let pos = |f: fn(usize, usize) -> usize| -> Vec<f64> {
        (0..a.cells.len()).map(|k| f(k / a.cols, k % a.cols) as f64).collect()
    };
    Table::new()
        .with("row", pos(|r, _| r))
        .with("col", pos(|_, c| c))
        .with("q_fg_C", a.cells.iter().map(|s| s.q_fg).collect())
        .with("v_alpha_V", a.cells.iter().map(|s| s.v_alpha_d2d).collect())
        .with("beta_V", a.cells.iter().map(|s| s.beta_d2d).collect())
}

/// Rebuild an array from a state table written by [`state_table`].
pub fn array_from_state(t: &Table, params: DeviceParams) -> Result<ArraySpec> {
    let col = |name: &str| t.column(name).ok_or_else(|| Error::Format(format!("state file lacks `{name}`")));
    let (row, c, q, va, b) = (col("row")?, col("col")?, col("q_fg_C")?, col("v_alpha_V")?, col("beta_V")?);
    let as_index = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Error::Format(format!("bad cell index {x}")))
        }
    };
    let rows = row.iter().map(|&x| as_index(x)).collect::<Result<Vec<_>>>()?;
    let cols = c.iter().map(|&x| as_index(x)).collect::<Result<Vec<_>>>()?;
    let n_rows = rows.iter().max().map_or(0, |m| m + 1);
    let n_cols = cols.iter().max().map_or(0, |m| m + 1);
    let mut cells: Vec<Option<DeviceState>> = vec![None; n_rows * n_cols];
    for i in 0..t.rows() {
        let slot = &mut cells[rows[i] * n_cols + cols[i]];
        if slot.is_some() {
            return Err(Error::Format(format!("cell ({}, {}) listed twice", rows[i], cols[i])));
        }
        *slot = Some(DeviceState {
            q_fg: q[i],
            v_alpha_d2d: va[i],
            beta_d2d: b[i],
        });
    }
    let cells = cells
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Format("state file does not cover every cell".into()))?;
    ArraySpec::from_cells(n_rows, n_cols, params, cells)
}
