//! Refit one transistor's parameters to a measured read I-V curve.
//!
//! The data are drain voltages of a read (both sources grounded) and the
//! source current of the chosen transistor. With all terminals driven the
//! FG potential follows directly from the coupling capacitors, so the model
//! curve is a closed-form function of the four transistor parameters. The
//! misfit is the sum of squared log10-current residuals, minimised by
//! Nelder-Mead from several starting points.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::device::{channel_current, fg_voltage, DeviceParams, TransistorParams};
use crate::error::{Error, Result};

/// Largest accepted RMS residual, in decades of current.
pub const MAX_RMS_DECADES: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Read,
    Inj,
}

impl Which {
    pub fn of(self, p: &DeviceParams) -> TransistorParams {
        match self {
            Which::Read => p.read,
            Which::Inj => p.inj,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvData {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: TransistorParams,
    pub rms_decades: f64,
    pub iterations: u64,
    pub converged: bool,
}

/// Model source current of transistor `t` at drain voltage `v` for a
/// device with FG charge `q_fg`.
pub fn model_current(p: &DeviceParams, t: &TransistorParams, q_fg: f64, v: f64) -> f64 {
    let v_fg = fg_voltage(p, q_fg, 0.0, v, 0.0);
    channel_current(t, v_fg, v, 0.0, p.temperature, p.m_smooth)
}

/// Noiseless data from the model at the given voltages.
pub fn synthesize(p: &DeviceParams, t: &TransistorParams, q_fg: f64, voltage: &[f64]) -> IvData {
    IvData {
        voltage: voltage.to_vec(),
        current: voltage.iter().map(|&v| model_current(p, t, q_fg, v)).collect(),
    }
}

// Search coordinates: v_th, ln i_s0, ln k_gain, n.
fn to_params(x: &[f64]) -> TransistorParams {
    TransistorParams {
        v_th: x[0],
        i_s0: x[1].exp(),
        k_gain: x[2].exp(),
        n_ideality: x[3],
    }
}

fn to_coords(t: &TransistorParams) -> Vec<f64> {
    vec![t.v_th, t.i_s0.ln(), t.k_gain.ln(), t.n_ideality]
}

struct Misfit<'a> {
    p: &'a DeviceParams,
    q_fg: f64,
    v: &'a [f64],
    log_i: Vec<f64>,
}

impl Misfit<'_> {
    fn sum_sq(&self, t: &TransistorParams) -> f64 {
        self.v
            .iter()
            .zip(&self.log_i)
            .map(|(&v, &li)| {
                // The combined current is exactly zero at threshold; floor it
                // so that point costs a large but finite residual.
                let m = model_current(self.p, t, self.q_fg, v).max(1e-30);
                (m.log10() - li).powi(2)
            })
            .sum()
    }
}

struct Cost<'a>(&'a Misfit<'a>);

impl CostFunction for Cost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        // n < 1 is outside the parameter domain.
        if x[3] < 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.0.sum_sq(&to_params(x)))
    }
}

fn simplex_around(x: &[f64], scale: f64) -> Vec<Vec<f64>> {
    let steps = [0.1, 0.5, 0.3, 0.2];
    let mut s = vec![x.to_vec()];
    for (i, h) in steps.iter().enumerate() {
        let mut y = x.to_vec();
        y[i] += h * scale;
        s.push(y);
    }
    s
}

/// Fit `which` of `p` to `data`, holding everything else (capacitances,
/// temperature, FG charge `q_fg`) fixed.
pub fn calibrate(p: &DeviceParams, q_fg: f64, data: &IvData, which: Which) -> Result<CalibrationReport> {
    if data.voltage.len() != data.current.len() {
        return Err(Error::Precondition("voltage and current lengths differ".into()));
    }
    let mut distinct = data.voltage.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateData("all points share one voltage"));
    }
    if data.voltage.len() < 10 || distinct.len() < 4 {
        return Err(Error::DegenerateData("need at least 10 points at 4 or more distinct voltages"));
    }
    if data.current.iter().any(|&i| !(i > 0.0) || !i.is_finite()) {
        return Err(Error::DegenerateData("currents must be positive and finite"));
    }
    if data.voltage.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("voltages must be finite"));
    }
    let misfit = Misfit {
        p,
        q_fg,
        v: &data.voltage,
        log_i: data.current.iter().map(|i| i.log10()).collect(),
    };

    let nominal = which.of(p);
    let mut starts = Vec::new();
    for dv in [0.0, -0.3, 0.3] {
        for dn in [0.0, 0.5] {
            for fk in [1.0, 0.3, 3.0] {
                starts.push(to_coords(&TransistorParams {
                    v_th: nominal.v_th + dv,
                    k_gain: nominal.k_gain * fk,
                    n_ideality: nominal.n_ideality + dn,
                    ..nominal
                }));
            }
        }
    }

    let mut best: Option<(Vec<f64>, f64, u64, bool)> = None;
    for start in starts {
        // Restart from the previous optimum with a fresh simplex until two
        // restarts in a row bring no improvement; a collapsed simplex often
        // stalls in the narrow valley of the threshold point.
        let mut x = start;
        let mut iterations = 0;
        let mut cost = f64::INFINITY;
        let mut converged = false;
        let mut stale = 0;
        for round in 0..40 {
            let scale = if round % 2 == 0 { 1.0 } else { 0.1 };
            let (nx, ncost, iters, ok) = nelder_mead(&misfit, simplex_around(&x, scale))?;
            iterations += iters;
            let improved = ncost < cost * (1.0 - 1e-9);
            if ncost <= cost {
                x = nx;
                cost = ncost;
                converged = ok;
            }
            stale = if improved { 0 } else { stale + 1 };
            if stale == 2 {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((x, cost, iterations, converged));
        }
    }
    let (x, cost, iterations, converged) = best.expect("at least one start");
    let params = to_params(&x);
    let rms_decades = (cost / data.voltage.len() as f64).sqrt();
    if !(rms_decades < MAX_RMS_DECADES) || !converged {
        return Err(Error::FitRejected {
            rms_decades,
            limit: MAX_RMS_DECADES,
            best: params,
        });
    }
    Ok(CalibrationReport {
        params,
        rms_decades,
        iterations,
        converged,
    })
}

fn nelder_mead(misfit: &Misfit, simplex: Vec<Vec<f64>>) -> Result<(Vec<f64>, f64, u64, bool)> {
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-13)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let res = Executor::new(Cost(misfit), solver)
        .configure(|s| s.max_iters(5000))
        .run()
        .map_err(|e| Error::Precondition(format!("simplex search failed: {e}")))?;
    let st = res.state();
    let converged = matches!(
        st.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    );
    let x = st.get_best_param().cloned().expect("best parameters");
    Ok((x, st.get_best_cost(), st.get_iter(), converged))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_inputs() {
        let p = DeviceParams::default();
        let two = IvData {
            voltage: vec![1.0, 1.0],
            current: vec![1e-7, 1e-7],
        };
        assert!(matches!(calibrate(&p, 0.0, &two, Which::Read), Err(Error::DegenerateData(_))));
        let few = synthesize(&p, &p.read, 0.0, &[0.5, 1.0, 1.5]);
        assert!(matches!(calibrate(&p, 0.0, &few, Which::Read), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn unreachable_data_rejected() {
        let p = DeviceParams::default();
        // Current falling with drain voltage cannot be produced by the model.
        let v: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
        let data = IvData {
            current: v.iter().map(|x| 1e-3 * (-10.0 * x).exp()).collect(),
            voltage: v,
        };
        assert!(matches!(
            calibrate(&p, 0.0, &data, Which::Read),
            Err(Error::FitRejected { .. })
        ));
    }
}
