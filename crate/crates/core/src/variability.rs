//! Device-to-device variation of the injection and tunnelling exponents and
//! the resulting program/erase time statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::device::{DeviceParams, DeviceState};
use crate::error::{Error, Result};
use crate::experiment::{erase_until, program_until, ExperimentConfig};
use crate::network::OperationMode;
use crate::waveform::PulseWaveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n_devices: usize,
    pub seed: u64,
    pub base: DeviceParams,
}

impl PopulationSpec {
    pub fn new(n_devices: usize, seed: u64, base: DeviceParams) -> Self {
        PopulationSpec {
            n_devices,
            seed,
            base,
        }
    }
}

/// Draw device `index`. Each index has its own ChaCha stream under the
/// population seed, so the result does not depend on sampling order.
pub fn sample_device(spec: &PopulationSpec, index: usize) -> Result<DeviceState> {
    if index >= spec.n_devices {
        return Err(Error::Precondition(format!(
            "device index {index} out of range for {} devices",
            spec.n_devices
        )));
    }
    let p = &spec.base;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let v_alpha_d2d = positive_draw(&mut rng, p.v_alpha, p.sigma_v_alpha)?;
    let beta_d2d = positive_draw(&mut rng, p.beta, p.sigma_beta)?;
    Ok(DeviceState {
        q_fg: 0.0,
        v_alpha_d2d,
        beta_d2d,
    })
}

/// Gaussian draw, redrawn until positive.
fn positive_draw(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> Result<f64> {
    if sigma == 0.0 {
        return Ok(mean);
    }
    let dist = Normal::new(mean, sigma).map_err(|e| Error::InvalidParams {
        name: "sigma",
        reason: e.to_string(),
    })?;
    for _ in 0..10_000 {
        let x = dist.sample(rng);
        if x > 0.0 {
            return Ok(x);
        }
    }
    Err(Error::InvalidParams {
        name: "sigma",
        reason: format!("N({mean}, {sigma}^2) practically never yields a positive value"),
    })
}

pub fn sample_population(spec: &PopulationSpec) -> Result<Vec<DeviceState>> {
    (0..spec.n_devices).map(|i| sample_device(spec, i)).collect()
}

/// Pulse train applied until the read current crosses `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingProtocol {
    pub v: f64,
    pub pulse: PulseWaveform,
    pub mode: OperationMode,
    pub threshold: f64,
    pub budget: usize,
}

impl TimingProtocol {
    pub fn program(v_p: f64, width: f64, mode: OperationMode) -> Self {
        TimingProtocol {
            v: v_p,
            pulse: PulseWaveform::new(v_p, width, 10e-6),
            mode,
            threshold: 1e-9,
            budget: 1000,
        }
    }

    pub fn erase(v_e: f64, width: f64, mode: OperationMode) -> Self {
        TimingProtocol {
            v: v_e,
            pulse: PulseWaveform::new(v_e, width, 10e-6),
            mode,
            threshold: 2e-6,
            budget: 1000,
        }
    }
}

/// Accumulated pulse time until the read current first drops below the
/// threshold.
pub fn total_program_time(
    p: &DeviceParams,
    st: &mut DeviceState,
    proto: &TimingProtocol,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let r = program_until(p, st, proto.v, &proto.pulse, proto.mode, proto.threshold, proto.budget, cfg)?;
    Ok(*r.accumulated_time.last().unwrap())
}

/// Accumulated pulse time until the read current first rises above the
/// threshold.
pub fn total_erase_time(
    p: &DeviceParams,
    st: &mut DeviceState,
    proto: &TimingProtocol,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let r = erase_until(p, st, proto.v, &proto.pulse, proto.mode, proto.threshold, proto.budget, cfg)?;
    Ok(*r.accumulated_time.last().unwrap())
}

/// What is timed on every device of a population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationOperation {
    /// Program a pristine device.
    Program(TimingProtocol),
    /// Program with `prepare`, then time the erase.
    Erase {
        prepare: TimingProtocol,
        erase: TimingProtocol,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    /// Mean of ln(time).
    pub mu: f64,
    /// Standard deviation of ln(time), sample (n - 1) normalisation.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub devices: Vec<DeviceState>,
    pub times: Vec<f64>,
    pub lognormal_fit: LogNormalFit,
    /// Kolmogorov-Smirnov distance between the log-times and the fitted
    /// normal. Zero for a degenerate (sigma = 0) fit.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl PopulationStats {
    /// True when the KS test does not reject normality of log-times at
    /// level `alpha`. A degenerate fit never passes.
    pub fn lognormal_accepted(&self, alpha: f64) -> bool {
        self.lognormal_fit.sigma > 0.0 && self.ks_p_value > alpha
    }

    pub fn distinct_times(&self) -> usize {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t.len()
    }
}

fn time_device(
    p: &DeviceParams,
    mut st: DeviceState,
    op: &PopulationOperation,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    match op {
        PopulationOperation::Program(proto) => total_program_time(p, &mut st, proto, cfg),
        PopulationOperation::Erase { prepare, erase } => {
            total_program_time(p, &mut st, prepare, cfg)?;
            total_erase_time(p, &mut st, erase, cfg)
        }
    }
}

/// Time `op` on every sampled device and fit a log-normal to the times.
/// `parallel` spreads devices over the rayon pool; results are identical
/// either way because each device is simulated independently.
pub fn population_stats(
    spec: &PopulationSpec,
    op: &PopulationOperation,
    cfg: &ExperimentConfig,
    parallel: bool,
) -> Result<PopulationStats> {
    if spec.n_devices < 20 {
        return Err(Error::Precondition(format!(
            "a log-normal fit needs at least 20 devices (got {})",
            spec.n_devices
        )));
    }
    let devices = sample_population(spec)?;
    let run = |(i, st): (usize, &DeviceState)| {
        time_device(&spec.base, *st, op, cfg).map_err(|e| Error::Device {
            index: i,
            source: Box::new(e),
        })
    };
    let times: Vec<f64> = if parallel {
        devices.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        devices.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let logs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let fit = lognormal_moments(&logs);
    let (ks_statistic, ks_p_value) = ks_normal(&logs, fit);
    Ok(PopulationStats {
        devices,
        times,
        lognormal_fit: fit,
        ks_statistic,
        ks_p_value,
    })
}

pub fn lognormal_moments(logs: &[f64]) -> LogNormalFit {
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = if logs.len() > 1 {
        logs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    // Identical samples can leave rounding noise in the variance.
    let sigma = if logs.iter().all(|&x| x == logs[0]) {
        0.0
    } else {
        var.sqrt()
    };
    LogNormalFit { mu, sigma }
}

/// One-sample KS statistic of `x` against N(mu, sigma^2) and its asymptotic
/// p-value. A zero-sigma fit returns (0, 1).
pub fn ks_normal(x: &[f64], fit: LogNormalFit) -> (f64, f64) {
    if fit.sigma == 0.0 || x.is_empty() {
        return (0.0, 1.0);
    }
    let dist = NormalDist::new(fit.mu, fit.sigma).expect("sigma > 0");
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = dist.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    (d, kolmogorov_sf(d, s.len()))
}

/// P(D_n > d), using the Stephens finite-n correction of the Kolmogorov
/// limit distribution.
pub fn kolmogorov_sf(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_out_of_range() {
        let spec = PopulationSpec::new(3, 1, DeviceParams::default());
        assert!(sample_device(&spec, 3).is_err());
        assert!(sample_device(&spec, 2).is_ok());
    }

    #[test]
    fn zero_sigma_is_base() {
        let mut p = DeviceParams::default();
        p.sigma_v_alpha = 0.0;
        p.sigma_beta = 0.0;
        let spec = PopulationSpec::new(10, 7, p);
        for i in 0..10 {
            assert_eq!(sample_device(&spec, i).unwrap(), DeviceState::pristine(&p));
        }
    }

    #[test]
    fn negative_draws_are_redrawn() {
        let mut p = DeviceParams::default();
        p.v_alpha = 0.5;
        p.sigma_v_alpha = 1.0;
        let spec = PopulationSpec::new(500, 3, p);
        assert!(sample_population(&spec).unwrap().iter().all(|d| d.v_alpha_d2d > 0.0));
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Limit distribution: P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098.
        assert!((kolmogorov_sf(1.36 / 1e4, 100_000_000) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628 / 1e4, 100_000_000) - 0.0100).abs() < 3e-4);
        assert_eq!(kolmogorov_sf(0.0, 10), 1.0);
    }

    #[test]
    fn degenerate_fit() {
        let fit = lognormal_moments(&[0.3f64.ln(); 30]);
        assert_eq!(fit.sigma, 0.0);
        assert_eq!(ks_normal(&[0.3f64.ln(); 30], fit), (0.0, 1.0));
    }
}
