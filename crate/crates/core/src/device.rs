//! Closed-form equations of the Y-Flash compact model.
//!
//! Everything here is a pure function of voltages, stored charge and
//! parameters. Node voltages are in volts, currents in amperes, charge in
//! coulombs. The circuit-level solvers in [`crate::network`] and
//! [`crate::transient`] are built on top of these.
//!
//! Source/drain convention: the channel equations are written for
//! `v_d >= v_s`. [`channel_current`] swaps the terminals when `v_d < v_s`,
//! evaluates with the gate drive referenced to the effective source and
//! returns the negated result, so a positive value always means current
//! flowing from the `v_d` node to the `v_s` node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementary charge (C).
pub const Q_ELECTRON: f64 = 1.602_176_634e-19;
/// Boltzmann constant (J/K).
pub const K_BOLTZMANN: f64 = 1.380_649e-23;

/// kT/q in volts.
pub fn thermal_voltage(temperature: f64) -> f64 {
    K_BOLTZMANN * temperature / Q_ELECTRON
}

/// Lumped parameters of one of the two transistors sharing the floating gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransistorParams {
    /// Intrinsic threshold voltage (V).
    pub v_th: f64,
    /// Subthreshold pre-factor (A).
    pub i_s0: f64,
    /// Lumped gain K = (W/L)·µ·C_ox (A/V²).
    pub k_gain: f64,
    /// Subthreshold ideality factor.
    pub n_ideality: f64,
}

impl TransistorParams {
    /// Read transistor (long channel, low threshold).
    pub const READ: TransistorParams = TransistorParams {
        v_th: 0.82,
        i_s0: 40e-9,
        k_gain: 1.9e-5,
        n_ideality: 1.7,
    };

    /// Injection transistor (short channel, optimized for hot-carrier injection).
    pub const INJECTION: TransistorParams = TransistorParams {
        v_th: 1.34,
        i_s0: 80e-9,
        k_gain: 3.8e-5,
        n_ideality: 2.21,
    };

    pub fn validate(&self, which: &'static str) -> Result<()> {
        check(which, self.v_th.is_finite(), "v_th must be finite")?;
        check(which, self.i_s0 > 0.0 && self.i_s0.is_finite(), "i_s0 must be > 0")?;
        check(
            which,
            self.k_gain > 0.0 && self.k_gain.is_finite(),
            "k_gain must be > 0",
        )?;
        check(which, self.n_ideality >= 1.0, "n_ideality must be >= 1")
    }
}

/// Full parameter set of one device. `Default` gives the reference values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub read: TransistorParams,
    pub inj: TransistorParams,
    /// FG to drain (F).
    pub c_gd: f64,
    /// FG to substrate (F).
    pub c_gb: f64,
    /// Drain junction to substrate (F).
    pub c_db: f64,
    /// FG to read source (F).
    pub c_gsr: f64,
    /// FG to injection source (F).
    pub c_gsi: f64,
    /// Read-source junction to substrate (F).
    pub c_srb: f64,
    /// Injection-source junction to substrate (F).
    pub c_sib: f64,
    /// Hot-electron emission probability.
    pub p0: f64,
    /// Injection exponent scale (V).
    pub v_alpha: f64,
    pub sigma_v_alpha: f64,
    /// Hole-injection exponent scale (V).
    pub beta: f64,
    pub sigma_beta: f64,
    /// Interface potential offset for hole injection (V).
    pub v_bi: f64,
    /// Hole-injection prefactor (A/V²).
    pub xi: f64,
    /// Exponent of the sub/above-threshold combine.
    pub m_smooth: f64,
    /// Kelvin.
    pub temperature: f64,
    /// Reverse saturation current of the terminal-substrate junctions (A).
    pub diode_i_sat: f64,
    pub diode_n: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            read: TransistorParams::READ,
            inj: TransistorParams::INJECTION,
            c_gd: 1.0e-15,
            c_gb: 0.24e-15,
            c_db: 0.64e-15,
            c_gsr: 49e-18,
            c_gsi: 48e-18,
            c_srb: 32e-18,
            c_sib: 32e-18,
            p0: 3.8e-5,
            v_alpha: 20.0,
            sigma_v_alpha: 0.8,
            beta: 10.0,
            sigma_beta: 0.8,
            v_bi: 5.5,
            xi: 3.9e-12,
            m_smooth: 1.0,
            temperature: 300.0,
            diode_i_sat: 1e-15,
            diode_n: 1.0,
        }
    }
}

fn check(name: &'static str, ok: bool, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParams {
            name,
            reason: reason.to_string(),
        })
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        self.read.validate("read")?;
        self.inj.validate("inj")?;
        for (name, c) in [
            ("c_gd", self.c_gd),
            ("c_gb", self.c_gb),
            ("c_db", self.c_db),
            ("c_gsr", self.c_gsr),
            ("c_gsi", self.c_gsi),
            ("c_srb", self.c_srb),
            ("c_sib", self.c_sib),
        ] {
            check(name, c > 0.0 && c.is_finite(), "capacitance must be > 0")?;
        }
        check("p0", self.p0 > 0.0 && self.p0 < 1.0, "must lie in (0, 1)")?;
        check("v_alpha", self.v_alpha > 0.0, "must be > 0")?;
        check("beta", self.beta > 0.0, "must be > 0")?;
        check("sigma_v_alpha", self.sigma_v_alpha >= 0.0, "must be >= 0")?;
        check("sigma_beta", self.sigma_beta >= 0.0, "must be >= 0")?;
        check("xi", self.xi > 0.0, "must be > 0")?;
        check("v_bi", self.v_bi > 0.0, "must be > 0")?;
        check("m_smooth", self.m_smooth >= 1.0, "must be >= 1")?;
        check("temperature", self.temperature > 0.0, "must be > 0")?;
        check("diode_i_sat", self.diode_i_sat > 0.0, "must be > 0")?;
        check("diode_n", self.diode_n > 0.0, "must be > 0")
    }

    /// Total capacitance seen by the floating gate.
    pub fn c_total(&self) -> f64 {
        self.c_gsr + self.c_gd + self.c_gsi + self.c_gb
    }

    pub fn thermal_voltage(&self) -> f64 {
        thermal_voltage(self.temperature)
    }

    /// Copy with every capacitance multiplied by `factor`. Coupling ratios,
    /// and therefore every DC quantity, are unchanged.
    pub fn scale_capacitances(&self, factor: f64) -> DeviceParams {
        DeviceParams {
            c_gd: self.c_gd * factor,
            c_gb: self.c_gb * factor,
            c_db: self.c_db * factor,
            c_gsr: self.c_gsr * factor,
            c_gsi: self.c_gsi * factor,
            c_srb: self.c_srb * factor,
            c_sib: self.c_sib * factor,
            ..*self
        }
    }
}

/// Mutable per-device state: stored FG charge and the sampled exponent
/// parameters of this particular device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub q_fg: f64,
    pub v_alpha_d2d: f64,
    pub beta_d2d: f64,
}

impl DeviceState {
    /// Uncharged device with the nominal exponent parameters.
    pub fn pristine(p: &DeviceParams) -> Self {
        DeviceState {
            q_fg: 0.0,
            v_alpha_d2d: p.v_alpha,
            beta_d2d: p.beta,
        }
    }

    pub fn with_charge(self, q_fg: f64) -> Self {
        DeviceState { q_fg, ..self }
    }
}

/// Floating-gate potential from the charge balance on its coupling capacitors.
pub fn fg_voltage(p: &DeviceParams, q_fg: f64, v_sr: f64, v_d: f64, v_si: f64) -> f64 {
    (q_fg + p.c_gsr * v_sr + p.c_gd * v_d + p.c_gsi * v_si) / p.c_total()
}

/// Subthreshold channel current, valid for `v_d >= v_s`.
pub fn channel_current_sub(
    t: &TransistorParams,
    v_fg: f64,
    v_d: f64,
    v_s: f64,
    temperature: f64,
) -> f64 {
    let vt = thermal_voltage(temperature);
    let drive = (v_fg - v_s - t.v_th) / (t.n_ideality * vt);
    // -expm1(-x) == 1 - exp(-x) without cancellation for small v_ds
    t.i_s0 * drive.exp() * -(-(v_d - v_s) / vt).exp_m1()
}

/// Square-law channel current, valid for `v_d >= v_s`. Saturation when the
/// overdrive is below `v_ds`, linear otherwise.
pub fn channel_current_above(t: &TransistorParams, v_fg: f64, v_d: f64, v_s: f64) -> f64 {
    let v_ov = v_fg - v_s - t.v_th;
    let v_ds = v_d - v_s;
    if v_ov < v_ds {
        0.5 * t.k_gain * v_ov * v_ov
    } else {
        t.k_gain * (v_ov - 0.5 * v_ds) * v_ds
    }
}

/// `(a^-m + b^-m)^(-1/m)` for non-negative `a`, `b`; zero if either is zero.
pub fn smooth_combine(a: f64, b: f64, m: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi.is_infinite() {
        return lo;
    }
    lo * (1.0 + (lo / hi).powf(m)).powf(-1.0 / m)
}

/// Channel current from the `v_d` node to the `v_s` node over the full
/// voltage range.
pub fn channel_current(
    t: &TransistorParams,
    v_fg: f64,
    v_d: f64,
    v_s: f64,
    temperature: f64,
    m_smooth: f64,
) -> f64 {
    if v_d < v_s {
        return -channel_current(t, v_fg, v_s, v_d, temperature, m_smooth);
    }
    if v_d == v_s {
        return 0.0;
    }
    let sub = channel_current_sub(t, v_fg, v_d, v_s, temperature);
    let above = channel_current_above(t, v_fg, v_d, v_s);
    smooth_combine(sub, above, m_smooth)
}

/// Hot-electron injection current into the FG. Never positive.
///
/// `i_ds_inj` is the magnitude of the injection-transistor channel current.
pub fn gate_injection_current(p: &DeviceParams, st: &DeviceState, i_ds_inj: f64, v_fg: f64) -> f64 {
    if v_fg <= 0.0 || i_ds_inj <= 0.0 {
        return 0.0;
    }
    -i_ds_inj * p.p0 * (-st.v_alpha_d2d / v_fg).exp()
}

/// Band-to-band hot-hole injection current into the FG. Never negative.
///
/// `v_drive` is the potential that accelerates the holes towards the gate.
/// The circuit solvers pass the injection-source-to-FG potential difference
/// `v_si - v_fg`; nothing is injected until it exceeds `v_bi`.
pub fn gate_tunnel_current(p: &DeviceParams, st: &DeviceState, v_drive: f64) -> f64 {
    let x = v_drive - p.v_bi;
    if x <= 0.0 {
        return 0.0;
    }
    p.xi * x * x * (-st.beta_d2d / x).exp()
}

/// dQ_FG/dt: sum of the electron and hole gate currents.
pub fn fg_charge_rate(
    p: &DeviceParams,
    st: &DeviceState,
    i_ds_inj: f64,
    v_fg: f64,
    v_tunnel: f64,
) -> f64 {
    gate_injection_current(p, st, i_ds_inj, v_fg) + gate_tunnel_current(p, st, v_tunnel)
}
