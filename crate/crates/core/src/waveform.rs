//! Terminal stimuli: trapezoidal pulses, constants and floating terminals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{OperationMode, Terminal, TerminalBias};

/// Trapezoidal pulse. The high level is `baseline + amplitude`; `width` is
/// the time spent at the high level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseWaveform {
    pub baseline: f64,
    pub amplitude: f64,
    pub delay: f64,
    pub rise: f64,
    pub width: f64,
    pub fall: f64,
}

impl PulseWaveform {
    /// Pulse from 0 V to `amplitude` with equal rise and fall times.
    pub fn new(amplitude: f64, width: f64, edge: f64) -> Self {
        PulseWaveform {
            baseline: 0.0,
            amplitude,
            delay: 0.0,
            rise: edge,
            width,
            fall: edge,
        }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        PulseWaveform { amplitude, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rise > 0.0
            && self.fall > 0.0
            && self.width >= 0.0
            && self.delay >= 0.0
            && self.baseline.is_finite()
            && self.amplitude.is_finite()
            && self.rise.is_finite()
            && self.fall.is_finite()
            && self.width.is_finite()
            && self.delay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "pulse needs rise, fall > 0 and width, delay >= 0 (got {self:?})"
            )))
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let [t0, t1, t2, t3] = self.breakpoints();
        let high = self.baseline + self.amplitude;
        if t <= t0 || t >= t3 {
            self.baseline
        } else if t < t1 {
            self.baseline + self.amplitude * (t - t0) / self.rise
        } else if t <= t2 {
            high
        } else {
            high - self.amplitude * (t - t2) / self.fall
        }
    }

    /// Slope corners: start of rise, top reached, start of fall, end of fall.
    pub fn breakpoints(&self) -> [f64; 4] {
        let t0 = self.delay;
        let t1 = t0 + self.rise;
        let t2 = t1 + self.width;
        [t0, t1, t2, t2 + self.fall]
    }

    pub fn end(&self) -> f64 {
        self.breakpoints()[3]
    }
}

/// What a terminal is connected to during a transient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Drive {
    Const(f64),
    Pulse(PulseWaveform),
    /// Left open.
    Floating,
}

impl Drive {
    /// Applied voltage, `None` when floating.
    pub fn value(&self, t: f64) -> Option<f64> {
        match self {
            Drive::Const(v) => Some(*v),
            Drive::Pulse(w) => Some(w.value(t)),
            Drive::Floating => None,
        }
    }

    pub fn is_floating(&self) -> bool {
        matches!(self, Drive::Floating)
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Drive::Pulse(w) => w.breakpoints().to_vec(),
            _ => Vec::new(),
        }
    }
}

impl From<TerminalBias> for Drive {
    fn from(b: TerminalBias) -> Self {
        match b {
            TerminalBias::Driven(v) => Drive::Const(v),
            TerminalBias::Floating => Drive::Floating,
        }
    }
}

/// Drives of D, SR and SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalDrives {
    pub d: Drive,
    pub sr: Drive,
    pub si: Drive,
}

impl TerminalDrives {
    pub fn constant(v_d: f64, v_sr: f64, v_si: f64) -> Self {
        TerminalDrives {
            d: Drive::Const(v_d),
            sr: Drive::Const(v_sr),
            si: Drive::Const(v_si),
        }
    }

    /// Apply `pulse` to every terminal the mode operates on (both sources in
    /// mode 6); the others get the mode's resting bias.
    pub fn for_mode(mode: OperationMode, pulse: PulseWaveform) -> Self {
        let bias = mode.bias_with(pulse.baseline + pulse.amplitude);
        let mut drives = TerminalDrives {
            d: bias.d.into(),
            sr: bias.sr.into(),
            si: bias.si.into(),
        };
        drives.set(mode.pulsed_terminal(), Drive::Pulse(pulse));
        if mode == OperationMode::Erase {
            drives.sr = Drive::Pulse(pulse);
        }
        drives
    }

    pub fn get(&self, t: Terminal) -> Drive {
        self.as_array()[t.index()]
    }

    pub fn set(&mut self, t: Terminal, drive: Drive) {
        match t {
            Terminal::Drain => self.d = drive,
            Terminal::ReadSource => self.sr = drive,
            Terminal::InjSource => self.si = drive,
        }
    }

    pub fn as_array(&self) -> [Drive; 3] {
        [self.d, self.sr, self.si]
    }

    /// Sorted, deduplicated slope corners of all drives.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.as_array().iter().flat_map(Drive::breakpoints).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Time at which every pulse has returned to its baseline.
    pub fn end(&self) -> f64 {
        self.breakpoints().last().copied().unwrap_or(0.0)
    }
}
