//! Reference integrator shared by the transient tests and the acceptance
//! run.

use yflash_core::device::{channel_current, gate_injection_current, gate_tunnel_current};
use yflash_core::network::diode_current;
use yflash_core::{DeviceParams, DeviceState, PulseWaveform};

/// Program pulse in mode 4 written out by hand as an explicit ODE in
/// (q, v_sr) and integrated with a fixed-step L-stable SDIRK4 scheme.
pub struct Mode4 {
    pub p: DeviceParams,
    pub st: DeviceState,
    pub pulse: PulseWaveform,
}

impl Mode4 {
    fn v_d(&self, t: f64) -> f64 {
        self.pulse.value(t)
    }

    fn dv_d(&self, t: f64) -> f64 {
        let [t0, t1, t2, t3] = self.pulse.breakpoints();
        if t > t0 && t < t1 {
            self.pulse.amplitude / self.pulse.rise
        } else if t > t2 && t < t3 {
            -self.pulse.amplitude / self.pulse.fall
        } else {
            0.0
        }
    }

    fn rhs(&self, t: f64, y: [f64; 2]) -> [f64; 2] {
        let p = &self.p;
        let [q, v_sr] = y;
        let v_d = self.v_d(t);
        let c_t = p.c_gsr + p.c_gd + p.c_gsi + p.c_gb;
        let v_fg = (q + p.c_gsr * v_sr + p.c_gd * v_d) / c_t;
        let i_read = channel_current(&p.read, v_fg, v_d, v_sr, p.temperature, p.m_smooth);
        let i_inj = channel_current(&p.inj, v_fg, v_d, 0.0, p.temperature, p.m_smooth);
        let gate = gate_injection_current(p, &self.st, i_inj.abs(), v_fg)
            + gate_tunnel_current(p, &self.st, -v_fg);
        let into_sr = i_read + diode_current(p, v_sr);
        // (c_srb + c_gsr) v_sr' - c_gsr v_fg' = into_sr, with
        // v_fg' = (q' + c_gsr v_sr' + c_gd v_d') / c_t
        let m = p.c_srb + p.c_gsr - p.c_gsr * p.c_gsr / c_t;
        let dv_sr = (into_sr + p.c_gsr * (gate + p.c_gd * self.dv_d(t)) / c_t) / m;
        [gate, dv_sr]
    }
}

pub fn sdirk4(sys: &Mode4, y0: [f64; 2], t_end: f64, dt: f64) -> [f64; 2] {
    const G: f64 = 0.25;
    let c = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
    let a: [[f64; 5]; 5] = [
        [G, 0.0, 0.0, 0.0, 0.0],
        [0.5, G, 0.0, 0.0, 0.0],
        [17.0 / 50.0, -1.0 / 25.0, G, 0.0, 0.0],
        [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, G, 0.0],
        [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, G],
    ];
    // Work in (q/c_t, v_sr) so both unknowns are volts.
    let c_t = sys.p.c_total();
    let f = |t: f64, z: [f64; 2]| {
        let d = sys.rhs(t, [z[0] * c_t, z[1]]);
        [d[0] / c_t, d[1]]
    };
    let steps = (t_end / dt).round() as usize;
    let mut z = [y0[0] / c_t, y0[1]];
    for n in 0..steps {
        let t = n as f64 * dt;
        let mut k = [[0.0; 2]; 5];
        for i in 0..5 {
            let ti = t + c[i] * dt;
            let mut base = z;
            for j in 0..i {
                base[0] += dt * a[i][j] * k[j][0];
                base[1] += dt * a[i][j] * k[j][1];
            }
            // Solve k = f(ti, base + dt·γ·k) by Newton on the stage value.
            let mut u = base;
            for _ in 0..50 {
                let fu = f(ti, u);
                let r = [u[0] - base[0] - dt * G * fu[0], u[1] - base[1] - dt * G * fu[1]];
                let mut jac = [[0.0; 2]; 2];
                for col in 0..2 {
                    let h = 1e-7 * u[col].abs().max(1.0);
                    let mut up = u;
                    up[col] += h;
                    let fp = f(ti, up);
                    for row in 0..2 {
                        let e = if row == col { 1.0 } else { 0.0 };
                        jac[row][col] = e - dt * G * (fp[row] - fu[row]) / h;
                    }
                }
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let d0 = (-r[0] * jac[1][1] + r[1] * jac[0][1]) / det;
                let d1 = (-r[1] * jac[0][0] + r[0] * jac[1][0]) / det;
                u[0] += d0;
                u[1] += d1;
                if d0.abs() < 1e-13 && d1.abs() < 1e-13 {
                    break;
                }
            }
            k[i] = [(u[0] - base[0]) / (dt * G), (u[1] - base[1]) / (dt * G)];
        }
        for i in 0..5 {
            z[0] += dt * a[4][i] * k[i][0];
            z[1] += dt * a[4][i] * k[i][1];
        }
    }
    [z[0] * c_t, z[1]]
}
