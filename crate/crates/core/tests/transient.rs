use yflash_core::device::gate_tunnel_current;
use yflash_core::transient::{simulate, TransientOptions, TransientTrace};
use yflash_core::{
    solve_dc, BiasCondition, DeviceParams, DeviceState, Drive, OperationMode, PulseWaveform,
    TerminalDrives,
};

mod common;

use common::{sdirk4, Mode4};

fn program_pulse() -> PulseWaveform {
    PulseWaveform::new(5.0, 4e-3, 10e-6)
}

#[test]
fn program_pulse_matches_reference_integrator() {
    let p = DeviceParams::default();
    let mut st = DeviceState::pristine(&p);
    let pulse = program_pulse();
    let drives = TerminalDrives::for_mode(OperationMode::ProgramSrFloating, pulse);
    let tr = simulate(&p, &mut st, &drives, pulse.end(), &TransientOptions::default()).unwrap();

    let oracle = Mode4 {
        p,
        st: DeviceState::pristine(&p),
        pulse,
    };
    let [q_ref, _] = sdirk4(&oracle, [0.0, 0.0], pulse.end(), 10e-9);
    let rel = ((st.q_fg - q_ref) / q_ref).abs();
    assert!(rel < 1e-3, "adaptive {} vs reference {q_ref}: {rel:e}", st.q_fg);

    // q_fg strictly decreases while the pulse is high.
    let [_, t1, t2, _] = pulse.breakpoints();
    let high: Vec<f64> = tr
        .time
        .iter()
        .zip(&tr.q_fg)
        .filter(|(t, _)| **t >= t1 && **t <= t2)
        .map(|(_, q)| *q)
        .collect();
    assert!(high.len() > 10);
    assert!(high.windows(2).all(|w| w[1] < w[0]));
}

fn relative_charge_error(tr: &TransientTrace, q0: f64) -> f64 {
    let dq = tr.final_q_fg().unwrap() - q0;
    let integral = tr.integrated_gate_charge();
    // Every accepted step rounds the stored charge to the doubles around
    // q0, which bounds how well a change of a few ulps can be represented.
    let rounding = (tr.stats.accepted as f64 + 4.0) * f64::EPSILON * q0.abs();
    if (dq - integral).abs() <= rounding {
        return 0.0;
    }
    ((dq - integral) / dq.abs().max(integral.abs())).abs()
}

#[test]
fn charge_is_conserved() {
    let p = DeviceParams::default();
    let programmed = DeviceState::pristine(&p).with_charge(-2.0e-15);
    let cases = [
        (DeviceState::pristine(&p), OperationMode::ProgramSrFloating, program_pulse()),
        (DeviceState::pristine(&p), OperationMode::Program, PulseWaveform::new(5.0, 100e-6, 10e-6)),
        (DeviceState::pristine(&p), OperationMode::ProgramInhibit, program_pulse()),
        (programmed, OperationMode::EraseSiOnly, PulseWaveform::new(8.0, 200e-6, 10e-6)),
        (programmed, OperationMode::Erase, PulseWaveform::new(8.0, 200e-6, 10e-6)),
        (
            programmed,
            OperationMode::EraseInhibit { v_drain: 1.5 },
            PulseWaveform::new(8.0, 200e-6, 10e-6),
        ),
        (DeviceState::pristine(&p), OperationMode::Read, PulseWaveform::new(2.0, 5e-9, 1e-9)),
    ];
    for (st0, mode, pulse) in cases {
        let mut st = st0;
        let drives = TerminalDrives::for_mode(mode, pulse);
        let tr = simulate(&p, &mut st, &drives, pulse.end(), &TransientOptions::default()).unwrap();
        let e = relative_charge_error(&tr, st0.q_fg);
        assert!(e < 1e-3, "mode {}: {e:e}", mode.row());
    }
}

#[test]
fn gate_current_sign_follows_operation() {
    let p = DeviceParams::default();
    let mut st = DeviceState::pristine(&p);
    let drives = TerminalDrives::for_mode(OperationMode::ProgramSrFloating, program_pulse());
    let tr = simulate(&p, &mut st, &drives, drives.end(), &TransientOptions::default()).unwrap();
    assert!(tr.gate_current.iter().all(|&g| g <= 0.0));

    let mut st = st.with_charge(-2.0e-15);
    let w = PulseWaveform::new(8.0, 200e-6, 10e-6);
    let drives = TerminalDrives::for_mode(OperationMode::EraseSiOnly, w);
    let tr = simulate(&p, &mut st, &drives, w.end(), &TransientOptions::default()).unwrap();
    assert!(tr.gate_current.iter().all(|&g| g >= 0.0));
    assert!(tr.q_fg.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn erase_of_pristine_device_is_bounded() {
    let p = DeviceParams::default();
    let mut st = DeviceState::pristine(&p);
    let w = PulseWaveform::new(8.0, 200e-6, 10e-6);
    let drives = TerminalDrives::for_mode(OperationMode::EraseSiOnly, w);
    simulate(&p, &mut st, &drives, w.end(), &TransientOptions::default()).unwrap();
    assert!(st.q_fg >= 0.0);
    // Bounded by the tunnelling current at the largest SI-to-FG drive
    // the pulse can produce, applied for the whole pulse.
    let max_rate = gate_tunnel_current(&p, &st, 8.0);
    assert!(st.q_fg <= max_rate * w.end());
}

#[test]
fn tighter_tolerance_agrees_within_coarse_tolerance() {
    let p = DeviceParams::default();
    let pulse = PulseWaveform::new(5.0, 200e-6, 10e-6);
    let drives = TerminalDrives::for_mode(OperationMode::ProgramSrFloating, pulse);
    let run = |tol: f64| {
        let mut st = DeviceState::pristine(&p);
        let o = TransientOptions {
            rtol: tol,
            atol: tol,
            atol_charge: tol * 1e-15,
            ..Default::default()
        };
        simulate(&p, &mut st, &drives, pulse.end(), &o).unwrap();
        st.q_fg
    };
    for coarse in [1e-4, 1e-5, 1e-6] {
        let (a, b) = (run(coarse), run(coarse / 2.0));
        assert!(((a - b) / b).abs() < coarse, "{coarse}: {a} vs {b}");
    }
}

#[test]
fn sustained_program_is_self_limiting() {
    let p = DeviceParams::default();
    let mut st = DeviceState::pristine(&p);
    let drives = TerminalDrives {
        d: Drive::Pulse(PulseWaveform::new(5.0, 20e-3, 10e-6)),
        sr: Drive::Floating,
        si: Drive::Const(0.0),
    };
    let tr = simulate(&p, &mut st, &drives, 20e-3, &TransientOptions::default()).unwrap();
    let after: Vec<f64> = tr
        .time
        .iter()
        .zip(&tr.gate_current)
        .filter(|(t, _)| **t > 20e-6)
        .map(|(_, g)| g.abs())
        .collect();
    assert!(after.windows(2).all(|w| w[1] <= w[0]));
    assert!(after.last().unwrap() < &(1e-3 * after[0]));
}

fn read_pulse_trace(scale: f64) -> (TransientTrace, f64) {
    let p = DeviceParams::default();
    let mut st = DeviceState::pristine(&p);
    let w = PulseWaveform::new(2.0, 5e-9, 1e-9);
    let drives = TerminalDrives::for_mode(OperationMode::Read, w);
    let o = TransientOptions {
        capacitance_scale: scale,
        ..Default::default()
    };
    let tr = simulate(&p, &mut st, &drives, w.end(), &o).unwrap();
    let dc = solve_dc(&p, &st, &BiasCondition::driven(2.0, 0.0, 0.0)).unwrap();
    (tr, dc.i_d_ext)
}

#[test]
fn fast_read_overshoots_through_capacitors() {
    let (tr, plateau) = read_pulse_trace(1.0);
    let rise_end = 1e-9;
    let peak = tr
        .time
        .iter()
        .zip(&tr.i_d)
        .filter(|(t, _)| **t <= rise_end)
        .map(|(_, i)| *i)
        .fold(f64::MIN, f64::max);
    assert!(peak > plateau, "peak {peak} plateau {plateau}");
    // Settled to the DC value by the end of the plateau.
    let k = tr.time.iter().rposition(|&t| t <= 6e-9).unwrap();
    assert!(((tr.i_d[k] - plateau) / plateau).abs() < 1e-3);

    let (tr, plateau) = read_pulse_trace(0.0);
    let peak = tr.i_d.iter().copied().fold(f64::MIN, f64::max);
    assert!(peak < 1.01 * plateau);
}

/// Charge carried by positive and by negative gate current, both >= 0.
fn split_gate_charge(tr: &TransientTrace) -> (f64, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for k in 1..tr.len() {
        let h = 0.5 * (tr.time[k] - tr.time[k - 1]);
        let (a, b) = (tr.gate_current[k - 1], tr.gate_current[k]);
        pos += h * (a.max(0.0) + b.max(0.0));
        neg -= h * (a.min(0.0) + b.min(0.0));
    }
    (pos, neg)
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn any_pulse_conserves_charge(
            row in prop::sample::select(vec![3u8, 4, 5, 6, 7, 8]),
            width in 1e-6..300e-6f64,
            edge in 1e-8..20e-6f64,
            q0 in -2.5e-15..0.0f64,
            extra in 0.0..1.5f64,
        ) {
            let p = DeviceParams::default();
            let mode = OperationMode::from_row(row, Some(1.5)).unwrap();
            let v = if mode.is_program() { 4.5 + extra } else { 7.5 + extra };
            let pulse = PulseWaveform::new(v, width, edge);
            let mut st = DeviceState::pristine(&p).with_charge(q0);
            let drives = TerminalDrives::for_mode(mode, pulse);
            let tr = simulate(&p, &mut st, &drives, pulse.end(), &TransientOptions::default()).unwrap();
            prop_assert!(relative_charge_error(&tr, q0) < 1e-3);
            if mode.is_program() {
                prop_assert!(tr.gate_current.iter().all(|&g| g <= 0.0));
            } else if row != 8 {
                // While the floating drain charges up, a lightly programmed
                // cell's injection channel conducts briefly, so a vanishing
                // electron current can appear. The net change still erases.
                let (pos, neg) = split_gate_charge(&tr);
                prop_assert!(st.q_fg >= q0);
                prop_assert!(neg <= 1e-6 * pos, "pos {pos} neg {neg}");
            }
        }
    }
}
