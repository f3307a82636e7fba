use proptest::prelude::*;

use oxcal::autocal::{calibrate_row, find_zero_crossing, sweep_stage, MeasureSettings};
use oxcal::caldac::{all_codes, CalCode, LadderSpec, Stage};
use oxcal::crossbar::{CrossbarParams, CrossbarState, Sampling};
use oxcal::devices::{
    apply_pulse, cell_path_conductance, read_current, BodyBiasModel, CellState, OxRamCell,
    PulseSpec, SelectorModel,
};
use oxcal::protocol::{
    decode_bits, encode_bits, serial_load, ControlFrame, IpotCode, RowControlWord, ShiftRegister,
};

fn noiseless() -> MeasureSettings {
    MeasureSettings {
        n_samples: 1,
        noise_sigma: 0.0,
        sampling: Sampling::Auto,
    }
}

fn any_pulse() -> impl Strategy<Value = PulseSpec> {
    prop_oneof![
        Just(PulseSpec::form()),
        Just(PulseSpec::set()),
        Just(PulseSpec::reset()),
        (-1.0f64..=1.0).prop_map(PulseSpec::read),
        (-6.0f64..6.0, 0.0f64..5.0, 1e-9f64..1e-4).prop_map(|(v_ts, v_gate, width)| PulseSpec {
            v_ts,
            v_gate,
            width,
            compliance: None,
        }),
    ]
}

fn any_word() -> impl Strategy<Value = RowControlWord> {
    (0u32..=0x3FFF, 0u16..4096).prop_map(|(ipot, cal)| RowControlWord {
        ipot: IpotCode::new(ipot).unwrap(),
        cal: CalCode::unpack(cal).unwrap(),
    })
}

fn any_frame(max_rows: usize) -> impl Strategy<Value = ControlFrame> {
    prop::collection::vec(any_word(), 1..=max_rows)
        .prop_map(|rows| ControlFrame::new(rows).unwrap())
}

proptest! {
    #[test]
    fn pulse_sequences_stay_in_state_machine(pulses in prop::collection::vec(any_pulse(), 1..40)) {
        let mut cell = OxRamCell::default();
        let mut forms = 0;
        for p in &pulses {
            let before = cell.state;
            if let Ok(next) = apply_pulse(cell, p) {
                if before == CellState::Pristine && next.state != CellState::Pristine {
                    forms += 1;
                }
                // nothing returns a formed cell to pristine
                prop_assert!(!(before != CellState::Pristine && next.state == CellState::Pristine));
                cell = next;
            }
        }
        prop_assert!(forms <= 1);
    }

    #[test]
    fn read_current_linear_in_voltage(v in -1.0f64..=1.0, k in 0.0f64..=1.0, hrs: bool, r_on in 0.0f64..1e5) {
        let state = if hrs { CellState::Hrs } else { CellState::Lrs };
        let cell = OxRamCell::default().with_state(state);
        let sel = SelectorModel::new(r_on, 0.0).unwrap();
        let i_v = read_current(&cell, &sel, v).unwrap();
        let i_kv = read_current(&cell, &sel, k * v).unwrap();
        prop_assert!((i_kv - k * i_v).abs() <= 1e-18 + 1e-12 * i_v.abs());
        // LRS always conducts at least as much as HRS
        let lrs = read_current(&OxRamCell::default().with_state(CellState::Lrs), &sel, v.abs()).unwrap();
        let hrs_i = read_current(&OxRamCell::default().with_state(CellState::Hrs), &sel, v.abs()).unwrap();
        prop_assert!(lrs >= hrs_i);
    }

    #[test]
    fn offset_correction_is_odd(steps in -(1i64 << 19)..(1i64 << 19), eta in 0.01f64..0.99) {
        // dyadic offsets keep v_calibref ± x exactly representable
        let x = steps as f64 / (1u64 << 20) as f64;
        let m = BodyBiasModel::new(eta, 4.5).unwrap();
        prop_assert_eq!(m.offset_correction(4.5 + x), -m.offset_correction(4.5 - x));
    }

    #[test]
    fn codec_round_trip(frame in any_frame(8)) {
        let bits = encode_bits(&frame);
        prop_assert_eq!(bits.len(), 26 * frame.n_rows());
        prop_assert_eq!(decode_bits(&bits, frame.n_rows()).unwrap(), frame);
    }

    #[test]
    fn serial_load_then_latch_matches_codec(frame in any_frame(4), hz in 1.0f64..1e7) {
        let mut reg = ShiftRegister::new(frame.n_rows()).unwrap();
        serial_load(&mut reg, &encode_bits(&frame), hz);
        reg.latch();
        prop_assert_eq!(reg.outputs(), &frame);
    }

    #[test]
    fn column_current_superposition(seed: u64, v_read in -1.0f64..1.0, mask in 0u8..16) {
        let params = CrossbarParams {
            selector: SelectorModel::new(36.3e3, 0.0).unwrap(),
            ..Default::default()
        };
        let mut xb = CrossbarState::new(4, 2, params, seed).unwrap();
        for r in 0..4 {
            xb.target_cell_op(r, 0, oxcal::Operation::Form, 0.3).unwrap();
            if r % 2 == 1 {
                xb.target_cell_op(r, 0, oxcal::Operation::Reset, 0.3).unwrap();
            }
        }
        let selected: Vec<usize> = (0..4).filter(|r| mask & (1 << r) != 0).collect();
        let total = xb.column_current(0, v_read, &selected).unwrap();
        let mut sum = 0.0;
        for &r in &selected {
            sum += xb.column_current(0, v_read, &[r]).unwrap();
        }
        prop_assert_eq!(total, sum);
    }

    #[test]
    fn power_is_additive(seed: u64, picks in prop::collection::vec((0usize..3, 0usize..3), 0..9)) {
        let mut xb = CrossbarState::new(3, 3, CrossbarParams::default(), seed).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                xb.target_cell_op(r, c, oxcal::Operation::Form, 0.3).unwrap();
            }
        }
        let total = xb.read_power(&picks, 0.05).unwrap().total_w;
        let mut sum = 0.0;
        for &cell in &picks {
            sum += xb.read_power(&[cell], 0.05).unwrap().total_w;
        }
        prop_assert_eq!(total, sum);
    }

    #[test]
    fn stage1_noiseless_sweep_monotone_single_bracket(seed: u64) {
        let xb = CrossbarState::new(1, 1, CrossbarParams::default(), seed).unwrap();
        let rec = sweep_stage(&xb, 0, Stage::Coarse, CalCode::midscale(), &noiseless(), seed).unwrap();
        let m = rec.means();
        prop_assert!(m.windows(2).all(|w| w[1] > w[0]));
        let sign_changes = m.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        prop_assert!(sign_changes <= 1);
        if sign_changes == 0 && !m.contains(&0.0) {
            prop_assert!(find_zero_crossing(&m).is_none());
        }
    }

    #[test]
    fn calibration_is_deterministic(state_seed: u64, cal_seed: u64) {
        let run = || {
            let mut xb = CrossbarState::new(1, 1, CrossbarParams::default(), state_seed).unwrap();
            calibrate_row(&mut xb, 0, &MeasureSettings::default(), cal_seed).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.residual.to_bits(), b.residual.to_bits());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn pack_unpack_identity() {
    for w in 0u16..4096 {
        assert_eq!(CalCode::unpack(w).unwrap().pack(), w);
    }
}

#[test]
fn noiseless_measurement_matches_model_for_every_code() {
    let xb = CrossbarState::new(3, 1, CrossbarParams::default(), 17).unwrap();
    let ladder = xb.ladder();
    for row in 0..3 {
        let d = xb.driver(row).unwrap();
        for code in all_codes() {
            let m = xb
                .measure_offset_at(row, code, 1, 0.0, Sampling::Auto, 0)
                .unwrap();
            let want = d.v_os_random + d.body.eta * (ladder.output(code) - d.body.v_calibref);
            assert_eq!(m.mean, want);
        }
    }
}

#[test]
fn calibration_transfer_is_affine_in_packed_code() {
    let xb = CrossbarState::new(1, 1, CrossbarParams::default(), 3).unwrap();
    let slope = 0.25 * LadderSpec::default().lsb();
    let d = xb.driver(0).unwrap();
    let base = d.offset_at(xb.ladder(), CalCode::default());
    for code in all_codes() {
        let v = d.offset_at(xb.ladder(), code);
        let want = base + slope * f64::from(code.pack());
        assert!((v - want).abs() < 1e-15, "{code}: {v} vs {want}");
    }
}

#[test]
fn cell_conductance_monotone_in_path_resistance() {
    let sel = SelectorModel::new(1e3, 0.0).unwrap();
    let mut last = f64::INFINITY;
    for r in [1e3, 5e3, 13.7e3, 50e3, 845.9e3] {
        let cell = OxRamCell::new(r, 2.0 * r)
            .unwrap()
            .with_state(CellState::Lrs);
        let g = cell_path_conductance(&cell, &sel, true);
        assert!(g < last);
        last = g;
    }
}
