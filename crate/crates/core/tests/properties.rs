use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rate_alloc_core::dc_program::dump::ProblemDump;
use rate_alloc_core::dc_program::{linearize_subproblem, Allocation, DCProgram};
use rate_alloc_core::ecdq::{code_innovation, decode_innovation, quantize, reconstruct, QuantizerConfig};
use rate_alloc_core::model::{GaussMarkovSystem, SensorBank};
use rate_alloc_core::network::batch_mean;
use rate_alloc_core::scenarios::scalar::scalar_oracle;

/// Two-state stable source with three sensors, parameterized by proptest.
fn instance(a: [f64; 4], c: [f64; 6]) -> (GaussMarkovSystem, SensorBank) {
    let raw = DMatrix::from_row_slice(2, 2, &a);
    let rho = raw.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let a = raw * (0.9 / rho);
    let sys = GaussMarkovSystem::new(a, DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
    let c = DMatrix::from_row_slice(3, 2, &c);
    (sys, SensorBank::new(c, DVector::from_element(3, 1.0)).unwrap())
}

fn coef() -> impl Strategy<Value = f64> {
    -1.0..1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantization_error_is_within_half_a_step(z in -1e3..1e3f64, step in 1e-3..1e2f64, u in 0.0..1.0f64) {
        let cfg = QuantizerConfig::new(step).unwrap();
        let xi = (u - 0.5) * step;
        let err = reconstruct(quantize(z, &cfg, xi), &cfg, xi) - z;
        prop_assert!(err.abs() <= step / 2.0 * (1.0 + 1e-12));
    }

    #[test]
    fn codec_round_trips(theta in -50.0..50.0f64, sigma in 1e-2..10.0f64, v in 1e-4..10.0f64, u in 0.0..1.0f64) {
        let cfg = QuantizerConfig::from_variance(v).unwrap();
        let xi = (u - 0.5) * cfg.delta();
        let sent = code_innovation(theta, sigma, &cfg, xi).unwrap();
        prop_assert_eq!(sent.bits, sent.codeword.len());
        prop_assert_eq!(decode_innovation(&sent.codeword, sigma, &cfg, xi).unwrap(), sent.eta);
    }

    #[test]
    fn scalar_optimum_respects_budget_and_rate_falls_with_budget(a in -0.95..0.95f64, f in 0.1..3.0f64, b in 1e-3..10.0f64, k in 1.0..3.0f64) {
        let open = f * f / (1.0 - a * a);
        let lo = scalar_oracle(a, f, b * open).unwrap();
        let hi = scalar_oracle(a, f, k * b * open).unwrap();
        prop_assert!(lo.p_star <= b * open * (1.0 + 1e-12));
        prop_assert!(lo.p_star <= open * (1.0 + 1e-12));
        prop_assert!(hi.rate_bits() <= lo.rate_bits() + 1e-12);
    }

    #[test]
    fn more_precision_never_raises_mse(a in prop::array::uniform4(coef()), c in prop::array::uniform6(coef()),
                                       d in prop::array::uniform6(0.0..10.0f64), bump in prop::array::uniform6(0.0..10.0f64)) {
        let (sys, bank) = instance(a, c);
        let prog = DCProgram::assemble_finite(&sys, &bank, 2, 1.0).unwrap();
        let base = DMatrix::from_row_slice(2, 3, &d);
        let more = &base + DMatrix::from_row_slice(2, 3, &bump);
        prop_assert!(prog.mse(&more) <= prog.mse(&base) * (1.0 + 1e-10));
    }

    #[test]
    fn surrogate_majorizes_and_touches(a in prop::array::uniform4(coef()), c in prop::array::uniform6(coef()),
                                       hat in prop::array::uniform3(1e-2..1e2f64), y in prop::array::uniform6(1e-3..1e2f64)) {
        let (sys, bank) = instance(a, c);
        let prog = DCProgram::assemble_infinite(&sys, &bank, 10.0).unwrap();
        let hat = DMatrix::from_row_slice(1, 3, &hat);
        let sub = linearize_subproblem(&prog, &hat).unwrap();
        let x = prog.point_from_delta(&hat, 0.5, 0.0, 0.0).unwrap();
        prop_assert!((sub.objective(&x) - prog.dc_objective(&x)).abs() <= 1e-10 * prog.dc_objective(&x).abs().max(1.0));
        let mut z = x.clone();
        for i in 0..3 {
            z[prog.index().delta(0, i)] = y[i];
            z[prog.index().gamma(0, i)] = y[3 + i];
        }
        prop_assert!(sub.objective(&z) >= prog.dc_objective(&z) - 1e-12);
    }

    #[test]
    fn dump_json_round_trip_keeps_the_objective(a in prop::array::uniform4(coef()), c in prop::array::uniform6(coef()),
                                                hat in prop::array::uniform6(1e-2..1e2f64)) {
        let (sys, bank) = instance(a, c);
        let prog = DCProgram::assemble_finite(&sys, &bank, 2, 10.0).unwrap();
        let hat = DMatrix::from_row_slice(2, 3, &hat);
        let sub = linearize_subproblem(&prog, &hat).unwrap();
        let x = prog.point_from_delta(&hat, 0.5, 0.1, 0.1).unwrap();
        let dump = ProblemDump::from_subproblem(&sub, Some(&x));
        let mut buf = Vec::new();
        dump.write_json(&mut buf).unwrap();
        let back = ProblemDump::read_json(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &dump);
        let xs: Vec<f64> = x.iter().cloned().collect();
        prop_assert!((back.objective_at(&xs) - sub.objective(&x)).abs() <= 1e-12 * sub.objective(&x).abs().max(1.0));
    }

    #[test]
    fn allocation_csv_round_trips(vals in prop::collection::vec(prop_oneof![Just(0.0f64), 1e-6..1e6f64], 1..24), cols in 1usize..4) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let delta = DMatrix::from_row_slice(rows, cols, &vals[..rows * cols]);
        let alloc = Allocation::from_delta(delta).unwrap();
        let mut buf = Vec::new();
        alloc.write_csv(&mut buf).unwrap();
        let back = Allocation::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, alloc);
    }

    #[test]
    fn batch_mean_is_shift_equivariant(series in prop::collection::vec(-10.0..10.0f64, 20..200), shift in -5.0..5.0f64) {
        let (m, se) = batch_mean(&series, 10);
        let shifted: Vec<f64> = series.iter().map(|x| x + shift).collect();
        let (m2, se2) = batch_mean(&shifted, 10);
        prop_assert!((m2 - m - shift).abs() <= 1e-9);
        prop_assert!((se2 - se).abs() <= 1e-9);
    }
}
