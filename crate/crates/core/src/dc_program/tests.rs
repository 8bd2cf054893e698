use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::dump::ProblemDump;
use super::*;
use crate::info_cost::sensor_mi;
use crate::testkit::{positive_table, random_instance, rng};

#[test]
fn variable_and_block_counts() {
    let (sys, bank) = random_instance(1, 2, 3);
    let p = DCProgram::assemble_finite(&sys, &bank, 1, 5.0).unwrap();
    assert_eq!(p.n_vars(), 3 + 3 + 3);
    assert_eq!(p.blocks().len(), 3 + 1 + 1);
    let p = DCProgram::assemble_finite(&sys, &bank, 3, 5.0).unwrap();
    assert_eq!(p.n_vars(), 9 + 9 + 9 + 2 * 3);
    assert_eq!(p.blocks().len(), 9 + 3 + 2 + 1);
    let p = DCProgram::assemble_infinite(&sys, &bank, 5.0).unwrap();
    assert_eq!(p.n_vars(), 3 + 3 + 3 + 3);
    let names: Vec<&str> = p.blocks().iter().map(|b| b.name.as_str()).collect();
    assert_eq!(names, ["sensor[1,1]", "sensor[1,2]", "sensor[1,3]", "mse[1]", "stationarity", "budget"]);
    assert!(DCProgram::assemble_finite(&sys, &bank, 0, 1.0).is_err());
    assert!(DCProgram::assemble_finite(&sys, &bank, 1, -1.0).is_err());
}

#[test]
fn index_names_cover_every_variable_once() {
    let (sys, bank) = random_instance(2, 3, 2);
    let p = DCProgram::assemble_finite(&sys, &bank, 3, 1.0).unwrap();
    let names: Vec<String> = (0..p.n_vars()).map(|v| p.index().name(v)).collect();
    let unique: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    let ix = p.index();
    assert_eq!(ix.name(ix.s(1, 2, 0)), "S[2][1,3]");
    assert_eq!(ix.name(ix.q_pred(2, 1, 1).unwrap()), "Qpred[3][2,2]");
    assert_eq!(ix.q_pred(0, 0, 0), None);
    assert_eq!(ix.s(0, 0, 1), ix.s(0, 1, 0));
}

#[test]
fn structured_point_is_strictly_feasible() {
    for (seed, horizon) in [(3, Some(1)), (4, Some(3)), (5, None)] {
        let (sys, bank) = random_instance(seed, 3, 3);
        let base = match horizon {
            Some(t) => DCProgram::assemble_finite(&sys, &bank, t, 1e3).unwrap(),
            None => DCProgram::assemble_infinite(&sys, &bank, 1e3).unwrap(),
        };
        let delta = positive_table(seed, base.steps(), 3, 0.1, 10.0);
        let x = base.point_from_delta(&delta, 0.5, 1e-3, 1e-3).unwrap();
        for c in base.block_eigenvalues(&x) {
            assert!(c.min_eig > 0.0, "{} not strictly feasible: {}", c.name, c.min_eig);
        }
        // On the bounds every sensor and MSE block is singular.
        let x = base.point_from_delta(&delta, 1.0, 0.0, 0.0).unwrap();
        for c in base.block_eigenvalues(&x) {
            if c.name.starts_with("sensor") || c.name.starts_with("mse") || c.name.starts_with("propagation") || c.name == "stationarity" {
                assert!(c.min_eig.abs() < 1e-8 * c.scale, "{} should be tight: {}", c.name, c.min_eig);
            }
        }
        assert!(base.max_violation(&x) < 1e-8);
    }
}

#[test]
fn objective_at_bound_matches_mutual_information() {
    let (sys, bank) = random_instance(6, 3, 4);
    let p = DCProgram::assemble_finite(&sys, &bank, 3, 10.0).unwrap();
    let delta = positive_table(7, 3, 4, 0.05, 20.0);
    let x = p.point_from_delta(&delta, 1.0, 0.0, 0.0).unwrap();
    assert_relative_eq!(p.dc_objective(&x), p.true_objective(&delta).unwrap(), max_relative = 1e-10);
    let cov = p.covariances(&delta, 0.0).unwrap();
    let mi = p.mi_table(&delta).unwrap();
    let g = p.gamma_table(&x);
    for t in 0..3 {
        for i in 0..4 {
            let direct = sensor_mi(&cov.p_pred[t], &bank.row(i), 1.0 / delta[(t, i)]).unwrap();
            let from_slack = 0.5 * (delta[(t, i)].ln() - g[(t, i)].ln()) / std::f64::consts::LN_2;
            assert_relative_eq!(from_slack, direct, epsilon = 1e-9);
            assert_relative_eq!(mi[(t, i)], direct, epsilon = 1e-12);
        }
    }
}

#[test]
fn linearization_is_tangent_and_majorizes() {
    let mut r = rng(8);
    for seed in 0..5 {
        let (sys, bank) = random_instance(100 + seed, 2, 3);
        let p = DCProgram::assemble_finite(&sys, &bank, 2, 10.0).unwrap();
        let hat = positive_table(seed, 2, 3, 0.1, 10.0);
        let sub = linearize_subproblem(&p, &hat).unwrap();
        let x = p.point_from_delta(&hat, 0.7, 0.0, 0.0).unwrap();
        assert_relative_eq!(sub.objective(&x), p.dc_objective(&x), max_relative = 1e-12);
        for _ in 0..100 {
            let mut y = x.clone();
            for t in 0..2 {
                for i in 0..3 {
                    y[p.index().delta(t, i)] = r.gen_range(1e-3..100.0);
                    y[p.index().gamma(t, i)] = r.gen_range(1e-3..100.0);
                }
            }
            assert!(sub.objective(&y) >= p.dc_objective(&y) - 1e-12);
        }
    }
}

#[test]
fn surrogate_value_at_delta_matches_full_objective() {
    let (sys, bank) = random_instance(9, 3, 3);
    let p = DCProgram::assemble_infinite(&sys, &bank, 10.0).unwrap();
    let hat = positive_table(1, 1, 3, 0.5, 2.0);
    let sub = linearize_subproblem(&p, &hat).unwrap();
    let delta = positive_table(2, 1, 3, 0.1, 10.0);
    let x = p.point_from_delta(&delta, 1.0, 0.0, 0.0).unwrap();
    assert_relative_eq!(sub.value_at_delta(&delta).unwrap(), sub.objective(&x), max_relative = 1e-10);
}

#[test]
fn reconstruction_dominates_relaxed_information() {
    let (sys, bank) = random_instance(10, 3, 3);
    let p = DCProgram::assemble_finite(&sys, &bank, 4, 100.0).unwrap();
    let delta = positive_table(3, 4, 3, 0.1, 10.0);
    // Relaxed Q_pred strictly below the recursion.
    let x = p.point_from_delta(&delta, 0.5, 0.1, 0.05).unwrap();
    let steps = reconstruct_covariances(&p, &x, 1e-6).unwrap();
    assert_eq!(steps.len(), 4);
    assert!(steps.iter().all(|s| s.min_eig_gap >= -1e-9));
    assert!(steps[1..].iter().all(|s| s.min_eig_gap > 0.0));
    assert_eq!(steps[0].q_filt, steps[0].q_filt_relaxed);

    // A relaxed Q_pred above the recursion is inconsistent.
    let mut bad = x.clone();
    let v = p.index().q_pred(2, 0, 0).unwrap();
    bad[v] += 10.0;
    assert!(matches!(reconstruct_covariances(&p, &bad, 1e-6), Err(Error::RelaxationInconsistency { step: 3, .. })));
}

#[test]
fn memoryless_reconstruction() {
    let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.5]);
    let sys = GaussMarkovSystem::new(DMatrix::zeros(2, 2), f.clone(), DMatrix::identity(2, 2)).unwrap();
    let bank = SensorBank::identity(2).unwrap();
    let p = DCProgram::assemble_finite(&sys, &bank, 3, 100.0).unwrap();
    let x = p.point_from_delta(&positive_table(4, 3, 2, 0.1, 10.0), 0.5, 0.1, 0.1).unwrap();
    let expected = (&f * f.transpose()).try_inverse().unwrap();
    for s in &reconstruct_covariances(&p, &x, 1e-6).unwrap()[1..] {
        assert_relative_eq!(s.q_pred, expected, max_relative = 1e-10);
    }
}

#[test]
fn allocation_fields_and_csv() {
    let a = Allocation::from_delta(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 1e-9, 2.0])).unwrap();
    assert_relative_eq!(a.variance(0, 0), 1.0 / 3.0);
    assert_relative_eq!(a.sensitivity(0, 0).unwrap(), 2.0);
    assert!(!a.is_active(0, 1));
    assert_eq!(a.variance(0, 1), f64::INFINITY);
    assert_eq!(a.sensitivity(0, 1), None);
    assert_eq!(a.support(0), vec![true, false]);
    let e = extract_allocation(a.delta_table(), ZERO_THRESHOLD).unwrap();
    assert_eq!(e.support_size(1), 1);
    assert_eq!(e.active(1), vec![1]);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,sensor,delta,variance,sensitivity,active\n1,1,3,"));
    assert!(text.contains("1,2,0,inf,inf,0"));
    assert_eq!(Allocation::read_csv(buf.as_slice()).unwrap(), a);
    assert!(Allocation::read_csv("t,sensor,delta\n1,1,1\n1,1,2\n".as_bytes()).is_err());
    assert!(Allocation::read_csv("t,sensor,delta\n1,1,1\n2,2,2\n".as_bytes()).is_err());
    assert!(Allocation::from_delta(DMatrix::from_element(1, 1, -1.0)).is_err());
}

#[test]
fn dump_round_trips_and_reproduces_objective() {
    let (sys, bank) = random_instance(11, 2, 2);
    let p = DCProgram::assemble_finite(&sys, &bank, 2, 10.0).unwrap();
    let hat = positive_table(5, 2, 2, 0.5, 2.0);
    let sub = linearize_subproblem(&p, &hat).unwrap();
    let x = p.point_from_delta(&hat, 0.5, 0.1, 0.1).unwrap();
    let dump = ProblemDump::from_subproblem(&sub, Some(&x));
    let mut buf = Vec::new();
    dump.write_json(&mut buf).unwrap();
    let back = ProblemDump::read_json(buf.as_slice()).unwrap();
    assert_eq!(back, dump);
    let xs: Vec<f64> = x.iter().cloned().collect();
    assert_relative_eq!(back.objective_at(&xs), sub.objective(&x), max_relative = 1e-14);
    let blocks = back.lmi_blocks();
    let xv = DVector::from_vec(xs);
    for (b, orig) in blocks.iter().zip(p.blocks()) {
        assert_eq!(b.evaluate(&xv), orig.evaluate(&xv));
    }
    let mut bad = String::from_utf8(buf).unwrap();
    bad = bad.replacen("\"n_vars\"", "\"extra\": 1, \"n_vars\"", 1);
    assert!(ProblemDump::read_json(bad.as_bytes()).is_err());
}
