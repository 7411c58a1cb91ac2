mod common;

use approx::assert_abs_diff_eq;
use common::*;
use gmcp_core::adaptation::JPlusClass;
use gmcp_core::cer::{cer_final, cer_interim, stage_one_z, AdaptedTest, CerConditional, ClosurePlan};

fn plan() -> ClosurePlan {
    ClosurePlan::new(trial_design()).unwrap()
}

#[test]
fn planned_boundaries() {
    let plan = plan();
    let full = plan.get(set(&[1, 2, 3, 4]));
    assert_abs_diff_eq!(full.c1, 0.001564, epsilon = 1e-6);
    assert_abs_diff_eq!(full.c2, 0.02633, epsilon = 1e-5);
    assert_abs_diff_eq!(plan.get(set(&[2, 3, 4])).c2, 0.024409, epsilon = 1e-6);
    for (labels, th1, th2, kind) in TABLE7 {
        let sp = plan.get(set(labels));
        assert_eq!(sp.kind, kind, "{labels:?}");
        let got = sp.thresholds();
        for (pos, &l) in labels.iter().enumerate() {
            let (a, b) = got
                .iter()
                .find(|(j, _, _)| *j == l - 1)
                .map_or((0.0, 0.0), |&(_, a, b)| (a, b));
            assert_abs_diff_eq!(a, th1[pos], epsilon = 1e-4);
            assert_abs_diff_eq!(b, th2[pos], epsilon = 1e-4);
        }
        let (r1, r2) = plan.residuals(set(labels)).unwrap();
        assert!(r1.abs() <= 1e-8 && r2.abs() <= 1e-8, "{labels:?}: {r1:e} {r2:e}");
    }
}

#[test]
fn interim_conditional_errors() {
    let plan = plan();
    let st = cer_interim(&plan, &stage_one()).unwrap();
    assert_eq!(st.early_rejected, set(&[1]));
    assert_eq!(st.open_sets().len(), 7);
    for (labels, b) in TABLE8 {
        let rec = st.record(set(labels));
        assert!(!rec.rejected);
        assert_abs_diff_eq!(rec.b.unwrap(), b, epsilon = 1e-3);
    }
}

#[test]
fn cumulative_p_values() {
    assert_abs_diff_eq!(adapted_t(), 0.4, epsilon = 1e-3);
    let c = cumulative();
    assert_abs_diff_eq!(c.get(1).unwrap(), 0.0111, epsilon = 5e-4);
    assert_abs_diff_eq!(c.get(3).unwrap(), 0.0234, epsilon = 5e-4);
}

#[test]
fn final_decisions() {
    let plan = plan();
    let st = cer_interim(&plan, &stage_one()).unwrap();
    let a = adaptation(adapted_t());
    let fin = cer_final(&plan, &st, &a, &cumulative()).unwrap();
    assert_eq!(fin.rejected, set(&[1, 2, 4]));
    let row = |l: &[usize]| &fin.audit[set(l).bits() as usize - 1];
    assert_eq!(row(&[3]).class, Some(JPlusClass::B));
    assert!(!row(&[3]).rejected);
    assert_eq!(row(&[3, 4]).part, Some(set(&[4])));
    assert_eq!(row(&[2, 3, 4]).part, Some(set(&[2, 4])));
    for l in [&[2][..], &[4], &[2, 4], &[2, 3], &[3, 4], &[2, 3, 4]] {
        assert!(row(l).rejected, "{l:?}");
    }

    let mut lazy = CerConditional::new(&plan, &a, &st.p1, st.early_rejected).unwrap();
    let rej = lazy
        .final_rejections(&cumulative(), |s| Ok(st.record(s).rejected))
        .unwrap();
    assert_eq!(rej, set(&[1, 2, 4]));
}

#[test]
fn adapted_boundaries_satisfy_constraint() {
    let plan = plan();
    let st = cer_interim(&plan, &stage_one()).unwrap();
    let t = adapted_t();
    let a = adaptation(t);
    let fin = cer_final(&plan, &st, &a, &cumulative()).unwrap();
    let z1 = stage_one_z(&st.p1);
    for (seed, l) in [&[2][..], &[4], &[2, 4], &[2, 3], &[3, 4], &[2, 3, 4]].into_iter().enumerate() {
        let s = set(l);
        let row = &fin.audit[s.bits() as usize - 1];
        let c = row.c_tilde.unwrap();
        let b = row.b.unwrap();
        let at = AdaptedTest::new(s, &a).unwrap();
        assert_abs_diff_eq!(at.conditional_rejection(&a, &z1, c).unwrap(), b, epsilon = 1e-10);
        let w: Vec<(usize, f64)> = at.test.positive_members().map(|j| (j, at.weights[j])).collect();
        let mc = simulated_conditional_error(&P1, &w, c, t, 10_000_000 / w.len(), seed as u64);
        assert!((mc - b).abs() <= 1e-4, "{l:?}: simulated {mc} vs B {b}");
    }
}
