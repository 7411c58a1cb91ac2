mod common;

use approx::assert_abs_diff_eq;
use common::*;
use gmcp_core::combo::{combo_final, combo_interim, ComboDesign, LazyCombo};
use gmcp_core::stagewise::{StageLabel, StageMarginals};

#[test]
fn stage_one_table() {
    let d = ComboDesign::new(trial_design()).unwrap();
    assert_abs_diff_eq!(d.alpha1(), 0.001525, epsilon = 1e-5);
    assert_abs_diff_eq!(d.alpha2(), 0.0245, epsilon = 5e-4);
    let st = combo_interim(&d, &stage_one()).unwrap();
    for (labels, p, kind) in TABLE3 {
        let rec = st.record(set(labels));
        assert_abs_diff_eq!(rec.p1, p, epsilon = 1e-4);
        assert_eq!(rec.kind, kind, "{labels:?}");
        assert_eq!(rec.rejected, labels.contains(&1), "{labels:?}");
    }
    assert_eq!(st.early_rejected, set(&[1]));
    assert_eq!(st.open_sets().len(), 7);
}

#[test]
fn stage_two_tables_and_decisions() {
    let d = ComboDesign::new(trial_design()).unwrap();
    let st = combo_interim(&d, &stage_one()).unwrap();
    let fin = combo_final(&d, &st, &no_change(set(&[2, 3, 4])), &stage_two()).unwrap();
    for (labels, p2, c) in TABLE5 {
        let row = &fin.audit[set(labels).bits() as usize - 1];
        assert_abs_diff_eq!(row.p2.unwrap(), p2, epsilon = 1e-4);
        assert_abs_diff_eq!(row.combined.unwrap(), c, epsilon = 1e-4);
    }
    assert_eq!(fin.rejected_stage1, set(&[1]));
    assert_eq!(fin.rejected, set(&[1, 3]));
}

#[test]
fn lazy_evaluation_agrees() {
    let d = ComboDesign::new(trial_design()).unwrap();
    let p1 = stage_one();
    let mut lazy = LazyCombo::new(&d, &p1);
    let early = lazy.early_rejected().unwrap();
    assert_eq!(early, set(&[1]));
    let rej = lazy.final_rejections(early, &no_change(set(&[2, 3, 4])), &stage_two()).unwrap();
    assert_eq!(rej, set(&[1, 3]));
}

#[test]
fn stage_two_p_of_one_adds_nothing() {
    let d = ComboDesign::new(trial_design()).unwrap();
    let st = combo_interim(&d, &stage_one()).unwrap();
    let p2 = StageMarginals::observed(StageLabel::SecondIncremental, 4, set(&[2, 3, 4]), &[1.0, 1.0, 1.0]).unwrap();
    let fin = combo_final(&d, &st, &no_change(set(&[2, 3, 4])), &p2).unwrap();
    assert_eq!(fin.rejected, set(&[1]));
}

#[test]
fn unselected_sets_are_never_rejected() {
    let d = ComboDesign::new(trial_design()).unwrap();
    let st = combo_interim(&d, &stage_one()).unwrap();
    let p2 = StageMarginals::observed(StageLabel::SecondIncremental, 4, set(&[2]), &[1e-6]).unwrap();
    let fin = combo_final(&d, &st, &no_change(set(&[2])), &p2).unwrap();
    // {3} and {4} have no selected member.
    for labels in [&[3][..], &[4], &[3, 4]] {
        assert!(!fin.audit[set(labels).bits() as usize - 1].rejected);
    }
    assert!(fin.rejected.contains(1));
    assert!(!fin.rejected.contains(2));
}

#[test]
fn selecting_an_early_rejection_fails() {
    let d = ComboDesign::new(trial_design()).unwrap();
    let st = combo_interim(&d, &stage_one()).unwrap();
    assert!(combo_final(&d, &st, &no_change(set(&[1, 2])), &stage_two()).is_err());
}

/// Single selected hypothesis: brute force over the closure.
#[test]
fn singleton_selection_matches_enumeration() {
    let d = ComboDesign::new(trial_design()).unwrap();
    let st = combo_interim(&d, &stage_one()).unwrap();
    for (j, q) in [(2usize, 0.001), (3, 0.03), (4, 0.2), (2, 0.04)] {
        let p2 = StageMarginals::observed(StageLabel::SecondIncremental, 4, set(&[j]), &[q]).unwrap();
        let fin = combo_final(&d, &st, &no_change(set(&[j])), &p2).unwrap();
        let want = st
            .open_sets()
            .into_iter()
            .filter(|s| s.contains(j - 1))
            .all(|s| gmcp_core::combo::inverse_normal_combine(st.record(s).p1, q, d.nu1, d.nu2) <= d.alpha2());
        assert_eq!(fin.rejected.contains(j - 1), want, "H{j} with p = {q}");
    }
}
