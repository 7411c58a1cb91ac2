//! Subject-level data and stage-wise t-test p-values.

use crate::scenario::{GroupSizes, Scenario};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Per-endpoint mean and sum of squared deviations of one group.
#[derive(Debug, Clone, Copy, Default)]
struct Summary {
    n: usize,
    mean: [f64; 2],
    ss: [f64; 2],
}

fn draw_group(n: usize, mu: f64, scenario: &Scenario, rng: &mut impl Rng) -> Summary {
    let rho = scenario.rho;
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    let mut s = Summary {
        n,
        ..Default::default()
    };
    for i in 0..n {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let y = [mu + scenario.sigma * e1, mu + scenario.sigma * (rho * e1 + tail * e2)];
        // Welford update.
        for e in 0..2 {
            let d = y[e] - s.mean[e];
            s.mean[e] += d / (i + 1) as f64;
            s.ss[e] += d * (y[e] - s.mean[e]);
        }
    }
    s
}

/// One-sided pooled-variance two-sample t-test of treatment > control.
fn t_test_p(t: &Summary, c: &Summary, e: usize) -> f64 {
    let df = (t.n + c.n - 2) as f64;
    let s2 = (t.ss[e] + c.ss[e]) / df;
    let se = (s2 * (1.0 / t.n as f64 + 1.0 / c.n as f64)).sqrt();
    let stat = (t.mean[e] - c.mean[e]) / se;
    if !stat.is_finite() {
        return if t.mean[e] > c.mean[e] { 0.0 } else { 1.0 };
    }
    StudentsT::new(0.0, 1.0, df).expect("df is positive").sf(stat)
}

/// Stage-wise p-values, primaries then secondaries, from fresh data of the
/// given sizes. Arms without subjects yield `None`.
pub fn simulate_stage_data(scenario: &Scenario, sizes: &GroupSizes, rng: &mut impl Rng) -> Vec<Option<f64>> {
    let m = scenario.arms();
    assert_eq!(sizes.treatment.len(), m, "one size per arm");
    let mut out = vec![None; 2 * m];
    if sizes.control < 1 {
        return out;
    }
    let control = draw_group(sizes.control, 0.0, scenario, rng);
    for a in 0..m {
        let n = sizes.treatment[a];
        // A t-test needs at least one degree of freedom.
        if n == 0 || n + sizes.control < 3 {
            continue;
        }
        let g = draw_group(n, scenario.effects[a] * scenario.sigma, scenario, rng);
        out[a] = Some(t_test_p(&g, &control, 0));
        out[a + m] = Some(t_test_p(&g, &control, 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::Normal;

    #[test]
    fn null_p_values_are_uniform() {
        let s = Scenario::global_null(2, 0.5).unwrap();
        let sizes = GroupSizes::balanced(2, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut p: Vec<f64> = (0..n)
            .map(|_| simulate_stage_data(&s, &sizes, &mut rng)[0].unwrap())
            .collect();
        p.sort_by(f64::total_cmp);
        let ks = p
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn power_matches_normal_approximation() {
        let s = Scenario::new("one", vec![0.4], 1.0, 0.0).unwrap();
        let sizes = GroupSizes::balanced(1, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| simulate_stage_data(&s, &sizes, &mut rng)[0].unwrap() <= 0.025)
            .count();
        let nd = Normal::standard();
        let want = nd.cdf(0.4 * 50f64.sqrt() - nd.inverse_cdf(0.975));
        let got = hits as f64 / n as f64;
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
    }

    #[test]
    fn perfectly_correlated_endpoints_agree() {
        let s = Scenario::new("one", vec![0.3, 0.0], 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = simulate_stage_data(&s, &GroupSizes::balanced(2, 15), &mut rng);
            assert_eq!(p[0], p[2]);
            assert_eq!(p[1], p[3]);
        }
    }

    #[test]
    fn dropped_arms_have_no_p_value() {
        let s = Scenario::global_null(3, 0.0).unwrap();
        let sizes = GroupSizes {
            treatment: vec![10, 0, 12],
            control: 11,
        };
        let p = simulate_stage_data(&s, &sizes, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(p[1].is_none() && p[4].is_none());
        assert!(p[0].is_some() && p[5].is_some());
    }
}
