//! Randomised property suites shared by the test targets. Each suite returns
//! its raw statistics so callers can both assert and report them.
#![allow(dead_code)]

use gmcp_core::adaptation::Adaptation;
use gmcp_core::cer::{adapt_boundary, cer_final, cer_interim, compute_b, AdaptedTest, ClosurePlan};
use gmcp_core::closed_test::elementary_rejections;
use gmcp_core::design::Design;
use gmcp_core::numerics::{many_to_one_correlation, mvn_upper_orthant_union, std_normal_sf, upper_z, CorrelationMatrix};
use gmcp_core::stagewise::{
    adjusted_p_mixed, adjusted_p_nonparam, adjusted_p_param, CorrelationKnowledge, KnowledgeBlock, MixedBlock,
    StageLabel, StageMarginals,
};
use gmcp_core::{IndexSet, WeightingGraph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// --- graphs -----------------------------------------------------------------

fn remove_in_order(g: &WeightingGraph, order: &[usize]) -> WeightingGraph {
    order.iter().fold(g.clone(), |g, &j| g.remove_node(j).unwrap())
}

fn graph_distance(a: &WeightingGraph, b: &WeightingGraph) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..a.k() {
        d = d.max((a.weight(i) - b.weight(i)).abs());
        for j in 0..a.k() {
            d = d.max((a.edge(i, j) - b.edge(i, j)).abs());
        }
    }
    d
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, first);
            out.push(p);
        }
    }
    out
}

/// Largest deviation, over every set and every removal order of its
/// complement, from the ascending-order graph and from the closure table.
pub fn order_deviation_all_orders(g: &WeightingGraph) -> f64 {
    let closure = g.closure_weights().unwrap();
    let all = IndexSet::full(g.k());
    let mut worst: f64 = 0.0;
    for j in all.subsets() {
        let removed: Vec<usize> = all.difference(j).iter().collect();
        let perms = permutations(&removed);
        let reference = remove_in_order(g, &perms[0]);
        for p in &perms[1..] {
            worst = worst.max(graph_distance(&reference, &remove_in_order(g, p)));
        }
        for m in j {
            worst = worst.max((reference.weight(m) - closure.weight(j, m)).abs());
        }
    }
    worst
}

/// Deviation from the closure table over `orders` random removal orders
/// per set.
pub fn order_deviation_random(g: &WeightingGraph, orders: usize, seed: u64) -> f64 {
    let closure = g.closure_weights().unwrap();
    let all = IndexSet::full(g.k());
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for j in all.subsets() {
        let mut removed: Vec<usize> = all.difference(j).iter().collect();
        for _ in 0..orders {
            removed.shuffle(&mut rng);
            let r = remove_in_order(g, &removed);
            for m in j {
                worst = worst.max((r.weight(m) - closure.weight(j, m)).abs());
            }
        }
    }
    worst
}

/// Random valid graph; every row with an outgoing edge sums to one and the
/// initial weights sum to one.
pub fn random_graph(rng: &mut impl Rng, k: usize) -> WeightingGraph {
    let mut w: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(0u8..4))).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..k)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let rows = (0..k)
        .map(|i| {
            let mut r: Vec<f64> = (0..k)
                .map(|j| if j == i { 0.0 } else { f64::from(rng.random_range(0u8..4)) })
                .collect();
            if k > 1 && r.iter().all(|&x| x == 0.0) {
                r.iter_mut().enumerate().for_each(|(j, x)| *x = if j == i { 0.0 } else { 1.0 });
            }
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter_mut().for_each(|x| *x /= s);
            }
            r
        })
        .collect();
    WeightingGraph::new(w, rows).unwrap()
}

/// Exhaustive order invariance on `graphs` random graphs of every size up
/// to `max_k`.
pub fn order_invariance_suite(graphs: usize, max_k: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..graphs {
        let k = 1 + i % max_k;
        worst = worst.max(order_deviation_all_orders(&random_graph(&mut rng, k)));
    }
    worst
}

// --- designs ------------------------------------------------------------------

/// Random disjoint blocks, each with a many-to-one correlation from random
/// group sizes.
pub fn random_knowledge(rng: &mut impl Rng, k: usize) -> CorrelationKnowledge {
    let n_blocks = rng.random_range(1..=k);
    let mut label: Vec<usize> = (0..k).map(|i| if i < n_blocks { i } else { rng.random_range(0..n_blocks) }).collect();
    label.shuffle(rng);
    let blocks = (0..n_blocks)
        .map(|b| {
            let members: IndexSet = (0..k).filter(|&i| label[i] == b).collect();
            let sizes: Vec<f64> = members.iter().map(|_| rng.random_range(20.0..100.0)).collect();
            let corr = if members.len() == 1 {
                CorrelationMatrix::identity(1)
            } else {
                many_to_one_correlation(&sizes, rng.random_range(20.0..100.0)).unwrap()
            };
            KnowledgeBlock { members, corr }
        })
        .collect();
    CorrelationKnowledge::new(k, blocks).unwrap()
}

pub fn random_design(rng: &mut impl Rng, k: usize) -> Design {
    let g = random_graph(rng, k);
    let kn = random_knowledge(rng, k);
    let t = rng.random_range(0.3..0.7);
    Design::new(g, kn, 0.025, t, Default::default()).unwrap()
}

// --- adjusted p-value dominance ------------------------------------------------

#[derive(Debug, Default, Clone, Copy)]
pub struct Dominance {
    pub instances: usize,
    /// parametric > nonparametric
    pub param_over_nonparam: usize,
    /// mixed > nonparametric
    pub mixed_over_nonparam: usize,
    /// parametric > mixed
    pub param_over_mixed: usize,
    pub worst_param_over_mixed: f64,
}

/// Random instances with a fully known one-factor correlation; the mixed
/// test sees it only within a random partition of the members.
pub fn dominance_suite(instances: usize, seed: u64) -> Dominance {
    const REL: f64 = 1e-9;
    let mut rng = rng(seed);
    let mut out = Dominance {
        instances,
        worst_param_over_mixed: 1.0,
        ..Default::default()
    };
    for _ in 0..instances {
        let d = rng.random_range(2..=6);
        let lam: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.95)).collect();
        let full = CorrelationMatrix::one_factor(&lam).unwrap();
        let mut w: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let p: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random_range(-4.0..0.0))).collect();
        let nb = rng.random_range(1..=d);
        let label: Vec<usize> = (0..d).map(|i| if i < nb { i } else { rng.random_range(0..nb) }).collect();
        let pos: Vec<Vec<usize>> = (0..nb).map(|b| (0..d).filter(|&i| label[i] == b).collect()).collect();
        let subs: Vec<CorrelationMatrix> = pos.iter().map(|ps| full.submatrix(ps)).collect();
        let blocks: Vec<MixedBlock> = pos
            .iter()
            .zip(&subs)
            .map(|(ps, c)| MixedBlock { positions: ps, corr: c })
            .collect();
        let pp = adjusted_p_param(&p, &w, &full).unwrap();
        let pm = adjusted_p_mixed(&p, &w, &blocks).unwrap();
        let pn = adjusted_p_nonparam(&p, &w);
        out.param_over_nonparam += usize::from(pp > pn * (1.0 + REL));
        out.mixed_over_nonparam += usize::from(pm > pn * (1.0 + REL));
        if pp > pm * (1.0 + REL) {
            out.param_over_mixed += 1;
            out.worst_param_over_mixed = out.worst_param_over_mixed.max(pp / pm);
        }
    }
    out
}

// --- planned boundaries -------------------------------------------------------

/// Largest level-equation residual over every set of `designs` random
/// designs with up to `max_k` hypotheses.
pub fn residual_suite(designs: usize, max_k: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..designs {
        let k = 1 + i % max_k;
        let plan = ClosurePlan::new(random_design(&mut rng, k)).unwrap();
        for set in IndexSet::full(k).subsets() {
            let (r1, r2) = plan.residuals(set).unwrap();
            worst = worst.max(r1.abs()).max(r2.abs());
        }
    }
    worst
}

/// Largest `|c̃_J − c_{J,2}|` when nothing is changed at the interim look,
/// over sets with `0 < B_J < 1`. Returns the deviation and the number of
/// sets compared.
pub fn identity_adaptation_suite(designs: usize, max_k: usize, seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for i in 0..designs {
        let k = 1 + i % max_k;
        let design = random_design(&mut rng, k);
        let plan = ClosurePlan::new(design.clone()).unwrap();
        // Large enough that nothing crosses a stage-one boundary.
        let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let z1: Vec<f64> = p.iter().map(|&q| upper_z(q)).collect();
        let a = Adaptation::identity(design.all(), &design.graph, design.t, &design.knowledge).unwrap();
        for set in design.all().subsets() {
            let b = compute_b(&plan, set, &z1).unwrap();
            if !(b > 0.0 && b < 1.0) {
                continue;
            }
            let adapted = AdaptedTest::new(set, &a).unwrap();
            let c2 = plan.get(set).c2;
            let c = adapt_boundary(b, &adapted, &a, &z1, c2).unwrap();
            worst = worst.max((c - c2).abs());
            compared += 1;
        }
    }
    (worst, compared)
}

// --- conditional error ----------------------------------------------------------

/// Draws block-correlated standard normal stage-one statistics.
pub fn draw_z(rng: &mut impl Rng, knowledge: &CorrelationKnowledge, mean: &[f64]) -> Vec<f64> {
    let mut z = mean.to_vec();
    for b in knowledge.blocks() {
        let rows = b.corr.rows();
        let m = rows.len();
        // Cholesky of the block (small, dense).
        let mut l = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..=i {
                let s: f64 = rows[i][j] - (0..j).map(|q| l[i][q] * l[j][q]).sum::<f64>();
                l[i][j] = if i == j { s.max(0.0).sqrt() } else if l[j][j] > 0.0 { s / l[j][j] } else { 0.0 };
            }
        }
        let e: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for (pos, j) in b.members.iter().enumerate() {
            z[j] += (0..=pos).map(|q| l[pos][q] * e[q]).sum::<f64>();
        }
    }
    z
}

#[derive(Debug, Clone, Copy)]
pub struct TowerCheck {
    pub set: IndexSet,
    pub mean: f64,
    pub se: f64,
    /// Unconditional probability of a planned stage-two crossing.
    pub target: f64,
}

impl TowerCheck {
    pub fn within(&self, ses: f64) -> bool {
        (self.mean - self.target).abs() <= ses * self.se
    }
}

/// `E[B_J]` over null stage-one data against the unconditional stage-two
/// crossing probability, for every set of the plan.
pub fn tower_suite(plan: &ClosurePlan, draws: usize, seed: u64) -> Vec<TowerCheck> {
    let mut rng = rng(seed);
    let k = plan.k();
    let sets: Vec<IndexSet> = IndexSet::full(k).subsets().collect();
    let mut sum = vec![0.0; sets.len()];
    let mut sum_sq = vec![0.0; sets.len()];
    for _ in 0..draws {
        let z = draw_z(&mut rng, &plan.design.knowledge, &vec![0.0; k]);
        for (i, &s) in sets.iter().enumerate() {
            let b = compute_b(plan, s, &z).unwrap();
            sum[i] += b;
            sum_sq[i] += b * b;
        }
    }
    let n = draws as f64;
    sets.iter()
        .enumerate()
        .map(|(i, &set)| {
            let sp = plan.get(set);
            let mut target = 0.0;
            for b in &sp.blocks {
                let z: Vec<f64> = b.weights.iter().map(|&w| upper_z(w * sp.c2)).collect();
                target += mvn_upper_orthant_union(&z, &b.corr).unwrap().value;
            }
            let mean = sum[i] / n;
            let var = (sum_sq[i] / n - mean * mean).max(0.0);
            TowerCheck {
                set,
                mean,
                se: (var / n).sqrt(),
                target,
            }
        })
        .collect()
}

/// Decisions of the pre-planned two-stage closed test.
pub fn planned_decisions(plan: &ClosurePlan, p1: &StageMarginals, p2: &[f64]) -> IndexSet {
    elementary_rejections(plan.design.all(), |set| {
        let sp = plan.get(set);
        sp.rejects_stage_one(p1).unwrap() || sp.thresholds().iter().any(|&(j, _, th2)| p2[j] <= th2)
    })
}

/// Trials on which the conditional-error test with no interim change
/// disagrees with the pre-planned test. Effects vary across trials so that
/// both stages reject often.
pub fn no_adaptation_suite(plan: &ClosurePlan, trials: usize, seed: u64) -> (usize, usize) {
    let mut rng = rng(seed);
    let design = &plan.design;
    let k = design.k();
    let t = design.t;
    let mut mismatches = 0;
    let mut rejecting = 0;
    for _ in 0..trials {
        let mean: Vec<f64> = (0..k).map(|_| [0.0, 1.0, 2.0][rng.random_range(0..3)]).collect();
        let z1 = draw_z(&mut rng, &design.knowledge, &mean.iter().map(|m| m * t.sqrt()).collect::<Vec<_>>());
        let inc = draw_z(&mut rng, &design.knowledge, &mean.iter().map(|m| m * (1.0 - t).sqrt()).collect::<Vec<_>>());
        let p1v: Vec<f64> = z1.iter().map(|&z| std_normal_sf(z)).collect();
        let p2v: Vec<f64> = z1
            .iter()
            .zip(&inc)
            .map(|(&a, &b)| std_normal_sf(t.sqrt() * a + (1.0 - t).sqrt() * b))
            .collect();
        let p1 = StageMarginals::complete(StageLabel::First, &p1v).unwrap();
        let planned = planned_decisions(plan, &p1, &p2v);
        let st = cer_interim(plan, &p1).unwrap();
        let remaining = st.remaining();
        if remaining.is_empty() {
            mismatches += usize::from(st.early_rejected != planned);
            rejecting += 1;
            continue;
        }
        let a = Adaptation::identity(remaining, &design.graph, t, &design.knowledge).unwrap();
        let sel: Vec<f64> = remaining.iter().map(|j| p2v[j]).collect();
        let p2 = StageMarginals::observed(StageLabel::SecondCumulative, k, remaining, &sel).unwrap();
        let fin = cer_final(plan, &st, &a, &p2).unwrap();
        mismatches += usize::from(fin.rejected != planned);
        rejecting += usize::from(!planned.is_empty());
    }
    (mismatches, rejecting)
}
