//! Multivariate normal rectangle and union probabilities.
//!
//! Three routes, chosen from the structure of the correlation matrix:
//!
//! * `d ≤ 2`: closed form through [`bvn_upper`].
//! * one-factor matrices (`corr_ij = λ_i λ_j`, which covers every
//!   many-to-one comparison structure): a one-dimensional integral over the
//!   common factor, evaluated by composite Gauss–Legendre with panels no wider than the
//!   residual-to-loading ratio.
//! * anything else: Genz's separation-of-variables transform integrated by a
//!   randomized Richtmyer lattice with fixed shifts.
//!
//! All routes are deterministic.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::{GaussHermite, GaussLegendre};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bvn::bvn_upper;
use super::normal::{std_normal_cdf, std_normal_sf, upper_z};
use crate::error::{Error, Result};

/// Target absolute accuracy of the lattice route.
pub const LATTICE_ABS_EPS: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const FACTOR_TOL: f64 = 1e-12;

/// Probability together with an absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbResult {
    pub value: f64,
    pub error: f64,
}

impl ProbResult {
    fn exact(value: f64) -> Self {
        ProbResult {
            value: value.clamp(0.0, 1.0),
            error: 1e-14,
        }
    }

    fn quadrature(value: f64) -> Self {
        ProbResult {
            value: value.clamp(0.0, 1.0),
            error: 1e-11,
        }
    }
}

/// Symmetric, unit-diagonal, positive semi-definite matrix.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    d: usize,
    data: Vec<f64>,
    chol: Vec<f64>,
    loadings: Option<Vec<f64>>,
}

impl PartialEq for CorrelationMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.data == other.data
    }
}

impl CorrelationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::InvalidCorrelation("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(d * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(d, data)
    }

    fn from_flat(d: usize, mut data: Vec<f64>) -> Result<Self> {
        for i in 0..d {
            if (data[i * d + i] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {} is {}",
                    i + 1,
                    data[i * d + i]
                )));
            }
            data[i * d + i] = 1.0;
            for j in 0..i {
                let (a, b) = (data[i * d + j], data[j * d + i]);
                if !a.is_finite() || !(-1.0..=1.0).contains(&a) {
                    return Err(Error::InvalidCorrelation(format!(
                        "entry ({}, {}) = {a} outside [-1, 1]",
                        i + 1,
                        j + 1
                    )));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidCorrelation(format!(
                        "not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                data[j * d + i] = a;
            }
        }
        let chol = cholesky(d, &data)?;
        let loadings = detect_one_factor(d, &data);
        Ok(CorrelationMatrix {
            d,
            data,
            chol,
            loadings,
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        CorrelationMatrix {
            d,
            chol: data.clone(),
            data,
            loadings: Some(vec![0.0; d]),
        }
    }

    pub fn equicorrelated(d: usize, rho: f64) -> Result<Self> {
        let mut data = vec![rho; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Self::from_flat(d, data)
    }

    /// `corr_ij = λ_i λ_j` for `i ≠ j`.
    pub fn one_factor(loadings: &[f64]) -> Result<Self> {
        let d = loadings.len();
        if loadings.iter().any(|l| !(-1.0..=1.0).contains(l)) {
            return Err(Error::InvalidCorrelation("loadings must lie in [-1, 1]".into()));
        }
        let mut data = vec![1.0; d * d];
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    data[i * d + j] = loadings[i] * loadings[j];
                }
            }
        }
        Self::from_flat(d, data)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.d).map(<[f64]>::to_vec).collect()
    }

    /// Factor loadings when the matrix has one-factor structure with every
    /// |λ| < 1.
    pub fn loadings(&self) -> Option<&[f64]> {
        self.loadings.as_deref()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.d).all(|i| (0..self.d).all(|j| i == j || self.get(i, j) == 0.0))
    }

    /// Groups of positions linked by non-zero correlations; variables in
    /// different groups are independent.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let d = self.d;
        let mut label: Vec<usize> = (0..d).collect();
        fn root(label: &mut [usize], mut i: usize) -> usize {
            while label[i] != i {
                label[i] = label[label[i]];
                i = label[i];
            }
            i
        }
        for i in 0..d {
            for j in 0..i {
                if self.get(i, j) != 0.0 {
                    let (a, b) = (root(&mut label, i), root(&mut label, j));
                    label[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; d];
        for i in 0..d {
            let r = root(&mut label, i);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(i);
        }
        groups
    }

    /// Principal submatrix over `indices` (positions within this matrix).
    pub fn submatrix(&self, indices: &[usize]) -> CorrelationMatrix {
        let m = indices.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in indices {
            for &j in indices {
                data.push(self.get(i, j));
            }
        }
        let loadings = match &self.loadings {
            Some(l) => Some(indices.iter().map(|&i| l[i]).collect()),
            None => detect_one_factor(m, &data),
        };
        let chol = cholesky(m, &data).expect("principal submatrix of a PSD matrix is PSD");
        CorrelationMatrix {
            d: m,
            data,
            chol,
            loadings,
        }
    }
}

impl Serialize for CorrelationMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CorrelationMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        CorrelationMatrix::new(rows).map_err(serde::de::Error::custom)
    }
}

// Lower-triangular factor; zero pivots (semi-definite matrices) leave a zero
// column.
fn cholesky(d: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag < -PSD_TOL {
            return Err(Error::NotPositiveSemiDefinite);
        }
        let pivot = diag.max(0.0).sqrt();
        l[j * d + j] = pivot;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            if pivot > PSD_TOL.sqrt() {
                l[i * d + j] = v / pivot;
            } else if v.abs() > 1e-8 {
                return Err(Error::NotPositiveSemiDefinite);
            }
        }
    }
    Ok(l)
}

// Loadings λ with a_ij = λ_i λ_j off the diagonal, |λ_i| < 1. For d ≤ 2 the
// split is not unique; the symmetric choice is returned.
fn detect_one_factor(d: usize, a: &[f64]) -> Option<Vec<f64>> {
    let g = |i: usize, j: usize| a[i * d + j];
    let mut lambda = vec![0.0; d];
    match d {
        1 => {}
        2 => {
            let r = g(0, 1);
            let s = r.abs().sqrt();
            lambda = vec![s, s.copysign(r)];
        }
        _ => {
            for (i, li) in lambda.iter_mut().enumerate() {
                // λ_i² = a_ij a_ik / a_jk with the best-conditioned pair.
                let mut best: Option<(f64, f64)> = None;
                for j in 0..d {
                    for k in j + 1..d {
                        if j == i || k == i {
                            continue;
                        }
                        let den = g(j, k);
                        if best.is_none_or(|(b, _)| den.abs() > b) {
                            best = Some((den.abs(), g(i, j) * g(i, k) / den));
                        }
                    }
                }
                let (den, sq) = best?;
                *li = if den < FACTOR_TOL { 0.0 } else { sq.max(0.0).sqrt() };
            }
            // Fix signs relative to the member with the largest loading.
            let anchor = (0..d).max_by(|&x, &y| lambda[x].total_cmp(&lambda[y]))?;
            for i in 0..d {
                if i != anchor && g(i, anchor) < 0.0 {
                    lambda[i] = -lambda[i];
                }
            }
        }
    }
    if lambda.iter().any(|l| l.abs() >= 1.0 - 1e-9) {
        return None;
    }
    for i in 0..d {
        for j in 0..i {
            if (g(i, j) - lambda[i] * lambda[j]).abs() > FACTOR_TOL {
                return None;
            }
        }
    }
    Some(lambda)
}

// --- quadrature over a standard normal factor -----------------------------

/// Nodes and weights integrating against the standard normal density.
type Rule = Vec<(f64, f64)>;

const FACTOR_RANGE: f64 = 8.0;
const MAX_PANEL_LEVEL: usize = 6;

// Gauss–Hermite with 40 nodes, rescaled to the standard normal density. Used
// for the two-dimensional factor integrals, where a composite rule per axis
// would be too costly.
fn hermite_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| {
        let gh = GaussHermite::new(NonZeroUsize::new(40).unwrap());
        let scale = std::f64::consts::PI.sqrt();
        gh.as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / scale))
            .collect()
    })
}

fn coarse_factor_rule(ratio: f64) -> Option<&'static [(f64, f64)]> {
    if ratio > 0.0 && ratio <= 1.05 {
        Some(hermite_rule())
    } else {
        factor_rule(ratio)
    }
}

// Composite 10-point Gauss–Legendre on [-8, 8] with panel width 2^(1-level).
fn panel_rule(level: usize) -> &'static Rule {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    &RULES.get_or_init(|| {
        let gl = GaussLegendre::new(NonZeroUsize::new(10).unwrap());
        (0..=MAX_PANEL_LEVEL)
            .map(|lvl| {
                let width = 2.0 * 0.5f64.powi(lvl as i32);
                let panels = (2.0 * FACTOR_RANGE / width).round() as usize;
                let mut rule = Vec::with_capacity(panels * 10);
                for p in 0..panels {
                    let a = -FACTOR_RANGE + p as f64 * width;
                    let mid = a + 0.5 * width;
                    for &(x, w) in gl.as_node_weight_pairs() {
                        let u = mid + 0.5 * width * x;
                        rule.push((u, 0.5 * width * w * super::normal::std_normal_pdf(u)));
                    }
                }
                rule
            })
            .collect()
    })[level]
}

/// Quadrature rule for a factor whose largest loading-to-residual ratio is
/// `ratio`; `None` when the factor is too close to degenerate.
fn factor_rule(ratio: f64) -> Option<&'static [(f64, f64)]> {
    static SINGLE: [(f64, f64); 1] = [(0.0, 1.0)];
    if ratio == 0.0 {
        return Some(&SINGLE);
    }
    let level = ratio.log2().ceil().max(0.0) as usize;
    (level <= MAX_PANEL_LEVEL).then(|| panel_rule(level).as_slice())
}

fn loading_ratio(loadings: &[f64]) -> f64 {
    loadings
        .iter()
        .map(|l| l.abs() / (1.0 - l * l).sqrt())
        .fold(0.0, f64::max)
}

// 1 − Π (1 − q_i) without cancellation.
fn union_from_tails(log_complement: f64) -> f64 {
    -log_complement.exp_m1()
}

// --- public probability functions ------------------------------------------

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// P(∪_j {Z_j ≥ b_j}) for `Z ~ N(0, corr)`.
///
/// Thresholds may be infinite; `−∞` makes the union certain.
pub fn mvn_upper_orthant_union(b: &[f64], corr: &CorrelationMatrix) -> Result<ProbResult> {
    check_len(corr.dim(), b.len())?;
    if b.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN threshold".into()));
    }
    if b.iter().any(|&x| x == f64::NEG_INFINITY) {
        return Ok(ProbResult::exact(1.0));
    }
    match b.len() {
        1 => return Ok(ProbResult::exact(std_normal_sf(b[0]))),
        2 => {
            let both = bvn_upper(b[0], b[1], corr.get(0, 1));
            return Ok(ProbResult::exact(std_normal_sf(b[0]) + std_normal_sf(b[1]) - both));
        }
        _ => {}
    }
    if let Some(loadings) = corr.loadings() {
        if let Some(rule) = factor_rule(loading_ratio(loadings)) {
            return Ok(ProbResult::quadrature(factor_union(b, loadings, rule)));
        }
    } else {
        let groups = corr.components();
        if groups.len() > 1 {
            let (mut log_none, mut error) = (0.0, 0.0);
            for g in &groups {
                let sub_b: Vec<f64> = g.iter().map(|&i| b[i]).collect();
                let r = mvn_upper_orthant_union(&sub_b, &corr.submatrix(g))?;
                log_none += (-r.value).ln_1p();
                error += r.error;
            }
            return Ok(ProbResult {
                value: union_from_tails(log_none).clamp(0.0, 1.0),
                error,
            });
        }
    }
    let lower = vec![f64::NEG_INFINITY; b.len()];
    let inside = lattice_rectangle(&lower, b, corr);
    Ok(ProbResult {
        value: (1.0 - inside.value).clamp(0.0, 1.0),
        error: inside.error,
    })
}

fn factor_union(b: &[f64], loadings: &[f64], rule: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for &(u, w) in rule {
        let mut log_c = 0.0;
        for (&bj, &l) in b.iter().zip(loadings) {
            let s = (1.0 - l * l).sqrt();
            log_c += (-std_normal_sf((bj - l * u) / s)).ln_1p();
        }
        total += w * union_from_tails(log_c);
    }
    total
}

/// P(lower ≤ Z ≤ upper) for `Z ~ N(0, corr)`; limits may be infinite.
pub fn mvn_rectangle(lower: &[f64], upper: &[f64], corr: &CorrelationMatrix) -> Result<ProbResult> {
    check_len(corr.dim(), lower.len())?;
    check_len(corr.dim(), upper.len())?;
    if lower.iter().chain(upper).any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN limit".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::InvalidArgument("lower limit above upper limit".into()));
    }
    let interval = |l: f64, u: f64| std_normal_sf(l) - std_normal_sf(u);
    match lower.len() {
        1 => return Ok(ProbResult::exact(interval(lower[0], upper[0]))),
        2 => {
            let r = corr.get(0, 1);
            let (l, u) = (lower, upper);
            let v = bvn_upper(l[0], l[1], r) - bvn_upper(u[0], l[1], r) - bvn_upper(l[0], u[1], r)
                + bvn_upper(u[0], u[1], r);
            return Ok(ProbResult::exact(v));
        }
        _ => {}
    }
    if let Some(loadings) = corr.loadings() {
        if let Some(rule) = factor_rule(loading_ratio(loadings)) {
            let mut total = 0.0;
            for &(f, w) in rule {
                let mut prod = 1.0;
                for ((&l, &u), &lam) in lower.iter().zip(upper).zip(loadings) {
                    let s = (1.0 - lam * lam).sqrt();
                    prod *= interval((l - lam * f) / s, (u - lam * f) / s);
                }
                total += w * prod;
            }
            return Ok(ProbResult::quadrature(total));
        }
    } else {
        let groups = corr.components();
        if groups.len() > 1 {
            let (mut value, mut error) = (1.0, 0.0);
            for g in &groups {
                let lo: Vec<f64> = g.iter().map(|&i| lower[i]).collect();
                let up: Vec<f64> = g.iter().map(|&i| upper[i]).collect();
                let r = mvn_rectangle(&lo, &up, &corr.submatrix(g))?;
                value *= r.value;
                error += r.error;
            }
            return Ok(ProbResult { value, error });
        }
    }
    Ok(lattice_rectangle(lower, upper, corr))
}

/// P(∪_j {Z_{j,1} ≥ a_j} ∪ {Z_{j,2} ≥ b_j}) for a two-look design.
///
/// `Z_{·,1} ~ N(0, stage1)`; the cumulative statistic is
/// `Z_{j,2} = √t Z_{j,1} + √(1−t) Z_{j,(2)}` with independent increments
/// `Z_{·,(2)} ~ N(0, increments)`.
pub fn two_stage_union(
    a: &[f64],
    b: &[f64],
    stage1: &CorrelationMatrix,
    increments: &CorrelationMatrix,
    t: f64,
) -> Result<ProbResult> {
    let d = stage1.dim();
    check_len(d, increments.dim())?;
    check_len(d, a.len())?;
    check_len(d, b.len())?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::OutOfRange {
            name: "information fraction",
            range: "(0, 1)",
            value: t,
        });
    }
    if a.iter().chain(b).any(|&x| x == f64::NEG_INFINITY) {
        return Ok(ProbResult::exact(1.0));
    }
    let (st, s1t) = (t.sqrt(), (1.0 - t).sqrt());
    if d == 1 {
        let v = std_normal_sf(a[0]) + std_normal_sf(b[0]) - bvn_upper(a[0], b[0], st);
        return Ok(ProbResult::exact(v));
    }

    if let (Some(lam), Some(mu)) = (stage1.loadings(), increments.loadings()) {
        let mut r1: f64 = 0.0;
        let mut r2: f64 = 0.0;
        for (&l, &m) in lam.iter().zip(mu) {
            let s = (1.0 - l * l).sqrt();
            let r = (1.0 - m * m).sqrt();
            let sigma = (t * s * s + (1.0 - t) * r * r).sqrt();
            r1 = r1.max(l.abs() / s).max(st * l.abs() / sigma);
            r2 = r2.max(s1t * m.abs() / sigma);
        }
        if let (Some(rule1), Some(rule2)) = (coarse_factor_rule(r1), coarse_factor_rule(r2)) {
            let mut total = 0.0;
            for &(u1, w1) in rule1 {
                for &(u2, w2) in rule2 {
                    let mut log_c = 0.0;
                    for j in 0..d {
                        let (l, m) = (lam[j], mu[j]);
                        let s = (1.0 - l * l).sqrt();
                        let r = (1.0 - m * m).sqrt();
                        let sigma = (t * s * s + (1.0 - t) * r * r).sqrt();
                        let x = (a[j] - l * u1) / s;
                        let y = (b[j] - st * l * u1 - s1t * m * u2) / sigma;
                        let q = std_normal_sf(x) + std_normal_sf(y) - bvn_upper(x, y, st * s / sigma);
                        log_c += (-q.clamp(0.0, 1.0)).ln_1p();
                    }
                    total += w1 * w2 * union_from_tails(log_c);
                }
            }
            return Ok(ProbResult {
                value: total.clamp(0.0, 1.0),
                error: 1e-9,
            });
        }
    }

    // Joint 2d-dimensional matrix of (Z_1, Z_2).
    let n = 2 * d;
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..d {
        for j in 0..d {
            let c1 = stage1.get(i, j);
            let c2 = increments.get(i, j);
            rows[i][j] = c1;
            rows[d + i][d + j] = t * c1 + (1.0 - t) * c2;
            rows[i][d + j] = st * c1;
            rows[d + j][i] = st * c1;
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let joint = CorrelationMatrix::new(rows)?;
    let upper: Vec<f64> = a.iter().chain(b).copied().collect();
    mvn_upper_orthant_union(&upper, &joint)
}

// --- lattice fallback ------------------------------------------------------

const PRIMES: [f64; 24] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
    59.0, 61.0, 67.0, 71.0, 73.0, 79.0, 83.0, 89.0,
];
const SHIFTS: usize = 12;
const MAX_POINTS: usize = 1 << 17;

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Separation-of-variables integrand over a randomized Richtmyer lattice.
fn lattice_rectangle(lower: &[f64], upper: &[f64], corr: &CorrelationMatrix) -> ProbResult {
    let d = corr.d;
    let l = &corr.chol;
    let m = d.saturating_sub(1);
    assert!(m <= PRIMES.len(), "lattice route supports at most {} dimensions", PRIMES.len() + 1);
    let gen: Vec<f64> = PRIMES[..m].iter().map(|p| frac(p.sqrt())).collect();
    // Deterministic shifts: a Kronecker sequence in a different irrational.
    let shift = |s: usize, i: usize| frac((s as f64 + 1.0) * frac((PRIMES[(i + 7) % 24] + 0.5).sqrt()));

    let integrand = |w: &[f64], y: &mut [f64]| -> f64 {
        let mut f = 1.0;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..i {
                s += l[i * d + j] * y[j];
            }
            let piv = l[i * d + i];
            let (lo, hi) = if piv > 1e-10 {
                (std_normal_cdf((lower[i] - s) / piv), std_normal_cdf((upper[i] - s) / piv))
            } else if lower[i] <= s && s <= upper[i] {
                (0.0, 1.0)
            } else {
                (0.0, 0.0)
            };
            let width = (hi - lo).max(0.0);
            f *= width;
            if f == 0.0 {
                return 0.0;
            }
            if i < m {
                let p = (lo + w[i] * width).clamp(1e-300, 1.0 - 1e-16);
                y[i] = -upper_z(p);
            }
        }
        f
    };

    let mut w = vec![0.0; m.max(1)];
    let mut y = vec![0.0; d];
    let mut n = 1 << 10;
    loop {
        let mut means = [0.0; SHIFTS];
        for (s, mean) in means.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 1..=n {
                for i in 0..m {
                    let x = frac(k as f64 * gen[i] + shift(s, i));
                    w[i] = (2.0 * x - 1.0).abs();
                }
                acc += integrand(&w, &mut y);
            }
            *mean = acc / n as f64;
        }
        let mean = means.iter().sum::<f64>() / SHIFTS as f64;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (SHIFTS * (SHIFTS - 1)) as f64;
        let error = 3.0 * var.sqrt();
        if error <= LATTICE_ABS_EPS || n >= MAX_POINTS {
            return ProbResult {
                value: mean.clamp(0.0, 1.0),
                error,
            };
        }
        n *= 2;
    }
}

/// Correlation of the treatment-versus-control z-statistics of a many-to-one
/// comparison with a shared control group.
pub fn many_to_one_correlation(n_treat: &[f64], n_control: f64) -> Result<CorrelationMatrix> {
    if n_treat.is_empty() {
        return Err(Error::InvalidArgument("no treatment groups".into()));
    }
    if n_control <= 0.0 || n_treat.iter().any(|&n| n <= 0.0) || !n_control.is_finite() {
        return Err(Error::InvalidArgument("group sizes must be positive".into()));
    }
    let loadings: Vec<f64> = n_treat
        .iter()
        .map(|&n| (n / (n + n_control)).sqrt())
        .collect();
    CorrelationMatrix::one_factor(&loadings)
}
