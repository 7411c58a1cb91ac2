//! Bivariate normal upper-orthant probabilities.
//!
//! Follows Genz's double precision refinement of the Drezner–Wesolowsky
//! method: Gauss–Legendre quadrature over the arcsine of the correlation for
//! |r| < 0.925, and an asymptotic expansion plus correction integral near
//! |r| = 1. Accuracy is close to machine precision throughout.
#![allow(clippy::excessive_precision)]

use std::f64::consts::TAU;

use super::normal::std_normal_sf;

// Gauss–Legendre half-rules (weight, negative node) for n = 6, 12, 20.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949),
    (0.4060142980038694e-01, -0.9639719272779138),
    (0.6267204833410906e-01, -0.9122344282513259),
    (0.8327674157670475e-01, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.7652652113349733e-01),
];

/// P(X > h, Y > k) for a standard bivariate normal with correlation `r`.
///
/// Infinite limits are allowed.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::NEG_INFINITY {
        return std_normal_sf(k);
    }
    if k == f64::NEG_INFINITY {
        return std_normal_sf(h);
    }
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    let r = r.clamp(-1.0, 1.0);
    let rule: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };

    if r.abs() < 0.925 {
        let mut bvn = 0.0;
        if r != 0.0 {
            let hk = h * k;
            let hs = 0.5 * (h * h + k * k);
            let asr = r.asin();
            for &(w, x) in rule {
                for sign in [1.0, -1.0] {
                    let sn = (0.5 * asr * (sign * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (2.0 * TAU);
        }
        return (bvn + std_normal_sf(h) * std_normal_sf(k)).clamp(0.0, 1.0);
    }

    let mut k = k;
    let mut hk = h * k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let mut bvn = 0.0;
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-0.5 * (b_s / a_s + hk)).exp()
            * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * TAU.sqrt()
                * std_normal_sf(b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in rule {
            for sign in [1.0, -1.0] {
                let xs = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (b_s / xs + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / TAU;
    }
    let out = if r > 0.0 {
        bvn + std_normal_sf(h.max(k))
    } else {
        let mut v = -bvn;
        if k > h {
            v += if h < 0.0 {
                super::normal::std_normal_cdf(k) - super::normal::std_normal_cdf(h)
            } else {
                std_normal_sf(h) - std_normal_sf(k)
            };
        }
        v
    };
    out.clamp(0.0, 1.0)
}

/// P(X ≤ h, Y ≤ k).
pub fn bvn_lower(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::normal::{std_normal_cdf, std_normal_pdf};
    use approx::assert_abs_diff_eq;
    use gauss_quad::GaussLegendre;
    use std::num::NonZeroUsize;

    // Independent route: P(X>h, Y>k) = ∫_h^∞ φ(x) Φ̄((k − r x)/√(1−r²)) dx,
    // by composite Gauss–Legendre on [h, 12].
    fn oracle(h: f64, k: f64, r: f64) -> f64 {
        let gl = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
        let s = (1.0 - r * r).sqrt();
        let lo = h.max(-12.0);
        let panels = 400;
        let width = (12.0 - lo) / panels as f64;
        (0..panels)
            .map(|i| {
                let a = lo + i as f64 * width;
                gl.integrate(a, a + width, |x| std_normal_pdf(x) * std_normal_sf((k - r * x) / s))
            })
            .sum()
    }

    #[test]
    fn independence_and_symmetry() {
        for &(h, k) in &[(0.0, 0.0), (1.0, -0.5), (2.5, 3.0), (-1.2, -2.0)] {
            assert_abs_diff_eq!(bvn_upper(h, k, 0.0), std_normal_sf(h) * std_normal_sf(k), epsilon = 1e-16);
            assert_abs_diff_eq!(bvn_upper(h, k, 0.4), bvn_upper(k, h, 0.4), epsilon = 1e-15);
        }
        // Sheppard: P(X>0, Y>0) = 1/4 + asin(r)/(2π).
        for &r in &[-0.99, -0.93, -0.5, 0.2, 0.5, 0.8, 0.95, 0.999] {
            assert_abs_diff_eq!(bvn_upper(0.0, 0.0, r), 0.25 + r.asin() / TAU, epsilon = 1e-14);
        }
    }

    #[test]
    fn degenerate_correlations() {
        assert_abs_diff_eq!(bvn_upper(1.0, 0.5, 1.0), std_normal_sf(1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(bvn_upper(1.0, -2.0, -1.0), std_normal_sf(1.0) - std_normal_sf(2.0), epsilon = 1e-15);
        assert_eq!(bvn_upper(1.0, 2.0, -1.0), 0.0);
        assert_eq!(bvn_upper(f64::INFINITY, 0.0, 0.5), 0.0);
        assert_abs_diff_eq!(bvn_upper(f64::NEG_INFINITY, 0.3, 0.5), std_normal_sf(0.3), epsilon = 0.0);
    }

    #[test]
    fn matches_integral_oracle() {
        let hs = [-2.0, -0.7, 0.0, 0.9, 1.96, 3.1];
        let rs = [-0.97, -0.93, -0.6, -0.1, 0.25, 0.5, 0.7071, 0.9, 0.94, 0.99];
        for &h in &hs {
            for &k in &hs {
                for &r in &rs {
                    let got = bvn_upper(h, k, r);
                    let want = oracle(h, k, r);
                    assert!((got - want).abs() < 1e-12, "h={h} k={k} r={r}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn lower_is_reflection() {
        assert_abs_diff_eq!(
            bvn_lower(0.3, -0.4, 0.5),
            std_normal_cdf(0.3) + std_normal_cdf(-0.4) - 1.0 + bvn_upper(0.3, -0.4, 0.5),
            epsilon = 1e-15
        );
    }
}
