//! Ordered simplices `T_n(x) = {0 <= xi_n <= ... <= xi_1 <= x}`, their gap
//! coordinates, and quadrature over them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

/// Slack accepted by membership tests, so points produced by floating
/// arithmetic on the boundary faces still count as members.
const MEMBERSHIP_SLACK: f64 = 1e-12;

/// A point `(x, xi_1, ..., xi_n)` of `T_n(x)`, ordered descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    x: f64,
    xi: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(x: f64, xi: Vec<f64>) -> Result<Self> {
        if xi.is_empty() {
            return domain("simplex point needs at least one xi coordinate");
        }
        if !contains(x, &xi) {
            return domain(format!("({x}, {xi:?}) is not in T_{}(x)", xi.len()));
        }
        Ok(Self { x, xi })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn order(&self) -> usize {
        self.xi.len()
    }

    /// Consecutive gaps `Delta_r = xi_r - xi_{r+1}` (with `xi_0 = x`) and the
    /// innermost coordinate `xi_n`.
    pub fn to_gap_coords(&self) -> (Vec<f64>, f64) {
        let mut gaps = Vec::with_capacity(self.xi.len());
        let mut prev = self.x;
        for &v in &self.xi {
            gaps.push(prev - v);
            prev = v;
        }
        (gaps, prev)
    }

    /// Inverse of [`SimplexPoint::to_gap_coords`].
    pub fn from_gap_coords(gaps: &[f64], xi_n: f64) -> Result<Self> {
        if gaps.is_empty() {
            return domain("gap tuple is empty");
        }
        if let Some(g) = gaps.iter().find(|g| **g < 0.0) {
            return domain(format!("negative gap {g}"));
        }
        if xi_n < 0.0 {
            return domain(format!("negative innermost coordinate {xi_n}"));
        }
        let n = gaps.len();
        let mut xi = vec![0.0; n];
        xi[n - 1] = xi_n;
        for r in (0..n - 1).rev() {
            xi[r] = xi[r + 1] + gaps[r + 1];
        }
        let x = xi[0] + gaps[0];
        Ok(Self { x, xi })
    }
}

/// Membership in `T_n(x)`: coordinates sorted descending, bounded by `x` above
/// and `0` below.
pub fn contains(x: f64, xi: &[f64]) -> bool {
    if !(x.is_finite() && xi.iter().all(|v| v.is_finite())) {
        return false;
    }
    let mut prev = x;
    for &v in xi {
        if v > prev + MEMBERSHIP_SLACK {
            return false;
        }
        prev = v;
    }
    prev >= -MEMBERSHIP_SLACK
}

/// `vol(T_n(x)) = x^n / n!`.
pub fn simplex_volume(n: usize, x: f64) -> Result<f64> {
    if n == 0 {
        return domain("simplex order must be at least 1");
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("x = {x} outside [0, 1]"));
    }
    let mut v = 1.0;
    for k in 1..=n {
        v *= x / k as f64;
    }
    Ok(v)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = if n == 1 {
            2.0
        } else {
            2.0 / ((1.0 - z * z) * dp * dp)
        };
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule for one-dimensional integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRule {
    pub panels: usize,
    pub points: usize,
    #[serde(skip)]
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for LineRule {
    fn default() -> Self {
        Self::new(32, 2)
    }
}

impl LineRule {
    pub fn new(panels: usize, points: usize) -> Self {
        let panels = panels.max(1);
        let points = points.max(1);
        let (z, w) = gauss_legendre(points);
        // Map to [0, 1].
        let nodes = z.iter().map(|t| 0.5 * (t + 1.0)).collect();
        let weights = w.iter().map(|v| 0.5 * v).collect();
        Self {
            panels,
            points,
            cache: Some((nodes, weights)),
        }
    }

    fn unit(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.cache {
            Some(c) => c.clone(),
            None => LineRule::new(self.panels, self.points).cache.unwrap(),
        }
    }

    /// Number of integrand evaluations per call.
    pub fn evaluations(&self) -> usize {
        self.panels * self.points
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let owned;
        let (nodes, weights) = match &self.cache {
            Some((n, w)) => (n, w),
            None => {
                owned = self.unit();
                (&owned.0, &owned.1)
            }
        };
        let h = (b - a) / self.panels as f64;
        let mut acc = 0.0;
        for p in 0..self.panels {
            let left = a + p as f64 * h;
            for (t, w) in nodes.iter().zip(weights) {
                acc += w * f(left + t * h);
            }
        }
        acc * h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuadratureRule {
    /// Nested composite trapezoid on a uniform mesh of `[0, x]`; inner
    /// integrals run over the mesh nodes below the enclosing coordinate.
    NestedTrapezoidOnMesh { points: usize },
    /// Nested Gauss–Legendre: each coordinate is integrated over its ordered
    /// range `[0, xi_{r-1}]` with the same rule.
    TensorGaussLegendreOnGaps { points: usize },
    /// Uniform sampling of the simplex.
    MonteCarlo { samples: usize, seed: u64 },
}

impl QuadratureRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QuadratureRule::NestedTrapezoidOnMesh { points }
            | QuadratureRule::TensorGaussLegendreOnGaps { points } => {
                if points < 2 {
                    return config(format!(
                        "deterministic rule needs resolution >= 2, got {points}"
                    ));
                }
            }
            QuadratureRule::MonteCarlo { samples, .. } => {
                if samples == 0 {
                    return config("monte-carlo rule needs at least one sample");
                }
            }
        }
        Ok(())
    }
}

/// Approximates `∫_{T_n(x)} integrand(x, xi) dxi`.
///
/// The integrand receives `x` and the ordered coordinates `(xi_1, ..., xi_n)`.
/// A degenerate simplex (`x = 0`) integrates to zero without evaluating it.
pub fn integrate_simplex<F>(n: usize, x: f64, integrand: &F, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    rule.validate()?;
    if n == 0 {
        return domain("simplex order must be at least 1");
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("x = {x} outside [0, 1]"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let value = match *rule {
        QuadratureRule::NestedTrapezoidOnMesh { points } => {
            nested_trapezoid(n, x, points, integrand)
        }
        QuadratureRule::TensorGaussLegendreOnGaps { points } => {
            nested_gauss(n, x, points, integrand)
        }
        QuadratureRule::MonteCarlo { samples, seed } => {
            monte_carlo(n, x, samples, seed, integrand).0
        }
    };
    if value.is_nan() {
        return Err(crate::Error::Evaluation("integrand produced NaN".into()));
    }
    Ok(value)
}

/// Monte-carlo estimate together with its standard error.
pub fn integrate_simplex_mc<F>(
    n: usize,
    x: f64,
    integrand: &F,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    QuadratureRule::MonteCarlo { samples, seed }.validate()?;
    if n == 0 || !(0.0..=1.0).contains(&x) {
        return domain(format!("invalid simplex T_{n}({x})"));
    }
    if x == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok(monte_carlo(n, x, samples, seed, integrand))
}

/// Trapezoid weight of node `i` on the mesh `0..=upper` with spacing `h`.
#[inline]
pub(crate) fn trapezoid_weight(i: usize, upper: usize, h: f64) -> f64 {
    if upper == 0 {
        0.0
    } else if i == 0 || i == upper {
        0.5 * h
    } else {
        h
    }
}

fn nested_trapezoid<F>(n: usize, x: f64, points: usize, integrand: &F) -> f64
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    let h = x / (points - 1) as f64;
    let top = points - 1;
    let partials: Vec<f64> = (0..=top)
        .into_par_iter()
        .map(|i1| {
            let w = trapezoid_weight(i1, top, h);
            if w == 0.0 {
                return 0.0;
            }
            let mut coords = vec![0.0; n];
            coords[0] = i1 as f64 * h;
            w * trapezoid_level(1, i1, h, x, &mut coords, integrand)
        })
        .collect();
    partials.iter().sum()
}

fn trapezoid_level<F>(
    level: usize,
    upper: usize,
    h: f64,
    x: f64,
    coords: &mut [f64],
    integrand: &F,
) -> f64
where
    F: Fn(f64, &[f64]) -> f64,
{
    if level == coords.len() {
        return integrand(x, coords);
    }
    let mut acc = 0.0;
    for i in 0..=upper {
        let w = trapezoid_weight(i, upper, h);
        if w == 0.0 {
            continue;
        }
        coords[level] = i as f64 * h;
        acc += w * trapezoid_level(level + 1, i, h, x, coords, integrand);
    }
    acc
}

fn nested_gauss<F>(n: usize, x: f64, points: usize, integrand: &F) -> f64
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    let (z, w) = gauss_legendre(points);
    let nodes: Vec<f64> = z.iter().map(|t| 0.5 * (t + 1.0)).collect();
    let weights: Vec<f64> = w.iter().map(|v| 0.5 * v).collect();
    let partials: Vec<f64> = (0..points)
        .into_par_iter()
        .map(|k| {
            let mut coords = vec![0.0; n];
            coords[0] = x * nodes[k];
            x * weights[k] * gauss_level(1, coords[0], x, &nodes, &weights, &mut coords, integrand)
        })
        .collect();
    partials.iter().sum()
}

fn gauss_level<F>(
    level: usize,
    upper: f64,
    x: f64,
    nodes: &[f64],
    weights: &[f64],
    coords: &mut [f64],
    integrand: &F,
) -> f64
where
    F: Fn(f64, &[f64]) -> f64,
{
    if level == coords.len() {
        return integrand(x, coords);
    }
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(weights) {
        coords[level] = upper * t;
        acc += w * gauss_level(
            level + 1,
            coords[level],
            x,
            nodes,
            weights,
            coords,
            integrand,
        );
    }
    acc * upper
}

fn monte_carlo<F>(n: usize, x: f64, samples: usize, seed: u64, integrand: &F) -> (f64, f64)
where
    F: Fn(f64, &[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol = simplex_volume(n, x).unwrap_or(0.0);
    let mut coords = vec![0.0; n];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        sample_into(&mut rng, x, &mut coords);
        let v = integrand(x, &coords);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / samples as f64;
    let var = if samples > 1 {
        ((sum_sq - samples as f64 * mean * mean) / (samples - 1) as f64).max(0.0)
    } else {
        0.0
    };
    (vol * mean, vol * (var / samples as f64).sqrt())
}

/// Fills `coords` with a uniform draw from `T_n(x)`: `n` uniforms on `[0, x]`
/// sorted descending.
pub fn sample_into<R: Rng>(rng: &mut R, x: f64, coords: &mut [f64]) {
    for c in coords.iter_mut() {
        *c = rng.gen::<f64>() * x;
    }
    coords.sort_by(|a, b| b.total_cmp(a));
}

/// Uniform random point of `T_n(x)`.
pub fn sample_point<R: Rng>(rng: &mut R, n: usize, x: f64) -> SimplexPoint {
    let mut xi = vec![0.0; n];
    sample_into(rng, x, &mut xi);
    SimplexPoint { x, xi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gl(points: usize) -> QuadratureRule {
        QuadratureRule::TensorGaussLegendreOnGaps { points }
    }

    #[test]
    fn volume_values() {
        assert_abs_diff_eq!(simplex_volume(2, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(simplex_volume(1, 0.3).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(
            simplex_volume(3, 0.5).unwrap(),
            0.125 / 6.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn volume_rejects_bad_input() {
        assert!(simplex_volume(0, 0.5).is_err());
        assert!(simplex_volume(2, 1.5).is_err());
        assert!(simplex_volume(2, -0.1).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..8 {
            let (z, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
            // Exact up to degree 2n - 1.
            let deg = 2 * n - 1;
            let q: f64 = z
                .iter()
                .zip(&w)
                .map(|(t, w)| w * t.powi(deg as i32 - 1))
                .sum();
            let exact = if (deg - 1) % 2 == 0 {
                2.0 / deg as f64
            } else {
                0.0
            };
            assert_abs_diff_eq!(q, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn integrates_volume_and_linear_moments() {
        let one = |_: f64, _: &[f64]| 1.0;
        let last = |_: f64, xi: &[f64]| *xi.last().unwrap();
        assert_abs_diff_eq!(
            integrate_simplex(2, 1.0, &one, &gl(4)).unwrap(),
            0.5,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            integrate_simplex(2, 1.0, &last, &gl(4)).unwrap(),
            1.0 / 6.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            integrate_simplex(3, 1.0, &last, &gl(4)).unwrap(),
            1.0 / 24.0,
            epsilon = 1e-14
        );
        let trap = QuadratureRule::NestedTrapezoidOnMesh { points: 201 };
        assert_abs_diff_eq!(
            integrate_simplex(2, 1.0, &one, &trap).unwrap(),
            0.5,
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(
            integrate_simplex(2, 1.0, &last, &trap).unwrap(),
            1.0 / 6.0,
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(
            integrate_simplex(3, 1.0, &last, &trap).unwrap(),
            1.0 / 24.0,
            epsilon = 1e-4
        );
    }

    #[test]
    fn constant_matches_inverse_factorial_up_to_order_six() {
        let one = |_: f64, _: &[f64]| 1.0;
        let mut fact = 1.0;
        for n in 1..=6 {
            fact *= n as f64;
            let v = integrate_simplex(n, 1.0, &one, &gl(3)).unwrap();
            assert!((v - 1.0 / fact).abs() < 1e-6, "n = {n}: {v}");
        }
    }

    #[test]
    fn degenerate_simplex_skips_integrand() {
        let boom = |_: f64, _: &[f64]| -> f64 { panic!("must not be evaluated") };
        assert_eq!(integrate_simplex(3, 0.0, &boom, &gl(4)).unwrap(), 0.0);
    }

    #[test]
    fn zero_resolution_is_config_error() {
        let one = |_: f64, _: &[f64]| 1.0;
        let rule = QuadratureRule::NestedTrapezoidOnMesh { points: 0 };
        assert!(matches!(
            integrate_simplex(2, 1.0, &one, &rule),
            Err(crate::Error::Config(_))
        ));
        let rule = QuadratureRule::MonteCarlo {
            samples: 0,
            seed: 1,
        };
        assert!(matches!(
            integrate_simplex(2, 1.0, &one, &rule),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn monte_carlo_agrees_with_trapezoid() {
        let f = |_: f64, xi: &[f64]| (xi[0] + 2.0 * xi[1] * xi[2]).exp();
        let trap = integrate_simplex(
            3,
            1.0,
            &f,
            &QuadratureRule::NestedTrapezoidOnMesh { points: 121 },
        )
        .unwrap();
        let (mc, se) = integrate_simplex_mc(3, 1.0, &f, 200_000, 7).unwrap();
        assert!(
            (mc - trap).abs() <= 3.0 * se,
            "mc {mc} ± {se} vs trapezoid {trap}"
        );
    }

    #[test]
    fn gap_coordinates() {
        let p = SimplexPoint::new(1.0, vec![0.5, 0.25]).unwrap();
        let (gaps, last) = p.to_gap_coords();
        assert_eq!(gaps, vec![0.5, 0.25]);
        assert_eq!(last, 0.25);
        let p = SimplexPoint::new(1.0, vec![1.0, 1.0]).unwrap();
        let (gaps, last) = p.to_gap_coords();
        assert_eq!(gaps, vec![0.0, 0.0]);
        assert_eq!(last, 1.0);
        assert!(SimplexPoint::from_gap_coords(&[0.1, -0.2], 0.1).is_err());
    }

    #[test]
    fn membership() {
        assert!(contains(1.0, &[0.7, 0.7, 0.0]));
        assert!(!contains(1.0, &[0.5, 0.6]));
        assert!(!contains(0.4, &[0.5, 0.1]));
        assert!(!contains(1.0, &[0.5, -0.1]));
        assert!(SimplexPoint::new(1.0, vec![]).is_err());
    }

    #[test]
    fn line_rule_is_exact_for_cubics() {
        let rule = LineRule::default();
        let v = rule.integrate(0.2, 0.9, |s| s * s * s - s);
        let exact = (0.9f64.powi(4) - 0.2f64.powi(4)) / 4.0 - (0.81 - 0.04) / 2.0;
        assert_abs_diff_eq!(v, exact, epsilon = 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn gap_round_trip(seed in any::<u64>(), n in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: f64 = rng.gen();
                let p = sample_point(&mut rng, n, x);
                let (gaps, last) = p.to_gap_coords();
                prop_assert!(gaps.iter().all(|g| *g >= 0.0));
                prop_assert!(gaps.iter().sum::<f64>() <= x + 1e-15);
                let q = SimplexPoint::from_gap_coords(&gaps, last).unwrap();
                prop_assert!((q.x() - p.x()).abs() < 1e-14);
                for (a, b) in q.xi().iter().zip(p.xi()) {
                    prop_assert!((a - b).abs() < 1e-14);
                }
            }

            #[test]
            fn membership_matches_sortedness(xs in proptest::collection::vec(-0.2f64..1.2, 1..6), x in 0.0f64..1.0) {
                let sorted = xs.windows(2).all(|w| w[0] >= w[1]);
                let bounded = xs[0] <= x && *xs.last().unwrap() >= 0.0;
                prop_assert_eq!(contains(x, &xs), sorted && bounded);
            }
        }
    }
}
