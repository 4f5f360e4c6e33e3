//! Inverse transformation `u = w + K[u]` by Picard iteration, the Fréchet
//! derivative of `K`, and the small-gain radius bookkeeping.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::simplex::{integrate_simplex, QuadratureRule};
use crate::volterra::{GainFunctions, GridFunction, GridOperator, VolterraKernelSeries};

/// Radius used when every kernel vanishes and any `s` is admissible.
pub const ZERO_GAIN_RADIUS: f64 = 1.0;

/// Target value of `ell(s)` for the radius search.
pub const ELL_TARGET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    /// Squared radius of the admissible ball.
    pub s: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Squared radius of the target-state ball.
    pub rho_l: f64,
    /// `ell(s)` at the chosen radius.
    pub ell_s: f64,
}

impl InversionConfig {
    pub fn new(s: f64, rho_l: f64, ell_s: f64) -> Result<Self> {
        let cfg = Self {
            s,
            tol: 1e-10,
            max_iters: 200,
            rho_l,
            ell_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.rho_l > 0.0 && self.tol > 0.0) {
            return config(format!(
                "s, rho_L and tol must be positive (s = {}, rho_L = {}, tol = {})",
                self.s, self.rho_l, self.tol
            ));
        }
        if !(0.0..1.0).contains(&self.ell_s) {
            return config(format!("ell(s) = {} is not below 1", self.ell_s));
        }
        if self.max_iters == 0 {
            return config("max_iters must be at least 1");
        }
        Ok(())
    }

    /// Checks `ell(s) < 1` and `2 rho_L + 2 k(s) <= s` against `gains`.
    pub fn check_against(&self, gains: &GainFunctions) -> Result<()> {
        let ell = gains.gain_ell(self.s)?;
        let k = gains.gain_k(self.s)?;
        if ell >= 1.0 {
            return config(format!("ell({}) = {ell} is not below 1", self.s));
        }
        if 2.0 * self.rho_l + 2.0 * k > self.s * (1.0 + 1e-12) {
            return config(format!(
                "2 rho_L + 2 k(s) = {} exceeds s = {}",
                2.0 * self.rho_l + 2.0 * k,
                self.s
            ));
        }
        Ok(())
    }

    pub fn sqrt_ell(&self) -> f64 {
        self.ell_s.sqrt()
    }
}

fn total_gains(gains: &GainFunctions, s: f64) -> Result<(f64, f64)> {
    let (k, l) = (gains.gain_k(s)?, gains.gain_ell(s)?);
    Ok(match gains.tail_bounds(s) {
        Some((tk, tl)) => (k + tk, l + tl),
        None => (k, l),
    })
}

/// Picks `s` with `ell(s) = 1/2` by bisection and `rho_L = (s - 2 k(s))/2`.
///
/// When a tail model is attached its bounds are added to both gains.
pub fn choose_radius(gains: &GainFunctions) -> Result<InversionConfig> {
    let zero = gains.ell_coefficients().iter().all(|&(_, c)| c == 0.0)
        && gains.tail_bounds(1.0).is_none_or(|t| t.1 == 0.0);
    if zero {
        let s = ZERO_GAIN_RADIUS;
        return InversionConfig::new(s, s / 2.0, 0.0);
    }
    let ell = |s: f64| total_gains(gains, s).map(|g| g.1);
    let (mut lo, mut hi) = (0.0, 1.0);
    // Tail bounds go undefined past the model's radius; treat that as divergence.
    let above = |s: f64| -> Result<bool> {
        if gains.tail_bounds(0.0).is_some() && gains.tail_bounds(s).is_none() {
            return Ok(true);
        }
        Ok(ell(s)? >= ELL_TARGET)
    };
    while !above(hi)? {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoContraction);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // lo keeps ell(lo) < 1/2 throughout.
    let s = lo;
    if !(s > 0.0) {
        return Err(Error::NoContraction);
    }
    let (k, l) = total_gains(gains, s)?;
    let rho_l = ((s - 2.0 * k) / 2.0).max(f64::MIN_POSITIVE);
    InversionConfig::new(s, rho_l, l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionOutcome {
    pub u: GridFunction,
    pub iterations: usize,
    /// Increment norms `||u^{j+1} - u^j||`.
    pub increments: Vec<f64>,
    /// Final residual `||u - w - K[u]||`.
    pub residual: f64,
}

impl InversionOutcome {
    /// Consecutive increment ratios.
    pub fn ratios(&self) -> Vec<f64> {
        self.increments
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Solves `u = w + K[u]` by Picard iteration from `u^0 = w`.
pub fn invert(
    w: &GridFunction,
    op: &GridOperator,
    cfg: &InversionConfig,
) -> Result<InversionOutcome> {
    cfg.validate()?;
    let wn = w.l2_norm();
    if !(wn < cfg.rho_l.sqrt()) {
        return domain(format!(
            "||w|| = {wn} is not below sqrt(rho_L) = {}",
            cfg.rho_l.sqrt()
        ));
    }
    let mut u = w.clone();
    let mut increments = Vec::new();
    for it in 1..=cfg.max_iters {
        let next = w.add(&op.apply(&u)?);
        let inc = next.sub(&u).l2_norm();
        increments.push(inc);
        u = next;
        if !u.is_finite() {
            return Err(Error::Evaluation("Picard iterate became non-finite".into()));
        }
        if inc < cfg.tol {
            let residual = u.sub(w).sub(&op.apply(&u)?).l2_norm();
            return Ok(InversionOutcome {
                u,
                iterations: it,
                increments,
                residual,
            });
        }
    }
    let n = increments.len();
    let last_ratio = if n >= 2 && increments[n - 2] > 0.0 {
        increments[n - 1] / increments[n - 2]
    } else {
        f64::NAN
    };
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        last_ratio,
    })
}

/// `DK[u] h (x) = sum_n int_{T_n(x)} k_n sum_j h(xi_j) prod_{i != j} u(xi_i)`,
/// with `u` and `h` interpolated linearly.
pub fn frechet_dk(
    series: &VolterraKernelSeries,
    u: &GridFunction,
    h: &GridFunction,
    x: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("x = {x} is outside [0, 1]"));
    }
    let mut total = 0.0;
    for k in series.active() {
        let n = k.order();
        let f = |xx: f64, xi: &[f64]| {
            let uv: Vec<f64> = xi.iter().map(|&t| u.interp(t)).collect();
            let mut s = 0.0;
            for j in 0..n {
                let mut p = h.interp(xi[j]);
                for (i, &v) in uv.iter().enumerate() {
                    if i != j {
                        p *= v;
                    }
                }
                s += p;
            }
            if s == 0.0 {
                0.0
            } else {
                s * k.eval(xx, xi)
            }
        };
        total += integrate_simplex(n, x, &f, rule)?;
    }
    Ok(total)
}

/// Smooth random grid function with `||u|| = radius`.
pub fn random_smooth<R: Rng>(rng: &mut R, m: usize, radius: f64) -> GridFunction {
    let c: Vec<(f64, f64)> = (0..5)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let g = GridFunction::from_fn(m, |x| {
        c.iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let t = std::f64::consts::PI * k as f64 * x;
                a * t.cos() + b * t.sin()
            })
            .sum()
    });
    let n = g.l2_norm();
    if n == 0.0 {
        GridFunction::zeros(m)
    } else {
        g.scale(radius / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub worst_ratio: f64,
    pub bound: f64,
    pub trials: usize,
    pub pass: bool,
}

/// Worst `||K[u] - K[v]|| / ||u - v||` over random pairs in the ball of
/// radius `sqrt(s)`, compared with `sqrt(ell(s))`.
pub fn lipschitz_check<R: Rng>(
    op: &GridOperator,
    gains: &GainFunctions,
    s: f64,
    trials: usize,
    rng: &mut R,
) -> Result<LipschitzReport> {
    if !(s > 0.0) {
        return domain(format!("ball radius squared must be positive, got {s}"));
    }
    let m = op.mesh_size();
    let bound = gains.gain_ell(s)?.sqrt();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < trials {
        let u = {
            let r = s.sqrt() * rng.gen_range(0.0..1.0);
            random_smooth(rng, m, r)
        };
        let v = {
            let r = s.sqrt() * rng.gen_range(0.0..1.0);
            random_smooth(rng, m, r)
        };
        let d = u.sub(&v).l2_norm();
        if d == 0.0 {
            continue;
        }
        let num = op.apply(&u)?.sub(&op.apply(&v)?).l2_norm();
        worst = worst.max(num / d);
        done += 1;
    }
    Ok(LipschitzReport {
        worst_ratio: worst,
        bound,
        trials,
        pass: worst <= bound + 1e-9,
    })
}

/// Matrix of `h -> DK[u] h` on the mesh.
pub fn dk_matrix(op: &GridOperator, u: &GridFunction) -> Result<DMatrix<f64>> {
    let m = op.mesh_size();
    let mut mat = DMatrix::zeros(m, m);
    let mut e = GridFunction::zeros(m);
    for j in 0..m {
        e.values_mut()[j] = 1.0;
        let col = op.directional(u, &e)?;
        for i in 0..m {
            mat[(i, j)] = col.values()[i];
        }
        e.values_mut()[j] = 0.0;
    }
    Ok(mat)
}

/// `||(I - DK[u])^-1||` in the trapezoid-weighted L² norm of the mesh.
pub fn neumann_norm(op: &GridOperator, u: &GridFunction) -> Result<f64> {
    let m = op.mesh_size();
    let h = 1.0 / (m - 1) as f64;
    let w: Vec<f64> = (0..m)
        .map(|i| if i == 0 || i == m - 1 { 0.5 * h } else { h }.sqrt())
        .collect();
    let dk = dk_matrix(op, u)?;
    let a = DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        w[i] * (id - dk[(i, j)]) / w[j]
    });
    let sv = a.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) {
        return Err(Error::Evaluation(
            "I - DK[u] is singular on the mesh".into(),
        ));
    }
    Ok(1.0 / smin)
}
