//! Volterra series operators on grid functions, kernel norms, gain functions
//! and the growth/coupling checks that go with them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::poly::{factorial_f64, horner};
use crate::simplex::{integrate_simplex, sample_point, trapezoid_weight, QuadratureRule};

/// One standard-basis monomial `coeff * x^exps[0] * prod xi_l^exps[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// A kernel `k_n(x, xi_1, ..., xi_n)` on `T_n(x)`.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn order(&self) -> usize;
    fn eval(&self, x: f64, xi: &[f64]) -> f64;
    /// Monomial expansion over `(x, xi_1, ..., xi_n)`, when the kernel is a
    /// polynomial. Enables the separable grid evaluation path.
    fn monomials(&self) -> Option<&[Monomial]> {
        None
    }
}

/// Polynomial kernel stored as standard-basis monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyKernel {
    order: usize,
    monomials: Vec<Monomial>,
}

impl PolyKernel {
    pub fn new(order: usize, monomials: Vec<Monomial>) -> Result<Self> {
        if order == 0 {
            return domain("kernel order must be at least 1");
        }
        if let Some(m) = monomials.iter().find(|m| m.exps.len() != order + 1) {
            return domain(format!(
                "monomial {:?} has {} exponents, order {order} needs {}",
                m.exps,
                m.exps.len(),
                order + 1
            ));
        }
        let monomials = monomials.into_iter().filter(|m| m.coeff != 0.0).collect();
        Ok(Self { order, monomials })
    }

    /// The constant kernel `c` of the given order.
    pub fn constant(order: usize, c: f64) -> Self {
        Self {
            order,
            monomials: vec![Monomial {
                coeff: c,
                exps: vec![0; order + 1],
            }],
        }
    }

    pub fn zero(order: usize) -> Self {
        Self {
            order,
            monomials: Vec::new(),
        }
    }
}

impl Kernel for PolyKernel {
    fn order(&self) -> usize {
        self.order
    }

    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        eval_monomials(&self.monomials, x, xi)
    }

    fn monomials(&self) -> Option<&[Monomial]> {
        Some(&self.monomials)
    }
}

pub(crate) fn eval_monomials(monomials: &[Monomial], x: f64, xi: &[f64]) -> f64 {
    monomials
        .iter()
        .map(|m| {
            let mut v = m.coeff * x.powi(m.exps[0] as i32);
            for (e, c) in m.exps[1..].iter().zip(xi) {
                if *e > 0 {
                    v *= c.powi(*e as i32);
                }
            }
            v
        })
        .sum()
}

type KernelFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// Kernel backed by an arbitrary closure.
#[derive(Clone)]
pub struct FnKernel {
    order: usize,
    f: Arc<KernelFn>,
}

impl FnKernel {
    pub fn new(order: usize, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            order,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for FnKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnKernel(order {})", self.order)
    }
}

impl Kernel for FnKernel {
    fn order(&self) -> usize {
        self.order
    }

    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        (self.f)(x, xi)
    }
}

/// Growth constants `(D_f, rho_f)` with `|f_n| <= n! D_f / rho_f^(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub d_f: f64,
    pub rho_f: f64,
}

/// Ordered family of kernels of orders `>= 2`.
#[derive(Debug, Clone)]
pub struct VolterraKernelSeries {
    terms: Vec<Arc<dyn Kernel>>,
    growth: Option<Growth>,
    truncation: usize,
}

impl VolterraKernelSeries {
    pub fn new(mut terms: Vec<Arc<dyn Kernel>>, growth: Option<Growth>) -> Result<Self> {
        terms.sort_by_key(|k| k.order());
        for w in terms.windows(2) {
            if w[0].order() == w[1].order() {
                return domain(format!("order {} listed twice", w[0].order()));
            }
        }
        if let Some(k) = terms.iter().find(|k| k.order() < 2) {
            return domain(format!(
                "series starts at order 2, got a kernel of order {}",
                k.order()
            ));
        }
        if let Some(g) = growth {
            if !(g.d_f > 0.0 && g.rho_f > 0.0) {
                return domain(format!("growth constants must be positive, got {g:?}"));
            }
        }
        let truncation = terms.last().map_or(2, |k| k.order()).max(2);
        Ok(Self {
            terms,
            growth,
            truncation,
        })
    }

    pub fn zero() -> Self {
        Self {
            terms: Vec::new(),
            growth: None,
            truncation: 2,
        }
    }

    /// Keeps only orders `<= n_max`.
    pub fn with_truncation(mut self, n_max: usize) -> Result<Self> {
        if n_max < 2 {
            return config(format!("truncation must be at least 2, got {n_max}"));
        }
        self.truncation = n_max;
        Ok(self)
    }

    pub fn with_growth(mut self, growth: Growth) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn growth(&self) -> Option<Growth> {
        self.growth
    }

    /// Kernels up to the truncation order.
    pub fn active(&self) -> impl Iterator<Item = &Arc<dyn Kernel>> {
        self.terms
            .iter()
            .filter(move |k| k.order() <= self.truncation)
    }

    pub fn kernel(&self, n: usize) -> Option<&Arc<dyn Kernel>> {
        self.terms.iter().find(|k| k.order() == n)
    }

    pub fn orders(&self) -> Vec<usize> {
        self.active().map(|k| k.order()).collect()
    }

    /// Evaluates kernel `n` (zero when absent).
    pub fn eval_kernel(&self, n: usize, x: f64, xi: &[f64]) -> f64 {
        self.kernel(n).map_or(0.0, |k| k.eval(x, xi))
    }
}

/// Samples on the uniform mesh `x_i = i / (M - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return domain(format!(
                "grid needs at least 2 points, got {}",
                values.len()
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            values: vec![0.0; m.max(2)],
        }
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        let m = m.max(2);
        let h = 1.0 / (m - 1) as f64;
        Self {
            values: (0..m).map(|i| f(i as f64 * h)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation at `x`; clamps to `[0, 1]`.
    pub fn interp(&self, x: f64) -> f64 {
        let m = self.values.len();
        let t = (x.clamp(0.0, 1.0)) * (m - 1) as f64;
        let i = (t.floor() as usize).min(m - 2);
        let w = t - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Trapezoidal L² norm.
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.dx();
        let top = self.values.len() - 1;
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| trapezoid_weight(i, top, h) * v * v)
            .sum::<f64>()
            .max(0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "mesh size mismatch");
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(s, o)| s + a * o)
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// Cumulative trapezoid `int_0^{x_i}` of the samples.
    pub fn cumulative_integral(&self) -> Self {
        Self {
            values: cumtrap(&self.values, self.dx()),
        }
    }
}

pub(crate) fn cumtrap(g: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 1..g.len() {
        out[i] = out[i - 1] + 0.5 * h * (g[i] + g[i - 1]);
    }
    out
}

fn check_finite(u: &GridFunction) -> Result<()> {
    if u.values.iter().any(|v| v.is_nan()) {
        return Err(Error::Evaluation("grid function contains NaN".into()));
    }
    Ok(())
}

/// `sum_n int_{T_n(x)} kernel_n(x, xi) prod u(xi_i)` with `u` linearly
/// interpolated between mesh nodes.
pub fn eval_series(
    series: &VolterraKernelSeries,
    u: &GridFunction,
    x: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_finite(u)?;
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("x = {x} outside [0, 1]"));
    }
    let mut total = 0.0;
    for k in series.active() {
        let integrand = |x: f64, xi: &[f64]| {
            let prod: f64 = xi.iter().map(|&v| u.interp(v)).product();
            if prod == 0.0 {
                0.0
            } else {
                k.eval(x, xi) * prod
            }
        };
        total += integrate_simplex(k.order(), x, &integrand, rule)?;
    }
    Ok(total)
}

/// `||kernel_n(1, .)||^2` over `T_n(1)`.
pub fn kernel_l2_sq(series: &VolterraKernelSeries, n: usize, rule: &QuadratureRule) -> Result<f64> {
    let k = series
        .kernel(n)
        .ok_or_else(|| Error::Domain(format!("order {n} not in series")))?;
    kernel_l2_sq_of(k.as_ref(), rule)
}

pub fn kernel_l2_sq_of(k: &dyn Kernel, rule: &QuadratureRule) -> Result<f64> {
    let integrand = |x: f64, xi: &[f64]| {
        let v = k.eval(x, xi);
        v * v
    };
    Ok(integrate_simplex(k.order(), 1.0, &integrand, rule)?.max(0.0))
}

/// Mesh-aligned evaluation of a Volterra operator at every node.
///
/// Polynomial kernels go through nested cumulative trapezoids, one chain per
/// distinct xi-exponent pattern. Other kernels fall back to direct nested
/// trapezoid sums over mesh nodes, whose cost grows like `M^(n+1)`.
#[derive(Debug, Clone)]
pub struct GridOperator {
    m: usize,
    nodes: Vec<f64>,
    parts: Vec<OperatorPart>,
}

#[derive(Debug, Clone)]
enum OperatorPart {
    Separable {
        order: usize,
        // xi-exponents -> x-polynomial coefficients (standard basis)
        groups: Vec<(Vec<u32>, Vec<f64>)>,
    },
    Generic(Arc<dyn Kernel>),
}

impl GridOperator {
    pub fn new(series: &VolterraKernelSeries, m: usize) -> Result<Self> {
        if m < 2 {
            return config(format!("mesh needs at least 2 points, got {m}"));
        }
        let h = 1.0 / (m - 1) as f64;
        let nodes = (0..m).map(|i| i as f64 * h).collect();
        let mut parts = Vec::new();
        for k in series.active() {
            match k.monomials() {
                Some(monos) => {
                    let mut groups: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
                    for mono in monos {
                        let key = mono.exps[1..].to_vec();
                        let e0 = mono.exps[0] as usize;
                        let poly = groups.entry(key).or_default();
                        if poly.len() <= e0 {
                            poly.resize(e0 + 1, 0.0);
                        }
                        poly[e0] += mono.coeff;
                    }
                    parts.push(OperatorPart::Separable {
                        order: k.order(),
                        groups: groups.into_iter().collect(),
                    });
                }
                None => parts.push(OperatorPart::Generic(k.clone())),
            }
        }
        Ok(Self { m, nodes, parts })
    }

    pub fn mesh_size(&self) -> usize {
        self.m
    }

    pub fn is_separable(&self) -> bool {
        self.parts
            .iter()
            .all(|p| matches!(p, OperatorPart::Separable { .. }))
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if u.len() != self.m {
            return config(format!(
                "operator built for M = {}, got grid of {}",
                self.m,
                u.len()
            ));
        }
        check_finite(u)
    }

    /// `K[u](x_i)` for every node.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check(u)?;
        let mut out = vec![0.0; self.m];
        for part in &self.parts {
            match part {
                OperatorPart::Separable { groups, .. } => {
                    for (exps, xpoly) in groups {
                        let g = self.chain(exps, u, None);
                        for i in 0..self.m {
                            out[i] += horner(xpoly, self.nodes[i]) * g[i];
                        }
                    }
                }
                OperatorPart::Generic(k) => {
                    let vals: Vec<f64> = (0..self.m)
                        .into_par_iter()
                        .map(|i| self.generic_at(k.as_ref(), i, u, None))
                        .collect();
                    for (o, v) in out.iter_mut().zip(vals) {
                        *o += v;
                    }
                }
            }
        }
        GridFunction::new(out)
    }

    /// `K[u](1)` alone.
    pub fn apply_at_end(&self, u: &GridFunction) -> Result<f64> {
        self.check(u)?;
        let last = self.m - 1;
        let mut total = 0.0;
        for part in &self.parts {
            match part {
                OperatorPart::Separable { groups, .. } => {
                    for (exps, xpoly) in groups {
                        let g = self.chain(exps, u, None);
                        total += horner(xpoly, 1.0) * g[last];
                    }
                }
                OperatorPart::Generic(k) => total += self.generic_at(k.as_ref(), last, u, None),
            }
        }
        Ok(total)
    }

    /// Directional derivative `DK[u] h` at every node.
    pub fn directional(&self, u: &GridFunction, h: &GridFunction) -> Result<GridFunction> {
        self.check(u)?;
        self.check(h)?;
        let mut out = vec![0.0; self.m];
        for part in &self.parts {
            match part {
                OperatorPart::Separable { order, groups } => {
                    for (exps, xpoly) in groups {
                        for j in 0..*order {
                            let g = self.chain(exps, u, Some((j, h)));
                            for i in 0..self.m {
                                out[i] += horner(xpoly, self.nodes[i]) * g[i];
                            }
                        }
                    }
                }
                OperatorPart::Generic(k) => {
                    let vals: Vec<f64> = (0..self.m)
                        .into_par_iter()
                        .map(|i| {
                            (0..k.order())
                                .map(|j| self.generic_at(k.as_ref(), i, u, Some((j, h))))
                                .sum::<f64>()
                        })
                        .collect();
                    for (o, v) in out.iter_mut().zip(vals) {
                        *o += v;
                    }
                }
            }
        }
        GridFunction::new(out)
    }

    /// Nested cumulative trapezoid for the xi-exponent pattern `exps`; level
    /// `swap.0` uses `swap.1` in place of `u`.
    fn chain(
        &self,
        exps: &[u32],
        u: &GridFunction,
        swap: Option<(usize, &GridFunction)>,
    ) -> Vec<f64> {
        let h = 1.0 / (self.m - 1) as f64;
        let n = exps.len();
        let mut inner = vec![1.0; self.m];
        for level in (0..n).rev() {
            let field = match swap {
                Some((j, hf)) if j == level => hf.values(),
                _ => u.values(),
            };
            let e = exps[level] as i32;
            let g: Vec<f64> = (0..self.m)
                .map(|i| {
                    let p = if e == 0 { 1.0 } else { self.nodes[i].powi(e) };
                    p * field[i] * inner[i]
                })
                .collect();
            inner = cumtrap(&g, h);
        }
        inner
    }

    fn generic_at(
        &self,
        k: &dyn Kernel,
        top: usize,
        u: &GridFunction,
        swap: Option<(usize, &GridFunction)>,
    ) -> f64 {
        let n = k.order();
        let h = 1.0 / (self.m - 1) as f64;
        let x = self.nodes[top];
        let mut idx = vec![0usize; n];
        let mut coords = vec![0.0; n];
        fn rec(
            level: usize,
            upper: usize,
            h: f64,
            x: f64,
            k: &dyn Kernel,
            u: &GridFunction,
            swap: Option<(usize, &GridFunction)>,
            idx: &mut [usize],
            coords: &mut [f64],
        ) -> f64 {
            if level == idx.len() {
                let mut prod = 1.0;
                for (l, &i) in idx.iter().enumerate() {
                    let field = match swap {
                        Some((j, hf)) if j == l => hf.values(),
                        _ => u.values(),
                    };
                    prod *= field[i];
                }
                return if prod == 0.0 {
                    0.0
                } else {
                    prod * k.eval(x, coords)
                };
            }
            let mut acc = 0.0;
            for i in 0..=upper {
                let w = trapezoid_weight(i, upper, h);
                if w == 0.0 {
                    continue;
                }
                idx[level] = i;
                coords[level] = i as f64 * h;
                acc += w * rec(level + 1, i, h, x, k, u, swap, idx, coords);
            }
            acc
        }
        rec(0, top, h, x, k, u, swap, &mut idx, &mut coords)
    }
}

/// User-supplied constants of the kernel growth model
/// `||k_n||^2 <= n! D_K^2 C_K^(2(n-1)) e^(2 Upsilon_K)`, used only to bound
/// the truncated tail of the gain series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelGrowthModel {
    pub c_k: f64,
    pub d_k: f64,
    pub upsilon_k: f64,
}

/// Truncated gain series built from stored kernel norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFunctions {
    /// `(n, ||k_n||^2)` for the stored orders, ascending.
    norms: Vec<(usize, f64)>,
    tail_model: Option<KernelGrowthModel>,
}

impl GainFunctions {
    pub fn from_norms(mut norms: Vec<(usize, f64)>) -> Result<Self> {
        norms.sort_by_key(|p| p.0);
        if let Some((n, v)) = norms.iter().find(|(n, v)| *n < 2 || !(*v >= 0.0)) {
            return domain(format!("invalid stored norm ||k_{n}||^2 = {v}"));
        }
        Ok(Self {
            norms,
            tail_model: None,
        })
    }

    pub fn from_series(series: &VolterraKernelSeries, rule: &QuadratureRule) -> Result<Self> {
        let norms = series
            .active()
            .map(|k| Ok((k.order(), kernel_l2_sq_of(k.as_ref(), rule)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_norms(norms)
    }

    pub fn with_tail_model(mut self, model: KernelGrowthModel) -> Self {
        self.tail_model = Some(model);
        self
    }

    pub fn kernel_l2_norms(&self) -> &[(usize, f64)] {
        &self.norms
    }

    pub fn max_order(&self) -> usize {
        self.norms.last().map_or(1, |p| p.0)
    }

    /// `(n, coefficient of s^n in k)`.
    pub fn k_coefficients(&self) -> Vec<(usize, f64)> {
        self.norms
            .iter()
            .map(|&(n, v)| (n, 2.0 * (n * n) as f64 * v / factorial_f64(n as u32)))
            .collect()
    }

    /// `(n, coefficient of s^(n-1) in ell)`.
    pub fn ell_coefficients(&self) -> Vec<(usize, f64)> {
        self.norms
            .iter()
            .map(|&(n, v)| {
                (
                    n,
                    2.0 * (n as f64).powi(4) * v / factorial_f64(n as u32 - 1),
                )
            })
            .collect()
    }

    pub fn gain_k(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return domain(format!("gain argument must be nonnegative, got {s}"));
        }
        Ok(self
            .k_coefficients()
            .iter()
            .map(|&(n, c)| c * s.powi(n as i32))
            .sum())
    }

    pub fn gain_ell(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return domain(format!("gain argument must be nonnegative, got {s}"));
        }
        Ok(self
            .ell_coefficients()
            .iter()
            .map(|&(n, c)| c * s.powi(n as i32 - 1))
            .sum())
    }

    /// Upper bounds on the neglected tails of `(k(s), ell(s))` under the
    /// attached growth model; `None` when no model is attached or the tail
    /// series diverges at `s`.
    pub fn tail_bounds(&self, s: f64) -> Option<(f64, f64)> {
        let model = self.tail_model?;
        let q = model.c_k * model.c_k * s;
        if !(q < 1.0) || s < 0.0 {
            return None;
        }
        let pre = 2.0 * model.d_k * model.d_k * (2.0 * model.upsilon_k).exp();
        let (mut tk, mut tl) = (0.0, 0.0);
        let start = self.max_order() + 1;
        for n in start..start + 10_000 {
            let nf = n as f64;
            // ||k_n||^2 / n! <= D^2 C^(2(n-1)) e^(2 Upsilon)
            let base = pre * model.c_k.powi(2 * (n as i32 - 1));
            let dk = base * nf * nf * s.powi(n as i32);
            let dl = base * nf.powi(5) * s.powi(n as i32 - 1);
            tk += dk;
            tl += dl;
            if dl < 1e-18 * tl.max(1e-300) && nf * q < 0.5 {
                break;
            }
        }
        Some((tk, tl))
    }

    /// Cauchy–Hadamard estimate `(||k_N||^2 / N!)^(-1/N)` at the highest
    /// nonzero stored order; infinite for an all-zero family.
    pub fn rho_k_estimate(&self) -> f64 {
        match self.norms.iter().rev().find(|p| p.1 > 0.0) {
            Some(&(n, v)) => (v / factorial_f64(n as u32)).powf(-1.0 / n as f64),
            None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// `(n, worst |f_n| rho_f^(n-1) / (n! D_f))` over the samples.
    pub per_order: Vec<(usize, f64)>,
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Samples each kernel at random simplex points and compares against the
/// factorial growth bound.
pub fn check_growth_assumption(
    series: &VolterraKernelSeries,
    samples: usize,
    seed: u64,
) -> Result<GrowthReport> {
    let Some(g) = series.growth() else {
        return config("growth check needs D_f and rho_f metadata");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_order = Vec::new();
    for k in series.active() {
        let n = k.order();
        let scale = g.rho_f.powi(n as i32 - 1) / (factorial_f64(n as u32) * g.d_f);
        let mut worst: f64 = 0.0;
        for _ in 0..samples.max(1) {
            let p = sample_point(&mut rng, n, 1.0);
            worst = worst.max(k.eval(p.x(), p.xi()).abs() * scale);
        }
        per_order.push((n, worst));
    }
    let worst_ratio = per_order.iter().fold(0.0, |a: f64, p| a.max(p.1));
    Ok(GrowthReport {
        per_order,
        worst_ratio,
        pass: worst_ratio <= 1.0,
    })
}

/// Coefficient `(n+1)! (n-m+1) / ((m+1)! (n-m)!)` of the coupling bound.
pub fn coupling_bound_coefficient(n: usize, m: usize) -> f64 {
    let (n32, m32) = (n as u32, m as u32);
    factorial_f64(n32 + 1) * (n - m + 1) as f64
        / (factorial_f64(m32 + 1) * factorial_f64(n32 - m32))
}

/// Checks `||B||^2 <= coef * x^m ||f_m||_inf^2 / m! * ||k_lower||^2 + tol`,
/// where the norm arguments are unsquared.
pub fn coupling_bound_check(
    n: usize,
    m: usize,
    k_lower_norm: f64,
    f_m_sup: f64,
    b_norm_estimate: f64,
    x: f64,
    tolerance: f64,
) -> bool {
    if m < 2 || m > n {
        return false;
    }
    let bound = coupling_bound_coefficient(n, m) * x.powi(m as i32) * f_m_sup * f_m_sup
        / factorial_f64(m as u32)
        * k_lower_norm
        * k_lower_norm;
    b_norm_estimate * b_norm_estimate <= bound + tolerance
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gl(points: usize) -> QuadratureRule {
        QuadratureRule::TensorGaussLegendreOnGaps { points }
    }

    fn pdae_plant() -> VolterraKernelSeries {
        VolterraKernelSeries::new(vec![Arc::new(PolyKernel::constant(2, 1.0))], None).unwrap()
    }

    fn k2_series() -> VolterraKernelSeries {
        let k2 = PolyKernel::new(
            2,
            vec![Monomial {
                coeff: -1.0,
                exps: vec![0, 0, 1],
            }],
        )
        .unwrap();
        VolterraKernelSeries::new(vec![Arc::new(k2)], None).unwrap()
    }

    #[test]
    fn eval_series_examples() {
        let rule = gl(8);
        let zero = GridFunction::zeros(101);
        assert_eq!(eval_series(&pdae_plant(), &zero, 1.0, &rule).unwrap(), 0.0);
        let one = GridFunction::from_fn(101, |_| 1.0);
        for x in [0.3, 0.7, 1.0] {
            assert_abs_diff_eq!(
                eval_series(&pdae_plant(), &one, x, &rule).unwrap(),
                x * x / 2.0,
                epsilon = 1e-12
            );
        }
        let lin = GridFunction::from_fn(101, |x| x);
        // Piecewise-linear interpolation of u(x) = x is exact.
        let v = eval_series(
            &pdae_plant(),
            &lin,
            1.0,
            &QuadratureRule::TensorGaussLegendreOnGaps { points: 12 },
        )
        .unwrap();
        assert_abs_diff_eq!(v, 0.125, epsilon = 1e-10);
    }

    #[test]
    fn eval_series_rejects_nan() {
        let mut u = GridFunction::zeros(11);
        u.values_mut()[3] = f64::NAN;
        assert!(matches!(
            eval_series(&pdae_plant(), &u, 1.0, &gl(4)),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn kernel_norm_examples() {
        assert_abs_diff_eq!(
            kernel_l2_sq(&k2_series(), 2, &gl(6)).unwrap(),
            1.0 / 12.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            kernel_l2_sq(&pdae_plant(), 2, &gl(6)).unwrap(),
            0.5,
            epsilon = 1e-14
        );
        let zero = VolterraKernelSeries::new(vec![Arc::new(PolyKernel::zero(3))], None).unwrap();
        assert_eq!(kernel_l2_sq(&zero, 3, &gl(6)).unwrap(), 0.0);
        // Brute-force oracle with an unrelated rule.
        let trap = QuadratureRule::NestedTrapezoidOnMesh { points: 401 };
        assert_abs_diff_eq!(
            kernel_l2_sq(&k2_series(), 2, &trap).unwrap(),
            1.0 / 12.0,
            epsilon = 1e-5
        );
    }

    #[test]
    fn gains_single_order() {
        let g = GainFunctions::from_norms(vec![(2, 1.0 / 12.0)]).unwrap();
        assert_eq!(g.gain_k(0.0).unwrap(), 0.0);
        assert_eq!(g.gain_ell(0.0).unwrap(), 0.0);
        for s in [0.1, 0.25, 0.8] {
            assert_abs_diff_eq!(g.gain_k(s).unwrap(), s * s / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(g.gain_ell(s).unwrap(), 8.0 * s / 3.0, epsilon = 1e-15);
        }
        assert!(g.gain_k(-1.0).is_err());
        assert!(g.tail_bounds(0.1).is_none());
    }

    #[test]
    fn ell_coefficients_are_n_cubed_times_k_coefficients() {
        let g = GainFunctions::from_norms(vec![(2, 0.1), (3, 0.02), (5, 0.3)]).unwrap();
        for ((n, kc), (n2, lc)) in g.k_coefficients().into_iter().zip(g.ell_coefficients()) {
            assert_eq!(n, n2);
            assert_abs_diff_eq!(
                lc,
                (n as f64).powi(3) * kc,
                epsilon = 1e-12 * lc.abs().max(1.0)
            );
        }
    }

    #[test]
    fn gains_monotone() {
        let g = GainFunctions::from_norms(vec![(2, 0.1), (3, 0.02)]).unwrap();
        let mut prev = (0.0, 0.0);
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let cur = (g.gain_k(s).unwrap(), g.gain_ell(s).unwrap());
            assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            prev = cur;
        }
    }

    #[test]
    fn tail_bounds_with_model() {
        let g = GainFunctions::from_norms(vec![(2, 1.0 / 12.0)])
            .unwrap()
            .with_tail_model(KernelGrowthModel {
                c_k: 1.0,
                d_k: 0.5,
                upsilon_k: 0.0,
            });
        let (tk, tl) = g.tail_bounds(0.1).unwrap();
        assert!(tk > 0.0 && tl > tk);
        assert!(g.tail_bounds(1.5).is_none());
    }

    #[test]
    fn rho_k_estimate() {
        let g = GainFunctions::from_norms(vec![(2, 1.0 / 12.0)]).unwrap();
        assert_abs_diff_eq!(
            g.rho_k_estimate(),
            (1.0f64 / 24.0).powf(-0.5),
            epsilon = 1e-12
        );
        assert!(GainFunctions::from_norms(vec![])
            .unwrap()
            .rho_k_estimate()
            .is_infinite());
    }

    #[test]
    fn growth_assumption_examples() {
        let g = Growth {
            d_f: 1.0,
            rho_f: 1.0,
        };
        let r = check_growth_assumption(&pdae_plant().with_growth(g), 50, 1).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.worst_ratio, 0.5, epsilon = 1e-15);
        let r =
            check_growth_assumption(&VolterraKernelSeries::zero().with_growth(g), 50, 1).unwrap();
        assert!(r.pass && r.worst_ratio == 0.0);
        let ten = VolterraKernelSeries::new(vec![Arc::new(PolyKernel::constant(2, 10.0))], Some(g))
            .unwrap();
        let r = check_growth_assumption(&ten, 50, 1).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.worst_ratio, 5.0, epsilon = 1e-14);
        assert!(matches!(
            check_growth_assumption(&pdae_plant(), 10, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn coupling_bound_examples() {
        assert!(coupling_bound_check(3, 2, 0.0, 0.0, 0.0, 1.0, 0.0));
        assert_abs_diff_eq!(coupling_bound_coefficient(3, 2), 8.0, epsilon = 1e-14);
        // coefficient * x^m f^2 / m! = 4 at x = 1, f_sup = 1
        let k = (1.0f64 / 12.0).sqrt();
        assert!(coupling_bound_check(
            3,
            2,
            k,
            1.0,
            (4.0f64 / 12.0).sqrt() - 1e-9,
            1.0,
            0.0
        ));
        assert!(!coupling_bound_check(
            3,
            2,
            k,
            1.0,
            (4.0f64 / 12.0).sqrt() + 1e-6,
            1.0,
            0.0
        ));
    }

    #[test]
    fn series_validation() {
        assert!(
            VolterraKernelSeries::new(vec![Arc::new(PolyKernel::constant(1, 1.0))], None).is_err()
        );
        assert!(VolterraKernelSeries::new(
            vec![
                Arc::new(PolyKernel::constant(2, 1.0)),
                Arc::new(PolyKernel::constant(2, 2.0))
            ],
            None
        )
        .is_err());
        assert!(VolterraKernelSeries::zero().with_truncation(1).is_err());
    }

    #[test]
    fn separable_matches_generic_and_nested_trapezoid() {
        let m = 41;
        let poly = k2_series();
        let generic = VolterraKernelSeries::new(
            vec![Arc::new(FnKernel::new(2, |_, xi: &[f64]| -xi[1]))],
            None,
        )
        .unwrap();
        let u = GridFunction::from_fn(m, |x| (3.0 * x).sin() + 0.5);
        let a = GridOperator::new(&poly, m).unwrap();
        let b = GridOperator::new(&generic, m).unwrap();
        assert!(a.is_separable() && !b.is_separable());
        let ka = a.apply(&u).unwrap();
        let kb = b.apply(&u).unwrap();
        for (p, q) in ka.values().iter().zip(kb.values()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-13);
        }
        let trap = QuadratureRule::NestedTrapezoidOnMesh { points: m };
        let direct = eval_series(&poly, &u, 1.0, &trap).unwrap();
        assert_abs_diff_eq!(a.apply_at_end(&u).unwrap(), direct, epsilon = 1e-13);

        let h = GridFunction::from_fn(m, |x| x * x - 0.3);
        let da = a.directional(&u, &h).unwrap();
        let db = b.directional(&u, &h).unwrap();
        for (p, q) in da.values().iter().zip(db.values()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-13);
        }
    }

    #[test]
    fn feedback_of_k2_at_unit_state() {
        let op = GridOperator::new(&k2_series(), 201).unwrap();
        let one = GridFunction::from_fn(201, |_| 1.0);
        assert_abs_diff_eq!(op.apply_at_end(&one).unwrap(), -1.0 / 6.0, epsilon = 1e-5);
    }

    #[test]
    fn grid_function_basics() {
        let u = GridFunction::from_fn(11, |x| x);
        assert_abs_diff_eq!(u.interp(0.55), 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(u.interp(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            GridFunction::from_fn(101, |_| 2.0).l2_norm(),
            2.0,
            epsilon = 1e-14
        );
        assert!(GridFunction::new(vec![1.0]).is_err());
        assert_abs_diff_eq!(u.cumulative_integral().values()[10], 0.5, epsilon = 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn random_grid(seed: u64, m: usize, amp: f64) -> GridFunction {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            GridFunction::from_fn(m, |x| {
                amp * (c[0] + c[1] * (2.0 * x).sin() + c[2] * x * x + c[3] * (5.0 * x).cos())
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn multilinear_scaling(seed in any::<u64>()) {
                let u = random_grid(seed, 81, 1.0);
                let rule = QuadratureRule::TensorGaussLegendreOnGaps { points: 6 };
                let f3 = VolterraKernelSeries::new(
                    vec![Arc::new(FnKernel::new(3, |x, xi: &[f64]| x - xi[0] * xi[2] + 0.3))],
                    None,
                ).unwrap();
                let base = eval_series(&f3, &u, 0.9, &rule).unwrap();
                for c in [-1.0, 2.0] {
                    let scaled = eval_series(&f3, &u.scale(c), 0.9, &rule).unwrap();
                    let expect = c * c * c * base;
                    prop_assert!((scaled - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
                }
            }

            #[test]
            fn gain_bound_holds_for_k2(seed in any::<u64>()) {
                let m = 201;
                let op = GridOperator::new(&k2_series(), m).unwrap();
                let gains = GainFunctions::from_norms(vec![(2, 1.0 / 12.0)]).unwrap();
                let u = random_grid(seed, m, 1.5);
                let s = u.l2_norm_sq();
                let k_u = op.apply(&u).unwrap();
                prop_assert!(k_u.l2_norm_sq() <= gains.gain_k(s).unwrap() + 1e-6);
            }
        }
    }
}
