//! PDE-free kernel construction in the gap basis: exact coefficient
//! families, the coupling coefficients `c_P`, the scalar quadrature cascade
//! for `a_P`, kernel assembly, and the divided-power norm algebra.

mod dp;
mod gamma;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use dp::{DpKey, GapPolynomial};
pub use gamma::{gamma_projection, gamma_table, GammaKey, GammaTerm};

use crate::charkernels::{KernelNode, Provenance};
use crate::error::{config, domain, Error, Result};
use crate::poly::{factorial, factorial_f64, multi_indices, rat_to_f64, MPoly, Rational, UPoly};
use crate::simplex::{sample_point, SimplexPoint};
use crate::volterra::{Kernel, Monomial, PolyKernel, VolterraKernelSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyRole {
    PlantB,
    CascadeA,
    CouplingC,
}

impl FamilyRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyRole::PlantB => "plant-b",
            FamilyRole::CascadeA => "cascade-a",
            FamilyRole::CouplingC => "coupling-c",
        }
    }
}

/// Constants `(D, rho, mu, nu)` of the coefficient bound
/// `sup |b_p^(sigma)| <= D rho^-(n-1) mu^-|p| nu^-sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfMetadata {
    pub d: f64,
    pub rho: f64,
    pub mu: f64,
    pub nu: f64,
}

pub type OrderSlice = BTreeMap<Vec<u32>, UPoly>;

/// Map `(n, P) -> polynomial in x` with exact rational coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GapCoefficientFamily {
    role: FamilyRole,
    orders: BTreeSet<usize>,
    entries: BTreeMap<usize, OrderSlice>,
    metadata: Option<CfMetadata>,
}

impl GapCoefficientFamily {
    pub fn new(role: FamilyRole) -> Self {
        Self {
            role,
            orders: BTreeSet::new(),
            entries: BTreeMap::new(),
            metadata: None,
        }
    }

    pub fn role(&self) -> FamilyRole {
        self.role
    }

    pub fn metadata(&self) -> Option<CfMetadata> {
        self.metadata
    }

    pub fn with_metadata(mut self, meta: CfMetadata) -> Self {
        self.metadata = Some(meta);
        self
    }

    /// Marks order `n` as present even if all its entries are zero.
    pub fn declare_order(&mut self, n: usize) {
        self.orders.insert(n);
    }

    pub fn has_order(&self, n: usize) -> bool {
        self.orders.contains(&n)
    }

    pub fn orders(&self) -> impl Iterator<Item = usize> + '_ {
        self.orders.iter().copied()
    }

    pub fn max_order(&self) -> Option<usize> {
        self.orders.iter().next_back().copied()
    }

    /// Adds `poly` to entry `(n, P)`; zero entries are dropped.
    pub fn add(&mut self, n: usize, p: Vec<u32>, poly: &UPoly) -> Result<()> {
        if p.len() != n {
            return domain(format!(
                "multi-index {p:?} has length {}, order is {n}",
                p.len()
            ));
        }
        self.orders.insert(n);
        let slice = self.entries.entry(n).or_default();
        let cur = slice.remove(&p).unwrap_or_default();
        let sum = &cur + poly;
        if !sum.is_zero() {
            slice.insert(p, sum);
        }
        Ok(())
    }

    pub fn get(&self, n: usize, p: &[u32]) -> Option<&UPoly> {
        self.entries.get(&n)?.get(p)
    }

    /// Nonzero entries of order `n`.
    pub fn order_slice(&self, n: usize) -> OrderSlice {
        self.entries.get(&n).cloned().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Vec<u32>, &UPoly)> {
        self.entries
            .iter()
            .flat_map(|(n, s)| s.iter().map(move |(p, poly)| (*n, p, poly)))
    }

    pub fn support_len(&self) -> usize {
        self.entries.values().map(|s| s.len()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.support_len() == 0
    }

    /// JSON with exact numerator/denominator strings.
    pub fn to_json(&self) -> Value {
        let entries: Vec<Value> = self
            .iter()
            .map(|(n, p, poly)| {
                let coeffs: Vec<Value> = poly
                    .coeffs()
                    .iter()
                    .map(|c| json!({"num": c.numer().to_string(), "den": c.denom().to_string()}))
                    .collect();
                json!({"n": n, "P": p, "coeffs": coeffs, "display": poly.to_string()})
            })
            .collect();
        let mut v = json!({
            "role": self.role.as_str(),
            "orders": self.orders.iter().collect::<Vec<_>>(),
            "entries": entries,
        });
        if let Some(meta) = self.metadata {
            v["metadata"] = serde_json::to_value(meta).expect("plain struct");
        }
        v
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("family JSON: {what}"));
        let role = match v["role"].as_str() {
            Some("plant-b") => FamilyRole::PlantB,
            Some("cascade-a") => FamilyRole::CascadeA,
            Some("coupling-c") => FamilyRole::CouplingC,
            _ => return Err(bad("missing or unknown role")),
        };
        let mut fam = Self::new(role);
        for o in v["orders"].as_array().ok_or_else(|| bad("orders"))? {
            fam.declare_order(o.as_u64().ok_or_else(|| bad("order"))? as usize);
        }
        for e in v["entries"].as_array().ok_or_else(|| bad("entries"))? {
            let n = e["n"].as_u64().ok_or_else(|| bad("entry n"))? as usize;
            let p: Vec<u32> = e["P"]
                .as_array()
                .ok_or_else(|| bad("entry P"))?
                .iter()
                .map(|x| x.as_u64().map(|k| k as u32))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("entry P"))?;
            let coeffs: Vec<Rational> = e["coeffs"]
                .as_array()
                .ok_or_else(|| bad("coeffs"))?
                .iter()
                .map(|c| {
                    let num: BigInt = c["num"].as_str()?.parse().ok()?;
                    let den: BigInt = c["den"].as_str()?.parse().ok()?;
                    (!den.is_zero()).then(|| BigRational::new(num, den))
                })
                .collect::<Option<_>>()
                .ok_or_else(|| bad("coefficient strings"))?;
            fam.add(n, p, &UPoly::from_coeffs(coeffs))?;
        }
        if !v["metadata"].is_null() {
            fam.metadata = Some(
                serde_json::from_value(v["metadata"].clone()).map_err(|e| bad(&e.to_string()))?,
            );
        }
        Ok(fam)
    }
}

/// `Phi_P(x; xi) = prod (xi_r - xi_{r+1})^{P_r} / P_r!` with `xi_0 = x`.
pub fn phi_eval(p: &[u32], x: f64, xi: &[f64]) -> f64 {
    let mut prev = x;
    let mut acc = 1.0;
    for (&e, &v) in p.iter().zip(xi) {
        if e > 0 {
            acc *= (prev - v).powi(e as i32) / factorial_f64(e);
        }
        prev = v;
    }
    acc
}

pub fn phi_eval_point(p: &[u32], point: &SimplexPoint) -> f64 {
    phi_eval(p, point.x(), point.xi())
}

/// Plant family `b` from kernels given as polynomials in `(x, xi)`.
pub fn plant_family_from_series(series: &VolterraKernelSeries) -> Result<GapCoefficientFamily> {
    let mut fam = GapCoefficientFamily::new(FamilyRole::PlantB);
    for k in series.active() {
        let n = k.order();
        let monos = k.monomials().ok_or_else(|| {
            Error::Unsupported(format!(
                "order-{n} plant kernel is not a polynomial in (x, xi)"
            ))
        })?;
        fam.declare_order(n);
        // Variables: x, Delta_0..Delta_{n-1}; xi_i = x - (Delta_0 + ... + Delta_{i-1}).
        let nv = n + 1;
        let xv = MPoly::var(nv, 0);
        let mut xis = Vec::with_capacity(n);
        let mut acc = xv.clone();
        for i in 0..n {
            acc = &acc - &MPoly::var(nv, i + 1);
            xis.push(acc.clone());
        }
        let mut total = MPoly::zero(nv);
        for mono in monos {
            let c = Rational::from_float(mono.coeff)
                .ok_or_else(|| Error::Domain(format!("non-finite coefficient {}", mono.coeff)))?;
            let mut t = xv.pow(mono.exps[0]).scale(&c);
            for (i, &e) in mono.exps[1..].iter().enumerate() {
                if e > 0 {
                    t = &t * &xis[i].pow(e);
                }
            }
            total = &total + &t;
        }
        for (exps, c) in total.terms() {
            let p: Vec<u32> = exps[1..].to_vec();
            let scale: BigInt = p.iter().map(|&e| factorial(e)).product();
            let poly = UPoly::monomial(c * Rational::from_integer(scale), exps[0] as usize);
            fam.add(n, p, &poly)?;
        }
    }
    Ok(fam)
}

/// The builtin PDAE plant: `b^(2)_(0,0) = 1`.
pub fn pdae_plant_family() -> GapCoefficientFamily {
    let mut fam = GapCoefficientFamily::new(FamilyRole::PlantB);
    fam.add(2, vec![0, 0], &UPoly::from_i64(&[1]))
        .expect("valid entry");
    fam
}

/// Expansion caps for the coupling computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeCaps {
    /// Largest admissible `|P|` of a coupling entry.
    pub degree_cap: u32,
    /// Largest admissible Taylor order `tau` (and `sigma`).
    pub tau_cap: u32,
}

impl Default for CascadeCaps {
    fn default() -> Self {
        Self {
            degree_cap: 48,
            tau_cap: 48,
        }
    }
}

/// Memo of Gamma projections keyed by `(n, m, term)`.
#[derive(Debug, Default)]
pub struct GammaCache {
    map: HashMap<(usize, usize, GammaTerm), BTreeMap<Vec<u32>, BigInt>>,
}

impl GammaCache {
    pub fn get(
        &mut self,
        n: usize,
        m: usize,
        term: &GammaTerm,
    ) -> Result<&BTreeMap<Vec<u32>, BigInt>> {
        let key = (n, m, term.clone());
        if !self.map.contains_key(&key) {
            let v = gamma_projection(n, m, term)?;
            self.map.insert(key.clone(), v);
        }
        Ok(&self.map[&key])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn degree_u32(p: &UPoly) -> u32 {
    p.degree().unwrap_or(0) as u32
}

/// `c^(n)_P(x) = sum_m sum Gamma x^{tau-|alpha|}/(tau-|alpha|)! (a_q)^(tau) (b_q')^(sigma)`.
pub fn coupling_c(
    n: usize,
    a: &GapCoefficientFamily,
    b: &GapCoefficientFamily,
    caps: CascadeCaps,
    cache: &mut GammaCache,
) -> Result<GapCoefficientFamily> {
    if n < 2 {
        return domain(format!("coupling order must be at least 2, got {n}"));
    }
    let mut c = GapCoefficientFamily::new(FamilyRole::CouplingC);
    c.declare_order(n);
    for m in 2..n {
        let k = n - m + 1;
        let b_slice = b.order_slice(m);
        if b_slice.is_empty() {
            continue;
        }
        if !a.has_order(k) {
            return config(format!("c^({n}) needs the order-{k} cascade family"));
        }
        let a_slice = a.order_slice(k);
        if a_slice.is_empty() {
            continue;
        }
        let tau_needed = a_slice.values().map(degree_u32).max().unwrap_or(0);
        let sigma_needed = b_slice.values().map(degree_u32).max().unwrap_or(0);
        if tau_needed.max(sigma_needed) > caps.tau_cap {
            return Err(Error::CapExceeded {
                what: "tau",
                needed: tau_needed.max(sigma_needed) as usize,
                cap: caps.tau_cap as usize,
            });
        }
        let deg_needed = a_slice
            .keys()
            .map(|q| q.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
            + b_slice
                .keys()
                .map(|q| q.iter().sum::<u32>())
                .max()
                .unwrap_or(0)
            + sigma_needed
            + tau_needed
            + 1;
        if deg_needed > caps.degree_cap {
            return Err(Error::CapExceeded {
                what: "gap degree",
                needed: deg_needed as usize,
                cap: caps.degree_cap as usize,
            });
        }
        for (q, a_q) in &a_slice {
            let a_deg = degree_u32(a_q);
            let derivs: Vec<UPoly> = (0..=a_deg)
                .map(|t| a_q.nth_derivative(t as usize))
                .collect();
            for (qp, b_qp) in &b_slice {
                let b_deg = degree_u32(b_qp);
                for sigma in 0..=b_deg {
                    let b_sigma = b_qp.nth_derivative(sigma as usize);
                    for tau in 1..=a_deg {
                        let ab = &derivs[tau as usize] * &b_sigma;
                        if ab.is_zero() {
                            continue;
                        }
                        for abs_alpha in 0..=tau {
                            let xfac = UPoly::monomial(
                                Rational::from_integer(BigInt::from(1))
                                    / Rational::from_integer(factorial(tau - abs_alpha)),
                                (tau - abs_alpha) as usize,
                            );
                            let base = &xfac * &ab;
                            for alpha in multi_indices(n, abs_alpha) {
                                let term = GammaTerm {
                                    q: q.clone(),
                                    q_prime: qp.clone(),
                                    sigma,
                                    tau,
                                    alpha,
                                };
                                for (pp, g) in cache.get(n, m, &term)? {
                                    c.add(
                                        n,
                                        pp.clone(),
                                        &base.scale(&Rational::from_integer(g.clone())),
                                    )?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(c)
}

/// Cascade output: the `a` family together with the coupling families.
#[derive(Debug, Clone)]
pub struct CascadeResult {
    pub a: GapCoefficientFamily,
    pub c: GapCoefficientFamily,
}

/// `a^(n)_P(x) = int_0^x [-b^(n)_P + c^(n)_P]` for `n = 2..n_max`.
pub fn cascade(b: &GapCoefficientFamily, n_max: usize) -> Result<GapCoefficientFamily> {
    Ok(cascade_with(b, n_max, CascadeCaps::default())?.a)
}

pub fn cascade_with(
    b: &GapCoefficientFamily,
    n_max: usize,
    caps: CascadeCaps,
) -> Result<CascadeResult> {
    if b.role() != FamilyRole::PlantB {
        return config(format!(
            "cascade input must be a plant-b family, got {}",
            b.role().as_str()
        ));
    }
    if n_max < 2 {
        return config(format!("N_max must be at least 2, got {n_max}"));
    }
    if let Some(n) = b.orders().find(|&n| n < 2) {
        return domain(format!("plant family has an order-{n} entry"));
    }
    let mut a = GapCoefficientFamily::new(FamilyRole::CascadeA);
    let mut c_all = GapCoefficientFamily::new(FamilyRole::CouplingC);
    let mut cache = GammaCache::default();
    for n in 2..=n_max {
        let c = coupling_c(n, &a, b, caps, &mut cache)?;
        a.declare_order(n);
        c_all.declare_order(n);
        let mut keys: BTreeSet<Vec<u32>> = b.order_slice(n).into_keys().collect();
        keys.extend(c.order_slice(n).into_keys());
        for p in keys {
            let bp = b.get(n, &p).cloned().unwrap_or_default();
            let cp = c.get(n, &p).cloned().unwrap_or_default();
            c_all.add(n, p.clone(), &cp)?;
            a.add(n, p, &(&cp - &bp).integral())?;
        }
    }
    Ok(CascadeResult { a, c: c_all })
}

/// Exact evaluation of `sum_P [a_P(x) - a_P(x - xi_n)] Phi_P`, rounded to f64.
pub fn assemble_kernel(a: &GapCoefficientFamily, n: usize, x: f64, xi: &[f64]) -> Result<f64> {
    if xi.len() != n {
        return domain(format!("point has {} coordinates, expected {n}", xi.len()));
    }
    let to_r = |v: f64| {
        Rational::from_float(v).ok_or_else(|| Error::Domain(format!("non-finite coordinate {v}")))
    };
    let xr = to_r(x)?;
    let xir: Vec<Rational> = xi.iter().map(|&v| to_r(v)).collect::<Result<_>>()?;
    let shifted = &xr - &xir[n - 1];
    let mut gaps = Vec::with_capacity(n);
    let mut prev = xr.clone();
    for v in &xir {
        gaps.push(&prev - v);
        prev = v.clone();
    }
    let mut total = Rational::zero();
    for (p, poly) in a.order_slice(n) {
        let diff = poly.eval(&xr) - poly.eval(&shifted);
        if diff.is_zero() {
            continue;
        }
        let mut phi = diff;
        for (&e, g) in p.iter().zip(&gaps) {
            for _ in 0..e {
                phi *= g;
            }
            phi /= Rational::from_integer(factorial(e));
        }
        total += phi;
    }
    Ok(rat_to_f64(&total))
}

/// Standard-basis expansion over `(x, xi_1, ..., xi_n)` of the assembled
/// kernel, exact.
pub fn assembled_polynomial(a: &GapCoefficientFamily, n: usize) -> MPoly {
    let nv = n + 1;
    let x = MPoly::var(nv, 0);
    let xn = MPoly::var(nv, n);
    let shifted = &x - &xn;
    let mut total = MPoly::zero(nv);
    for (p, poly) in a.order_slice(n) {
        // a(x) - a(x - xi_n)
        let mut diff = MPoly::zero(nv);
        for (k, c) in poly.coeffs().iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let term = &x.pow(k as u32) - &shifted.pow(k as u32);
            diff = &diff + &term.scale(c);
        }
        let mut phi = diff;
        for (r, &e) in p.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let gap = &MPoly::var(nv, r) - &MPoly::var(nv, r + 1);
            phi = phi.scale(
                &(Rational::from_integer(BigInt::from(1)) / Rational::from_integer(factorial(e))),
            );
            phi = &phi * &gap.pow(e);
        }
        total = &total + &phi;
    }
    total
}

/// Fast f64 kernel from the assembled expansion.
pub fn assembled_kernel(a: &GapCoefficientFamily, n: usize) -> Result<PolyKernel> {
    let poly = assembled_polynomial(a, n);
    let monos = poly
        .terms()
        .iter()
        .map(|(e, c)| Monomial {
            coeff: rat_to_f64(c),
            exps: e.clone(),
        })
        .collect();
    PolyKernel::new(n, monos)
}

/// Kernel nodes `k_2..k_{n_max}` from a cascade family.
pub fn kernel_nodes(
    a: &GapCoefficientFamily,
    n_max: usize,
) -> Result<Vec<std::sync::Arc<KernelNode>>> {
    (2..=n_max)
        .map(|n| {
            Ok(std::sync::Arc::new(KernelNode::polynomial(
                assembled_kernel(a, n)?,
                Provenance::GapCascade,
            )))
        })
        .collect()
}

fn check_radii(r: f64, big_r: f64) -> Result<()> {
    if !(r > 0.0 && big_r > 0.0) {
        return domain(format!(
            "norm radii must be positive, got r = {r}, R = {big_r}"
        ));
    }
    Ok(())
}

/// Divided-power norm of one order slice, with the sup over `x` sampled on
/// 1001 points of `[0, 1]`.
pub fn dp_norm_slice(slice: &OrderSlice, r: f64, big_r: f64) -> Result<f64> {
    check_radii(r, big_r)?;
    let mut derivs: Vec<(f64, Vec<Vec<f64>>)> = Vec::new();
    for (p, poly) in slice {
        let weight_p = p
            .iter()
            .map(|&e| r.powi(e as i32) / factorial_f64(e))
            .product::<f64>();
        let d = poly.degree().unwrap_or(0);
        let ds: Vec<Vec<f64>> = (0..=d)
            .map(|s| {
                let w = big_r.powi(s as i32) / factorial_f64(s as u32);
                poly.nth_derivative(s)
                    .to_f64_coeffs()
                    .into_iter()
                    .map(|c| c * w)
                    .collect()
            })
            .collect();
        derivs.push((weight_p, ds));
    }
    let mut best: f64 = 0.0;
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        let mut total = 0.0;
        for (wp, ds) in &derivs {
            let inner: f64 = ds.iter().map(|c| crate::poly::horner(c, x).abs()).sum();
            total += wp * inner;
        }
        best = best.max(total);
    }
    Ok(best)
}

pub fn dp_norm(family: &GapCoefficientFamily, n: usize, r: f64, big_r: f64) -> Result<f64> {
    dp_norm_slice(&family.order_slice(n), r, big_r)
}

/// `d_P = sum_{p+q=P} C(P, p) a_p b_q`.
pub fn dp_product(a: &OrderSlice, b: &OrderSlice) -> OrderSlice {
    let mut out: OrderSlice = BTreeMap::new();
    for (p, ap) in a {
        for (q, bq) in b {
            let mut w = BigInt::from(1);
            let sum: Vec<u32> = p
                .iter()
                .zip(q)
                .map(|(x, y)| {
                    w *= crate::poly::binomial(x + y, *x);
                    x + y
                })
                .collect();
            let term = (ap * bq).scale(&Rational::from_integer(w));
            let e = out.entry(sum).or_default();
            *e = &*e + &term;
        }
    }
    out.retain(|_, p| !p.is_zero());
    out
}

/// Split-gap integration `I_j`: an order-`(N+1)` slice whose entries `j`,
/// `j+1` are the split parts of gap `j` maps to an order-`N` slice.
pub fn split_gap_integrate(h: &OrderSlice, j: usize) -> Result<OrderSlice> {
    let mut out: OrderSlice = BTreeMap::new();
    for (q, poly) in h {
        if j + 1 >= q.len() {
            return domain(format!(
                "split index {j} out of range for multi-index {q:?}"
            ));
        }
        let mut p = Vec::with_capacity(q.len() - 1);
        p.extend_from_slice(&q[..j]);
        p.push(q[j] + q[j + 1] + 1);
        p.extend_from_slice(&q[j + 2..]);
        let e = out.entry(p).or_default();
        *e = &*e + poly;
    }
    out.retain(|_, p| !p.is_zero());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfReport {
    /// Worst `sup |b_p^(sigma)| / (D rho^-(n-1) mu^-|p| nu^-sigma)`.
    pub coefficient_ratio: f64,
    /// Worst sampled `|f_n| / (D rho^-(n-1) e^(1/mu))`.
    pub sup_ratio: f64,
    pub pass: bool,
}

/// Checks the coefficient bound and the implied sup bound of the plant
/// family against its metadata.
pub fn check_cf_assumption(
    b: &GapCoefficientFamily,
    samples: usize,
    seed: u64,
) -> Result<CfReport> {
    let Some(meta) = b.metadata() else {
        return config("coefficient-bound check needs (D, rho, mu, nu) metadata");
    };
    if !(meta.d > 0.0 && meta.rho > 0.0 && meta.mu > 0.0 && meta.nu > 0.0) {
        return domain(format!("metadata must be positive: {meta:?}"));
    }
    let mut coefficient_ratio: f64 = 0.0;
    for (n, p, poly) in b.iter() {
        let bound_p =
            meta.d * meta.rho.powi(-(n as i32 - 1)) * meta.mu.powi(-(p.iter().sum::<u32>() as i32));
        for s in 0..=poly.degree().unwrap_or(0) {
            let d = poly.nth_derivative(s);
            let sup = (0..=200)
                .map(|i| d.eval_f64(i as f64 / 200.0).abs())
                .fold(0.0, f64::max);
            coefficient_ratio = coefficient_ratio.max(sup / (bound_p * meta.nu.powi(-(s as i32))));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup_ratio: f64 = 0.0;
    for n in b.orders() {
        let slice = b.order_slice(n);
        let bound = meta.d * meta.rho.powi(-(n as i32 - 1)) * (1.0 / meta.mu).exp();
        for _ in 0..samples.max(1) {
            let pt = sample_point(&mut rng, n, 1.0);
            let f: f64 = slice
                .iter()
                .map(|(p, poly)| poly.eval_f64(pt.x()) * phi_eval(p, pt.x(), pt.xi()))
                .sum();
            sup_ratio = sup_ratio.max(f.abs() / bound);
        }
    }
    Ok(CfReport {
        coefficient_ratio,
        sup_ratio,
        pass: coefficient_ratio <= 1.0 + 1e-12 && sup_ratio <= 1.0 + 1e-12,
    })
}

/// Plant kernel `f_n = sum_P b_P(x) Phi_P` as a series of f64 polynomials.
pub fn plant_series_from_family(b: &GapCoefficientFamily) -> Result<VolterraKernelSeries> {
    let mut kernels: Vec<std::sync::Arc<dyn Kernel>> = Vec::new();
    for n in b.orders() {
        // f_n has the same shape as the ansatz without the difference, so
        // expand it directly.
        let nv = n + 1;
        let x = MPoly::var(nv, 0);
        let mut total = MPoly::zero(nv);
        for (p, poly) in b.order_slice(n) {
            let mut t = MPoly::zero(nv);
            for (k, c) in poly.coeffs().iter().enumerate() {
                t = &t + &x.pow(k as u32).scale(c);
            }
            for (r, &e) in p.iter().enumerate() {
                if e > 0 {
                    let gap = &MPoly::var(nv, r) - &MPoly::var(nv, r + 1);
                    t = (&t * &gap.pow(e)).scale(
                        &(Rational::from_integer(BigInt::from(1))
                            / Rational::from_integer(factorial(e))),
                    );
                }
            }
            total = &total + &t;
        }
        let monos = total
            .terms()
            .iter()
            .map(|(e, c)| Monomial {
                coeff: rat_to_f64(c),
                exps: e.clone(),
            })
            .collect();
        kernels.push(std::sync::Arc::new(PolyKernel::new(n, monos)?));
    }
    let mut series = VolterraKernelSeries::new(kernels, None)?;
    if let Some(meta) = b.metadata() {
        series = series.with_growth(crate::volterra::Growth {
            d_f: meta.d * (1.0 / meta.mu).exp(),
            rho_f: meta.rho,
        });
    }
    Ok(series)
}

/// Largest absolute coefficient value, for reporting.
pub fn max_abs_coefficient(f: &GapCoefficientFamily) -> f64 {
    f.iter()
        .flat_map(|(_, _, p)| {
            p.coeffs()
                .iter()
                .map(|c| c.abs().to_f64().unwrap_or(f64::INFINITY))
        })
        .fold(0.0, f64::max)
}
