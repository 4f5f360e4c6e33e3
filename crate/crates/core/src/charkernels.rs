//! Kernel hierarchy by the method of characteristics: shuffle enumeration,
//! the coupling operators `B_n^m`, and recursive construction of `k_n`.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::simplex::{contains, LineRule};
use crate::volterra::{
    check_growth_assumption, Kernel, Monomial, PolyKernel, VolterraKernelSeries,
};

/// Largest order handled by the stack buffers of the recursion.
pub const MAX_ORDER: usize = 8;

/// Memo lattice spacing for quantized simplex points.
pub const MEMO_LATTICE: f64 = 1e-9;

/// Entries kept per memo before it stops growing.
const MEMO_CAPACITY: usize = 1 << 21;

/// One order-preserving split of `(zeta_{j+1}, ..., zeta_{p+m-1})` into a
/// k-block of size `p - j` and an f-block of size `m - 1`; entries are the
/// zeta subscripts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShuffleTuple {
    pub k_block: Vec<usize>,
    pub f_block: Vec<usize>,
}

/// All order-preserving ways to pick `k` of `elems` (the rest keep their order
/// too). Returned as `(chosen, rest)` pairs in lexicographic order of `chosen`.
pub fn order_preserving_splits<T: Copy>(elems: &[T], k: usize) -> Vec<(Vec<T>, Vec<T>)> {
    let n = elems.len();
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let mut chosen = Vec::with_capacity(k);
        let mut rest = Vec::with_capacity(n - k);
        let mut next = 0;
        for (i, e) in elems.iter().enumerate() {
            if next < k && pick[next] == i {
                chosen.push(*e);
                next += 1;
            } else {
                rest.push(*e);
            }
        }
        out.push((chosen, rest));
        // Advance the combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if pick[i] < n - k + i {
                pick[i] += 1;
                for t in i + 1..k {
                    pick[t] = pick[t - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn enumerate_shuffles(p: usize, m: usize, j: usize) -> Result<Vec<ShuffleTuple>> {
    if p < 1 || m < 2 || j < 1 || j > p {
        return domain(format!(
            "shuffle indices need p >= 1, m >= 2, 1 <= j <= p; got p={p}, m={m}, j={j}"
        ));
    }
    let elems: Vec<usize> = (j + 1..p + m).collect();
    Ok(order_preserving_splits(&elems, p - j)
        .into_iter()
        .map(|(k_block, f_block)| ShuffleTuple { k_block, f_block })
        .collect())
}

/// `B_n^m[k_lower, f_m](x, xi)`.
///
/// For each `j`, `s` runs over `[xi_j, xi_{j-1}]` (with `xi_0 = x`). The
/// kernel receives `(x; xi_1..xi_{j-1}, s, A)` and the plant kernel
/// `(s; C)`, summed over the order-preserving splits `(A, C)` of
/// `(xi_j, ..., xi_n)` with `|A| = p - j`, `p = n - m + 1`.
pub fn eval_b(
    n: usize,
    m: usize,
    k_lower: &dyn Kernel,
    f_m: &dyn Kernel,
    x: f64,
    xi: &[f64],
    line: &LineRule,
) -> Result<f64> {
    if m < 2 || m > n {
        return domain(format!("coupling needs 2 <= m <= n, got n={n}, m={m}"));
    }
    let p = n - m + 1;
    if k_lower.order() != p || f_m.order() != m {
        return domain(format!(
            "B_{n}^{m} needs kernels of orders ({p}, {m}), got ({}, {})",
            k_lower.order(),
            f_m.order()
        ));
    }
    if xi.len() != n || n > MAX_ORDER {
        return domain(format!(
            "point has {} coordinates, expected {n} (<= {MAX_ORDER})",
            xi.len()
        ));
    }
    if !contains(x, xi) {
        return domain(format!("({x}, {xi:?}) is not in T_{n}(x)"));
    }
    Ok(eval_b_unchecked(m, k_lower, f_m, x, xi, line))
}

fn eval_b_unchecked(
    m: usize,
    k_lower: &dyn Kernel,
    f_m: &dyn Kernel,
    x: f64,
    xi: &[f64],
    line: &LineRule,
) -> f64 {
    let n = xi.len();
    let p = n - m + 1;
    if p == 1 {
        // k_1 vanishes identically.
        return 0.0;
    }
    let mut total = 0.0;
    let mut kargs = [0.0; MAX_ORDER];
    let mut fargs = [0.0; MAX_ORDER];
    for j in 1..=p {
        let upper = if j == 1 { x } else { xi[j - 2] };
        let lower = xi[j - 1];
        if upper <= lower {
            continue;
        }
        let below: Vec<usize> = (j - 1..n).collect();
        let splits = order_preserving_splits(&below, p - j);
        kargs[..j - 1].copy_from_slice(&xi[..j - 1]);
        total += line.integrate(lower, upper, |s| {
            kargs[j - 1] = s;
            let mut acc = 0.0;
            for (a, c) in &splits {
                for (slot, &idx) in a.iter().enumerate() {
                    kargs[j + slot] = xi[idx];
                }
                for (slot, &idx) in c.iter().enumerate() {
                    fargs[slot] = xi[idx];
                }
                let fv = f_m.eval(s, &fargs[..m]);
                if fv != 0.0 {
                    acc += k_lower.eval(x, &kargs[..p]) * fv;
                }
            }
            acc
        });
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    CharacteristicRecursion,
    GapCascade,
}

enum NodeEval {
    Poly(PolyKernel),
    Recursion {
        plant: VolterraKernelSeries,
        lower: Vec<Arc<KernelNode>>,
        line: LineRule,
    },
}

#[derive(Default)]
struct Memo {
    map: RwLock<HashMap<Vec<i64>, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// A built kernel `k_n` with its provenance. Recursion nodes memoize their
/// values on a quantized lattice; the cache is safe to share across threads.
pub struct KernelNode {
    order: usize,
    provenance: Provenance,
    eval: NodeEval,
    memo: Option<Memo>,
}

impl fmt::Debug for KernelNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelNode")
            .field("order", &self.order)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl KernelNode {
    pub fn polynomial(kernel: PolyKernel, provenance: Provenance) -> Self {
        Self {
            order: kernel.order(),
            provenance,
            eval: NodeEval::Poly(kernel),
            memo: None,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `(hits, misses)` of the memo cache; zero for closed forms.
    pub fn cache_stats(&self) -> (u64, u64) {
        self.memo.as_ref().map_or((0, 0), |m| {
            (
                m.hits.load(Ordering::Relaxed),
                m.misses.load(Ordering::Relaxed),
            )
        })
    }

    fn key(x: f64, xi: &[f64]) -> Vec<i64> {
        std::iter::once(x)
            .chain(xi.iter().copied())
            .map(|v| (v / MEMO_LATTICE).round() as i64)
            .collect()
    }

    fn lower_kernels(lower: &[Arc<KernelNode>]) -> Vec<Option<&dyn Kernel>> {
        let mut table: Vec<Option<&dyn Kernel>> = vec![None; MAX_ORDER + 1];
        for k in lower {
            table[k.order] = Some(k.as_ref() as &dyn Kernel);
        }
        table
    }
}

impl Kernel for KernelNode {
    fn order(&self) -> usize {
        self.order
    }

    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        match &self.eval {
            NodeEval::Poly(p) => p.eval(x, xi),
            NodeEval::Recursion { plant, lower, line } => {
                if xi[self.order - 1] == 0.0 {
                    return 0.0;
                }
                let memo = self.memo.as_ref().expect("recursion nodes carry a memo");
                let key = Self::key(x, xi);
                if let Some(v) = memo.map.read().get(&key) {
                    memo.hits.fetch_add(1, Ordering::Relaxed);
                    return *v;
                }
                memo.misses.fetch_add(1, Ordering::Relaxed);
                let table = Self::lower_kernels(lower);
                let v = characteristic_value(self.order, plant, &table, x, xi, line);
                let mut map = memo.map.write();
                if map.len() < MEMO_CAPACITY {
                    map.insert(key, v);
                }
                v
            }
        }
    }

    fn monomials(&self) -> Option<&[Monomial]> {
        match &self.eval {
            NodeEval::Poly(p) => p.monomials(),
            NodeEval::Recursion { .. } => None,
        }
    }
}

/// `-int_0^{xi_n} [f_n - sum_m B_n^m](x - xi_n + s, ..., xi_{n-1} - xi_n + s, s) ds`.
fn characteristic_value(
    n: usize,
    plant: &VolterraKernelSeries,
    lower: &[Option<&dyn Kernel>],
    x: f64,
    xi: &[f64],
    line: &LineRule,
) -> f64 {
    let xn = xi[n - 1];
    if xn == 0.0 {
        return 0.0;
    }
    let f_n = plant.kernel(n).filter(|_| n <= plant.truncation());
    // Orders m whose plant kernel is present. The m = n term vanishes.
    let couplings: Vec<(usize, &dyn Kernel, &dyn Kernel)> = (2..n)
        .filter(|&m| m <= plant.truncation())
        .filter_map(|m| {
            let f = plant.kernel(m)?;
            let k = lower[n - m + 1]?;
            Some((m, k, f.as_ref()))
        })
        .collect();
    let mut pt = [0.0; MAX_ORDER];
    -line.integrate(0.0, xn, |s| {
        let px = x - xn + s;
        for r in 0..n - 1 {
            pt[r] = xi[r] - xn + s;
        }
        pt[n - 1] = s;
        let mut v = f_n.map_or(0.0, |f| f.eval(px, &pt[..n]));
        for &(m, k, f) in &couplings {
            v -= eval_b_unchecked(m, k, f, px, &pt[..n], line);
        }
        v
    })
}

/// Characteristic integral for `k_n` given the plant and the lower kernels
/// `k_2, ..., k_{n-1}`.
pub fn kernel_characteristic(
    n: usize,
    plant: &VolterraKernelSeries,
    lower: &[Arc<KernelNode>],
    x: f64,
    xi: &[f64],
    line: &LineRule,
) -> Result<f64> {
    if n < 2 || n > MAX_ORDER {
        return domain(format!("kernel order must be in 2..={MAX_ORDER}, got {n}"));
    }
    if xi.len() != n || !contains(x, xi) || x > 1.0 {
        return domain(format!("({x}, {xi:?}) is not in T_{n}(1)"));
    }
    let table = KernelNode::lower_kernels(lower);
    if let Some(missing) = (2..n).find(|&p| table[p].is_none()) {
        return config(format!("k_{n} needs lower kernel k_{missing}"));
    }
    Ok(characteristic_value(n, plant, &table, x, xi, line))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub line: LineRule,
    /// Substitute registered closed forms (the PDAE kernels) when the plant
    /// matches.
    pub use_registry: bool,
    /// Samples for the growth pre-check when the plant carries metadata.
    pub growth_samples: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            line: LineRule::default(),
            use_registry: true,
            growth_samples: 200,
        }
    }
}

/// Builds `k_2, ..., k_{n_max}` recursively from the plant.
pub fn build_controller_kernels(
    plant: &VolterraKernelSeries,
    n_max: usize,
    opts: &BuildOptions,
) -> Result<Vec<Arc<KernelNode>>> {
    if !(2..=MAX_ORDER).contains(&n_max) {
        return config(format!("N_max must be in 2..={MAX_ORDER}, got {n_max}"));
    }
    if plant.growth().is_some() {
        let report = check_growth_assumption(plant, opts.growth_samples, 0)?;
        if !report.pass {
            return Err(Error::Config(format!(
                "plant violates its growth bound (worst ratio {:.4})",
                report.worst_ratio
            )));
        }
    }
    let pdae = opts.use_registry && is_pdae_plant(plant);
    let mut nodes: Vec<Arc<KernelNode>> = Vec::new();
    for n in 2..=n_max {
        let node = match pdae_closed_form(n).filter(|_| pdae) {
            Some(k) => KernelNode::polynomial(k, Provenance::ClosedForm),
            None => KernelNode {
                order: n,
                provenance: Provenance::CharacteristicRecursion,
                eval: NodeEval::Recursion {
                    plant: plant.clone(),
                    lower: nodes.clone(),
                    line: opts.line.clone(),
                },
                memo: Some(Memo::default()),
            },
        };
        nodes.push(Arc::new(node));
    }
    Ok(nodes)
}

/// Series `K` from built nodes.
pub fn controller_series(nodes: &[Arc<KernelNode>]) -> Result<VolterraKernelSeries> {
    VolterraKernelSeries::new(
        nodes.iter().map(|k| k.clone() as Arc<dyn Kernel>).collect(),
        None,
    )
}

/// True for the plant `f_2 = 1`, `f_n = 0` otherwise.
pub fn is_pdae_plant(plant: &VolterraKernelSeries) -> bool {
    let mut found_f2 = false;
    for k in plant.active() {
        let Some(monos) = k.monomials() else {
            return false;
        };
        match k.order() {
            2 => {
                if !(monos.len() == 1
                    && monos[0].coeff == 1.0
                    && monos[0].exps.iter().all(|e| *e == 0))
                {
                    return false;
                }
                found_f2 = true;
            }
            _ => {
                if !monos.is_empty() {
                    return false;
                }
            }
        }
    }
    found_f2
}

fn mono(coeff: f64, exps: &[u32]) -> Monomial {
    Monomial {
        coeff,
        exps: exps.to_vec(),
    }
}

/// Closed forms for the PDAE plant: `k_2 = -xi_2` and
/// `k_3 = -xi_3 [(x - xi_1)(xi_1 + xi_2) + (xi_1^2 - xi_2^2)/2 - xi_3 (x - xi_2)/2]`.
pub fn pdae_closed_form(n: usize) -> Option<PolyKernel> {
    let monos = match n {
        2 => vec![mono(-1.0, &[0, 0, 1])],
        3 => vec![
            mono(-1.0, &[1, 1, 0, 1]),
            mono(-1.0, &[1, 0, 1, 1]),
            mono(0.5, &[0, 2, 0, 1]),
            mono(1.0, &[0, 1, 1, 1]),
            mono(0.5, &[0, 0, 2, 1]),
            mono(0.5, &[1, 0, 0, 2]),
            mono(-0.5, &[0, 0, 1, 2]),
        ],
        _ => return None,
    };
    Some(PolyKernel::new(n, monos).expect("closed forms are well-formed"))
}

/// `B_3^2` of the PDAE plant: `-(x - xi_1)(xi_1 + xi_2 + xi_3) - (xi_1^2 - xi_2^2)/2`.
pub fn pdae_b23(x: f64, xi: &[f64]) -> f64 {
    -(x - xi[0]) * (xi[0] + xi[1] + xi[2]) - 0.5 * (xi[0] * xi[0] - xi[1] * xi[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::sample_point;
    use crate::volterra::FnKernel;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pdae() -> VolterraKernelSeries {
        VolterraKernelSeries::new(vec![Arc::new(PolyKernel::constant(2, 1.0))], None).unwrap()
    }

    fn recursion_opts() -> BuildOptions {
        BuildOptions {
            use_registry: false,
            ..BuildOptions::default()
        }
    }

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn shuffle_examples() {
        let s = enumerate_shuffles(1, 2, 1).unwrap();
        assert_eq!(
            s,
            vec![ShuffleTuple {
                k_block: vec![],
                f_block: vec![2]
            }]
        );
        let s = enumerate_shuffles(2, 2, 1).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(
            s[0],
            ShuffleTuple {
                k_block: vec![2],
                f_block: vec![3]
            }
        );
        assert_eq!(
            s[1],
            ShuffleTuple {
                k_block: vec![3],
                f_block: vec![2]
            }
        );
        assert_eq!(enumerate_shuffles(3, 2, 3).unwrap().len(), 1);
        assert!(enumerate_shuffles(2, 1, 1).is_err());
        assert!(enumerate_shuffles(2, 2, 3).is_err());
        assert!(enumerate_shuffles(0, 2, 1).is_err());
    }

    #[test]
    fn shuffle_counts_and_uniqueness() {
        for p in 1..6 {
            for m in 2..5 {
                for j in 1..=p {
                    let s = enumerate_shuffles(p, m, j).unwrap();
                    assert_eq!(s.len(), binom(p + m - 1 - j, m - 1));
                    let set: std::collections::HashSet<_> = s.iter().cloned().collect();
                    assert_eq!(set.len(), s.len());
                    for t in &s {
                        assert!(t.k_block.windows(2).all(|w| w[0] < w[1]));
                        assert!(t.f_block.windows(2).all(|w| w[0] < w[1]));
                        assert_eq!(t.k_block.len() + t.f_block.len(), p + m - 1 - j);
                    }
                }
            }
        }
    }

    #[test]
    fn b_vanishes_for_m_equal_n() {
        let k1 = PolyKernel::constant(1, 0.0);
        let f3 = PolyKernel::constant(3, 1.0);
        let v = eval_b(3, 3, &k1, &f3, 1.0, &[0.5, 0.3, 0.1], &LineRule::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn b23_closed_form() {
        let k2 = pdae_closed_form(2).unwrap();
        let f2 = PolyKernel::constant(2, 1.0);
        let line = LineRule::default();
        let v = eval_b(3, 2, &k2, &f2, 1.0, &[0.5, 0.25, 0.0], &line).unwrap();
        assert_abs_diff_eq!(v, -0.46875, epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = sample_point(&mut rng, 3, 1.0);
            let v = eval_b(3, 2, &k2, &f2, p.x(), p.xi(), &line).unwrap();
            assert_abs_diff_eq!(v, pdae_b23(p.x(), p.xi()), epsilon = 1e-13);
        }
    }

    #[test]
    fn b_rejects_order_mismatch() {
        let k2 = pdae_closed_form(2).unwrap();
        let f2 = PolyKernel::constant(2, 1.0);
        let line = LineRule::default();
        assert!(eval_b(4, 2, &k2, &f2, 1.0, &[0.5, 0.4, 0.3, 0.2], &line).is_err());
        assert!(eval_b(3, 2, &k2, &f2, 1.0, &[0.2, 0.4, 0.3], &line).is_err());
    }

    #[test]
    fn recursion_reproduces_closed_forms() {
        let nodes = build_controller_kernels(&pdae(), 3, &recursion_opts()).unwrap();
        assert!(nodes
            .iter()
            .all(|k| k.provenance() == Provenance::CharacteristicRecursion));
        let k2 = pdae_closed_form(2).unwrap();
        let k3 = pdae_closed_form(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let p = sample_point(&mut rng, 2, 1.0);
            assert_abs_diff_eq!(
                nodes[0].eval(p.x(), p.xi()),
                k2.eval(p.x(), p.xi()),
                epsilon = 1e-13
            );
            let p = sample_point(&mut rng, 3, 1.0);
            assert_abs_diff_eq!(
                nodes[1].eval(p.x(), p.xi()),
                k3.eval(p.x(), p.xi()),
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(
            nodes[1].eval(1.0, &[0.5, 0.25, 0.2]),
            -0.07875,
            epsilon = 1e-13
        );
    }

    #[test]
    fn characteristic_direct_call() {
        let nodes = build_controller_kernels(&pdae(), 2, &BuildOptions::default()).unwrap();
        let line = LineRule::default();
        let v = kernel_characteristic(3, &pdae(), &nodes, 1.0, &[0.5, 0.25, 0.2], &line).unwrap();
        assert_abs_diff_eq!(v, -0.07875, epsilon = 1e-13);
        assert_eq!(
            kernel_characteristic(3, &pdae(), &nodes, 1.0, &[0.5, 0.25, 0.0], &line).unwrap(),
            0.0
        );
        assert!(matches!(
            kernel_characteristic(3, &pdae(), &[], 1.0, &[0.5, 0.25, 0.1], &line),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn registry_substitution() {
        let nodes = build_controller_kernels(&pdae(), 3, &BuildOptions::default()).unwrap();
        assert!(nodes
            .iter()
            .all(|k| k.provenance() == Provenance::ClosedForm));
        assert_eq!(nodes[0].eval(0.9, &[0.6, 0.3]), -0.3);
        let nodes = build_controller_kernels(&pdae(), 4, &BuildOptions::default()).unwrap();
        assert_eq!(nodes[2].provenance(), Provenance::CharacteristicRecursion);
    }

    #[test]
    fn inflow_condition() {
        let nodes = build_controller_kernels(&pdae(), 4, &recursion_opts()).unwrap();
        for k in &nodes {
            let n = k.order();
            let mut xi: Vec<f64> = (0..n).map(|i| 0.9 - 0.2 * i as f64).collect();
            xi[n - 1] = 0.0;
            assert!(k.eval(1.0, &xi).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_plant_gives_zero_kernels() {
        let zero = VolterraKernelSeries::new(
            vec![Arc::new(PolyKernel::zero(2)), Arc::new(PolyKernel::zero(3))],
            None,
        )
        .unwrap();
        let nodes = build_controller_kernels(&zero, 3, &BuildOptions::default()).unwrap();
        for k in &nodes {
            let xi: Vec<f64> = (0..k.order()).map(|i| 0.8 - 0.2 * i as f64).collect();
            assert_eq!(k.eval(1.0, &xi), 0.0);
        }
    }

    #[test]
    fn growth_precheck_rejects_violating_plant() {
        let g = crate::volterra::Growth {
            d_f: 1.0,
            rho_f: 1.0,
        };
        let bad = VolterraKernelSeries::new(
            vec![Arc::new(FnKernel::new(2, |_, _: &[f64]| 10.0))],
            Some(g),
        )
        .unwrap();
        assert!(build_controller_kernels(&bad, 2, &BuildOptions::default()).is_err());
    }

    #[test]
    fn memo_hits_on_repeat() {
        let nodes = build_controller_kernels(&pdae(), 3, &recursion_opts()).unwrap();
        let a = nodes[1].eval(1.0, &[0.6, 0.3, 0.1]);
        let b = nodes[1].eval(1.0, &[0.6, 0.3, 0.1]);
        assert_eq!(a, b);
        assert!(nodes[1].cache_stats().0 >= 1);
    }

    #[test]
    fn pdae_detection() {
        assert!(is_pdae_plant(&pdae()));
        let two =
            VolterraKernelSeries::new(vec![Arc::new(PolyKernel::constant(2, 2.0))], None).unwrap();
        assert!(!is_pdae_plant(&two));
        assert!(!is_pdae_plant(&VolterraKernelSeries::zero()));
    }
}
