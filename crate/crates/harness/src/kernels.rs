//! Kernel construction for a parsed plant and the recursion cross-check.

use std::sync::Arc;

use backstep_core::charkernels::{
    build_controller_kernels, controller_series, BuildOptions, KernelNode,
};
use backstep_core::gapcascade::{
    assemble_kernel, cascade_with, kernel_nodes, CascadeCaps, CascadeResult,
};
use backstep_core::simplex::{sample_point, LineRule, QuadratureRule};
use backstep_core::volterra::{GainFunctions, Kernel, VolterraKernelSeries};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::plant::Plant;

/// Highest order the recursion cross-check is run at.
pub const CROSS_CHECK_MAX_ORDER: usize = 4;

/// Quadrature used for the stored kernel norms.
pub fn norm_rule() -> QuadratureRule {
    QuadratureRule::TensorGaussLegendreOnGaps { points: 8 }
}

#[derive(Debug, Clone)]
pub struct KernelSet {
    pub n_max: usize,
    pub cascade: CascadeResult,
    pub nodes: Vec<Arc<KernelNode>>,
    pub series: VolterraKernelSeries,
}

impl KernelSet {
    pub fn gains(&self) -> Result<GainFunctions> {
        Ok(GainFunctions::from_series(&self.series, &norm_rule())?)
    }
}

/// Gap-cascade kernels `k_2..k_{n_max}`.
pub fn build_kernels(plant: &Plant, n_max: usize) -> Result<KernelSet> {
    let cascade = cascade_with(&plant.family, n_max, CascadeCaps::default())?;
    let nodes = kernel_nodes(&cascade.a, n_max)?;
    let series = controller_series(&nodes)?;
    Ok(KernelSet {
        n_max,
        cascade,
        nodes,
        series,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckReport {
    /// `(n, max |gap - recursion|)` per order.
    pub per_order: Vec<(usize, f64)>,
    pub points: usize,
    pub tolerance: f64,
    pub pass: bool,
    /// Sampled rows `(n, x, xi..., gap, recursion)`.
    #[serde(skip)]
    pub rows: Vec<(usize, f64, Vec<f64>, f64, f64)>,
}

/// Compares the gap-assembled kernels with the characteristic recursion
/// at random points of `T_n(1)`.
pub fn cross_check(
    plant: &Plant,
    set: &KernelSet,
    points: usize,
    seed: u64,
    tolerance: f64,
) -> Result<CrossCheckReport> {
    let top = set.n_max.min(CROSS_CHECK_MAX_ORDER);
    // Polynomial integrands: a few high-order panels integrate them exactly.
    let opts = BuildOptions {
        use_registry: false,
        line: LineRule::new(2, 6),
        ..BuildOptions::default()
    };
    let rec = build_controller_kernels(&plant.series, top, &opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_order = Vec::new();
    let mut rows = Vec::new();
    for n in 2..=top {
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let p = sample_point(&mut rng, n, 1.0);
            let g = assemble_kernel(&set.cascade.a, n, p.x(), p.xi())?;
            let r = rec[n - 2].eval(p.x(), p.xi());
            worst = worst.max((g - r).abs());
            rows.push((n, p.x(), p.xi().to_vec(), g, r));
        }
        per_order.push((n, worst));
    }
    let pass = per_order.iter().all(|&(_, d)| d < tolerance);
    Ok(CrossCheckReport {
        per_order,
        points,
        tolerance,
        pass,
        rows,
    })
}
