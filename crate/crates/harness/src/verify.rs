//! The property suite behind `verify-all`.

use std::sync::Arc;

use backstep_core::charkernels::{
    build_controller_kernels, eval_b, pdae_closed_form, BuildOptions,
};
use backstep_core::gapcascade::{
    cascade, check_cf_assumption, dp_norm_slice, dp_product, phi_eval, split_gap_integrate,
    OrderSlice,
};
use backstep_core::inversion::{
    choose_radius, invert, lipschitz_check, neumann_norm, random_smooth, InversionConfig,
};
use backstep_core::poly::{multi_indices_upto, rat, UPoly};
use backstep_core::simplex::{integrate_simplex, sample_point, LineRule, QuadratureRule};
use backstep_core::simulator::{
    mild_solution_residual, simulate, stability_constants, target_semigroup, Controller,
    InitialCondition, SimConfig,
};
use backstep_core::volterra::{
    check_growth_assumption, coupling_bound_check, GridFunction, GridOperator, Kernel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::kernels::{build_kernels, cross_check, KernelSet};
use crate::plant::Plant;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: Value) -> Self {
        Self {
            name: name.into(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Shared PDAE context built once per suite.
pub struct PdaeContext {
    pub plant: Plant,
    pub kernels: KernelSet,
    pub cfg: InversionConfig,
}

impl PdaeContext {
    pub fn new() -> Result<Self> {
        let plant = Plant::pdae();
        let kernels = build_kernels(&plant, 3)?;
        let cfg = choose_radius(&kernels.gains()?)?;
        Ok(Self {
            plant,
            kernels,
            cfg,
        })
    }
}

fn guard(name: &str, r: Result<CheckResult>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::new(name, false, json!({"error": e.to_string()})))
}

pub fn check_closed_forms(points: usize, seed: u64) -> Result<CheckResult> {
    let plant = Plant::pdae();
    let opts = BuildOptions {
        use_registry: false,
        ..BuildOptions::default()
    };
    let nodes = build_controller_kernels(&plant.series, 3, &opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 2];
    for (slot, n) in [2usize, 3].into_iter().enumerate() {
        let closed = pdae_closed_form(n).expect("registered closed form");
        for _ in 0..points {
            let p = sample_point(&mut rng, n, 1.0);
            worst[slot] = worst[slot]
                .max((nodes[n - 2].eval(p.x(), p.xi()) - closed.eval(p.x(), p.xi())).abs());
        }
    }
    let pass = worst[0] < 1e-10 && worst[1] < 1e-6;
    Ok(CheckResult::new(
        "kernel-closed-form",
        pass,
        json!({"points": points, "max_err_k2": worst[0], "max_err_k3": worst[1]}),
    ))
}

/// Exact expected PDAE cascade table.
pub fn expected_pdae_table() -> Vec<(usize, Vec<u32>, UPoly)> {
    let p = |c: &[(i64, i64)]| UPoly::from_coeffs(c.iter().map(|&(n, d)| rat(n, d)).collect());
    vec![
        (2, vec![0, 0], p(&[(0, 1), (-1, 1)])),
        (3, vec![0, 1, 0], p(&[(0, 1), (0, 1), (-1, 2)])),
        (3, vec![0, 2, 0], p(&[(0, 1), (1, 1)])),
        (3, vec![1, 0, 0], p(&[(0, 1), (0, 1), (-3, 2)])),
        (3, vec![1, 0, 1], p(&[(0, 1), (1, 1)])),
        (3, vec![1, 1, 0], p(&[(0, 1), (3, 1)])),
        (3, vec![2, 0, 0], p(&[(0, 1), (6, 1)])),
    ]
}

pub fn check_cascade_exact() -> Result<CheckResult> {
    let a = cascade(&Plant::pdae().family, 3)?;
    let got: Vec<(usize, Vec<u32>, UPoly)> = a
        .iter()
        .map(|(n, p, poly)| (n, p.clone(), poly.clone()))
        .collect();
    let pass = got == expected_pdae_table();
    let shown: Vec<String> = got
        .iter()
        .map(|(n, p, poly)| format!("a^({n})_{p:?} = {poly}"))
        .collect();
    Ok(CheckResult::new(
        "cascade-exact",
        pass,
        json!({"entries": shown}),
    ))
}

pub fn check_dual(ctx: &PdaeContext, points: usize, seed: u64) -> Result<CheckResult> {
    let rep = cross_check(&ctx.plant, &ctx.kernels, points, seed, 1e-6)?;
    Ok(CheckResult::new(
        "dual-construction",
        rep.pass,
        serde_json::to_value(&rep).expect("plain struct"),
    ))
}

/// Coupling bound at `(n, m) = (3, 2)` and `(4, 2)` for the PDAE data.
pub fn check_coupling_bound(ctx: &PdaeContext) -> Result<CheckResult> {
    let rule = QuadratureRule::TensorGaussLegendreOnGaps { points: 6 };
    let line = LineRule::new(2, 6);
    let f2 = ctx.plant.series.kernel(2).expect("PDAE has f2").clone();
    let k4 = build_kernels(&ctx.plant, 4)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for (n, lower) in [(3usize, k4.nodes[0].clone()), (4, k4.nodes[1].clone())] {
        let lower: Arc<dyn Kernel> = lower;
        for x in [0.5, 1.0] {
            let b_sq = integrate_simplex(
                n,
                x,
                &|xx, xi: &[f64]| {
                    let v = eval_b(n, 2, lower.as_ref(), f2.as_ref(), xx, xi, &line)
                        .unwrap_or(f64::NAN);
                    v * v
                },
                &rule,
            )?;
            let p = n - 1;
            let k_sq =
                integrate_simplex(p, x, &|xx, xi: &[f64]| lower.eval(xx, xi).powi(2), &rule)?;
            let ok = coupling_bound_check(n, 2, k_sq.sqrt(), 1.0, b_sq.sqrt(), x, 1e-12);
            pass &= ok;
            rows.push(json!({"n": n, "m": 2, "x": x, "b_norm_sq": b_sq, "k_lower_norm_sq": k_sq, "pass": ok}));
        }
    }
    Ok(CheckResult::new(
        "coupling-bound",
        pass,
        json!({"cases": rows}),
    ))
}

pub fn check_lipschitz(ctx: &PdaeContext, trials: usize, seed: u64) -> Result<CheckResult> {
    let op = GridOperator::new(&ctx.kernels.series, 101)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rep = lipschitz_check(&op, &ctx.kernels.gains()?, ctx.cfg.s, trials, &mut rng)?;
    Ok(CheckResult::new(
        "lipschitz",
        rep.pass,
        serde_json::to_value(rep).expect("plain struct"),
    ))
}

pub fn check_transport_invariance(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in 2..=3 {
        for p in multi_indices_upto(n, 4) {
            count += 1;
            for _ in 0..20 {
                let pt = sample_point(&mut rng, n, 0.8);
                let shifted = |d: f64| {
                    let xi: Vec<f64> = pt.xi().iter().map(|v| v + d).collect();
                    phi_eval(&p, pt.x() + d, &xi)
                };
                worst = worst.max(((shifted(h) - shifted(-h)) / (2.0 * h)).abs());
            }
        }
    }
    CheckResult::new(
        "transport-invariance",
        worst < 1e-7,
        json!({"multi_indices": count, "max_directional_derivative": worst}),
    )
}

fn random_slice(rng: &mut ChaCha8Rng, n: usize) -> OrderSlice {
    let mut s = OrderSlice::new();
    for _ in 0..rng.gen_range(1..5) {
        let p: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let coeffs = (0..rng.gen_range(1..4))
            .map(|_| rat(rng.gen_range(-9..10), rng.gen_range(1..5)))
            .collect();
        let e = s.entry(p).or_default();
        *e = &*e + &UPoly::from_coeffs(coeffs);
    }
    s.retain(|_, p| !p.is_zero());
    s
}

pub fn check_dp_algebra(families: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_prod, mut worst_split): (f64, f64) = (0.0, 0.0);
    for _ in 0..families {
        let (r, big_r) = (rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0));
        let a = random_slice(&mut rng, 3);
        let b = random_slice(&mut rng, 3);
        let rhs = dp_norm_slice(&a, r, big_r)? * dp_norm_slice(&b, r, big_r)?;
        if rhs > 0.0 {
            worst_prod = worst_prod.max(dp_norm_slice(&dp_product(&a, &b), r, big_r)? / rhs);
        }
        let h = random_slice(&mut rng, 4);
        let j = rng.gen_range(0..3);
        let rhs = r * dp_norm_slice(&h, r, big_r)?;
        if rhs > 0.0 {
            worst_split =
                worst_split.max(dp_norm_slice(&split_gap_integrate(&h, j)?, r, big_r)? / rhs);
        }
    }
    Ok(vec![
        CheckResult::new(
            "dp-product-norm",
            worst_prod <= 1.0 + 1e-12,
            json!({"families": families, "worst_ratio": worst_prod}),
        ),
        CheckResult::new(
            "split-integration-norm",
            worst_split <= 1.0 + 1e-12,
            json!({"families": families, "worst_ratio": worst_split}),
        ),
    ])
}

pub fn check_assumptions(ctx: &PdaeContext, samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let g = check_growth_assumption(&ctx.plant.series, samples, seed)?;
    let cf = check_cf_assumption(&ctx.plant.family, samples, seed)?;
    Ok(vec![
        CheckResult::new(
            "growth-assumption",
            g.pass,
            serde_json::to_value(g).expect("plain struct"),
        ),
        CheckResult::new(
            "coefficient-bound-assumption",
            cf.pass,
            serde_json::to_value(cf).expect("plain struct"),
        ),
    ])
}

pub fn check_inversion(ctx: &PdaeContext, trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let m = 101;
    let op = GridOperator::new(&ctx.kernels.series, m)?;
    let cfg = ctx.cfg;
    let q = cfg.sqrt_ell();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_rt, mut worst_ratio, mut worst_bound): (f64, f64, f64) =
        (0.0, 0.0, f64::NEG_INFINITY);
    for _ in 0..trials {
        let r = 0.5 * cfg.s.sqrt() * rng.gen_range(0.05..1.0);
        let u = random_smooth(&mut rng, m, r);
        let w = u.sub(&op.apply(&u)?);
        let out = invert(&w, &op, &cfg)?;
        worst_rt = worst_rt.max(out.u.sub(&u).l2_norm());
        worst_ratio = out.ratios().into_iter().fold(worst_ratio, f64::max);

        let r = cfg.rho_l.sqrt() * rng.gen_range(0.05..0.99);
        let w = random_smooth(&mut rng, m, r);
        let out = invert(&w, &op, &cfg)?;
        let slack = q / (1.0 - q) * w.l2_norm() + 10.0 * cfg.tol - out.u.sub(&w).l2_norm();
        worst_bound = worst_bound.max(-slack);
    }
    let mut worst_neumann: f64 = 0.0;
    for _ in 0..5 {
        let r = cfg.s.sqrt() * rng.gen_range(0.0..1.0);
        let u = random_smooth(&mut rng, 81, r);
        worst_neumann = worst_neumann.max(neumann_norm(
            &GridOperator::new(&ctx.kernels.series, 81)?,
            &u,
        )?);
    }
    let neumann_bound = 1.0 / (1.0 - q) + 0.05;
    Ok(vec![
        CheckResult::new(
            "inversion-round-trip",
            worst_rt < 1e-8 && worst_ratio <= q + 0.05,
            json!({"trials": trials, "max_error": worst_rt, "max_picard_ratio": worst_ratio, "sqrt_ell": q}),
        ),
        CheckResult::new(
            "inverse-bound",
            worst_bound <= 0.0,
            json!({"trials": trials, "worst_violation": worst_bound}),
        ),
        CheckResult::new(
            "neumann-bound",
            worst_neumann <= neumann_bound,
            json!({"worst_norm": worst_neumann, "bound": neumann_bound}),
        ),
    ])
}

pub fn check_frechet(ctx: &PdaeContext, pairs: usize, seed: u64) -> Result<CheckResult> {
    let m = 201;
    let op = GridOperator::new(&ctx.kernels.series, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let r = ctx.cfg.s.sqrt() * rng.gen_range(0.1..0.99);
        let u = random_smooth(&mut rng, m, r);
        let h = random_smooth(&mut rng, m, 1.0);
        let fd = op
            .apply(&u.axpy(eps, &h))?
            .sub(&op.apply(&u.axpy(-eps, &h))?)
            .scale(0.5 / eps);
        let dk = op.directional(&u, &h)?;
        let denom = dk.l2_norm().max(1e-300);
        worst = worst.max(fd.sub(&dk).l2_norm() / denom);
    }
    Ok(CheckResult::new(
        "frechet-derivative",
        worst < 1e-4,
        json!({"pairs": pairs, "worst_relative_error": worst}),
    ))
}

/// Sample times of the mild-solution residual.
pub const MILD_SAMPLE_TIMES: [f64; 8] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0];

/// Worst mild residual for the 0.1-scaled bump and the order-3 controller.
pub fn mild_residual_at(ctx: &PdaeContext, m: usize) -> Result<f64> {
    let cfg = SimConfig {
        m,
        controller: Controller::Order(3),
        initial: InitialCondition::Bump { scale: 0.1 },
        extra_snapshot_times: MILD_SAMPLE_TIMES.to_vec(),
        ..SimConfig::default()
    };
    let rec = simulate(&cfg, &ctx.plant.series, &ctx.kernels.series)?;
    Ok(mild_solution_residual(
        &rec,
        &ctx.kernels.series,
        &MILD_SAMPLE_TIMES,
    )?)
}

pub fn check_semigroup_and_mild(ctx: &PdaeContext) -> Result<Vec<CheckResult>> {
    let w0 = GridFunction::from_fn(201, |x| (2.0 * x).cos() + x);
    let zero_after = [1.0, 1.2, 2.0, 5.0].iter().all(|&t| {
        target_semigroup(&w0, t)
            .map(|g| g.values().iter().all(|v| *v == 0.0))
            .unwrap_or(false)
    });
    let contractive = (0..=20).all(|i| {
        target_semigroup(&w0, i as f64 / 20.0)
            .map(|g| g.l2_norm() <= w0.l2_norm() + 1e-12)
            .unwrap_or(false)
    });
    let meshes = [101usize, 201, 401];
    let res: Vec<f64> = meshes
        .iter()
        .map(|&m| mild_residual_at(ctx, m))
        .collect::<Result<_>>()?;
    let monotone = res.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Ok(vec![
        CheckResult::new(
            "semigroup",
            zero_after && contractive,
            json!({"zero_for_t_ge_1": zero_after, "nonexpansive": contractive}),
        ),
        CheckResult::new(
            "mild-residual-refinement",
            monotone,
            json!({"meshes": meshes, "residuals": res}),
        ),
    ])
}

pub fn check_stability(ctx: &PdaeContext) -> Result<Vec<CheckResult>> {
    let (c1, c2) = stability_constants(3.0 / 16.0, 0.5, 21.0 / 256.0, 1.0)?;
    let arith = (c1 - 0.1678).abs() < 5e-5 && (c2 - 15.84).abs() < 5e-3;
    let cfg = ctx.cfg;
    let (c1, c2) = stability_constants(cfg.s, cfg.ell_s, cfg.rho_l, 1.0)?;
    let base = SimConfig {
        controller: Controller::Order(3),
        initial: InitialCondition::Bump { scale: 1.0 },
        ..SimConfig::default()
    };
    let norm1 = base.initial.sample(base.m)?.l2_norm();
    let scale = 0.9 * c1 / norm1;
    let sim_cfg = SimConfig {
        initial: InitialCondition::Bump { scale },
        extra_snapshot_times: vec![0.5, 1.0, 1.5, 2.0],
        ..base
    };
    let rec = simulate(&sim_cfg, &ctx.plant.series, &ctx.kernels.series)?;
    let u0 = rec.l2[0];
    let slack = 10.0 * sim_cfg.dx();
    let mut decay = rec.blow_up.is_none();
    let mut rows = Vec::new();
    for t in [0.5, 1.0, 1.5, 2.0] {
        let n = rec
            .snapshot_at(t)
            .map(|g| g.l2_norm())
            .unwrap_or(f64::INFINITY);
        let bound = c2 * (-t as f64).exp() * u0 + slack;
        decay &= n <= bound;
        rows.push(json!({"t": t, "norm": n, "bound": bound}));
    }
    Ok(vec![
        CheckResult::new("stability-constants", arith, json!({"C1": c1, "C2": c2})),
        CheckResult::new(
            "closed-loop-decay",
            decay,
            json!({"u0_norm": u0, "samples": rows}),
        ),
    ])
}

pub fn check_blow_up_mesh_stability(ctx: &PdaeContext) -> Result<CheckResult> {
    let mut rows = Vec::new();
    let mut pass = true;
    for c in [Controller::OpenLoop, Controller::Order(2)] {
        let times: Vec<Option<f64>> = [201usize, 401]
            .iter()
            .map(|&m| {
                let cfg = SimConfig {
                    m,
                    controller: c,
                    frames: 0,
                    ..SimConfig::default()
                };
                simulate(&cfg, &ctx.plant.series, &ctx.kernels.series).map(|r| r.blow_up)
            })
            .collect::<std::result::Result<_, _>>()?;
        let ok = matches!((times[0], times[1]), (Some(a), Some(b)) if (a - b).abs() < 0.05);
        pass &= ok;
        rows.push(
            json!({"controller": c.label(), "blow_up_201": times[0], "blow_up_401": times[1]}),
        );
    }
    Ok(CheckResult::new(
        "blow-up-mesh-stability",
        pass,
        json!({"runs": rows}),
    ))
}

/// Runs every check with seeds derived from `seed`.
pub fn verify_all(seed: u64) -> Result<VerifyReport> {
    let ctx = PdaeContext::new()?;
    let mut checks = vec![
        guard("kernel-closed-form", check_closed_forms(500, seed)),
        guard("cascade-exact", check_cascade_exact()),
        guard("dual-construction", check_dual(&ctx, 200, seed + 1)),
        guard("coupling-bound", check_coupling_bound(&ctx)),
        guard("lipschitz", check_lipschitz(&ctx, 40, seed + 2)),
        check_transport_invariance(seed + 3),
    ];
    let multi: [(&str, Result<Vec<CheckResult>>); 5] = [
        ("dp-algebra", check_dp_algebra(20, seed + 4)),
        ("assumptions", check_assumptions(&ctx, 500, seed + 5)),
        ("inversion", check_inversion(&ctx, 50, seed + 6)),
        ("semigroup", check_semigroup_and_mild(&ctx)),
        ("stability", check_stability(&ctx)),
    ];
    for (name, r) in multi {
        match r {
            Ok(v) => checks.extend(v),
            Err(e) => checks.push(CheckResult::new(
                name,
                false,
                json!({"error": e.to_string()}),
            )),
        }
    }
    checks.push(guard(
        "frechet-derivative",
        check_frechet(&ctx, 20, seed + 7),
    ));
    checks.push(guard(
        "blow-up-mesh-stability",
        check_blow_up_mesh_stability(&ctx),
    ));
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { seed, checks, pass })
}
