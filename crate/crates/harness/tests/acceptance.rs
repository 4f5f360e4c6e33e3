//! Acceptance suite: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use backstep_core::gapcascade::cascade;
use backstep_core::inversion::{invert, random_smooth};
use backstep_core::simulator::{simulate, target_semigroup, Controller, SimConfig};
use backstep_core::volterra::{GridFunction, GridOperator};
use backstep_harness::kernels::cross_check;
use backstep_harness::plant::Plant;
use backstep_harness::verify::{
    check_closed_forms, check_frechet, expected_pdae_table, mild_residual_at, verify_all,
    PdaeContext,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: usize, title: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let pass = out.pass && took <= limit;
    println!(
        "criterion {id} [{}] {title}: {} ({:.1}s, limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn c1() -> Outcome {
    let r = check_closed_forms(500, 1).expect("kernel build");
    Outcome {
        pass: r.pass,
        detail: format!(
            "max errors k2 {}, k3 {}",
            r.detail["max_err_k2"], r.detail["max_err_k3"]
        ),
    }
}

fn c2() -> Outcome {
    let a = cascade(&Plant::pdae().family, 3).expect("cascade");
    let got: Vec<_> = a
        .iter()
        .map(|(n, p, poly)| (n, p.clone(), poly.clone()))
        .collect();
    Outcome {
        pass: got == expected_pdae_table(),
        detail: format!("{} nonzero entries, exact comparison", got.len()),
    }
}

fn c3(ctx: &PdaeContext) -> Outcome {
    let rep = cross_check(&ctx.plant, &ctx.kernels, 200, 3, 1e-6).expect("cross-check");
    let d3 = rep
        .per_order
        .iter()
        .find(|p| p.0 == 3)
        .map(|p| p.1)
        .unwrap_or(f64::NAN);
    Outcome {
        pass: d3 < 1e-6,
        detail: format!("max |gap - recursion| on T3(1) = {d3:e}"),
    }
}

fn c4(ctx: &PdaeContext) -> Outcome {
    let sim = |c| {
        let cfg = SimConfig {
            controller: c,
            ..SimConfig::default()
        };
        simulate(&cfg, &ctx.plant.series, &ctx.kernels.series).expect("simulation")
    };
    let open = sim(Controller::OpenLoop);
    let two = sim(Controller::Order(2));
    let three = sim(Controller::Order(3));
    let in_range = |v: Option<f64>, lo: f64, hi: f64| v.is_some_and(|t| (lo..=hi).contains(&t));
    let pass = in_range(open.blow_up, 1.01, 1.11)
        && in_range(two.blow_up, 1.58, 1.78)
        && three.blow_up.is_none()
        && (three.final_time - 2.0).abs() < 1e-9
        && (0.15..=0.25).contains(&three.final_l2)
        && (20.0..=28.0).contains(&three.max_sup);
    Outcome {
        pass,
        detail: format!(
            "open-loop blow-up {:?}, order-2 blow-up {:?}, order-3 ||u(2)|| {:.4}, max|u| {:.2}",
            open.blow_up, two.blow_up, three.final_l2, three.max_sup
        ),
    }
}

fn c5(ctx: &PdaeContext) -> Outcome {
    let m = 201;
    let op = GridOperator::new(&ctx.kernels.series, m).expect("operator");
    let cfg = ctx.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut err, mut ratio): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let r = 0.5 * cfg.s.sqrt() * rng.gen_range(0.0..1.0);
        let u = random_smooth(&mut rng, m, r);
        let w = u.sub(&op.apply(&u).expect("apply"));
        let out = invert(&w, &op, &cfg).expect("inversion");
        err = err.max(out.u.sub(&u).l2_norm());
        ratio = out.ratios().into_iter().fold(ratio, f64::max);
    }
    let bound = cfg.sqrt_ell() + 0.05;
    Outcome {
        pass: err < 1e-8 && ratio <= bound,
        detail: format!(
            "max round-trip error {err:e}, max Picard ratio {ratio:.4} (bound {bound:.4})"
        ),
    }
}

fn c6(ctx: &PdaeContext) -> Outcome {
    let r = check_frechet(ctx, 20, 6).expect("frechet");
    Outcome {
        pass: r.pass,
        detail: format!(
            "worst relative L2 error {}",
            r.detail["worst_relative_error"]
        ),
    }
}

fn c7(ctx: &PdaeContext) -> Outcome {
    let w0 = GridFunction::from_fn(201, |x| 1.0 + (5.0 * x).sin());
    let zero = [1.0, 1.5, 3.0].iter().all(|&t| {
        target_semigroup(&w0, t)
            .expect("semigroup")
            .values()
            .iter()
            .all(|v| *v == 0.0)
    });
    let res: Vec<f64> = [101, 201, 401]
        .iter()
        .map(|&m| mild_residual_at(ctx, m).expect("residual"))
        .collect();
    let monotone = res.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Outcome {
        pass: zero && monotone,
        detail: format!("S(t) = 0 for t >= 1: {zero}; residuals M=101/201/401: {res:.4?}"),
    }
}

fn c8() -> Outcome {
    let rep = verify_all(20240601).expect("suite");
    let failed: Vec<&str> = rep
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    Outcome {
        pass: rep.pass,
        detail: if failed.is_empty() {
            format!("{} checks passed", rep.checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

#[test]
fn acceptance() {
    let ctx = PdaeContext::new().expect("context");
    let secs = Duration::from_secs;
    let results = [
        run(1, "closed-form kernel reproduction", secs(60), c1),
        run(2, "exact cascade reproduction", secs(10), c2),
        run(3, "dual-construction consistency", secs(120), || c3(&ctx)),
        run(4, "simulation reproduction", secs(300), || c4(&ctx)),
        run(5, "contraction inverse", secs(120), || c5(&ctx)),
        run(6, "Frechet derivative", secs(120), || c6(&ctx)),
        run(7, "semigroup and mild solution", secs(300), || c7(&ctx)),
        run(8, "property suites (verify-all)", secs(600), c8),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert!(results.iter().all(|p| *p));
}
