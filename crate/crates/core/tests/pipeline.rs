//! End-to-end: plant -> gap cascade -> kernels -> radius -> inversion and
//! closed-loop simulation.

use std::sync::Arc;

use backstep_core::charkernels::{build_controller_kernels, controller_series, BuildOptions};
use backstep_core::gapcascade::{
    cascade, kernel_nodes, pdae_plant_family, plant_series_from_family,
};
use backstep_core::inversion::{choose_radius, invert};
use backstep_core::simplex::QuadratureRule;
use backstep_core::simulator::{simulate, Controller, InitialCondition, SimConfig};
use backstep_core::volterra::{
    GainFunctions, GridFunction, GridOperator, Kernel, PolyKernel, VolterraKernelSeries,
};

#[test]
fn gap_and_recursion_kernels_drive_identical_simulations() {
    let plant = plant_series_from_family(&pdae_plant_family()).unwrap();
    let a = cascade(&pdae_plant_family(), 3).unwrap();
    let gap = controller_series(&kernel_nodes(&a, 3).unwrap()).unwrap();
    let reg =
        controller_series(&build_controller_kernels(&plant, 3, &BuildOptions::default()).unwrap())
            .unwrap();
    let cfg = SimConfig {
        m: 101,
        t_end: 1.0,
        controller: Controller::Order(3),
        initial: InitialCondition::Bump { scale: 0.5 },
        ..SimConfig::default()
    };
    let r1 = simulate(&cfg, &plant, &gap).unwrap();
    let r2 = simulate(&cfg, &plant, &reg).unwrap();
    for (x, y) in r1.l2.iter().zip(&r2.l2) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn radius_then_inversion() {
    let a = cascade(&pdae_plant_family(), 3).unwrap();
    let k = controller_series(&kernel_nodes(&a, 3).unwrap()).unwrap();
    let gains =
        GainFunctions::from_series(&k, &QuadratureRule::TensorGaussLegendreOnGaps { points: 8 })
            .unwrap();
    // ||k2||^2 = 1/12 exactly
    assert!((gains.kernel_l2_norms()[0].1 - 1.0 / 12.0).abs() < 1e-14);
    let cfg = choose_radius(&gains).unwrap();
    assert!(
        cfg.s < 3.0 / 16.0 && cfg.s > 0.1,
        "k3 shrinks the radius: {}",
        cfg.s
    );
    cfg.check_against(&gains).unwrap();
    let op = GridOperator::new(&k, 151).unwrap();
    let w = GridFunction::from_fn(151, |x| 0.2 * (1.0 - x));
    let out = invert(&w, &op, &cfg).unwrap();
    assert!(out.residual < 1e-10);
}

#[test]
fn zero_plant_is_pure_transport() {
    let zero =
        VolterraKernelSeries::new(vec![Arc::new(PolyKernel::zero(2)) as Arc<dyn Kernel>], None)
            .unwrap();
    let cfg = SimConfig {
        m: 101,
        t_end: 1.2,
        controller: Controller::Order(2),
        initial: InitialCondition::Sine { scale: 1.0 },
        ..SimConfig::default()
    };
    let rec = simulate(&cfg, &zero, &zero).unwrap();
    assert!(rec.blow_up.is_none());
    assert!(rec.final_l2 < 1e-2, "{}", rec.final_l2);
}
