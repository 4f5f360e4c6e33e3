//! Experiment presets and the subcommand implementations.

use std::path::{Path, PathBuf};

use backstep_core::gapcascade::max_abs_coefficient;
use backstep_core::inversion::{choose_radius, invert, random_smooth};
use backstep_core::simulator::{
    simulate, stability_constants, Controller, InitialCondition, SimConfig, SimulationRecord,
};
use backstep_core::volterra::{GridFunction, GridOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{HarnessError, Result};
use crate::kernels::{build_kernels, cross_check};
use crate::output::{metadata, run_dir, write_json, write_text};
use crate::plant::{Plant, PlantDescriptor};
use crate::verify::verify_all;

pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig1a,
    Fig1b,
    Fig1c,
    Kernels,
    Gains,
    InvertDemo,
    VerifyAll,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Fig1a,
        Preset::Fig1b,
        Preset::Fig1c,
        Preset::Kernels,
        Preset::Gains,
        Preset::InvertDemo,
        Preset::VerifyAll,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig1a => "fig1a",
            Preset::Fig1b => "fig1b",
            Preset::Fig1c => "fig1c",
            Preset::Kernels => "kernels",
            Preset::Gains => "gains",
            Preset::InvertDemo => "invert-demo",
            Preset::VerifyAll => "verify-all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown preset '{s}'")))
    }
}

/// Result of a command: whether its verifications passed and where the
/// artifacts went.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub dir: PathBuf,
    pub summary: Value,
}

/// Verification toggles of an experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Verification {
    pub kernel_cross_check: bool,
    pub gain_bounds: bool,
    pub inversion_round_trip: bool,
    pub mild_residual: bool,
}

/// Experiment file for `simulate --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// `pdae` or a plant file path (relative to the experiment file).
    pub plant: String,
    pub controller: String,
    /// Highest kernel order built; defaults to the controller order.
    pub n_max: Option<usize>,
    pub m: usize,
    pub cfl: f64,
    pub t_end: f64,
    pub threshold: f64,
    pub frames: usize,
    pub initial: InitialCondition,
    pub seed: u64,
    pub verify: Verification,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            name: "simulate".into(),
            plant: "pdae".into(),
            controller: "order-3".into(),
            n_max: None,
            m: d.m,
            cfl: d.cfl,
            t_end: d.t_end,
            threshold: d.threshold,
            frames: d.frames,
            initial: d.initial,
            seed: DEFAULT_SEED,
            verify: Verification::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut exp = Self::from_toml(&text)?;
        if exp.plant != "pdae" {
            let p = Path::new(&exp.plant);
            if p.is_relative() {
                if let Some(parent) = path.parent() {
                    exp.plant = parent.join(p).display().to_string();
                }
            }
        }
        Ok(exp)
    }

    pub fn controller(&self) -> Result<Controller> {
        Ok(Controller::parse(&self.controller)?)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            m: self.m,
            cfl: self.cfl,
            t_end: self.t_end,
            controller: self.controller()?,
            threshold: self.threshold,
            initial: self.initial.clone(),
            frames: self.frames,
            extra_snapshot_times: Vec::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kernel_order(&self) -> Result<usize> {
        let from_controller = match self.controller()? {
            Controller::OpenLoop => 2,
            Controller::Order(n) => n,
            Controller::Full => self.n_max.unwrap_or(3),
        };
        let n = self.n_max.unwrap_or(from_controller);
        if n < from_controller {
            return Err(HarnessError::Config(format!(
                "controller {} needs kernels up to order {from_controller}, n_max is {n}",
                self.controller
            )));
        }
        Ok(n)
    }
}

fn record_results(rec: &SimulationRecord) -> Value {
    json!({
        "blow_up": rec.blow_up,
        "final_time": rec.final_time,
        "final_l2": rec.final_l2,
        "final_sup": rec.final_sup,
        "max_sup": rec.max_sup,
        "steps": rec.times.len() - 1,
        "dt": rec.dt,
        "threshold": rec.threshold,
    })
}

fn write_record(dir: &Path, rec: &SimulationRecord) -> Result<()> {
    write_text(dir, "timeseries.csv", &rec.to_csv())?;
    write_text(dir, "snapshots.csv", &rec.snapshots_csv())?;
    Ok(())
}

/// Runs an experiment config into `root/<name>`.
pub fn run_experiment(exp: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    let plant = PlantDescriptor::parse(&exp.plant).load()?;
    let sim_cfg = exp.sim_config()?;
    let n_max = exp.kernel_order()?;
    let kernels = build_kernels(&plant, n_max)?;
    let dir = run_dir(root, &exp.name)?;
    let rec = simulate(&sim_cfg, &plant.series, &kernels.series)?;
    write_record(&dir, &rec)?;

    let mut checks = serde_json::Map::new();
    let mut pass = true;
    if exp.verify.kernel_cross_check {
        let rep = cross_check(&plant, &kernels, 100, exp.seed, 1e-6)?;
        pass &= rep.pass;
        checks.insert(
            "kernel_cross_check".into(),
            serde_json::to_value(&rep).expect("plain struct"),
        );
    }
    if exp.verify.gain_bounds || exp.verify.inversion_round_trip {
        let gains = kernels.gains()?;
        let cfg = choose_radius(&gains)?;
        checks.insert(
            "radius".into(),
            serde_json::to_value(cfg).expect("plain struct"),
        );
        if exp.verify.inversion_round_trip {
            let op = GridOperator::new(&kernels.series, sim_cfg.m)?;
            let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
            let u = random_smooth(&mut rng, sim_cfg.m, 0.5 * cfg.s.sqrt());
            let w = u.sub(&op.apply(&u)?);
            let out = invert(&w, &op, &cfg)?;
            let err = out.u.sub(&u).l2_norm();
            pass &= err < 1e-8;
            checks.insert(
                "inversion_round_trip".into(),
                json!({"error": err, "iterations": out.iterations}),
            );
        }
    }
    if exp.verify.mild_residual {
        let times: Vec<f64> = vec![0.0];
        match backstep_core::simulator::mild_solution_residual(&rec, &kernels.series, &times) {
            Ok(r) => {
                checks.insert("mild_residual_t0".into(), json!(r));
            }
            Err(e) => {
                checks.insert("mild_residual_t0".into(), json!({"skipped": e.to_string()}));
            }
        }
    }
    let summary = record_results(&rec);
    let meta = metadata(
        "simulate",
        serde_json::to_value(exp).expect("plain struct"),
        json!({"simulation": summary, "checks": checks, "plant": plant.name, "kernel_order": n_max}),
    );
    write_json(&dir, "metadata.json", &meta)?;
    Ok(Outcome { pass, dir, summary })
}

fn figure(root: &Path, preset: Preset, controller: &str) -> Result<Outcome> {
    let exp = ExperimentConfig {
        name: preset.name().into(),
        controller: controller.into(),
        ..ExperimentConfig::default()
    };
    run_experiment(&exp, root)
}

/// Both kernel constructions for `plant` up to `order`, exported with the
/// consistency report.
pub fn run_kernels(plant: &Plant, order: usize, root: &Path, seed: u64) -> Result<Outcome> {
    let dir = run_dir(root, "kernels")?;
    let set = build_kernels(plant, order)?;
    write_json(&dir, "cascade_a.json", &set.cascade.a.to_json())?;
    write_json(&dir, "coupling_c.json", &set.cascade.c.to_json())?;
    write_json(&dir, "plant_b.json", &plant.family.to_json())?;
    let rep = cross_check(plant, &set, 200, seed, 1e-6)?;
    let mut csv = String::from("n,x,xi,gap,recursion,abs_diff\n");
    for (n, x, xi, g, r) in &rep.rows {
        let xi: Vec<String> = xi.iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!(
            "{n},{x},{},{g},{r},{}\n",
            xi.join(";"),
            (g - r).abs()
        ));
    }
    write_text(&dir, "cross_check.csv", &csv)?;
    let summary = json!({
        "support": set.cascade.a.support_len(),
        "max_abs_coefficient": max_abs_coefficient(&set.cascade.a),
        "cross_check": rep,
    });
    write_json(
        &dir,
        "metadata.json",
        &metadata(
            "kernels",
            json!({"plant": plant.name, "order": order, "seed": seed}),
            summary.clone(),
        ),
    )?;
    Ok(Outcome {
        pass: rep.pass,
        dir,
        summary,
    })
}

/// Gain tables and the chosen constants.
pub fn run_gains(plant: &Plant, order: usize, root: &Path) -> Result<Outcome> {
    let dir = run_dir(root, "gains")?;
    let set = build_kernels(plant, order)?;
    let gains = set.gains()?;
    let cfg = choose_radius(&gains)?;
    let (c1, c2) = stability_constants(cfg.s, cfg.ell_s, cfg.rho_l, 1.0)?;
    let mut csv = String::from("s,k,ell\n");
    for i in 0..=100 {
        let s = 2.0 * cfg.s * i as f64 / 100.0;
        csv.push_str(&format!(
            "{s},{},{}\n",
            gains.gain_k(s)?,
            gains.gain_ell(s)?
        ));
    }
    write_text(&dir, "gains.csv", &csv)?;
    let summary = json!({
        "kernel_l2_sq": gains.kernel_l2_norms(),
        "s": cfg.s,
        "rho_l": cfg.rho_l,
        "ell_s": cfg.ell_s,
        "k_s": gains.gain_k(cfg.s)?,
        "lambda": 1.0,
        "C1": c1,
        "C2": c2,
        "radius_rule": "ell(s) = 1/2, rho_L = (s - 2 k(s)) / 2",
    });
    write_json(
        &dir,
        "metadata.json",
        &metadata(
            "gains",
            json!({"plant": plant.name, "order": order}),
            summary.clone(),
        ),
    )?;
    Ok(Outcome {
        pass: true,
        dir,
        summary,
    })
}

/// Reads `w` from a one- or two-column CSV (`w` or `x,w`), inverts it and
/// writes `x,w,u`.
pub fn run_invert(input: &Path, plant: &Plant, order: usize, root: &Path) -> Result<Outcome> {
    let text = std::fs::read_to_string(input).map_err(|e| HarnessError::io(input, e))?;
    let mut w = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let last = line.split(',').next_back().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) => w.push(v),
            Err(_) if w.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(HarnessError::Config(format!(
                    "{} line {}: not a number",
                    input.display(),
                    i + 1
                )))
            }
        }
    }
    let w = GridFunction::new(w)?;
    let set = build_kernels(plant, order)?;
    let cfg = choose_radius(&set.gains()?)?;
    let op = GridOperator::new(&set.series, w.len())?;
    let out = invert(&w, &op, &cfg)?;
    invert_outputs(
        root,
        "invert",
        &w,
        &out,
        &cfg,
        json!({"input": input.display().to_string(), "plant": plant.name, "order": order}),
    )
}

fn invert_outputs(
    root: &Path,
    name: &str,
    w: &GridFunction,
    out: &backstep_core::inversion::InversionOutcome,
    cfg: &backstep_core::inversion::InversionConfig,
    config: Value,
) -> Result<Outcome> {
    let dir = run_dir(root, name)?;
    let mut csv = String::from("x,w,u\n");
    for i in 0..w.len() {
        csv.push_str(&format!(
            "{},{},{}\n",
            w.node(i),
            w.values()[i],
            out.u.values()[i]
        ));
    }
    write_text(&dir, "inverse.csv", &csv)?;
    let summary = json!({
        "iterations": out.iterations,
        "residual": out.residual,
        "ratios": out.ratios(),
        "w_norm": w.l2_norm(),
        "u_norm": out.u.l2_norm(),
        "radius": cfg,
    });
    write_json(
        &dir,
        "metadata.json",
        &metadata(name, config, summary.clone()),
    )?;
    Ok(Outcome {
        pass: true,
        dir,
        summary,
    })
}

fn invert_demo(root: &Path, seed: u64) -> Result<Outcome> {
    let plant = Plant::pdae();
    let set = build_kernels(&plant, 3)?;
    let cfg = choose_radius(&set.gains()?)?;
    let m = 201;
    let op = GridOperator::new(&set.series, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_smooth(&mut rng, m, 0.5 * cfg.s.sqrt());
    let w = u.sub(&op.apply(&u)?);
    let out = invert(&w, &op, &cfg)?;
    let err = out.u.sub(&u).l2_norm();
    let mut o = invert_outputs(
        root,
        "invert-demo",
        &w,
        &out,
        &cfg,
        json!({"plant": "pdae", "order": 3, "seed": seed}),
    )?;
    o.pass = err < 1e-8;
    o.summary["round_trip_error"] = json!(err);
    write_json(
        &o.dir,
        "metadata.json",
        &metadata("invert-demo", json!({"seed": seed}), o.summary.clone()),
    )?;
    Ok(o)
}

pub fn run_verify_all(root: &Path, seed: u64) -> Result<Outcome> {
    let dir = run_dir(root, "verify-all")?;
    let report = verify_all(seed)?;
    let summary = serde_json::to_value(&report).expect("plain struct");
    write_json(
        &dir,
        "report.json",
        &metadata("verify-all", json!({"seed": seed}), summary.clone()),
    )?;
    Ok(Outcome {
        pass: report.pass,
        dir,
        summary,
    })
}

pub fn run_preset(preset: Preset, root: &Path, seed: u64) -> Result<Outcome> {
    match preset {
        Preset::Fig1a => figure(root, preset, "open-loop"),
        Preset::Fig1b => figure(root, preset, "order-2"),
        Preset::Fig1c => figure(root, preset, "order-3"),
        Preset::Kernels => run_kernels(&Plant::pdae(), 3, root, seed),
        Preset::Gains => run_gains(&Plant::pdae(), 3, root),
        Preset::InvertDemo => invert_demo(root, seed),
        Preset::VerifyAll => run_verify_all(root, seed),
    }
}
