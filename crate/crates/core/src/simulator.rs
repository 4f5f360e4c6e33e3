//! Closed-loop transport simulation: upwind differences in space, Heun in
//! time, boundary feedback at `x = 1` recomputed at every stage.

use serde::{Deserialize, Serialize};

use crate::charkernels::is_pdae_plant;
use crate::error::{config, domain, Error, Result};
use crate::volterra::{cumtrap, GridFunction, GridOperator, VolterraKernelSeries};

/// Which controller closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    OpenLoop,
    /// Kernels `k_2..k_n`.
    Order(usize),
    /// Every kernel supplied.
    Full,
}

impl Controller {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "open-loop" | "open" | "0" => Ok(Self::OpenLoop),
            "full" => Ok(Self::Full),
            other => {
                let n = other.strip_prefix("order-").unwrap_or(other);
                match n.parse::<usize>() {
                    Ok(n) if n >= 2 => Ok(Self::Order(n)),
                    _ => config(format!("unknown controller '{other}'")),
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::OpenLoop => "open-loop".into(),
            Self::Order(n) => format!("order-{n}"),
            Self::Full => "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    /// `scale * 140 x^3 (1 - x)`.
    Bump { scale: f64 },
    /// `scale * sin(pi x)`.
    Sine { scale: f64 },
    /// Nodal values; length must equal the mesh size.
    Values { values: Vec<f64> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Bump { scale: 1.0 }
    }
}

impl InitialCondition {
    pub fn sample(&self, m: usize) -> Result<GridFunction> {
        match self {
            Self::Bump { scale } => Ok(GridFunction::from_fn(m, |x| {
                scale * 140.0 * x.powi(3) * (1.0 - x)
            })),
            Self::Sine { scale } => Ok(GridFunction::from_fn(m, |x| {
                scale * (std::f64::consts::PI * x).sin()
            })),
            Self::Values { values } => {
                if values.len() != m {
                    return config(format!(
                        "initial condition has {} values, mesh has {m}",
                        values.len()
                    ));
                }
                GridFunction::new(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub cfl: f64,
    pub t_end: f64,
    pub controller: Controller,
    pub threshold: f64,
    pub initial: InitialCondition,
    /// Evenly spaced snapshot frames (besides `t = 0`).
    pub frames: usize,
    /// Additional times at which the state is stored.
    pub extra_snapshot_times: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 201,
            cfl: 0.5,
            t_end: 2.0,
            controller: Controller::OpenLoop,
            threshold: 1e6,
            initial: InitialCondition::default(),
            frames: 50,
            extra_snapshot_times: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return config(format!("mesh needs at least 3 points, got {}", self.m));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return config(format!("CFL must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.threshold > 0.0) {
            return config(format!(
                "blow-up threshold must be positive, got {}",
                self.threshold
            ));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return config(format!(
                "horizon must be finite and nonnegative, got {}",
                self.t_end
            ));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.cfl * self.dx()
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt()).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub m: usize,
    pub dt: f64,
    pub controller: Controller,
    pub threshold: f64,
    /// Per-step series, starting at `t = 0`.
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub control: Vec<f64>,
    pub sup: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub blow_up: Option<f64>,
    pub final_time: f64,
    pub final_l2: f64,
    pub final_sup: f64,
    /// `max_{x,t} |u|` over completed steps.
    pub max_sup: f64,
}

impl SimulationRecord {
    /// Stored snapshot closest to `t`, if within half a step.
    pub fn snapshot_at(&self, t: f64) -> Option<GridFunction> {
        let (i, d) = self
            .snapshot_times
            .iter()
            .enumerate()
            .map(|(i, &s)| (i, (s - t).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (d <= 0.5 * self.dt + 1e-12)
            .then(|| GridFunction::new(self.snapshots[i].clone()).expect("stored snapshot"))
    }

    /// `t, ||u||, U, sup|u|` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,l2_norm,control,sup_norm\n");
        for i in 0..self.times.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.times[i], self.l2[i], self.control[i], self.sup[i]
            ));
        }
        s
    }

    /// One row per snapshot: `t` followed by the nodal values.
    pub fn snapshots_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 0..self.m {
            s.push_str(&format!(",x{i}"));
        }
        s.push('\n');
        for (t, row) in self.snapshot_times.iter().zip(&self.snapshots) {
            s.push_str(&t.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Plant nonlinearity `F[u](x)` on the mesh.
#[derive(Debug, Clone)]
pub enum PlantModel {
    /// `F = v^2 / 2` with `v` the trapezoidal antiderivative of `u`.
    Pdae,
    /// Pure transport.
    Transport,
    Series(GridOperator),
}

impl PlantModel {
    pub fn from_series(plant: &VolterraKernelSeries, m: usize) -> Result<Self> {
        if is_pdae_plant(plant) {
            Ok(Self::Pdae)
        } else if plant.active().next().is_none() {
            Ok(Self::Transport)
        } else {
            Ok(Self::Series(GridOperator::new(plant, m)?))
        }
    }

    fn nonlinearity(&self, u: &[f64], h: f64) -> Result<Option<Vec<f64>>> {
        Ok(match self {
            Self::Pdae => {
                let v = cumtrap(u, h);
                Some(v.iter().map(|v| 0.5 * v * v).collect())
            }
            Self::Transport => None,
            Self::Series(op) => Some(op.apply(&GridFunction::new(u.to_vec())?)?.into_values()),
        })
    }
}

fn rhs_with(plant: &PlantModel, u: &[f64], h: f64) -> Result<Vec<f64>> {
    let m = u.len();
    let mut r = vec![0.0; m];
    for i in 0..m - 1 {
        r[i] = (u[i + 1] - u[i]) / h;
    }
    if let Some(f) = plant.nonlinearity(u, h)? {
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri += fi;
        }
    }
    r[m - 1] = 0.0;
    Ok(r)
}

/// Semi-discrete right-hand side `u_x + v^2/2` with a forward difference;
/// the boundary entry is zero.
pub fn rhs_pdae(u: &GridFunction) -> GridFunction {
    let r = rhs_with(&PlantModel::Pdae, u.values(), u.dx()).expect("PDAE rhs cannot fail");
    GridFunction::new(r).expect("same mesh")
}

fn feedback_operator(
    kernels: &VolterraKernelSeries,
    controller: Controller,
    m: usize,
) -> Result<Option<GridOperator>> {
    match controller {
        Controller::OpenLoop => Ok(None),
        Controller::Full => Ok(Some(GridOperator::new(kernels, m)?)),
        Controller::Order(n) => {
            let orders = kernels.orders();
            if let Some(missing) = (2..=n).find(|o| !orders.contains(o)) {
                return config(format!(
                    "controller order {n} needs kernel k_{missing}, which is missing"
                ));
            }
            Ok(Some(GridOperator::new(
                &kernels.clone().with_truncation(n)?,
                m,
            )?))
        }
    }
}

/// `U = sum_{n <= order_cap} int_{T_n(1)} k_n prod u(xi_i)` by nested
/// trapezoids on the mesh.
pub fn feedback(u: &GridFunction, kernels: &VolterraKernelSeries, order_cap: usize) -> Result<f64> {
    if order_cap < 2 {
        return Ok(0.0);
    }
    match feedback_operator(kernels, Controller::Order(order_cap), u.len())? {
        Some(op) => op.apply_at_end(u),
        None => Ok(0.0),
    }
}

/// Runs the closed loop.
pub fn simulate(
    cfg: &SimConfig,
    plant: &VolterraKernelSeries,
    kernels: &VolterraKernelSeries,
) -> Result<SimulationRecord> {
    cfg.validate()?;
    let model = PlantModel::from_series(plant, cfg.m)?;
    let op = feedback_operator(kernels, cfg.controller, cfg.m)?;
    simulate_with(cfg, &model, op.as_ref())
}

pub fn simulate_with(
    cfg: &SimConfig,
    model: &PlantModel,
    op: Option<&GridOperator>,
) -> Result<SimulationRecord> {
    cfg.validate()?;
    let (m, h, dt) = (cfg.m, cfg.dx(), cfg.dt());
    let steps = cfg.steps();
    let control = |u: &[f64]| -> Result<f64> {
        match op {
            None => Ok(0.0),
            Some(op) => match op.apply_at_end(&GridFunction::new(u.to_vec())?) {
                Ok(v) => Ok(v),
                // A non-finite state is reported as blow-up by the caller.
                Err(Error::Domain(_)) => Ok(f64::NAN),
                Err(e) => Err(e),
            },
        }
    };
    let stride = if cfg.frames == 0 {
        usize::MAX
    } else {
        (steps / cfg.frames).max(1)
    };
    let extra: Vec<usize> = cfg
        .extra_snapshot_times
        .iter()
        .map(|t| (t / dt).round() as usize)
        .collect();

    let mut u = cfg.initial.sample(m)?.into_values();
    u[m - 1] = control(&u)?;
    let l2 = |u: &[f64]| {
        GridFunction::new(u.to_vec())
            .map(|g| g.l2_norm())
            .unwrap_or(f64::NAN)
    };
    let sup = |u: &[f64]| {
        u.iter().fold(
            0.0f64,
            |a, v| if v.is_nan() { f64::NAN } else { a.max(v.abs()) },
        )
    };

    let mut rec = SimulationRecord {
        m,
        dt,
        controller: cfg.controller,
        threshold: cfg.threshold,
        times: vec![0.0],
        l2: vec![l2(&u)],
        control: vec![u[m - 1]],
        sup: vec![sup(&u)],
        snapshot_times: vec![0.0],
        snapshots: vec![u.clone()],
        blow_up: None,
        final_time: 0.0,
        final_l2: 0.0,
        final_sup: 0.0,
        max_sup: sup(&u),
    };
    if !(rec.max_sup <= cfg.threshold) {
        rec.blow_up = Some(0.0);
    }
    let mut us = vec![0.0; m];
    let mut un = vec![0.0; m];
    for step in 0..steps {
        if rec.blow_up.is_some() {
            break;
        }
        let k1 = rhs_with(model, &u, h)?;
        for i in 0..m {
            us[i] = u[i] + dt * k1[i];
        }
        us[m - 1] = if us.iter().all(|v| v.is_finite()) {
            control(&us)?
        } else {
            f64::NAN
        };
        let k2 = rhs_with(model, &us, h)?;
        for i in 0..m {
            un[i] = u[i] + 0.5 * dt * (k1[i] + k2[i]);
        }
        un[m - 1] = if un.iter().all(|v| v.is_finite()) {
            control(&un)?
        } else {
            f64::NAN
        };
        std::mem::swap(&mut u, &mut un);
        let t = (step + 1) as f64 * dt;
        let s = sup(&u);
        if !s.is_finite() || s > cfg.threshold {
            rec.blow_up = Some(t);
            rec.final_time = t;
            break;
        }
        rec.max_sup = rec.max_sup.max(s);
        rec.times.push(t);
        rec.l2.push(l2(&u));
        rec.control.push(u[m - 1]);
        rec.sup.push(s);
        if (step + 1) % stride == 0 || step + 1 == steps || extra.contains(&(step + 1)) {
            rec.snapshot_times.push(t);
            rec.snapshots.push(u.clone());
        }
    }
    let last = rec.times.len() - 1;
    if rec.blow_up.is_none() {
        rec.final_time = rec.times[last];
    }
    rec.final_l2 = rec.l2[last];
    rec.final_sup = rec.sup[last];
    Ok(rec)
}

/// `(S(t) w0)(x) = w0(x + t)` for `x + t < 1`, zero otherwise.
pub fn target_semigroup(w0: &GridFunction, t: f64) -> Result<GridFunction> {
    if !(t >= 0.0) {
        return domain(format!("semigroup time must be nonnegative, got {t}"));
    }
    if t == 0.0 {
        return Ok(w0.clone());
    }
    let m = w0.len();
    let h = w0.dx();
    let vals = (0..m)
        .map(|i| {
            let y = i as f64 * h + t;
            if y < 1.0 {
                w0.interp(y)
            } else {
                0.0
            }
        })
        .collect();
    GridFunction::new(vals)
}

/// `C1 = min(sqrt(s), sqrt(rho_L)/(1 + sqrt(ell)))`,
/// `C2 = e^lambda (1 + sqrt(ell))/(1 - sqrt(ell))`.
pub fn stability_constants(s: f64, ell_s: f64, rho_l: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&ell_s) {
        return domain(format!("ell(s) must lie in [0, 1), got {ell_s}"));
    }
    if !(lambda > 0.0 && s > 0.0 && rho_l > 0.0) {
        return domain(format!(
            "need s, rho_L, lambda > 0 (got {s}, {rho_l}, {lambda})"
        ));
    }
    let q = ell_s.sqrt();
    Ok((
        s.sqrt().min(rho_l.sqrt() / (1.0 + q)),
        lambda.exp() * (1.0 + q) / (1.0 - q),
    ))
}

/// Worst `||(u - K[u])(t) - S(t)(u0 - K[u0])||` over `sample_times`.
pub fn mild_solution_residual(
    rec: &SimulationRecord,
    kernels: &VolterraKernelSeries,
    sample_times: &[f64],
) -> Result<f64> {
    if let Some(t) = rec.blow_up {
        return Err(Error::NotApplicable(format!("record blew up at t = {t}")));
    }
    let op = GridOperator::new(kernels, rec.m)?;
    let u0 = GridFunction::new(rec.snapshots[0].clone())?;
    let w0 = u0.sub(&op.apply(&u0)?);
    let mut worst: f64 = 0.0;
    for &t in sample_times {
        let u = rec
            .snapshot_at(t)
            .ok_or_else(|| Error::Config(format!("no stored snapshot near t = {t}")))?;
        let w = u.sub(&op.apply(&u)?);
        worst = worst.max(w.sub(&target_semigroup(&w0, t)?).l2_norm());
    }
    Ok(worst)
}
