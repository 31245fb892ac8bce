//! Rollout-based training of metriplectic models and the NODE baseline.
//!
//! Each optimization step draws a batch of rollout starts, integrates the
//! learned vector field on a fresh tape per batch element, and backpropagates
//! through the accepted solver stages. Batch elements run in parallel; their
//! gradients are summed in ascending batch order so a run is reproducible
//! bit for bit.

mod adamax;
mod checkpoint;

pub use adamax::{adamax_step, AdamaxConfig, OptimizerState};
pub use checkpoint::{Checkpoint, ModelSpec, NamedParams, Provenance, SCHEMA_VERSION};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brackets::{rhs_with, MetriplecticModel};
use crate::error::{Error, Result};
use crate::nets::{mlp_forward, mlp_param_count, validate_widths, MlpParams, ModelConfig};
use crate::odeint::{solve, SolverConfig, Trajectory};
use crate::systems::{Dataset, Part, Segment, Split};
use crate::tape::{param_grad, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Short rollouts from random snapshots.
    Windowed,
    /// Rollouts from the first snapshot of a trajectory.
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: usize,
    pub batch_size: usize,
    /// Snapshots per rollout, `l`.
    pub rollout_len: usize,
    /// Largest offset in windowed mode, `n_max`.
    pub max_offset: usize,
    pub optimizer: AdamaxConfig,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Validation every this many steps.
    pub val_every: usize,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Windowed,
            steps: 30_000,
            batch_size: 20,
            rollout_len: 5,
            max_offset: 10,
            optimizer: AdamaxConfig::default(),
            solver: SolverConfig::default(),
            seed: 0,
            val_every: 100,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.rollout_len == 0 {
            return bad("rollout length must be at least 1");
        }
        if self.mode == TrainMode::Windowed && self.rollout_len > self.max_offset {
            return bad("rollout length cannot exceed the maximum offset in windowed mode");
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.val_every == 0 {
            return bad("validation cadence must be at least 1");
        }
        self.solver.validate()
    }
}

/// A parameterized vector field `ẋ = f(θ, x)` that can be trained.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn eval<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>>;
}

impl VectorField for ModelConfig {
    fn dim(&self) -> usize {
        self.n
    }
    fn param_count(&self) -> usize {
        ModelConfig::param_count(self)
    }
    fn eval<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>> {
        rhs_with(self, theta, x)
    }
}

/// Black-box MLP vector field `ℝⁿ → ℝⁿ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeField {
    pub widths: Vec<usize>,
}

impl NodeField {
    pub fn new(n: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = vec![n];
        widths.extend_from_slice(hidden);
        widths.push(n);
        validate_widths(&widths)?;
        Ok(Self { widths })
    }
}

impl VectorField for NodeField {
    fn dim(&self) -> usize {
        self.widths[0]
    }
    fn param_count(&self) -> usize {
        mlp_param_count(&self.widths)
    }
    fn eval<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>> {
        let v = mlp_forward(&self.widths, theta, x)?;
        if let Some(index) = v.iter().position(|y| !y.value().is_finite()) {
            return Err(Error::NonFiniteRhs { index });
        }
        Ok(v)
    }
}

/// Velocity of the NODE baseline at `x`.
pub fn node_baseline_rhs(mlp: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    mlp.forward(x)
}

/// Plain-value rollout of a vector field at the requested times.
pub fn rollout<F: VectorField>(
    field: &F,
    theta: &[f64],
    x0: &[f64],
    times: &[f64],
    solver: &SolverConfig,
) -> Result<Trajectory> {
    let states = solve(|_, x: &[f64]| field.eval(theta, x), x0, times, solver)?;
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}

/// Fills the unobserved coordinates with the straight line `s/T` through
/// `0` at the start and `1` at the end of the training horizon `T`.
pub fn init_unobserved_linear(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    if dataset.observable.iter().all(|&o| o) {
        return out;
    }
    let split_horizon = match dataset.split {
        Split::Temporal { t_train, .. } => Some(t_train),
        Split::Trajectories { .. } => None,
    };
    for traj in &mut out.trajectories {
        let t0 = traj.times[0];
        let horizon = split_horizon.unwrap_or(traj.times[traj.len() - 1] - t0);
        for (t, x) in traj.times.iter().zip(traj.states.iter_mut()) {
            let s = if horizon > 0.0 { (t - t0) / horizon } else { 0.0 };
            for (xi, &obs) in x.iter_mut().zip(&dataset.observable) {
                if !obs {
                    *xi = s;
                }
            }
        }
    }
    out
}

/// Loss over the masked coordinates of `pred[j]` against `target[j]`,
/// averaged over snapshots and coordinates.
pub fn trajectory_loss<S: Scalar>(pred: &[Vec<S>], target: &[&[f64]], mask: &[bool], kind: LossKind) -> S {
    let mut terms = Vec::new();
    for (p, t) in pred.iter().zip(target) {
        for i in 0..mask.len() {
            if mask[i] {
                let d = p[i] - t[i];
                terms.push(match kind {
                    LossKind::Mse => d.square(),
                    LossKind::Mae => d.abs(),
                });
            }
        }
    }
    let count = terms.len() as f64;
    S::sum(&terms) / count
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    /// Parameters with the best validation score.
    pub best_params: Vec<f64>,
    pub final_params: Vec<f64>,
    pub best_val: f64,
    pub best_step: usize,
    pub history: Vec<StepRecord>,
    pub skipped_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub val: Option<f64>,
}

struct Start {
    x0: Vec<f64>,
    times: Vec<f64>,
    targets: Vec<Vec<f64>>,
}

fn draw_starts(train: &[Segment], pool: &[(usize, usize)], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Start> {
    let picks: Vec<(usize, usize)> = match cfg.mode {
        TrainMode::Windowed => {
            if pool.len() >= cfg.batch_size {
                index::sample(rng, pool.len(), cfg.batch_size)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            } else {
                (0..cfg.batch_size).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            }
        }
        TrainMode::Origin => (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..train.len()), 0))
            .collect(),
    };
    picks
        .into_iter()
        .map(|(k, i)| {
            let traj = &train[k].traj;
            let max_off = match cfg.mode {
                TrainMode::Windowed => cfg.max_offset,
                TrainMode::Origin => traj.len() - 1,
            };
            let l = cfg.rollout_len.min(max_off);
            let mut offs: Vec<usize> = index::sample(rng, max_off, l).into_iter().map(|o| o + 1).collect();
            offs.sort_unstable();
            let mut times = vec![traj.times[i]];
            let mut targets = Vec::with_capacity(l);
            for o in offs {
                times.push(traj.times[i + o]);
                targets.push(traj.states[i + o].clone());
            }
            Start {
                x0: traj.states[i].clone(),
                times,
                targets,
            }
        })
        .collect()
}

fn element_loss_and_grad<F: VectorField>(
    field: &F,
    theta: &[f64],
    start: &Start,
    mask: &[bool],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    param_grad(theta, field.param_count(), |tape, th| {
        let x0: Vec<_> = start.x0.iter().map(|&v| tape.constant(v)).collect();
        let states = solve(|_, x| field.eval(th, x), &x0, &start.times, &cfg.solver)?;
        let targets: Vec<&[f64]> = start.targets.iter().map(Vec::as_slice).collect();
        Ok(trajectory_loss(&states[1..], &targets, mask, cfg.loss))
    })
}

/// Full-rollout loss on the scored rows of each segment, averaged over
/// segments. Returns infinity if any rollout fails.
pub fn rollout_score<F: VectorField>(
    field: &F,
    theta: &[f64],
    segments: &[Segment],
    mask: &[bool],
    solver: &SolverConfig,
    kind: LossKind,
) -> f64 {
    let scores: Vec<f64> = segments
        .par_iter()
        .map(|seg| {
            let tr = &seg.traj;
            match rollout(field, theta, &tr.states[0], &tr.times, solver) {
                Ok(pred) => {
                    let from = seg.score_from.max(1).min(tr.len() - 1);
                    let targets: Vec<&[f64]> = tr.states[from..].iter().map(Vec::as_slice).collect();
                    trajectory_loss(&pred.states[from..], &targets, mask, kind)
                }
                Err(e) => {
                    log::warn!("validation rollout failed: {e}");
                    f64::INFINITY
                }
            }
        })
        .collect();
    if scores.is_empty() {
        return f64::INFINITY;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Loss mask: observed coordinates, or everything if none is marked.
fn loss_mask(dataset: &Dataset) -> Vec<bool> {
    if dataset.observable.iter().any(|&o| o) {
        dataset.observable.clone()
    } else {
        vec![true; dataset.dim()]
    }
}

/// Trains `field` starting from `theta0`. The dataset's unobserved columns
/// must already be filled (see [`init_unobserved_linear`]).
pub fn fit<F: VectorField>(field: &F, theta0: Vec<f64>, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    dataset.validate()?;
    crate::error::check_len("dataset dimension", field.dim(), dataset.dim())?;
    crate::error::check_len("initial parameters", field.param_count(), theta0.len())?;

    let mask = loss_mask(dataset);
    let train = dataset.part(Part::Train);
    let mut val = dataset.part(Part::Val);
    if val.is_empty() {
        val = train.clone();
    }
    let pool: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(k, s)| {
            let last = s.traj.len().saturating_sub(cfg.max_offset);
            (0..last).map(move |i| (k, i))
        })
        .collect();
    let usable = match cfg.mode {
        TrainMode::Windowed => !pool.is_empty(),
        TrainMode::Origin => train.iter().all(|s| s.traj.len() >= 2) && !train.is_empty(),
    };
    if !usable {
        return Err(Error::InvalidArgument(
            "training segment is too short for the requested rollouts".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = theta0;
    let mut opt = OptimizerState::new(theta.len());
    let mut best_params = theta.clone();
    let mut best_val = rollout_score(field, &theta, &val, &mask, &cfg.solver, cfg.loss);
    let mut best_step = 0;
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let starts = draw_starts(&train, &pool, cfg, &mut rng);
        let results: Vec<Result<(f64, Vec<f64>)>> = starts
            .par_iter()
            .map(|s| element_loss_and_grad(field, &theta, s, &mask, cfg))
            .collect();

        let mut loss = 0.0;
        let mut grad = vec![0.0; theta.len()];
        let mut ok = 0usize;
        for r in results {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                    ok += 1;
                }
                Err(e) => log::warn!("step {step}: skipping batch element: {e}"),
            }
        }
        if ok == 0 {
            return Err(Error::TrainingAborted(format!(
                "every rollout in the batch failed at step {step}"
            )));
        }
        let scale = 1.0 / ok as f64;
        loss *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if loss.is_finite() {
            adamax_step(&mut opt, &mut theta, &grad, &cfg.optimizer)?;
        } else {
            opt.skipped += 1;
            log::warn!("step {step}: non-finite loss, update skipped");
        }

        let mut record = StepRecord { step, loss, val: None };
        if step % cfg.val_every == 0 || step == cfg.steps {
            let v = rollout_score(field, &theta, &val, &mask, &cfg.solver, cfg.loss);
            log::info!("step {step}: loss {loss:.6e}, validation {v:.6e}");
            if v < best_val {
                best_val = v;
                best_params = theta.clone();
                best_step = step;
            }
            record.val = Some(v);
        }
        history.push(record);
    }

    Ok(TrainResult {
        best_params,
        final_params: theta,
        best_val,
        best_step,
        history,
        skipped_steps: opt.skipped,
    })
}

/// Trains a metriplectic model and packages the selected parameters.
pub fn train(model: &MetriplecticModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, TrainResult)> {
    let result = fit(&model.config, model.params.clone(), dataset, cfg)?;
    let best = MetriplecticModel::from_params(model.config.clone(), result.best_params.clone())?;
    let mut ck = Checkpoint::from_nms(&best, provenance(cfg, &result));
    ck.observable = Some(dataset.observable.clone());
    Ok((ck, result))
}

/// Trains the NODE baseline with the same loop.
pub fn train_node(mlp: &MlpParams, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, TrainResult)> {
    let field = NodeField {
        widths: mlp.widths.clone(),
    };
    let result = fit(&field, mlp.params.clone(), dataset, cfg)?;
    let best = MlpParams {
        widths: mlp.widths.clone(),
        params: result.best_params.clone(),
    };
    let mut ck = Checkpoint::from_node(&best, provenance(cfg, &result));
    ck.observable = Some(dataset.observable.clone());
    Ok((ck, result))
}

fn provenance(cfg: &TrainConfig, r: &TrainResult) -> Provenance {
    Provenance {
        seed: cfg.seed,
        steps: cfg.steps,
        best_step: r.best_step,
        best_val: r.best_val,
        skipped_steps: r.skipped_steps,
        config_hash: String::new(),
    }
}
