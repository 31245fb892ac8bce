//! Error metrics, thermodynamic diagnostics, parameter counts and the
//! parameter-noise error-growth probe.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brackets::MetriplecticModel;
use crate::dense::dot_f64;
use crate::error::{check_len, Error, Result};
use crate::nets::{choose2, MlpParams, ModelConfig};
use crate::odeint::{solve, SolverConfig, Trajectory};
use crate::systems::{Benchmark, Segment, SystemSpec};

/// Header line describing the error conventions used in every report.
pub const LOSS_CONVENTION: &str =
    "mse: mean over snapshots and observed coordinates of the squared error; mae: same mean of the absolute error";

/// An autonomous vector field with plain-value evaluation.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Dynamics with an energy and an entropy.
pub trait Thermo: Dynamics {
    fn energy_at(&self, x: &[f64]) -> Result<f64>;
    fn entropy_at(&self, x: &[f64]) -> Result<f64>;
    fn entropy_gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Dynamics for MetriplecticModel {
    fn dim(&self) -> usize {
        self.n()
    }
    fn velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.rhs(x)
    }
}

impl Thermo for MetriplecticModel {
    fn energy_at(&self, x: &[f64]) -> Result<f64> {
        self.energy(x)
    }
    fn entropy_at(&self, x: &[f64]) -> Result<f64> {
        self.entropy(x)
    }
    fn entropy_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.fields(x)?.grad_s)
    }
}

impl Dynamics for SystemSpec {
    fn dim(&self) -> usize {
        Benchmark::dim(self)
    }
    fn velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.rhs(x)
    }
}

impl Thermo for SystemSpec {
    fn energy_at(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.energy(x))
    }
    fn entropy_at(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.entropy(x))
    }
    fn entropy_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad_entropy(x)
    }
}

impl Dynamics for MlpParams {
    fn dim(&self) -> usize {
        self.input_dim()
    }
    fn velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// Integrates `d` from `x0` and samples at `times`.
pub fn simulate<D: Dynamics + ?Sized>(d: &D, x0: &[f64], times: &[f64], solver: &SolverConfig) -> Result<Trajectory> {
    let states = solve(|_, x: &[f64]| d.velocity(x), x0, times, solver)?;
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}

fn check_grids(a: &Trajectory, b: &Trajectory, mask: &[bool]) -> Result<()> {
    check_len("trajectory rows", a.len(), b.len())?;
    check_len("trajectory state", a.dim(), b.dim())?;
    check_len("coordinate mask", a.dim(), mask.len())?;
    for (s, t) in a.times.iter().zip(&b.times) {
        if (s - t).abs() > 1e-9 * s.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("time grids differ ({s} vs {t})")));
        }
    }
    Ok(())
}

fn masked_mean(a: &Trajectory, b: &Trajectory, mask: &[bool], f: impl Fn(f64) -> f64) -> Result<f64> {
    check_grids(a, b, mask)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (x, y) in a.states.iter().zip(&b.states) {
        for i in 0..mask.len() {
            if mask[i] {
                acc += f(x[i] - y[i]);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty trajectory or coordinate mask".into()));
    }
    Ok(acc / count as f64)
}

/// Mean squared error over snapshots and masked coordinates.
pub fn mse(a: &Trajectory, b: &Trajectory, mask: &[bool]) -> Result<f64> {
    masked_mean(a, b, mask, |d| d * d)
}

/// Mean absolute error over snapshots and masked coordinates.
pub fn mae(a: &Trajectory, b: &Trajectory, mask: &[bool]) -> Result<f64> {
    masked_mean(a, b, mask, f64::abs)
}

/// Mean squared error of each coordinate separately.
pub fn per_coordinate_mse(a: &Trajectory, b: &Trajectory) -> Result<Vec<f64>> {
    let mask = vec![true; a.dim()];
    check_grids(a, b, &mask)?;
    let rows = a.len().max(1) as f64;
    Ok((0..a.dim())
        .map(|i| a.states.iter().zip(&b.states).map(|(x, y)| (x[i] - y[i]).powi(2)).sum::<f64>() / rows)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    /// `max_t |E(x_t) - E(x_0)|`.
    pub energy_drift: f64,
    /// Drift divided by `max(|E(x_0)|, 1e-300)`.
    pub relative_drift: f64,
    /// Smallest increment `S(x_{t+1}) - S(x_t)`; zero for a single snapshot.
    pub entropy_violation: f64,
    /// `∇S(x_t)·ẋ(x_t)` at every snapshot.
    pub entropy_rate: Vec<f64>,
    pub energy: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl ConservationReport {
    pub fn min_entropy_rate(&self) -> f64 {
        self.entropy_rate.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Energy drift and entropy monotonicity of `m`'s own `E`, `S` along `traj`.
/// The entropy rate uses `m`'s vector field.
pub fn conservation_report<M: Thermo + ?Sized>(m: &M, traj: &Trajectory) -> Result<ConservationReport> {
    let energy = traj.states.iter().map(|x| m.energy_at(x)).collect::<Result<Vec<_>>>()?;
    let entropy = traj.states.iter().map(|x| m.entropy_at(x)).collect::<Result<Vec<_>>>()?;
    let entropy_rate = traj
        .states
        .iter()
        .map(|x| Ok(dot_f64(&m.entropy_gradient(x)?, &m.velocity(x)?)))
        .collect::<Result<Vec<_>>>()?;
    let e0 = energy.first().copied().unwrap_or(0.0);
    let energy_drift = energy.iter().fold(0.0f64, |d, e| d.max((e - e0).abs()));
    let entropy_violation = entropy.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::min);
    Ok(ConservationReport {
        energy_drift,
        relative_drift: energy_drift / e0.abs().max(1e-300),
        entropy_violation,
        entropy_rate,
        energy,
        entropy,
    })
}

/// Energy drift of an externally given energy along `traj`.
pub fn energy_drift(energy: impl Fn(&[f64]) -> Result<f64>, traj: &Trajectory) -> Result<f64> {
    let e = traj.states.iter().map(|x| energy(x)).collect::<Result<Vec<_>>>()?;
    let e0 = e.first().copied().unwrap_or(0.0);
    Ok(e.iter().fold(0.0f64, |d, v| d.max((v - e0).abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub convention: String,
    pub mse: f64,
    pub mae: f64,
    /// Squared error per coordinate, averaged over scored snapshots and segments.
    pub per_coordinate_mse: Vec<f64>,
    pub energy_drift: Option<f64>,
    pub relative_energy_drift: Option<f64>,
    pub entropy_violation: Option<f64>,
    pub min_entropy_rate: Option<f64>,
    pub max_l_degeneracy: Option<f64>,
    pub max_m_degeneracy: Option<f64>,
    /// Median seconds per vector field evaluation.
    pub rhs_seconds_median: f64,
}

/// Ground truth and prediction of one evaluated segment, restricted to the
/// scored rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub truth: Trajectory,
    pub prediction: Trajectory,
    /// Full prediction from the segment start.
    pub full_prediction: Trajectory,
}

fn scored(tr: &Trajectory, from: usize) -> Trajectory {
    Trajectory {
        times: tr.times[from..].to_vec(),
        states: tr.states[from..].to_vec(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Median wall time of `trials` evaluations of `d` at the given states.
pub fn median_rhs_seconds<D: Dynamics + ?Sized>(d: &D, states: &[Vec<f64>], trials: usize) -> f64 {
    let times: Vec<f64> = (0..trials)
        .filter_map(|i| {
            let x = &states[i % states.len()];
            let t = Instant::now();
            let out = d.velocity(x);
            let dt = t.elapsed().as_secs_f64();
            std::hint::black_box(out).ok().map(|_| dt)
        })
        .collect();
    median(times)
}

/// Rolls `d` out over every segment and collects error statistics.
/// `thermo` (the model's own energy/entropy, or an exact one) adds the
/// conservation diagnostics along the predictions.
pub fn evaluate<D: Dynamics + ?Sized>(
    d: &D,
    thermo: Option<&dyn Thermo>,
    segments: &[Segment],
    mask: &[bool],
    solver: &SolverConfig,
) -> Result<(EvalReport, Vec<Comparison>)> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let comparisons = segments
        .par_iter()
        .map(|seg| {
            let tr = &seg.traj;
            let pred = simulate(d, &tr.states[0], &tr.times, solver)?;
            let from = seg.score_from.min(tr.len() - 1);
            Ok(Comparison {
                truth: scored(tr, from),
                prediction: scored(&pred, from),
                full_prediction: pred,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = comparisons.len() as f64;
    let mut report = EvalReport {
        convention: LOSS_CONVENTION.to_string(),
        mse: 0.0,
        mae: 0.0,
        per_coordinate_mse: vec![0.0; mask.len()],
        energy_drift: None,
        relative_energy_drift: None,
        entropy_violation: None,
        min_entropy_rate: None,
        max_l_degeneracy: None,
        max_m_degeneracy: None,
        rhs_seconds_median: 0.0,
    };
    for c in &comparisons {
        report.mse += mse(&c.truth, &c.prediction, mask)? / k;
        report.mae += mae(&c.truth, &c.prediction, mask)? / k;
        for (acc, v) in report.per_coordinate_mse.iter_mut().zip(per_coordinate_mse(&c.truth, &c.prediction)?) {
            *acc += v / k;
        }
    }
    if let Some(th) = thermo {
        let mut drift: f64 = 0.0;
        let mut rel: f64 = 0.0;
        let mut viol: f64 = 0.0;
        let mut rate = f64::INFINITY;
        for c in &comparisons {
            let r = conservation_report(th, &c.full_prediction)?;
            drift = drift.max(r.energy_drift);
            rel = rel.max(r.relative_drift);
            viol = viol.min(r.entropy_violation);
            rate = rate.min(r.min_entropy_rate());
        }
        report.energy_drift = Some(drift);
        report.relative_energy_drift = Some(rel);
        report.entropy_violation = Some(viol);
        report.min_entropy_rate = Some(rate);
    }
    let states: Vec<Vec<f64>> = comparisons.iter().flat_map(|c| c.full_prediction.states.clone()).collect();
    report.rhs_seconds_median = median_rhs_seconds(d, &states, states.len().min(200));
    Ok((report, comparisons))
}

/// Worst structural residuals of a learned model over `states`.
pub fn max_degeneracy(model: &MetriplecticModel, states: &[Vec<f64>]) -> Result<(f64, f64)> {
    let mut l: f64 = 0.0;
    let mut m: f64 = 0.0;
    for x in states {
        let r = model.structure_residuals(x)?;
        l = l.max(r.l_degeneracy);
        m = m.max(r.m_degeneracy);
    }
    Ok((l, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Nms,
    Gnode,
    Gfinn,
}

/// Number of learnable scalar functions of each architecture.
pub fn param_count(arch: Architecture, n: usize, r: usize) -> Result<usize> {
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("need 1 <= r <= n, got r = {r}, n = {n}")));
    }
    Ok(match arch {
        Architecture::Nms => ((n + r) * (n + r) - (n - r)) / 2 + 2,
        Architecture::Gnode => {
            let c3 = if n >= 3 { n * (n - 1) * (n - 2) / 6 } else { 0 };
            c3 + r * choose2(n) + choose2(r + 1) + 2
        }
        Architecture::Gfinn => r * n * (n - 1) + r * r + 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub r: usize,
    pub nms: usize,
    pub gnode: usize,
    pub gfinn: usize,
    /// Weights of the timed model.
    pub weights: usize,
    /// Median seconds per evaluation of the model's vector field; `None`
    /// where no model can be built (n < 2).
    pub rhs_seconds: Option<f64>,
}

/// Hidden width giving a one-hidden-layer model of roughly `target` weights.
fn width_for_budget(n: usize, r: usize, target: usize) -> usize {
    let count = |w: usize| ModelConfig::uniform(n, r, &[w]).param_count();
    let mut w = 1;
    while w < 4096 && count(w) < target {
        w += 1;
    }
    w
}

/// Counts for every `n` (with rank `min(r, n)`) and the median rhs time of a
/// model sized near 20,000 weights over `trials` random states.
pub fn scaling_table(n_list: &[usize], r: usize, trials: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    if n_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("n list must be sorted".into()));
    }
    n_list
        .iter()
        .map(|&n| {
            let r = r.min(n).max(1);
            let mut row = ScalingRow {
                n,
                r,
                nms: param_count(Architecture::Nms, n, r)?,
                gnode: param_count(Architecture::Gnode, n, r)?,
                gfinn: param_count(Architecture::Gfinn, n, r)?,
                weights: 0,
                rhs_seconds: None,
            };
            if n >= 2 && trials > 0 {
                let w = width_for_budget(n, r, 20_000);
                let model = MetriplecticModel::new(ModelConfig::uniform(n, r, &[w]), seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
                let states: Vec<Vec<f64>> = (0..trials).map(|_| model.random_state(&mut rng, 1.0)).collect();
                row.weights = model.param_count();
                row.rhs_seconds = Some(median_rhs_seconds(&model, &states, trials));
            }
            Ok(row)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub eps: f64,
    /// Mean over noise seeds of `‖x - x̃‖` in `L²[0, T]`; `None` if every
    /// perturbed rollout failed.
    pub error: Option<f64>,
    pub per_seed: Vec<Option<f64>>,
}

/// `L²[0,T]` norm of the difference of two trajectories on the same grid,
/// by the trapezoidal rule.
pub fn l2_time_error(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_grids(a, b, &vec![true; a.dim()])?;
    let sq: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum())
        .collect();
    let mut acc = 0.0;
    for i in 1..sq.len() {
        acc += 0.5 * (sq[i] + sq[i - 1]) * (a.times[i] - a.times[i - 1]);
    }
    Ok(acc.sqrt())
}

/// Integrates `model` and Gaussian parameter perturbations of it from `x0`
/// over `[0, horizon]` and reports the trajectory error for every `ε`.
pub fn error_growth_probe(
    model: &MetriplecticModel,
    eps_list: &[f64],
    horizon: f64,
    x0: &[f64],
    seeds: &[u64],
    points: usize,
    solver: &SolverConfig,
) -> Result<Vec<ProbeRow>> {
    if eps_list.iter().any(|e| !(*e >= 0.0)) || eps_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("noise scales must be nonnegative and ascending".into()));
    }
    if !(horizon > 0.0) || points < 2 || seeds.is_empty() {
        return Err(Error::InvalidArgument("probe needs a positive horizon, two points and a seed".into()));
    }
    let times: Vec<f64> = (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect();
    let reference = simulate(model, x0, &times, solver)?;
    let rows = eps_list
        .iter()
        .map(|&eps| {
            let per_seed: Vec<Option<f64>> = seeds
                .par_iter()
                .map(|&s| {
                    let m = model.perturbed(eps, s);
                    match simulate(&m, x0, &times, solver).and_then(|tr| l2_time_error(&reference, &tr)) {
                        Ok(e) => Some(e),
                        Err(err) => {
                            log::warn!("probe rollout failed at eps = {eps}, seed {s}: {err}");
                            None
                        }
                    }
                })
                .collect();
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let error = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
            ProbeRow { eps, error, per_seed }
        })
        .collect();
    Ok(rows)
}
