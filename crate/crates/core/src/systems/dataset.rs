//! Reference trajectories and their train / validation / test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odeint::{rk4_step, Trajectory};

use super::{Benchmark, SystemSpec};

/// How to split generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// One time axis cut at `t_train < t_val < t_test`.
    Temporal { t_train: f64, t_val: f64, t_test: f64 },
    /// Whole trajectories assigned at random; the remainder goes to test.
    Trajectories { train_frac: f64, val_frac: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Split {
    Temporal { t_train: f64, t_val: f64, t_test: f64 },
    Trajectories {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// A trajectory prefix together with the first row that counts towards the
/// error of a split part. Rollouts always start from the first row.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub traj: Trajectory,
    pub score_from: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub system: String,
    pub dt: f64,
    pub observable: Vec<bool>,
    pub trajectories: Vec<Trajectory>,
    pub split: Split,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Temporal { t_train, t_val, t_test } => {
                if !(0.0 < t_train && t_train < t_val && t_val < t_test) {
                    return Err(Error::InvalidArgument(format!(
                        "split times must satisfy 0 < train < val < test, got {t_train}, {t_val}, {t_test}"
                    )));
                }
            }
            SplitSpec::Trajectories { train_frac, val_frac } => {
                if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "bad split fractions {train_frac}, {val_frac}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn last_index_at_or_before(times: &[f64], t: f64) -> usize {
    let eps = 1e-9 * t.abs().max(1.0);
    times.iter().rposition(|&s| s <= t + eps).unwrap_or(0)
}

fn prefix(traj: &Trajectory, end: usize) -> Trajectory {
    Trajectory {
        times: traj.times[..=end].to_vec(),
        states: traj.states[..=end].to_vec(),
    }
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.observable.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::InvalidArgument("dataset has no trajectories".into()));
        }
        for t in &self.trajectories {
            t.validate()?;
            crate::error::check_len("dataset state", self.dim(), t.dim())?;
            if t.is_empty() {
                return Err(Error::InvalidArgument("empty trajectory".into()));
            }
        }
        if let Split::Trajectories { train, val, test } = &self.split {
            let n = self.trajectories.len();
            if train.is_empty() || train.iter().chain(val).chain(test).any(|&i| i >= n) {
                return Err(Error::InvalidArgument("bad trajectory split indices".into()));
            }
        }
        Ok(())
    }

    /// Segments belonging to one part of the split.
    pub fn part(&self, part: Part) -> Vec<Segment> {
        match &self.split {
            Split::Temporal { t_train, t_val, t_test } => {
                let (start, end) = match part {
                    Part::Train => (None, *t_train),
                    Part::Val => (Some(*t_train), *t_val),
                    Part::Test => (Some(*t_val), *t_test),
                };
                self.trajectories
                    .iter()
                    .filter_map(|tr| {
                        let e = last_index_at_or_before(&tr.times, end);
                        let s = match start {
                            None => 0,
                            Some(t0) => last_index_at_or_before(&tr.times, t0) + 1,
                        };
                        (s <= e && e >= 1).then(|| Segment {
                            traj: prefix(tr, e),
                            score_from: s,
                        })
                    })
                    .collect()
            }
            Split::Trajectories { train, val, test } => {
                let idx = match part {
                    Part::Train => train,
                    Part::Val => val,
                    Part::Test => test,
                };
                idx.iter()
                    .map(|&i| Segment {
                        traj: self.trajectories[i].clone(),
                        score_from: 0,
                    })
                    .collect()
            }
        }
    }

    /// Keeps every `k`-th row.
    pub fn downsample(&self, k: usize) -> Result<Dataset> {
        if k == 0 {
            return Err(Error::InvalidArgument("downsampling factor must be positive".into()));
        }
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| Trajectory {
                times: t.times.iter().step_by(k).copied().collect(),
                states: t.states.iter().step_by(k).cloned().collect(),
            })
            .collect();
        Ok(Dataset {
            dt: self.dt * k as f64,
            trajectories,
            ..self.clone()
        })
    }
}

/// Integrates `sys` with RK4 from every initial condition.
///
/// A trajectory that leaves the physical domain is truncated at the last
/// valid state with a warning.
pub fn generate_dataset(
    sys: &SystemSpec,
    ics: &[Vec<f64>],
    dt: f64,
    steps: usize,
    split: SplitSpec,
    seed: u64,
) -> Result<Dataset> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if ics.is_empty() {
        return Err(Error::InvalidArgument("no initial conditions".into()));
    }
    split.validate()?;
    if let SplitSpec::Temporal { t_test, .. } = split {
        if t_test > steps as f64 * dt * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "test horizon {t_test} exceeds generated horizon {}",
                steps as f64 * dt
            )));
        }
    }
    for x0 in ics {
        crate::error::check_len("initial condition", sys.dim(), x0.len())?;
        sys.check_domain(x0)?;
    }

    let trajectories = ics
        .par_iter()
        .enumerate()
        .map(|(k, x0)| integrate_truncating(sys, x0, dt, steps, k))
        .collect::<Result<Vec<_>>>()?;

    let split = match split {
        SplitSpec::Temporal { t_train, t_val, t_test } => Split::Temporal { t_train, t_val, t_test },
        SplitSpec::Trajectories { train_frac, val_frac } => {
            let n = trajectories.len();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n);
            let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
            let mut train = idx[..n_train].to_vec();
            let mut val = idx[n_train..n_train + n_val].to_vec();
            let mut test = idx[n_train + n_val..].to_vec();
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
            Split::Trajectories { train, val, test }
        }
    };

    let ds = Dataset {
        system: sys.name().to_string(),
        dt,
        observable: sys.observable_mask(),
        trajectories,
        split,
    };
    ds.validate()?;
    Ok(ds)
}

fn integrate_truncating(sys: &SystemSpec, x0: &[f64], dt: f64, steps: usize, k: usize) -> Result<Trajectory> {
    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut f = |_t: f64, x: &[f64]| sys.rhs(x);
    for s in 0..steps {
        let t = s as f64 * dt;
        match rk4_step(&mut f, t, states.last().unwrap(), dt) {
            Ok(next) => match sys.check_domain(&next) {
                Ok(()) => {
                    times.push((s + 1) as f64 * dt);
                    states.push(next);
                }
                Err(e) => {
                    log::warn!("trajectory {k} truncated at t = {t}: {e}");
                    break;
                }
            },
            Err(e @ Error::Domain { .. }) => {
                log::warn!("trajectory {k} truncated at t = {t}: {e}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Trajectory::new(times, states)
}
