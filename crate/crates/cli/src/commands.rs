use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use nms_core::metrics::{evaluate, max_degeneracy, scaling_table, simulate, Dynamics, Thermo};
use nms_core::systems::{generate_dataset, Benchmark, Part, Segment, SplitSpec};
use nms_core::training::{init_unobserved_linear, train_node, LossKind, ModelSpec, TrainMode};
use nms_core::{Checkpoint, MetriplecticModel, MlpParams, SystemSpec, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_observe, ModelKind, RunConfig};
use crate::io;
use crate::{CheckArgs, EvalArgs, GenArgs, RolloutArgs, ScalingArgs, SolverFlags, TrainArgs};

/// 2 for integrator failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    use nms_core::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Stiffness { .. }
                | E::NonFiniteStage { .. }
                | E::StepUnderflow { .. }
                | E::NonFiniteRhs { .. }
                | E::TrainingAborted(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|_| anyhow!("bad {what} value `{t}`")))
        .collect()
}

fn parse_split(s: &str) -> Result<SplitSpec> {
    let (kind, rest) = s.split_once(':').ok_or_else(|| anyhow!("split must look like `temporal:a,b,c` or `traj:a,b`"))?;
    let v: Vec<f64> = parse_list(rest, "split")?;
    let spec = match (kind, v.as_slice()) {
        ("temporal", [a, b, c]) => SplitSpec::Temporal {
            t_train: *a,
            t_val: *b,
            t_test: *c,
        },
        ("traj", [a, b]) => SplitSpec::Trajectories {
            train_frac: *a,
            val_frac: *b,
        },
        _ => bail!("unrecognized split `{s}`"),
    };
    spec.validate()?;
    Ok(spec)
}

fn apply_solver_flags(cfg: &mut RunConfig, f: &SolverFlags) -> Result<()> {
    if let Some(m) = &f.solver {
        cfg.solver.method = match m.as_str() {
            "dopri5" => nms_core::odeint::Method::Dopri5,
            "rk4" => nms_core::odeint::Method::Rk4,
            _ => bail!("unknown solver `{m}` (dopri5 or rk4)"),
        };
    }
    if let Some(v) = f.rtol {
        cfg.solver.rtol = v;
    }
    if let Some(v) = f.atol {
        cfg.solver.atol = v;
    }
    if let Some(v) = f.solver_dt {
        cfg.solver.dt = v;
    }
    if let Some(v) = f.max_steps {
        cfg.solver.max_steps = v;
    }
    cfg.solver.solver().validate()?;
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn default_mask(system: &str) -> Option<Vec<bool>> {
    SystemSpec::from_name(system).ok().map(|s| s.observable_mask())
}

pub fn gen(a: &GenArgs) -> Result<ExitCode> {
    let sys = SystemSpec::from_name(&a.system)?;
    let n = Benchmark::dim(&sys);
    let ics: Vec<Vec<f64>> = if !a.ic.is_empty() {
        a.ic.iter()
            .map(|s| {
                let x: Vec<f64> = parse_list(s, "initial condition")?;
                if x.len() != n {
                    bail!("initial condition has {} values, {} expects {n}", x.len(), a.system);
                }
                sys.check_domain(&x)?;
                Ok(x)
            })
            .collect::<Result<_>>()?
    } else if let Some(k) = a.n_ics {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (0..k).map(|_| sys.sample_state(&mut rng)).collect()
    } else {
        vec![sys.default_ic()]
    };
    let split = match &a.split {
        Some(s) => parse_split(s)?,
        None => SplitSpec::Trajectories {
            train_frac: 1.0,
            val_frac: 0.0,
        },
    };
    let mut ds = generate_dataset(&sys, &ics, a.dt, a.steps, split, a.seed)?;
    ds.system = a.system.clone();
    if a.downsample > 1 {
        ds = ds.downsample(a.downsample)?;
    }
    io::write_dataset(&a.out, &ds)?;
    eprintln!(
        "wrote {} trajectories of {} to {}",
        ds.trajectories.len(),
        a.system,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&a.config)?;
    if let Some(v) = &a.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = &a.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.model {
        cfg.model.kind = v;
    }
    if let Some(m) = &a.mode {
        cfg.train.mode = match m.as_str() {
            "windowed" => TrainMode::Windowed,
            "origin" => TrainMode::Origin,
            _ => bail!("unknown training mode `{m}` (windowed or origin)"),
        };
    }
    if let Some(v) = &a.observe {
        cfg.train.observe = Some(v.clone());
    }
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.rollout_len {
        cfg.train.rollout_len = v;
    }
    if let Some(v) = a.max_offset {
        cfg.train.max_offset = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.val_every {
        cfg.train.val_every = v;
    }
    if let Some(l) = &a.loss {
        cfg.train.loss = match l.as_str() {
            "mse" => LossKind::Mse,
            "mae" => LossKind::Mae,
            _ => bail!("unknown loss `{l}` (mse or mae)"),
        };
    }
    if let Some(v) = a.rank {
        cfg.model.rank = v;
    }
    if let Some(v) = &a.hidden {
        cfg.model.hidden = parse_list(v, "hidden width")?;
    }
    if let Some(v) = &a.hidden_s {
        cfg.model.hidden_s = Some(parse_list(v, "hidden width")?);
    }
    apply_solver_flags(&mut cfg, &a.solver)?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<ExitCode> {
    let cfg = train_run_config(a)?;
    let data = cfg.data.clone().ok_or_else(|| anyhow!("no dataset given (--data or `data` in the config)"))?;
    let out = cfg.out.clone().ok_or_else(|| anyhow!("no checkpoint path given (--out or `out` in the config)"))?;
    let mut ds = io::read_dataset(&data)?;
    let n = ds.dim();
    if let Some(spec) = &cfg.train.observe {
        ds.observable = parse_observe(spec, n, default_mask(&ds.system).as_deref())?;
    }
    let filled = init_unobserved_linear(&ds);
    let tcfg = cfg.train_config();
    let (mut ck, result) = match cfg.model.kind {
        ModelKind::Nms => {
            let model = MetriplecticModel::new(cfg.model.model_config(n), cfg.seed)?;
            nms_core::training::train(&model, &filled, &tcfg)?
        }
        ModelKind::Node => {
            let mlp = MlpParams::init(&cfg.model.node_widths(n), cfg.seed)?;
            train_node(&mlp, &filled, &tcfg)?
        }
    };
    ck.provenance.config_hash = cfg.hash();
    io::write_json(&out, &ck)?;

    let loss_path = a.loss_out.clone().unwrap_or_else(|| out.with_extension("loss.csv"));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&loss_path)
        .with_context(|| format!("creating {}", loss_path.display()))?;
    w.write_record(["step", "loss", "val"])?;
    for r in &result.history {
        let val = r.val.map(|v| format!("{v:.16e}")).unwrap_or_default();
        w.write_record([r.step.to_string(), format!("{:.16e}", r.loss), val])?;
    }
    w.flush()?;
    eprintln!(
        "best validation {:.6e} at step {} ({} skipped updates); checkpoint {}",
        result.best_val,
        result.best_step,
        result.skipped_steps,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// A checkpoint turned back into something that can be integrated.
enum Loaded {
    Nms(MetriplecticModel),
    Node(MlpParams),
}

impl Loaded {
    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        Ok(match ck.model {
            ModelSpec::Nms(_) => Loaded::Nms(ck.to_nms()?),
            ModelSpec::Node { .. } => Loaded::Node(ck.to_node()?),
        })
    }

    fn dynamics(&self) -> &dyn Dynamics {
        match self {
            Loaded::Nms(m) => m,
            Loaded::Node(m) => m,
        }
    }
}

fn write_thermo_csv(path: &Path, th: &dyn Thermo, tr: &Trajectory) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["t", "energy", "entropy", "entropy_rate"])?;
    for (t, x) in tr.times.iter().zip(&tr.states) {
        let v = th.velocity(x)?;
        let g = th.entropy_gradient(x)?;
        let rate: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        w.write_record([
            format!("{t:.16e}"),
            format!("{:.16e}", th.energy_at(x)?),
            format!("{:.16e}", th.entropy_at(x)?),
            format!("{rate:.16e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    apply_solver_flags(&mut cfg, &a.solver)?;
    let solver = cfg.solver.solver();
    let mut ds = io::read_dataset(&a.data)?;
    let n = ds.dim();

    let mut exact: Option<SystemSpec> = None;
    let mut loaded: Option<Loaded> = None;
    match (&a.checkpoint, a.exact) {
        (Some(_), true) => bail!("give either --checkpoint or --exact, not both"),
        (None, false) => bail!("nothing to evaluate: pass --checkpoint or --exact"),
        (None, true) => {
            exact = Some(
                SystemSpec::from_name(&ds.system)
                    .with_context(|| format!("dataset system `{}` is not a known benchmark", ds.system))?,
            );
        }
        (Some(p), false) => {
            let ck: Checkpoint = io::read_json(p)?;
            let l = Loaded::from_checkpoint(&ck)?;
            if l.dynamics().dim() != n {
                bail!("checkpoint dimension {} does not match dataset dimension {n}", l.dynamics().dim());
            }
            if let Some(obs) = &ck.observable {
                ds.observable = obs.clone();
            }
            ds = init_unobserved_linear(&ds);
            loaded = Some(l);
        }
    }
    let (d, thermo): (&dyn Dynamics, Option<&dyn Thermo>) = match (&exact, &loaded) {
        (Some(s), _) => (s, Some(s)),
        (None, Some(Loaded::Nms(m))) => (m, Some(m)),
        (None, Some(Loaded::Node(m))) => (m, None),
        (None, None) => unreachable!(),
    };
    let mask = if ds.observable.iter().any(|&o| o) {
        ds.observable.clone()
    } else {
        vec![true; n]
    };
    let segments: Vec<Segment> = match a.part.as_str() {
        "train" => ds.part(Part::Train),
        "val" => ds.part(Part::Val),
        "test" => ds.part(Part::Test),
        "all" => ds
            .trajectories
            .iter()
            .map(|t| Segment {
                traj: t.clone(),
                score_from: 0,
            })
            .collect(),
        other => bail!("unknown part `{other}` (train, val, test or all)"),
    };
    if segments.is_empty() {
        bail!("dataset has no `{}` segment", a.part);
    }
    let (mut report, comparisons) = evaluate(d, thermo, &segments, &mask, &solver)?;
    if let Some(Loaded::Nms(m)) = &loaded {
        let states: Vec<Vec<f64>> = comparisons.iter().flat_map(|c| c.full_prediction.states.clone()).collect();
        let (l, mdeg) = max_degeneracy(m, &states)?;
        report.max_l_degeneracy = Some(l);
        report.max_m_degeneracy = Some(mdeg);
    }
    match &a.out {
        Some(p) => io::write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if let Some(dir) = &a.traj_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (k, c) in comparisons.iter().enumerate() {
            io::write_trajectories(&dir.join(format!("seg{k}_truth.csv")), &[&c.truth])?;
            io::write_trajectories(&dir.join(format!("seg{k}_pred.csv")), &[&c.prediction])?;
            if let Some(th) = thermo {
                write_thermo_csv(&dir.join(format!("seg{k}_thermo.csv")), th, &c.full_prediction)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn rollout(a: &RolloutArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    apply_solver_flags(&mut cfg, &a.solver)?;
    let ck: Checkpoint = io::read_json(&a.checkpoint)?;
    let loaded = Loaded::from_checkpoint(&ck)?;
    let d = loaded.dynamics();
    let x0: Vec<f64> = parse_list(&a.ic, "initial condition")?;
    if x0.len() != d.dim() {
        bail!("initial condition has {} values, model expects {}", x0.len(), d.dim());
    }
    if !(a.horizon > 0.0 && a.horizon.is_finite()) || a.points < 2 {
        bail!("need a positive horizon and at least two output points");
    }
    let times: Vec<f64> = (0..a.points)
        .map(|i| a.horizon * i as f64 / (a.points - 1) as f64)
        .collect();
    let tr = simulate(d, &x0, &times, &cfg.solver.solver())?;
    io::write_trajectories(&a.out, &[&tr])?;
    Ok(ExitCode::SUCCESS)
}

const SKEW_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const DEGENERACY_TOL: f64 = 1e-10;

pub fn check(a: &CheckArgs) -> Result<ExitCode> {
    let model = match &a.checkpoint {
        Some(p) => {
            let ck: Checkpoint = io::read_json(p)?;
            ck.to_nms()?
        }
        None => {
            let hidden: Vec<usize> = parse_list(&a.hidden, "hidden width")?;
            MetriplecticModel::new(nms_core::ModelConfig::uniform(a.n, a.rank, &hidden), a.seed)?
        }
    };
    if a.states == 0 {
        bail!("need at least one state");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst = [0.0f64; 6];
    let mut min_eig = 0.0f64;
    for _ in 0..a.states {
        let x = model.random_state(&mut rng, a.scale);
        let op = model.operators(&x)?;
        let r = nms_core::brackets::structure_residuals(&op);
        let scale_l = op.l.max_abs().max(1.0);
        let scale_m = op.m.max_abs().max(1.0);
        worst[0] = worst[0].max(r.skew / scale_l);
        worst[1] = worst[1].max(r.symmetry / scale_m);
        min_eig = min_eig.min(r.min_eig_rel);
        worst[3] = worst[3].max(r.l_degeneracy);
        worst[4] = worst[4].max(r.m_degeneracy);
        worst[5] = worst[5].max(model.jacobi_residual(&x, 1e-5)?);
    }
    let rows = [
        ("skew |L+L^T|/|L|", worst[0], Some(SKEW_TOL)),
        ("symmetry |M-M^T|/|M|", worst[1], Some(SKEW_TOL)),
        ("psd -min eig(M)/|M|", -min_eig, Some(PSD_TOL)),
        ("degeneracy |L dS|", worst[3], Some(DEGENERACY_TOL)),
        ("degeneracy |M dE|", worst[4], Some(DEGENERACY_TOL)),
        ("jacobi residual", worst[5], None),
    ];
    println!("{:<24} {:>12} {:>10}  status", "check", "worst", "tolerance");
    let mut ok = true;
    for (name, v, tol) in rows {
        let (tol_s, status) = match tol {
            Some(t) => {
                let pass = v <= t;
                ok &= pass;
                (format!("{t:.0e}"), if pass { "ok" } else { "FAIL" })
            }
            None => ("-".to_string(), "info"),
        };
        println!("{name:<24} {v:>12.3e} {tol_s:>10}  {status}");
    }
    println!("{} states, n = {}, r = {}", a.states, model.n(), model.config.r);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn scaling(a: &ScalingArgs) -> Result<ExitCode> {
    let ns: Vec<usize> = parse_list(&a.n_list, "dimension")?;
    let rows = scaling_table(&ns, a.rank, a.trials, a.seed)?;
    let sink: Box<dyn std::io::Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(["n", "r", "nms", "gnode", "gfinn", "weights", "rhs_seconds"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.r.to_string(),
            r.nms.to_string(),
            r.gnode.to_string(),
            r.gfinn.to_string(),
            r.weights.to_string(),
            r.rhs_seconds.map(|s| format!("{s:.6e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}
