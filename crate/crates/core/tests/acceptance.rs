//! Acceptance checks 1 to 9. Prints one line per criterion and exits
//! nonzero if any of them fails.

use std::process::ExitCode;
use std::time::Instant;

use nms_core::brackets::{assemble_l, assemble_m, matricized_l, matricized_m, rhs_with, structure_residuals};
use nms_core::dense::norm_f64;
use nms_core::metrics::{
    conservation_report, energy_drift, error_growth_probe, loglog_slope, mse, param_count, simulate, Architecture,
};
use nms_core::nets::pack_strict_lower;
use nms_core::odeint::{rk4_integrate, solve};
use nms_core::systems::{generate_dataset, Benchmark, Split, SplitSpec};
use nms_core::tape::{self, param_grad, Var};
use nms_core::training::{
    init_unobserved_linear, train, train_node, trajectory_loss, AdamaxConfig, LossKind, TrainMode,
};
use nms_core::{
    Dataset, DMode, Mat, MetriplecticModel, MlpParams, ModelConfig, Scalar, SolverConfig, SystemSpec, TrainConfig,
    Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fine() -> SolverConfig {
    SolverConfig {
        rtol: 1e-10,
        atol: 1e-12,
        ..Default::default()
    }
}

fn cut(t: &Trajectory, a: usize, b: usize) -> Trajectory {
    Trajectory {
        times: t.times[a..b].to_vec(),
        states: t.states[a..b].to_vec(),
    }
}

fn rows_until(t: &Trajectory, end: f64) -> usize {
    t.times.iter().filter(|&&s| s <= end + 1e-9).count()
}

fn rel_err(g: &[f64], fd: &[f64]) -> f64 {
    let diff: Vec<f64> = g.iter().zip(fd).map(|(a, b)| a - b).collect();
    norm_f64(&diff) / norm_f64(fd).max(1e-12)
}

fn central_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            y[i] = x[i] + step;
            let up = f(&y);
            y[i] = x[i] - step;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut skew, mut sym, mut eig, mut ldeg, mut mdeg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for draw in 0..1000u64 {
        let n = rng.random_range(2..=8);
        let r = rng.random_range(1..=n);
        let mut cfg = ModelConfig::uniform(n, r, &[8]);
        if draw % 2 == 1 {
            cfg.d_mode = DMode::Full;
            cfg.r_prime = rng.random_range(r..=n);
        }
        let model = MetriplecticModel::new(cfg, draw).unwrap();
        let x = model.random_state(&mut rng, 2.0);
        let op = model.operators(&x).unwrap();
        let res = structure_residuals(&op);
        skew = skew.max(res.skew / op.l.max_abs().max(1.0));
        sym = sym.max(res.symmetry / op.m.max_abs().max(1.0));
        eig = eig.min(res.min_eig_rel);
        ldeg = ldeg.max(res.l_degeneracy);
        mdeg = mdeg.max(res.m_degeneracy);
    }
    let pass = skew <= 1e-12 && sym <= 1e-12 && eig >= -1e-10 && ldeg <= 1e-10 && mdeg <= 1e-10;
    outcome(
        pass,
        format!("skew {skew:.1e} sym {sym:.1e} min eig/|M| {eig:.1e} L deg {ldeg:.1e} M deg {mdeg:.1e}"),
    )
}

fn oracle_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut dl, mut dm) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let r = rng.random_range(1..=n);
        let tri = pack_strict_lower(&random_vec(n * (n - 1) / 2, &mut rng), n).unwrap();
        let a = tri.zip_with(&tri.transpose(), |p, q| p - q);
        let b = random_mat(n, r, &mut rng);
        let k = random_mat(r, r, &mut rng);
        let d = k.matmul(&k.transpose());
        let gs = random_vec(n, &mut rng);
        let ge = random_vec(n, &mut rng);
        dl = dl.max(assemble_l(&a, &gs).unwrap().max_abs_diff(&matricized_l(&a, &gs).unwrap()));
        dm = dm.max(assemble_m(&b, &d, &ge).unwrap().max_abs_diff(&matricized_m(&b, &d, &ge).unwrap()));
    }
    outcome(dl <= 1e-12 && dm <= 1e-12, format!("max |L diff| {dl:.1e} max |M diff| {dm:.1e}"))
}

macro_rules! primitive {
    ($worst:ident, $name:expr, $x0:expr, |$x:ident| $body:expr) => {{
        let x0: Vec<f64> = $x0;
        let g = tape::grad(|$x: &[Var]| $body, &x0).unwrap();
        let fd = central_fd(|$x: &[f64]| $body, &x0, 1e-6);
        let e = rel_err(&g, &fd);
        if e > $worst.1 {
            $worst = ($name, e);
        }
    }};
}

fn primitives() -> (&'static str, f64) {
    let mut worst = ("", 0.0);
    let x = vec![0.7, -1.3, 0.4];
    primitive!(worst, "add", x.clone(), |x| x[0] + x[1]);
    primitive!(worst, "sub", x.clone(), |x| x[0] - x[1]);
    primitive!(worst, "mul", x.clone(), |x| x[0] * x[1]);
    primitive!(worst, "div", x.clone(), |x| x[0] / x[1]);
    primitive!(worst, "neg", x.clone(), |x| -x[2]);
    primitive!(worst, "add const", x.clone(), |x| x[0] + 2.5);
    primitive!(worst, "sub const", x.clone(), |x| x[1] - 2.5);
    primitive!(worst, "mul const", x.clone(), |x| x[1] * 2.5);
    primitive!(worst, "div const", x.clone(), |x| x[1] / 2.5);
    primitive!(worst, "tanh", x.clone(), |x| Scalar::tanh(x[1]));
    primitive!(worst, "exp", x.clone(), |x| Scalar::exp(x[0]));
    primitive!(worst, "ln", x.clone(), |x| Scalar::ln(x[0]));
    primitive!(worst, "sin", x.clone(), |x| Scalar::sin(x[1]));
    primitive!(worst, "cos", x.clone(), |x| Scalar::cos(x[1]));
    primitive!(worst, "sqrt", x.clone(), |x| Scalar::sqrt(x[2]));
    primitive!(worst, "powf", x.clone(), |x| Scalar::powf(x[0], 1.7));
    primitive!(worst, "abs", x.clone(), |x| Scalar::abs(x[1]));
    primitive!(worst, "dot", x.clone(), |x| Scalar::dot(x, x));
    primitive!(worst, "sum", x.clone(), |x| Scalar::sum(x));
    primitive!(worst, "lincomb", x.clone(), |x| Scalar::lincomb(&[0.5, -2.0, 3.0], x));
    primitive!(worst, "square", x.clone(), |x| Scalar::square(x[1]));
    primitive!(worst, "norm", x.clone(), |x| Scalar::norm(x));
    primitive!(worst, "composite", x.clone(), |x| Scalar::tanh(x[0] * x[1]) / (Scalar::exp(x[2]) + 1.0));
    worst
}

fn loss_rhs<S: Scalar>(cfg: &ModelConfig, th: &[S], states: &[[f64; 3]]) -> S {
    let mut acc = th[0].lift(0.0);
    for s in states {
        let x: Vec<S> = s.iter().map(|&v| th[0].lift(v)).collect();
        let f = rhs_with(cfg, th, &x).unwrap();
        acc = acc + Scalar::dot(&f, &f) * 0.5;
    }
    acc
}

fn loss_rk4<S: Scalar>(cfg: &ModelConfig, th: &[S], target: &[Vec<f64>]) -> S {
    let x0: Vec<S> = [0.5, -0.3, 0.2].iter().map(|&v| th[0].lift(v)).collect();
    let xs = rk4_integrate(|_, x: &[S]| rhs_with(cfg, th, x), 0.0, &x0, 0.05, 10).unwrap();
    let t: Vec<&[f64]> = target.iter().map(Vec::as_slice).collect();
    trajectory_loss(&xs[1..], &t, &[true; 3], LossKind::Mse)
}

fn loss_dopri5<S: Scalar>(cfg: &ModelConfig, th: &[S], times: &[f64], solver: &SolverConfig) -> S {
    let x0: Vec<S> = [0.5, -0.3, 0.2].iter().map(|&v| th[0].lift(v)).collect();
    let xs = solve(|_, x: &[S]| rhs_with(cfg, th, x), &x0, times, solver).unwrap();
    let target = vec![vec![0.4, -0.2, 0.3]; times.len() - 1];
    let t: Vec<&[f64]> = target.iter().map(Vec::as_slice).collect();
    trajectory_loss(&xs[1..], &t, &[true; 3], LossKind::Mse)
}

/// A horizon that dopri5 covers in exactly `steps` step attempts.
fn horizon_with_steps(model: &MetriplecticModel, steps: usize) -> Option<f64> {
    let x0 = [0.5, -0.3, 0.2];
    let with = |max_steps: usize, t: f64| {
        let cfg = SolverConfig {
            max_steps,
            ..Default::default()
        };
        simulate(model, &x0, &[0.0, t], &cfg).is_ok()
    };
    let mut t = 0.01;
    for _ in 0..200 {
        if with(steps, t) && !with(steps - 1, t) {
            return Some(t);
        }
        t *= 1.1;
    }
    None
}

fn gradients() -> Outcome {
    let (name, prim) = primitives();
    let model = MetriplecticModel::new(ModelConfig::uniform(3, 2, &[6]), 3).unwrap();
    let cfg = &model.config;
    let n = model.param_count();
    let grad_of = |f: &dyn for<'t> Fn(&[Var<'t>]) -> Var<'t>| {
        param_grad(&model.params, n, |_, th| Ok(f(th))).unwrap().1
    };

    let states = [[0.5, -0.3, 0.2], [-1.0, 0.8, 0.1], [0.2, 0.2, -0.6]];
    let g = grad_of(&|th| loss_rhs(cfg, th, &states));
    let e_rhs = rel_err(&g, &central_fd(|th| loss_rhs(cfg, th, &states), &model.params, 1e-6));

    let target: Vec<Vec<f64>> = (1..=10).map(|i| vec![0.5 - 0.01 * i as f64, -0.3, 0.2 + 0.02 * i as f64]).collect();
    let g = grad_of(&|th| loss_rk4(cfg, th, &target));
    let e_rk4 = rel_err(&g, &central_fd(|th| loss_rk4(cfg, th, &target), &model.params, 1e-6));

    let Some(t) = horizon_with_steps(&model, 5) else {
        return outcome(false, "no horizon with exactly 5 dopri5 steps".into());
    };
    let solver = SolverConfig {
        max_steps: 5,
        ..Default::default()
    };
    let times = [0.0, t / 3.0, 2.0 * t / 3.0, t];
    let g = grad_of(&|th| loss_dopri5(cfg, th, &times, &solver));
    let e_dp = rel_err(&g, &central_fd(|th| loss_dopri5(cfg, th, &times, &solver), &model.params, 1e-6));

    let pass = prim <= 1e-4 && e_rhs <= 1e-4 && e_rk4 <= 1e-4 && e_dp <= 1e-4;
    outcome(
        pass,
        format!(
            "worst primitive {name} {prim:.1e}; rhs loss {e_rhs:.1e}; 10 rk4 steps {e_rk4:.1e}; 5 dopri5 steps to t={t:.3} {e_dp:.1e}"
        ),
    )
}

fn self_consistency() -> Outcome {
    let systems = [("tgc", 50.0), ("tdp", 10.0), ("dno1", 15.0), ("dno2", 15.0), ("rod", 10.0)];
    let solver = SolverConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, horizon) in systems {
        let sys = SystemSpec::from_name(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x = sys.sample_state(&mut rng);
            let f = sys.rhs(&x).unwrap();
            let le = sys.exact_l(&x).unwrap().matvec(&sys.grad_energy(&x).unwrap());
            let ms = sys.exact_m(&x).unwrap().matvec(&sys.grad_entropy(&x).unwrap());
            let g: Vec<f64> = le.iter().zip(&ms).map(|(a, b)| a + b).collect();
            let diff: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
            let scale = norm_f64(&le) + norm_f64(&ms);
            let e = norm_f64(&diff);
            worst = worst.max(if e == 0.0 { 0.0 } else { e / scale });
        }
        let x0 = sys.default_ic();
        let steps = (horizon * 100.0) as usize;
        let times: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
        let tr = simulate(&sys, &x0, &times, &solver).unwrap();
        let e0 = sys.energy(&x0);
        let budget = 100.0 * (solver.rtol * e0.abs() + solver.atol);
        let drift = tr.states.iter().map(|x| (sys.energy(x) - e0).abs()).fold(0.0, f64::max);
        let s: Vec<f64> = tr.states.iter().map(|x| sys.entropy(x)).collect();
        let ds = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let ok = worst <= 1e-10 && drift <= budget && ds >= -1e-8;
        pass &= ok;
        parts.push(format!("{name}: rhs {worst:.1e} dE {drift:.1e}/{budget:.1e} min dS {ds:.1e}"));
    }
    outcome(pass, parts.join("; "))
}

fn counts_and_slopes() -> Outcome {
    let c = |a| param_count(a, 4, 2).unwrap();
    let counts = (c(Architecture::Nms), c(Architecture::Gnode), c(Architecture::Gfinn));
    let ns = [10usize, 20, 30, 50];
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = |a| {
        let ys: Vec<f64> = ns.iter().map(|&n| param_count(a, n, 1).unwrap() as f64).collect();
        loglog_slope(&xs, &ys)
    };
    let (s_nms, s_gfinn, s_gnode) = (slope(Architecture::Nms), slope(Architecture::Gfinn), slope(Architecture::Gnode));
    let pass = counts == (19, 21, 30)
        && (s_nms - 2.0).abs() <= 0.15
        && (s_gfinn - 2.0).abs() <= 0.15
        && (s_gnode - 3.0).abs() <= 0.15;
    outcome(
        pass,
        format!(
            "counts nms/gnode/gfinn {}/{}/{}; slopes (r=1) nms {s_nms:.3} gfinn {s_gfinn:.3} gnode {s_gnode:.3}",
            counts.0, counts.1, counts.2
        ),
    )
}

const DNO_T_TRAIN: f64 = 6.0;

/// DNO, IC (2,0,0), dt 0.001 to t = 15, every 10th row kept.
fn dno_data() -> (SystemSpec, Dataset) {
    let sys = SystemSpec::from_name("dno1").unwrap();
    let raw = generate_dataset(
        &sys,
        &[vec![2.0, 0.0, 0.0]],
        0.001,
        15_000,
        SplitSpec::Temporal {
            t_train: DNO_T_TRAIN,
            t_val: 10.0,
            t_test: 15.0,
        },
        0,
    )
    .unwrap();
    (sys, raw.downsample(10).unwrap())
}

fn training_solver() -> SolverConfig {
    SolverConfig {
        rtol: 1e-6,
        atol: 1e-8,
        ..Default::default()
    }
}

fn dno_partial(data: &Dataset) -> (Outcome, MetriplecticModel) {
    let ds = init_unobserved_linear(data);
    let model = MetriplecticModel::new(ModelConfig::uniform(3, 1, &[10]), 1).unwrap();
    let cfg = TrainConfig {
        mode: TrainMode::Origin,
        steps: 3000,
        batch_size: 2,
        rollout_len: 20,
        solver: training_solver(),
        ..Default::default()
    };
    let (_, res) = train(&model, &ds, &cfg).unwrap();
    let trained = MetriplecticModel::from_params(model.config.clone(), res.final_params).unwrap();

    let tr = &ds.trajectories[0];
    let pred = simulate(&trained, &tr.states[0], &tr.times, &fine()).unwrap();
    let k = rows_until(tr, DNO_T_TRAIN);
    let err = mse(&cut(&pred, 0, k), &cut(tr, 0, k), &ds.observable).unwrap();
    let rep = conservation_report(&trained, &pred).unwrap();
    let sdot = rep.min_entropy_rate();
    let pass = err < 0.05 && rep.relative_drift <= 1e-5 && sdot >= -1e-8;
    (
        outcome(
            pass,
            format!(
                "train-window (q,p) MSE {err:.2e}; learned-energy drift on [0,15] {:.1e}; min learned Sdot {sdot:.1e}",
                rep.relative_drift
            ),
        ),
        trained,
    )
}

fn node_vs_nms(sys: &SystemSpec, data: &Dataset) -> Outcome {
    let mut ds = data.clone();
    ds.observable = vec![true; 3];
    let cfg = TrainConfig {
        steps: 3000,
        batch_size: 20,
        rollout_len: 5,
        max_offset: 10,
        solver: training_solver(),
        ..Default::default()
    };
    let model = MetriplecticModel::new(ModelConfig::uniform(3, 1, &[10]), 1).unwrap();
    let (_, res) = train(&model, &ds, &cfg).unwrap();
    let nms = MetriplecticModel::from_params(model.config.clone(), res.final_params).unwrap();
    let mlp = MlpParams::init(&[3, 30, 30, 30, 30, 3], 1).unwrap();
    let (_, res) = train_node(&mlp, &ds, &cfg).unwrap();
    let node = MlpParams {
        widths: mlp.widths.clone(),
        params: res.final_params,
    };

    let tr = &ds.trajectories[0];
    let k = rows_until(tr, 10.0);
    let energy = |x: &[f64]| Ok(sys.energy(x));
    let test_drift = |d: Result<Trajectory, nms_core::Error>| match d {
        Ok(p) => energy_drift(energy, &cut(&p, k - 1, p.len())).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let d_nms = test_drift(simulate(&nms, &tr.states[0], &tr.times, &fine()));
    let d_node = test_drift(simulate(&node, &tr.states[0], &tr.times, &fine()));
    let ratio = d_node / d_nms;
    outcome(
        ratio > 3.0,
        format!("exact-energy drift on (10,15]: nms {d_nms:.2e} node {d_node:.2e} ratio {ratio:.1}"),
    )
}

fn error_growth(model: &MetriplecticModel) -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let rows = error_growth_probe(model, &[1e-4, 2e-4, 1e-3, 1e-2], 5.0, &[2.0, 0.0, 0.0], &seeds, 501, &fine()).unwrap();
    let e: Vec<f64> = rows.iter().map(|r| r.error.unwrap_or(f64::NAN)).collect();
    let monotone = e[0] < e[2] && e[2] < e[3];
    let ratio = e[1] / e[0];
    let decade = e[2] / e[0];
    let pass = monotone && (1.5..=2.5).contains(&ratio);
    outcome(
        pass,
        format!(
            "L2 error at 1e-4/1e-3/1e-2: {:.2e}/{:.2e}/{:.2e}; e(2e-4)/e(1e-4) {ratio:.3}; e(1e-3)/e(1e-4) {decade:.2}",
            e[0], e[2], e[3]
        ),
    )
}

/// End of each training prefix and the learning rate used on it; 300 steps each.
const TGC_STAGES: [(f64, f64); 10] = [
    (2.0, 0.01),
    (3.0, 0.01),
    (4.0, 0.01),
    (5.0, 0.005),
    (6.5, 0.005),
    (8.0, 0.003),
    (10.0, 0.003),
    (12.5, 0.002),
    (15.0, 0.002),
    (20.0, 0.001),
];

fn tgc() -> Outcome {
    let sys = SystemSpec::from_name("tgc").unwrap();
    let raw = generate_dataset(
        &sys,
        &[sys.default_ic()],
        0.001,
        50_000,
        SplitSpec::Temporal {
            t_train: 20.0,
            t_val: 30.0,
            t_test: 50.0,
        },
        0,
    )
    .unwrap();
    let ds = init_unobserved_linear(&raw.downsample(10).unwrap());
    let mut cfg = ModelConfig::uniform(4, 2, &[10]);
    cfg.hidden_s = vec![25, 25, 25];
    let mut model = MetriplecticModel::new(cfg, 1).unwrap();
    let mut steps = 0;
    for (t_end, lr) in TGC_STAGES {
        let mut prefix = ds.clone();
        prefix.split = Split::Temporal {
            t_train: t_end,
            t_val: 30.0,
            t_test: 50.0,
        };
        let tcfg = TrainConfig {
            mode: TrainMode::Origin,
            steps: 300,
            batch_size: 1,
            rollout_len: 100,
            optimizer: AdamaxConfig {
                lr,
                ..Default::default()
            },
            solver: training_solver(),
            val_every: 250,
            ..Default::default()
        };
        let (_, res) = train(&model, &prefix, &tcfg).unwrap();
        model = MetriplecticModel::from_params(model.config.clone(), res.final_params).unwrap();
        steps += tcfg.steps;
    }
    let tr = &ds.trajectories[0];
    let pred = match simulate(&model, &tr.states[0], &tr.times, &fine()) {
        Ok(p) => p,
        Err(e) => return outcome(false, format!("rollout to t=50 failed: {e}")),
    };
    let bound = pred.states.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let k = rows_until(tr, 20.0);
    let err = mse(&cut(&pred, 0, k), &cut(tr, 0, k), &ds.observable).unwrap();
    let rep = conservation_report(&model, &pred).unwrap();
    let pass = steps == 3000 && bound.is_finite() && bound < 1e3 && rep.relative_drift <= 1e-5 && err < 0.1;
    outcome(
        pass,
        format!(
            "{steps} steps; max |x| on [0,50] {bound:.2}; learned-energy drift {:.1e}; (q,p) MSE on [0,20] {err:.2e}",
            rep.relative_drift
        ),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, start: Instant, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {verdict} {} ({:.2}s)", o.detail, start.elapsed().as_secs_f64());
        all &= o.pass;
    };

    let t = Instant::now();
    report(1, t, structure());
    let t = Instant::now();
    report(2, t, oracle_forms());
    let t = Instant::now();
    report(3, t, gradients());
    let t = Instant::now();
    report(4, t, self_consistency());

    let (sys, data) = dno_data();
    let t = Instant::now();
    let (o, dno_model) = dno_partial(&data);
    report(5, t, o);
    let t = Instant::now();
    report(6, t, node_vs_nms(&sys, &data));
    let t = Instant::now();
    report(7, t, counts_and_slopes());
    let t = Instant::now();
    report(8, t, error_growth(&dno_model));
    let t = Instant::now();
    report(9, t, tgc());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
