use std::path::Path;
use std::process::{Command, Output};

use nms_core::{Checkpoint, MetriplecticModel, ModelConfig, SolverConfig};

fn nms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nms"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn gen_with_zero_steps_writes_header_and_ic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    ok(&nms(&["gen", "--system", "dno1", "--steps", "0", "--out", p(&out)]));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "t,x0,x1,x2");
    let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![0.0, 2.0, 0.0, 0.0]);
    assert!(text.ends_with('\n') && !text.contains('\r'));
}

#[test]
fn gen_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for f in [&a, &b] {
        ok(&nms(&[
            "gen", "--system", "tdp", "--steps", "50", "--n-ics", "3", "--seed", "9", "--split", "traj:0.5,0.2", "--out", p(f),
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(nms_meta(&a)).unwrap(),
        std::fs::read(nms_meta(&b)).unwrap()
    );
}

fn nms_meta(csv: &Path) -> std::path::PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

#[test]
fn exact_system_reproduces_its_own_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let report = dir.path().join("r.json");
    ok(&nms(&[
        "gen", "--system", "dno1", "--dt", "0.01", "--steps", "300", "--split", "temporal:1,2,3", "--out", p(&data),
    ]));
    // Same integrator and step as generation, so the rollout is the data.
    ok(&nms(&[
        "eval", "--exact", "--data", p(&data), "--part", "all", "--solver", "rk4", "--solver-dt", "0.01", "--out", p(&report),
    ]));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["mse"].as_f64().unwrap() < 1e-24);
    assert!(r["mae"].as_f64().unwrap() < 1e-12);
    assert!(r["energy_drift"].as_f64().unwrap() < 1e-8);
    assert!(r["convention"].as_str().unwrap().contains("mse"));
}

#[test]
fn check_passes_on_fresh_model() {
    let out = nms(&["check", "--n", "5", "--rank", "2", "--states", "20", "--seed", "3"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("degeneracy") && !text.contains("FAIL"));
}

#[test]
fn train_eval_rollout_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let ck = dir.path().join("m.json");
    ok(&nms(&[
        "gen", "--system", "dno1", "--dt", "0.01", "--steps", "400", "--split", "temporal:2,3,4", "--out", p(&data),
    ]));
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 5\nmodel.hidden = [4]\ntrain.steps = 6\ntrain.batch_size = 2\ntrain.val_every = 3\ntrain.observe = \"q,p\"\nsolver.rtol = 1e-5\nsolver.atol = 1e-7\n",
    )
    .unwrap();
    ok(&nms(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck)]));
    let loss = std::fs::read_to_string(ck.with_extension("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 7);
    assert!(loss.starts_with("step,loss,val\n"));

    let checkpoint: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(checkpoint.provenance.seed, 5);
    assert_eq!(checkpoint.provenance.config_hash.len(), 64);
    assert_eq!(checkpoint.observable, Some(vec![true, true, false]));

    let report = dir.path().join("r.json");
    let trajs = dir.path().join("traj");
    ok(&nms(&[
        "eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&report), "--traj-dir", p(&trajs),
    ]));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["mse"].as_f64().unwrap().is_finite());
    assert!(r["max_m_degeneracy"].as_f64().unwrap() <= 1e-10);
    for f in ["seg0_truth.csv", "seg0_pred.csv", "seg0_thermo.csv"] {
        assert!(trajs.join(f).exists(), "{f}");
    }

    // Loading the checkpoint and integrating in process matches the CLI bitwise.
    let roll = dir.path().join("roll.csv");
    ok(&nms(&[
        "rollout", "--checkpoint", p(&ck), "--ic", "1,-0.5,0", "--horizon", "2", "--points", "21", "--out", p(&roll),
    ]));
    let model: MetriplecticModel = checkpoint.to_nms().unwrap();
    let times: Vec<f64> = (0..21).map(|i| 2.0 * i as f64 / 20.0).collect();
    let tr = nms_core::metrics::simulate(&model, &[1.0, -0.5, 0.0], &times, &SolverConfig::default()).unwrap();
    let rows = read_rows(&roll);
    for (row, (t, x)) in rows.iter().zip(tr.times.iter().zip(&tr.states)) {
        assert_eq!(row[0], *t);
        assert_eq!(&row[1..], x.as_slice());
    }

    // A second identical training run reproduces the checkpoint exactly.
    let ck2 = dir.path().join("m2.json");
    ok(&nms(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck2)]));
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(&ck2).unwrap());
}

#[test]
fn node_baseline_trains_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let ck = dir.path().join("n.json");
    ok(&nms(&["gen", "--system", "dno1", "--dt", "0.01", "--steps", "100", "--out", p(&data)]));
    ok(&nms(&[
        "train", "--model", "node", "--hidden", "8", "--steps", "3", "--batch-size", "2", "--data", p(&data), "--out", p(&ck),
    ]));
    let checkpoint: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    assert!(checkpoint.to_node().is_ok());
    // The structural audit needs a metriplectic model.
    assert_eq!(nms(&["check", "--checkpoint", p(&ck)]).status.code(), Some(1));
}

#[test]
fn scaling_emits_counts() {
    let out = nms(&["scaling", "--n-list", "4", "--rank", "2", "--trials", "3"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,r,nms,gnode,gfinn,weights,rhs_seconds");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], &["4", "2", "19", "21", "30"]);
}

#[test]
fn validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    assert_eq!(nms(&["gen", "--system", "nope", "--out", p(&out)]).status.code(), Some(1));
    assert_eq!(
        nms(&["gen", "--system", "dno1", "--ic", "1,2", "--out", p(&out)]).status.code(),
        Some(1)
    );
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "train.unknown = 1\n").unwrap();
    let res = nms(&["train", "--config", p(&cfg), "--data", p(&out), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown"));
}

#[test]
fn solver_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.json");
    let model = MetriplecticModel::new(ModelConfig::uniform(3, 1, &[4]), 0).unwrap();
    let checkpoint = Checkpoint::from_nms(&model, Default::default());
    std::fs::write(&ck, serde_json::to_string(&checkpoint).unwrap()).unwrap();
    let out = dir.path().join("r.csv");
    let res = nms(&[
        "rollout", "--checkpoint", p(&ck), "--ic", "0.1,0.2,0.3", "--horizon", "50", "--max-steps", "2", "--out", p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}
