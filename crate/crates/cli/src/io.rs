//! On-disk formats: trajectory CSV, dataset metadata and JSON documents.
//!
//! A dataset is a CSV of stacked trajectories (a row whose time does not
//! exceed the previous one starts a new trajectory) plus a `.meta.json`
//! sidecar holding the system name, observation mask and split.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nms_core::systems::Split;
use nms_core::{Dataset, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub system: String,
    pub dt: f64,
    pub observable: Vec<bool>,
    pub split: Split,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((0..n).map(|i| format!("x{i}")))
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f)))
}

/// Writes trajectories one after another under a single `t,x0,...` header.
pub fn write_trajectories(path: &Path, trajs: &[&Trajectory]) -> Result<()> {
    let n = trajs.first().map_or(0, |t| t.dim());
    let mut w = writer(path)?;
    w.write_record(header(n))?;
    for tr in trajs {
        for (t, x) in tr.times.iter().zip(&tr.states) {
            w.write_record(std::iter::once(fmt(*t)).chain(x.iter().map(|v| fmt(*v))))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let cols = r.headers()?.len();
    if cols < 2 || &r.headers()?[0] != "t" {
        bail!("{}: expected a header `t,x0,...`", path.display());
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        if vals.len() != cols {
            bail!("{}: row {} has {} fields, expected {cols}", path.display(), line + 2, vals.len());
        }
        let t = vals[0];
        let state = vals[1..].to_vec();
        match out.last_mut() {
            Some(tr) if t > *tr.times.last().unwrap() => {
                tr.times.push(t);
                tr.states.push(state);
            }
            _ => out.push(Trajectory {
                times: vec![t],
                states: vec![state],
            }),
        }
    }
    if out.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    for tr in &out {
        tr.validate()?;
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
    write_trajectories(path, &trajs)?;
    let meta = DatasetMeta {
        system: ds.system.clone(),
        dt: ds.dt,
        observable: ds.observable.clone(),
        split: ds.split.clone(),
    };
    write_json(&meta_path(path), &meta)
}

/// Reads a dataset; without a sidecar every coordinate counts as observed
/// and every trajectory is training data.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let trajectories = read_trajectories(path)?;
    let n = trajectories[0].dim();
    let mp = meta_path(path);
    let meta = if mp.exists() {
        read_json::<DatasetMeta>(&mp)?
    } else {
        let tr = &trajectories[0];
        DatasetMeta {
            system: String::new(),
            dt: if tr.len() > 1 { tr.times[1] - tr.times[0] } else { 0.0 },
            observable: vec![true; n],
            split: Split::Trajectories {
                train: (0..trajectories.len()).collect(),
                val: vec![],
                test: vec![],
            },
        }
    };
    let ds = Dataset {
        system: meta.system,
        dt: meta.dt,
        observable: meta.observable,
        trajectories,
        split: meta.split,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectories_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let a = Trajectory::new(vec![0.0, 0.1, 0.3], vec![vec![1.0 / 3.0, -2e-300], vec![1e300, 0.1], vec![-0.0, 5.0]]).unwrap();
        let b = Trajectory::new(vec![0.0, 1.0], vec![vec![std::f64::consts::PI, 1.0], vec![2.0, 3.0]]).unwrap();
        write_trajectories(&p, &[&a, &b]).unwrap();
        let back = read_trajectories(&p).unwrap();
        assert_eq!(back, vec![a, b]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,x0,x1\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn bad_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "t,x0\n").unwrap();
        assert!(read_trajectories(&p).is_err());
        std::fs::write(&p, "time,x0\n0,1\n").unwrap();
        assert!(read_trajectories(&p).is_err());
        std::fs::write(&p, "t,x0\n0,abc\n").unwrap();
        assert!(read_trajectories(&p).is_err());
    }
}
