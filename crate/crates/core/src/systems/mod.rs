//! Closed-form metriplectic benchmark systems.
//!
//! Every system exposes its energy and entropy as generic scalar functions so
//! their gradients come from the tape, an explicit right-hand side written
//! from the equations of motion, and the exact operators `L(x)`, `M(x)`. The
//! right-hand side is deliberately not computed from `L∇E + M∇S`, which keeps
//! the self-consistency check between the two meaningful.

mod dataset;
mod dno;
mod rod;
mod tdp;
mod tgc;

pub use dataset::{generate_dataset, Dataset, Part, Segment, Split, SplitSpec};
pub use dno::{Dno, DnoConstants};
pub use rod::{Rod, RodConstants};
pub use tdp::{Tdp, TdpConstants, TDP_IC_BOX};
pub use tgc::{Tgc, TgcConstants};

use rand::Rng;

use crate::dense::Mat;
use crate::error::Result;
use crate::tape::{self, Scalar};

/// Behaviour shared by the benchmark systems.
pub trait Benchmark {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn energy<S: Scalar>(&self, x: &[S]) -> S;
    fn entropy<S: Scalar>(&self, x: &[S]) -> S;
    /// Fails with a domain error outside the physical state space.
    fn check_domain(&self, x: &[f64]) -> Result<()>;
    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn exact_l(&self, x: &[f64]) -> Result<Mat<f64>>;
    fn exact_m(&self, x: &[f64]) -> Result<Mat<f64>>;
    /// `true` for coordinates in the observed block (positions, momenta).
    fn observable_mask(&self) -> Vec<bool>;
    fn default_ic(&self) -> Vec<f64>;
    /// A random valid state for property checks.
    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;

    fn grad_energy(&self, x: &[f64]) -> Result<Vec<f64>> {
        tape::grad(|v| self.energy(v), x)
    }

    fn grad_entropy(&self, x: &[f64]) -> Result<Vec<f64>> {
        tape::grad(|v| self.entropy(v), x)
    }
}

/// Canonical symplectic matrix on the first `2d` coordinates, zero elsewhere.
pub(crate) fn canonical_l(d: usize, n: usize) -> Mat<f64> {
    let mut l = Mat::zeros(n, n);
    for i in 0..d {
        l.set(i, d + i, 1.0);
        l.set(d + i, i, -1.0);
    }
    l
}

pub(crate) fn uniform(rng: &mut dyn rand::RngCore, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}

/// One of the benchmark systems.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Tgc(Tgc),
    Tdp(Tdp),
    Dno(Dno),
    Rod(Rod),
}

macro_rules! dispatch {
    ($self:ident, $s:ident => $e:expr) => {
        match $self {
            SystemSpec::Tgc($s) => $e,
            SystemSpec::Tdp($s) => $e,
            SystemSpec::Dno($s) => $e,
            SystemSpec::Rod($s) => $e,
        }
    };
}

impl SystemSpec {
    /// Parses the command-line system names `tgc`, `tdp`, `dno1`, `dno2`, `rod`
    /// (rod with 50 nodes) or `rodN`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "tgc" => SystemSpec::Tgc(Tgc::new(TgcConstants::default())?),
            "tdp" => SystemSpec::Tdp(Tdp::new(TdpConstants::default())),
            "dno1" => SystemSpec::Dno(Dno::new(1, DnoConstants::default())?),
            "dno2" => SystemSpec::Dno(Dno::new(2, DnoConstants::default())?),
            "rod" => SystemSpec::Rod(Rod::new(50, RodConstants::default())?),
            other => match other.strip_prefix("rod").and_then(|n| n.parse().ok()) {
                Some(n) => SystemSpec::Rod(Rod::new(n, RodConstants::default())?),
                None => {
                    return Err(crate::Error::InvalidArgument(format!(
                        "unknown system `{other}` (expected tgc, tdp, dno1, dno2, rod, rodN)"
                    )))
                }
            },
        })
    }
}

impl Benchmark for SystemSpec {
    fn name(&self) -> &'static str {
        dispatch!(self, s => s.name())
    }
    fn dim(&self) -> usize {
        dispatch!(self, s => s.dim())
    }
    fn energy<S: Scalar>(&self, x: &[S]) -> S {
        dispatch!(self, s => s.energy(x))
    }
    fn entropy<S: Scalar>(&self, x: &[S]) -> S {
        dispatch!(self, s => s.entropy(x))
    }
    fn check_domain(&self, x: &[f64]) -> Result<()> {
        dispatch!(self, s => s.check_domain(x))
    }
    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, s => s.rhs(x))
    }
    fn exact_l(&self, x: &[f64]) -> Result<Mat<f64>> {
        dispatch!(self, s => s.exact_l(x))
    }
    fn exact_m(&self, x: &[f64]) -> Result<Mat<f64>> {
        dispatch!(self, s => s.exact_m(x))
    }
    fn observable_mask(&self) -> Vec<bool> {
        dispatch!(self, s => s.observable_mask())
    }
    fn default_ic(&self) -> Vec<f64> {
        dispatch!(self, s => s.default_ic())
    }
    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        dispatch!(self, s => s.sample_state(rng))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::dense::{dot_f64, norm_f64};

    /// Checks rhs = L∇E + M∇S, degeneracy, skewness and PSD-ness at `x`.
    pub fn assert_metriplectic(sys: &impl Benchmark, x: &[f64]) {
        let ge = sys.grad_energy(x).unwrap();
        let gs = sys.grad_entropy(x).unwrap();
        let l = sys.exact_l(x).unwrap();
        let m = sys.exact_m(x).unwrap();
        let lhs = sys.rhs(x).unwrap();
        let lv = l.matvec(&ge);
        let mv = m.matvec(&gs);
        let scale = norm_f64(&lv) + norm_f64(&mv) + 1e-300;
        for i in 0..x.len() {
            assert!(
                (lhs[i] - lv[i] - mv[i]).abs() <= 1e-10 * scale.max(1.0),
                "{}: component {i}: rhs {} vs {}",
                sys.name(),
                lhs[i],
                lv[i] + mv[i]
            );
        }
        assert_eq!(l, l.transpose().map(|v| -v));
        assert!(m.max_abs_diff(&m.transpose()) == 0.0);
        let lgs = norm_f64(&l.matvec(&gs));
        let mge = norm_f64(&m.matvec(&ge));
        assert!(lgs <= 1e-10 * (l.max_abs() * norm_f64(&gs)).max(1e-300));
        assert!(mge <= 1e-10 * (m.max_abs() * norm_f64(&ge)).max(1.0), "{}: |M∇E| = {mge}", sys.name());
        assert!(m.min_sym_eigenvalue() >= -1e-10 * m.max_abs().max(1.0));
        // Energy rate vanishes, entropy rate is nonnegative.
        assert!(dot_f64(&ge, &lhs).abs() <= 1e-10 * (norm_f64(&ge) * norm_f64(&lhs)).max(1.0));
        assert!(dot_f64(&gs, &lhs) >= -1e-10);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in ["tgc", "tdp", "dno1", "dno2", "rod", "rod7"] {
            let s = SystemSpec::from_name(name).unwrap();
            assert!(s.dim() > 0);
        }
        assert_eq!(SystemSpec::from_name("rod7").unwrap().dim(), 15);
        assert!(SystemSpec::from_name("pendulum").is_err());
    }
}
