//! Planar double pendulum with thermoelastic springs.
//!
//! State `(q1, q2, p1, p2, S1, S2)` with `qi, pi ∈ R²`: positions and momenta
//! of the two masses and the entropies of the two springs. Spring 1 connects
//! the origin to mass 1, spring 2 connects the masses.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::tape::Scalar;

use super::{canonical_l, uniform, Benchmark};

/// Sampling box for initial conditions, one `(lo, hi)` per coordinate.
pub const TDP_IC_BOX: [(f64, f64); 10] = [
    (0.1, 1.1),
    (-0.1, 0.1),
    (2.1, 2.3),
    (-0.1, 0.1),
    (-1.9, 2.1),
    (0.9, 1.1),
    (-0.1, 0.1),
    (0.9, 1.1),
    (0.1, 0.3),
    (0.1, 0.3),
];

const MIN_STRETCH: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdpConstants {
    pub m1: f64,
    pub m2: f64,
    /// Heat exchange rate between the springs.
    pub kappa: f64,
}

impl Default for TdpConstants {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tdp {
    pub c: TdpConstants,
}

/// Internal energy of a spring with stretch `lambda` and entropy `s`.
fn spring<S: Scalar>(lambda: S, s: S) -> S {
    let ll = lambda.ln();
    ll.square() * 0.5 + ll + (s - ll).exp() - 1.0
}

fn stretches<S: Scalar>(x: &[S]) -> (S, S) {
    let l1 = S::norm(&x[0..2]);
    let d = [x[2] - x[0], x[3] - x[1]];
    (l1, S::norm(&d))
}

impl Tdp {
    pub fn new(c: TdpConstants) -> Self {
        Self { c }
    }

    fn temperatures(&self, g: &[f64]) -> (f64, f64) {
        (g[8], g[9])
    }
}

impl Benchmark for Tdp {
    fn name(&self) -> &'static str {
        "tdp"
    }

    fn dim(&self) -> usize {
        10
    }

    fn energy<S: Scalar>(&self, x: &[S]) -> S {
        let (l1, l2) = stretches(x);
        let k1 = S::dot(&x[4..6], &x[4..6]) / (2.0 * self.c.m1);
        let k2 = S::dot(&x[6..8], &x[6..8]) / (2.0 * self.c.m2);
        k1 + k2 + spring(l1, x[8]) + spring(l2, x[9])
    }

    fn entropy<S: Scalar>(&self, x: &[S]) -> S {
        x[8] + x[9]
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        crate::error::check_len("tdp state", 10, x.len())?;
        let (l1, l2) = stretches(x);
        if l1 <= MIN_STRETCH || l2 <= MIN_STRETCH {
            return Err(Error::Domain {
                system: "tdp",
                reason: format!("collapsed spring (stretches {l1:e}, {l2:e})"),
            });
        }
        Ok(())
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let g = self.grad_energy(x)?;
        let (t1, t2) = self.temperatures(&g);
        let k = self.c.kappa;
        Ok(vec![
            x[4] / self.c.m1,
            x[5] / self.c.m1,
            x[6] / self.c.m2,
            x[7] / self.c.m2,
            -g[0],
            -g[1],
            -g[2],
            -g[3],
            k * (t2 / t1 - 1.0),
            k * (t1 / t2 - 1.0),
        ])
    }

    fn exact_l(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        Ok(canonical_l(4, 10))
    }

    fn exact_m(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        let g = self.grad_energy(x)?;
        let (t1, t2) = self.temperatures(&g);
        let k = self.c.kappa;
        let mut m = Mat::zeros(10, 10);
        m.set(8, 8, k * t2 / t1);
        m.set(9, 9, k * t1 / t2);
        m.set(8, 9, -k);
        m.set(9, 8, -k);
        Ok(m)
    }

    fn observable_mask(&self) -> Vec<bool> {
        (0..10).map(|i| i < 8).collect()
    }

    fn default_ic(&self) -> Vec<f64> {
        TDP_IC_BOX.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        TDP_IC_BOX.iter().map(|&(lo, hi)| uniform(rng, lo, hi)).collect()
    }
}
