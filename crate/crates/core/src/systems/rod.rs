//! Discretized thermoelastic rod: a chain of `N` masses joined by linear
//! springs, with viscous damping feeding a single internal entropy.
//!
//! State `(q, p, S)` with `q, p ∈ R^N`.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::tape::Scalar;

use super::{canonical_l, uniform, Benchmark};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RodConstants {
    pub mass: f64,
    /// Spring stiffness between neighbouring nodes.
    pub k: f64,
    pub gamma: f64,
}

impl Default for RodConstants {
    fn default() -> Self {
        Self {
            mass: 1.0,
            k: 1.0,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rod {
    pub nodes: usize,
    pub c: RodConstants,
}

impl Rod {
    pub fn new(nodes: usize, c: RodConstants) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidArgument("rod needs at least 2 nodes".into()));
        }
        if !(c.mass > 0.0 && c.k > 0.0 && c.gamma >= 0.0)
            || ![c.mass, c.k, c.gamma].iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "rod needs positive mass and stiffness and nonnegative damping".into(),
            ));
        }
        Ok(Self { nodes, c })
    }

    /// Elastic force `-∂V/∂q`.
    fn force(&self, q: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; q.len()];
        for i in 0..q.len() - 1 {
            let t = self.c.k * (q[i + 1] - q[i]);
            f[i] += t;
            f[i + 1] -= t;
        }
        f
    }
}

impl Benchmark for Rod {
    fn name(&self) -> &'static str {
        "rod"
    }

    fn dim(&self) -> usize {
        2 * self.nodes + 1
    }

    fn energy<S: Scalar>(&self, x: &[S]) -> S {
        let n = self.nodes;
        let kin = S::dot(&x[n..2 * n], &x[n..2 * n]) / (2.0 * self.c.mass);
        let stretch: Vec<S> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        kin + S::dot(&stretch, &stretch) * (0.5 * self.c.k) + x[2 * n]
    }

    fn entropy<S: Scalar>(&self, x: &[S]) -> S {
        x[2 * self.nodes]
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        crate::error::check_len("rod state", self.dim(), x.len())
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let (n, c) = (self.nodes, &self.c);
        let p = &x[n..2 * n];
        let force = self.force(&x[..n]);
        let mut f = Vec::with_capacity(self.dim());
        f.extend(p.iter().map(|v| v / c.mass));
        f.extend((0..n).map(|i| force[i] - c.gamma * p[i] / c.mass));
        let p2: f64 = p.iter().map(|v| v * v).sum();
        f.push(c.gamma * p2 / (c.mass * c.mass));
        Ok(f)
    }

    fn exact_l(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        Ok(canonical_l(self.nodes, self.dim()))
    }

    fn exact_m(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        let (n, c) = (self.nodes, &self.c);
        let last = self.dim() - 1;
        let p = &x[n..2 * n];
        let mut m = Mat::zeros(last + 1, last + 1);
        for i in 0..n {
            m.set(n + i, n + i, c.gamma);
            m.set(n + i, last, -c.gamma * p[i] / c.mass);
            m.set(last, n + i, -c.gamma * p[i] / c.mass);
        }
        let p2: f64 = p.iter().map(|v| v * v).sum();
        m.set(last, last, c.gamma * p2 / (c.mass * c.mass));
        Ok(m)
    }

    fn observable_mask(&self) -> Vec<bool> {
        (0..self.dim()).map(|i| i < 2 * self.nodes).collect()
    }

    /// Half-sine displacement at rest.
    fn default_ic(&self) -> Vec<f64> {
        let n = self.nodes;
        let mut x: Vec<f64> = (0..n)
            .map(|i| 0.1 * (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin())
            .collect();
        x.resize(self.dim(), 0.0);
        x
    }

    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..self.dim()).map(|_| uniform(rng, -1.0, 1.0)).collect()
    }
}
