//! Damped nonlinear oscillator coupled to a heat bath.
//!
//! State `(q, p, S)` with `q, p ∈ R^d`. Friction moves kinetic energy into the
//! bath at temperature `T`, whose entropy is the last coordinate.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::tape::Scalar;

use super::{canonical_l, uniform, Benchmark};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnoConstants {
    pub mass: f64,
    /// Stiffness of the cosine potential.
    pub k: f64,
    /// Friction coefficient.
    pub gamma: f64,
    /// Bath temperature.
    pub temperature: f64,
}

impl Default for DnoConstants {
    fn default() -> Self {
        Self {
            mass: 1.0,
            k: 1.0,
            gamma: 0.1,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dno {
    pub d: usize,
    pub c: DnoConstants,
}

impl Dno {
    pub fn new(d: usize, c: DnoConstants) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("oscillator dimension must be at least 1".into()));
        }
        if [c.mass, c.k, c.temperature].iter().any(|v| !(v.is_finite() && *v > 0.0))
            || !(c.gamma.is_finite() && c.gamma >= 0.0)
        {
            return Err(Error::InvalidArgument(
                "oscillator needs positive mass, stiffness, temperature and nonnegative friction".into(),
            ));
        }
        Ok(Self { d, c })
    }
}

impl Benchmark for Dno {
    fn name(&self) -> &'static str {
        "dno"
    }

    fn dim(&self) -> usize {
        2 * self.d + 1
    }

    fn energy<S: Scalar>(&self, x: &[S]) -> S {
        let d = self.d;
        let kin = S::dot(&x[d..2 * d], &x[d..2 * d]) / (2.0 * self.c.mass);
        let cos: Vec<S> = x[..d].iter().map(|q| q.cos()).collect();
        kin - S::sum(&cos) * self.c.k + x[2 * d] * self.c.temperature
    }

    fn entropy<S: Scalar>(&self, x: &[S]) -> S {
        x[2 * self.d]
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        crate::error::check_len("dno state", self.dim(), x.len())
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let (d, c) = (self.d, &self.c);
        let p = &x[d..2 * d];
        let mut f = Vec::with_capacity(self.dim());
        f.extend(p.iter().map(|pi| pi / c.mass));
        f.extend((0..d).map(|i| -c.k * x[i].sin() - c.gamma * p[i]));
        let p2: f64 = p.iter().map(|v| v * v).sum();
        f.push(c.gamma * p2 / (c.mass * c.temperature));
        Ok(f)
    }

    fn exact_l(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        Ok(canonical_l(self.d, self.dim()))
    }

    fn exact_m(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        let (d, c) = (self.d, &self.c);
        let n = self.dim();
        let mt = c.mass * c.temperature;
        let p = &x[d..2 * d];
        let mut m = Mat::zeros(n, n);
        for i in 0..d {
            m.set(d + i, d + i, c.gamma * mt);
            m.set(d + i, n - 1, -c.gamma * p[i]);
            m.set(n - 1, d + i, -c.gamma * p[i]);
        }
        let p2: f64 = p.iter().map(|v| v * v).sum();
        m.set(n - 1, n - 1, c.gamma * p2 / mt);
        Ok(m)
    }

    fn observable_mask(&self) -> Vec<bool> {
        (0..self.dim()).map(|i| i < 2 * self.d).collect()
    }

    fn default_ic(&self) -> Vec<f64> {
        let mut x = vec![2.0; self.d];
        x.resize(self.dim(), 0.0);
        x
    }

    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..self.dim()).map(|_| uniform(rng, -3.0, 3.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::testing::assert_metriplectic;
    use rand::SeedableRng;

    #[test]
    fn gradients_closed_form() {
        let o = Dno::new(1, DnoConstants::default()).unwrap();
        let x = [2.0, 0.5, 0.3];
        let ge = o.grad_energy(&x).unwrap();
        assert!((ge[0] - 2f64.sin()).abs() < 1e-15);
        assert!((ge[1] - 0.5).abs() < 1e-15);
        assert!((ge[2] - 1.0).abs() < 1e-15);
        assert_eq!(o.grad_entropy(&x).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rest_state_does_not_move() {
        let o = Dno::new(2, DnoConstants::default()).unwrap();
        assert!(o.rhs(&[0.0; 5]).unwrap().iter().all(|v| *v == 0.0));
        let f = o.rhs(&o.default_ic()).unwrap();
        assert!((f[2] + 2f64.sin()).abs() < 1e-15);
        assert_eq!(f[4], 0.0);
    }

    #[test]
    fn structure_holds_at_random_states() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            let o = Dno::new(
                d,
                DnoConstants {
                    mass: 1.3,
                    k: 0.7,
                    gamma: 0.4,
                    temperature: 2.0,
                },
            )
            .unwrap();
            for _ in 0..50 {
                let x = o.sample_state(&mut rng);
                assert_metriplectic(&o, &x);
            }
        }
    }

    #[test]
    fn rejects_bad_constants() {
        let bad = DnoConstants {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(Dno::new(1, bad).is_err());
        assert!(Dno::new(0, DnoConstants::default()).is_err());
    }
}
