//! Two gas containers separated by a movable, heat-conducting wall.
//!
//! State `(q, p, S1, S2)`: wall position, wall momentum and the entropies of
//! the two gases. The chambers have volumes `q` and `2L - q`.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::tape::Scalar;

use super::{canonical_l, uniform, Benchmark};

/// Physical constants of the gas containers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TgcConstants {
    pub mass: f64,
    /// `N k_B`, shared by both gases.
    pub nkb: f64,
    /// Heat conduction coefficient.
    pub alpha: f64,
    pub c_hat: f64,
    /// Half the container length.
    pub half_length: f64,
    /// Use the published initial condition `(1, 2, 103.2874, 103.2874)`
    /// instead of the one giving unit internal energies.
    pub literal_ic: bool,
}

impl Default for TgcConstants {
    fn default() -> Self {
        Self {
            mass: 2.0 / 3.0,
            nkb: 1.0,
            alpha: 0.5,
            c_hat: 102.25,
            half_length: 1.0,
            literal_ic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tgc {
    pub c: TgcConstants,
}

impl Tgc {
    pub fn new(c: TgcConstants) -> Result<Self> {
        let positive = [c.mass, c.nkb, c.alpha, c.c_hat, c.half_length];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(
                "gas container constants must be positive and finite".into(),
            ));
        }
        Ok(Self { c })
    }

    /// Internal energy of one gas with entropy `s` in volume `v`.
    fn internal<S: Scalar>(&self, s: S, v: S) -> S {
        ((s / self.c.nkb).exp() / (v * self.c.c_hat)).powf(2.0 / 3.0)
    }

    fn internal_energies(&self, x: &[f64]) -> (f64, f64) {
        let v2 = 2.0 * self.c.half_length - x[0];
        (self.internal(x[2], x[0]), self.internal(x[3], v2))
    }
}

impl Benchmark for Tgc {
    fn name(&self) -> &'static str {
        "tgc"
    }

    fn dim(&self) -> usize {
        4
    }

    fn energy<S: Scalar>(&self, x: &[S]) -> S {
        let v2 = -x[0] + 2.0 * self.c.half_length;
        x[1].square() / (2.0 * self.c.mass) + self.internal(x[2], x[0]) + self.internal(x[3], v2)
    }

    fn entropy<S: Scalar>(&self, x: &[S]) -> S {
        x[2] + x[3]
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        crate::error::check_len("tgc state", 4, x.len())?;
        let q = x[0];
        if !(q > 0.0 && q < 2.0 * self.c.half_length) {
            return Err(Error::Domain {
                system: "tgc",
                reason: format!("wall position {q} outside (0, {})", 2.0 * self.c.half_length),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                system: "tgc",
                reason: "non-finite state".into(),
            });
        }
        Ok(())
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let c = &self.c;
        let (e1, e2) = self.internal_energies(x);
        let q = x[0];
        let v2 = 2.0 * c.half_length - q;
        let k = 9.0 * c.nkb * c.nkb * c.alpha / 4.0;
        Ok(vec![
            x[1] / c.mass,
            2.0 / 3.0 * (e1 / q - e2 / v2),
            k / e1 * (1.0 / e1 - 1.0 / e2),
            k / e2 * (1.0 / e2 - 1.0 / e1),
        ])
    }

    fn exact_l(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        Ok(canonical_l(1, 4))
    }

    fn exact_m(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_domain(x)?;
        let g = self.grad_energy(x)?;
        let (t1, t2) = (g[2], g[3]);
        let a = self.c.alpha;
        let mut m = Mat::zeros(4, 4);
        m.set(2, 2, a / (t1 * t1));
        m.set(3, 3, a / (t2 * t2));
        m.set(2, 3, -a / (t1 * t2));
        m.set(3, 2, -a / (t1 * t2));
        Ok(m)
    }

    fn observable_mask(&self) -> Vec<bool> {
        vec![true, true, false, false]
    }

    fn default_ic(&self) -> Vec<f64> {
        if self.c.literal_ic {
            return vec![1.0, 2.0, 103.2874, 103.2874];
        }
        let v = self.c.half_length;
        let s = self.c.nkb * (self.c.c_hat * v).ln();
        vec![v, 2.0, s, s]
    }

    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let l = self.c.half_length;
        let s0 = self.c.nkb * (self.c.c_hat * l).ln();
        vec![
            uniform(rng, 0.2 * l, 1.8 * l),
            uniform(rng, -2.0, 2.0),
            s0 + uniform(rng, -1.0, 1.0),
            s0 + uniform(rng, -1.0, 1.0),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::testing::assert_metriplectic;
    use rand::SeedableRng;

    #[test]
    fn desk_ic_has_unit_internal_energy() {
        let t = Tgc::new(TgcConstants::default()).unwrap();
        let x = t.default_ic();
        assert!((x[2] - 102.25f64.ln()).abs() < 1e-15);
        let (e1, e2) = t.internal_energies(&x);
        assert!((e1 - 1.0).abs() < 1e-12 && (e2 - 1.0).abs() < 1e-12);
        // Kinetic energy p²/2m = 4 / (4/3) = 3.
        assert!((t.energy(&x) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn equal_temperatures_give_no_heat_flow() {
        let t = Tgc::new(TgcConstants::default()).unwrap();
        let f = t.rhs(&t.default_ic()).unwrap();
        assert_eq!(f[2], 0.0);
        assert_eq!(f[3], 0.0);
        assert!((f[0] - 3.0).abs() < 1e-15);
        assert!(f[1].abs() < 1e-12);
    }

    #[test]
    fn temperature_is_two_thirds_energy() {
        let t = Tgc::new(TgcConstants::default()).unwrap();
        let x = [0.7, 0.3, 4.9, 4.1];
        let g = t.grad_energy(&x).unwrap();
        let (e1, e2) = t.internal_energies(&x);
        assert!((g[2] - 2.0 / 3.0 * e1).abs() < 1e-12);
        assert!((g[3] - 2.0 / 3.0 * e2).abs() < 1e-12);
        // Pressure: -dE/dq = (2/3)(E1/V1 - E2/V2).
        let f = t.rhs(&x).unwrap();
        assert!((-g[0] - f[1]).abs() < 1e-12);
    }

    #[test]
    fn structure_holds_at_random_states() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for nkb in [1.0, 1.7] {
            let t = Tgc::new(TgcConstants {
                nkb,
                ..Default::default()
            })
            .unwrap();
            for _ in 0..50 {
                let x = t.sample_state(&mut rng);
                assert_metriplectic(&t, &x);
            }
        }
    }

    #[test]
    fn wall_outside_container_is_rejected() {
        let t = Tgc::new(TgcConstants::default()).unwrap();
        assert!(matches!(t.rhs(&[2.0, 0.0, 4.0, 4.0]), Err(Error::Domain { .. })));
        assert!(matches!(t.rhs(&[0.0, 0.0, 4.0, 4.0]), Err(Error::Domain { .. })));
    }
}
