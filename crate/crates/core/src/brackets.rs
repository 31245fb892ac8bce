//! Metriplectic operators built from network outputs.
//!
//! Given a skew field `A`, a generic `n x r` field `B`, a factor `K` with
//! `D = K Kᵀ`, and gradients `∇E`, `∇S`:
//!
//! ```text
//! L = A - (A∇S ∧ ∇S) / |∇S|²        (so L∇S = 0, Lᵀ = -L)
//! M = V D Vᵀ,  V = B - ∇E (∇Eᵀ B) / |∇E|²   (so M∇E = 0, M ⪰ 0)
//! ```
//!
//! where `(u ∧ g)_{ij} = u_i g_j - g_i u_j`. These equal the projector
//! conjugations `P A P` and `P B D Bᵀ P` but skip the term `gᵀ A g`, which
//! vanishes for skew `A`. The projector forms are kept for verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{dot_f64, norm_f64, Mat};
use crate::error::{check_len, Error, Result};
use crate::nets::{
    mlp_forward, mlp_value_and_input_grad, pack_lower, pack_rect, pack_strict_lower_in, DMode,
    MlpParams, ModelConfig, NetKind,
};
use crate::tape::Scalar;

/// Relative threshold below which a gradient counts as vanishing.
pub const DEGENERACY_EPS: f64 = 1e-12;

fn check_nondegenerate(field: &'static str, norm: f64, threshold: f64) -> Result<()> {
    if norm.is_finite() && norm > threshold {
        Ok(())
    } else {
        Err(Error::Nondegenerate {
            field,
            norm,
            threshold,
        })
    }
}

fn degeneracy_threshold<S: Scalar>(x: &[S]) -> f64 {
    let xn = x.iter().map(|v| v.value() * v.value()).sum::<f64>().sqrt();
    DEGENERACY_EPS * xn.max(1.0)
}

/// `I - g gᵀ / |g|²`.
pub fn projector_complement(g: &[f64]) -> Result<Mat<f64>> {
    let norm = norm_f64(g);
    check_nondegenerate("f", norm, DEGENERACY_EPS)?;
    let c = norm * norm;
    let n = g.len();
    let mut p = Mat::identity(n);
    for i in 0..n {
        for j in 0..n {
            p.set(i, j, p.get(i, j) - g[i] * g[j] / c);
        }
    }
    Ok(p)
}

/// `L = A - (A g ∧ g)/|g|²` for skew `A` and entropy gradient `g`.
pub fn assemble_l<S: Scalar>(a: &Mat<S>, gs: &[S]) -> Result<Mat<S>> {
    check_len("entropy gradient", a.rows(), gs.len())?;
    let norm = gs.iter().map(|v| v.value().powi(2)).sum::<f64>().sqrt();
    check_nondegenerate("S", norm, DEGENERACY_EPS)?;
    let c = S::dot(gs, gs);
    let u = a.matvec(gs);
    let n = gs.len();
    let mut l = a.clone();
    for i in 0..n {
        for j in 0..n {
            let wedge = u[i] * gs[j] - gs[i] * u[j];
            l.set(i, j, a.get(i, j) - wedge / c);
        }
    }
    Ok(l)
}

/// `V = B - g (gᵀ B)/|g|²`, the columns of `B` projected off `g`.
fn project_columns<S: Scalar>(b: &Mat<S>, ge: &[S], c: S) -> Mat<S> {
    let gtb = b.tr_matvec(ge);
    let mut v = b.clone();
    for i in 0..b.rows() {
        for s in 0..b.cols() {
            v.set(i, s, b.get(i, s) - ge[i] * gtb[s] / c);
        }
    }
    v
}

/// `M = V D Vᵀ` with `V` the columns of `B` projected orthogonally to `ge`.
pub fn assemble_m<S: Scalar>(b: &Mat<S>, d: &Mat<S>, ge: &[S]) -> Result<Mat<S>> {
    check_len("energy gradient", b.rows(), ge.len())?;
    check_len("D rows", b.cols(), d.rows())?;
    let norm = ge.iter().map(|v| v.value().powi(2)).sum::<f64>().sqrt();
    check_nondegenerate("E", norm, DEGENERACY_EPS)?;
    let c = S::dot(ge, ge);
    let v = project_columns(b, ge, c);
    Ok(v.matmul(d).matmul(&v.transpose()))
}

/// `M = (V K)(V K)ᵀ`; exactly symmetric in floating point.
pub fn assemble_m_factored<S: Scalar>(b: &Mat<S>, k: &Mat<S>, ge: &[S]) -> Result<Mat<S>> {
    check_len("energy gradient", b.rows(), ge.len())?;
    check_len("K rows", b.cols(), k.rows())?;
    let norm = ge.iter().map(|v| v.value().powi(2)).sum::<f64>().sqrt();
    check_nondegenerate("E", norm, DEGENERACY_EPS)?;
    let c = S::dot(ge, ge);
    let w = project_columns(b, ge, c).matmul(k);
    Ok(w.matmul(&w.transpose()))
}

/// Projector-conjugation form `P A P`, used as an independent check.
pub fn matricized_l(a: &Mat<f64>, gs: &[f64]) -> Result<Mat<f64>> {
    let p = projector_complement(gs)?;
    Ok(p.matmul(a).matmul(&p))
}

/// Projector-conjugation form `P B D Bᵀ P`.
pub fn matricized_m(b: &Mat<f64>, d: &Mat<f64>, ge: &[f64]) -> Result<Mat<f64>> {
    let p = projector_complement(ge)?;
    Ok(p.matmul(b).matmul(d).matmul(&b.transpose()).matmul(&p))
}

/// Everything the five networks produce at one state.
#[derive(Debug, Clone)]
pub struct Fields<S> {
    /// Skew field `A = A_tri - A_triᵀ`.
    pub a: Mat<S>,
    pub b: Mat<S>,
    /// Factor of `D = K Kᵀ`.
    pub k: Mat<S>,
    pub energy: S,
    pub grad_e: Vec<S>,
    pub entropy: S,
    pub grad_s: Vec<S>,
}

impl<S: Scalar> Fields<S> {
    pub fn d(&self) -> Mat<S> {
        self.k.matmul(&self.k.transpose())
    }
}

/// Evaluates all networks of a model with parameters `theta` at `x`.
pub fn eval_fields<S: Scalar>(cfg: &ModelConfig, theta: &[S], x: &[S]) -> Result<Fields<S>> {
    check_len("model parameters", cfg.param_count(), theta.len())?;
    check_len("state", cfg.n, x.len())?;
    let [ra, rb, rk, re, rs] = cfg.layout();
    let zero = x[0].lift(0.0);
    let n = cfg.n;

    let a_tri = pack_strict_lower_in(
        zero,
        &mlp_forward(&cfg.widths(NetKind::A), &theta[ra], x)?,
        n,
    )?;
    let a = a_tri.zip_with(&a_tri.transpose(), |l, u| l - u);
    let b = pack_rect(&mlp_forward(&cfg.widths(NetKind::B), &theta[rb], x)?, n, cfg.r)?;
    let k_out = mlp_forward(&cfg.widths(NetKind::K), &theta[rk], x)?;
    let k = match cfg.d_mode {
        DMode::Cholesky => pack_lower(&k_out, cfg.r)?,
        DMode::Full => pack_rect(&k_out, cfg.r, cfg.r_prime)?,
    };
    let (energy, grad_e) = mlp_value_and_input_grad(&cfg.widths(NetKind::E), &theta[re], x)?;
    let (entropy, grad_s) = mlp_value_and_input_grad(&cfg.widths(NetKind::S), &theta[rs], x)?;
    Ok(Fields {
        a,
        b,
        k,
        energy,
        grad_e,
        entropy,
        grad_s,
    })
}

/// Learned vector field `L∇E + M∇S` for parameters `theta` at `x`.
///
/// Applies the operators without forming them: with `u = A∇S`,
/// `L v = A v - (u (∇S·v) - ∇S (u·v))/|∇S|²`, and `M∇S = W Wᵀ ∇S` with
/// `W = V K`.
pub fn rhs_with<S: Scalar>(cfg: &ModelConfig, theta: &[S], x: &[S]) -> Result<Vec<S>> {
    let f = eval_fields(cfg, theta, x)?;
    let threshold = degeneracy_threshold(x);
    let ge_norm = f.grad_e.iter().map(|v| v.value().powi(2)).sum::<f64>().sqrt();
    let gs_norm = f.grad_s.iter().map(|v| v.value().powi(2)).sum::<f64>().sqrt();
    check_nondegenerate("E", ge_norm, threshold)?;
    check_nondegenerate("S", gs_norm, threshold)?;

    let (ge, gs) = (&f.grad_e, &f.grad_s);
    let cs = S::dot(gs, gs);
    let u = f.a.matvec(gs);
    let av = f.a.matvec(ge);
    let gs_dot_v = S::dot(gs, ge);
    let u_dot_v = S::dot(&u, ge);
    let mut out: Vec<S> = (0..cfg.n)
        .map(|i| av[i] - (u[i] * gs_dot_v - gs[i] * u_dot_v) / cs)
        .collect();

    if !cfg.hamiltonian {
        let ce = S::dot(ge, ge);
        // Vᵀ ∇S = Bᵀ∇S - (Bᵀ∇E)(∇E·∇S)/|∇E|²
        let bt_gs = f.b.tr_matvec(gs);
        let bt_ge = f.b.tr_matvec(ge);
        let ge_gs = S::dot(ge, gs) / ce;
        let vt_gs: Vec<S> = bt_gs.iter().zip(&bt_ge).map(|(&p, &q)| p - q * ge_gs).collect();
        let w = f.k.tr_matvec(&vt_gs);
        let y = f.k.matvec(&w);
        let by = f.b.matvec(&y);
        let proj = S::dot(ge, &by) / ce;
        for i in 0..cfg.n {
            out[i] = out[i] + (by[i] - ge[i] * proj);
        }
    }

    if let Some(index) = out.iter().position(|v| !v.value().is_finite()) {
        return Err(Error::NonFiniteRhs { index });
    }
    Ok(out)
}

/// Learned metriplectic model: configuration plus flat parameters of the five
/// networks (order `A_tri`, `B`, `K`, `E`, `S`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetriplecticModel {
    pub config: ModelConfig,
    pub params: Vec<f64>,
}

/// Operators and gradients of a model at one state.
#[derive(Debug, Clone)]
pub struct Operators {
    pub a: Mat<f64>,
    pub l: Mat<f64>,
    pub m: Mat<f64>,
    pub grad_e: Vec<f64>,
    pub grad_s: Vec<f64>,
}

/// Structural residuals at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureResiduals {
    /// `max |L + Lᵀ|`.
    pub skew: f64,
    /// `max |M - Mᵀ|`.
    pub symmetry: f64,
    /// `λ_min(M) / |M|₂` (zero when `M = 0`).
    pub min_eig_rel: f64,
    /// `|L∇S| / (|A|₂ |∇S|)`.
    pub l_degeneracy: f64,
    /// `|M∇E| / (|M|₂ |∇E|)`.
    pub m_degeneracy: f64,
}

impl MetriplecticModel {
    /// Fresh model with Glorot-initialized networks.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.param_count());
        for (k, kind) in NetKind::ALL.into_iter().enumerate() {
            let net_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k as u64 + 1);
            params.extend(MlpParams::init(&config.widths(kind), net_seed)?.params);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        check_len("model parameters", config.param_count(), params.len())?;
        Ok(Self { config, params })
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// The parameters of one network.
    pub fn net(&self, kind: NetKind) -> MlpParams {
        let idx = NetKind::ALL.iter().position(|&k| k == kind).unwrap();
        let range = self.config.layout()[idx].clone();
        MlpParams {
            widths: self.config.widths(kind),
            params: self.params[range].to_vec(),
        }
    }

    pub fn set_net(&mut self, kind: NetKind, net: &MlpParams) -> Result<()> {
        let idx = NetKind::ALL.iter().position(|&k| k == kind).unwrap();
        let range = self.config.layout()[idx].clone();
        check_len("network parameters", range.len(), net.params.len())?;
        self.params[range].copy_from_slice(&net.params);
        Ok(())
    }

    pub fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        rhs_with(&self.config, &self.params, x)
    }

    pub fn fields(&self, x: &[f64]) -> Result<Fields<f64>> {
        eval_fields(&self.config, &self.params, x)
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        check_len("state", self.n(), x.len())?;
        Ok(self.net(NetKind::E).forward(x)?[0])
    }

    pub fn entropy(&self, x: &[f64]) -> Result<f64> {
        check_len("state", self.n(), x.len())?;
        Ok(self.net(NetKind::S).forward(x)?[0])
    }

    /// Assembled `L`, `M` (zero in Hamiltonian mode) and the gradients.
    pub fn operators(&self, x: &[f64]) -> Result<Operators> {
        let f = self.fields(x)?;
        let l = assemble_l(&f.a, &f.grad_s)?;
        let m = if self.config.hamiltonian {
            Mat::zeros(self.n(), self.n())
        } else {
            assemble_m_factored(&f.b, &f.k, &f.grad_e)?
        };
        Ok(Operators {
            a: f.a,
            l,
            m,
            grad_e: f.grad_e,
            grad_s: f.grad_s,
        })
    }

    pub fn structure_residuals(&self, x: &[f64]) -> Result<StructureResiduals> {
        let op = self.operators(x)?;
        Ok(structure_residuals(&op))
    }

    /// Max over index triples of the Jacobi-identity component residual, with
    /// state derivatives of `L` taken by central differences of step `h`.
    pub fn jacobi_residual(&self, x: &[f64], h: f64) -> Result<f64> {
        let n = self.n();
        if n > 12 {
            return Err(Error::InvalidArgument(format!(
                "Jacobi residual is O(n^4); n = {n} exceeds 12"
            )));
        }
        if !(1e-6..=1e-3).contains(&h) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step {h} outside [1e-6, 1e-3]"
            )));
        }
        let l_at = |y: &[f64]| -> Result<Mat<f64>> {
            let f = self.fields(y)?;
            assemble_l(&f.a, &f.grad_s)
        };
        let l0 = l_at(x)?;
        // dl[m] = ∂L/∂x_m
        let mut dl = Vec::with_capacity(n);
        let mut y = x.to_vec();
        for m in 0..n {
            y[m] = x[m] + h;
            let lp = l_at(&y)?;
            y[m] = x[m] - h;
            let lm = l_at(&y)?;
            y[m] = x[m];
            dl.push(lp.zip_with(&lm, |p, q| (p - q) / (2.0 * h)));
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for (m, d) in dl.iter().enumerate() {
                        acc += l0.get(i, m) * d.get(j, k)
                            + l0.get(j, m) * d.get(k, i)
                            + l0.get(k, m) * d.get(i, j);
                    }
                    worst = worst.max(acc.abs());
                }
            }
        }
        Ok(worst)
    }

    /// Random state with entries uniform in `[-scale, scale]`.
    pub fn random_state(&self, rng: &mut impl Rng, scale: f64) -> Vec<f64> {
        (0..self.n()).map(|_| rng.random_range(-scale..=scale)).collect()
    }

    /// Same model with every parameter shifted by Gaussian noise of scale `eps`.
    pub fn perturbed(&self, eps: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::StandardNormal;
        let params = self
            .params
            .iter()
            .map(|&p| p + eps * rng.sample::<f64, _>(normal))
            .collect();
        Self {
            config: self.config.clone(),
            params,
        }
    }
}

/// Skew/symmetry/PSD/degeneracy residuals of assembled operators.
pub fn structure_residuals(op: &Operators) -> StructureResiduals {
    let skew = op.l.zip_with(&op.l.transpose(), |a, b| a + b).max_abs();
    let symmetry = op.m.max_abs_diff(&op.m.transpose());
    let m_norm = op.m.spectral_norm();
    let a_norm = op.a.spectral_norm();
    let min_eig_rel = if m_norm > 0.0 {
        op.m.min_sym_eigenvalue() / m_norm
    } else {
        0.0
    };
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let l_degeneracy = ratio(
        norm_f64(&op.l.matvec(&op.grad_s)),
        a_norm * norm_f64(&op.grad_s),
    );
    let m_degeneracy = ratio(
        norm_f64(&op.m.matvec(&op.grad_e)),
        m_norm * norm_f64(&op.grad_e),
    );
    StructureResiduals {
        skew,
        symmetry,
        min_eig_rel,
        l_degeneracy,
        m_degeneracy,
    }
}

/// Energy and entropy rates `∇E·ẋ`, `∇S·ẋ` of a model at `x`.
pub fn rates(model: &MetriplecticModel, x: &[f64]) -> Result<(f64, f64)> {
    let f = model.fields(x)?;
    let v = model.rhs(x)?;
    Ok((dot_f64(&f.grad_e, &v), dot_f64(&f.grad_s, &v)))
}
