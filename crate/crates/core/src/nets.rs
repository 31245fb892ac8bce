//! Multilayer perceptrons and the packing maps that turn flat network outputs
//! into structured matrix fields.
//!
//! Parameter layout of an MLP with widths `w_0, ..., w_L` is, layer by layer,
//! the `w_{k+1} x w_k` weight matrix in row-major order followed by the
//! `w_{k+1}` biases. Hidden layers use `tanh`; the output layer is affine.
//!
//! All packing maps fill entries row-major, e.g. the strictly lower part of a
//! 3x3 matrix is filled in the order (1,0), (2,0), (2,1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{check_len, Error, Result};
use crate::tape::Scalar;

/// `n choose 2`.
pub fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Number of weights and biases of an MLP with the given widths.
pub fn mlp_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

pub fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidArgument(format!("zero layer width in {widths:?}")));
    }
    Ok(())
}

/// Weights and biases of one tanh MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(mlp_param_count(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        validate_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; mlp_param_count(widths)],
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.widths, &self.params, x)
    }
}

/// Evaluates the MLP described by `widths` with parameters `theta` at `x`.
pub fn mlp_forward<S: Scalar>(widths: &[usize], theta: &[S], x: &[S]) -> Result<Vec<S>> {
    check_len("MLP parameters", mlp_param_count(widths), theta.len())?;
    check_len("MLP input", widths[0], x.len())?;
    let mut h: Vec<S> = x.to_vec();
    let mut offset = 0;
    let layers = widths.len() - 1;
    for (k, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = &theta[offset..offset + fan_in * fan_out];
        let bias = &theta[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        offset += (fan_in + 1) * fan_out;
        let z: Vec<S> = (0..fan_out)
            .map(|j| S::dot(&weights[j * fan_in..(j + 1) * fan_in], &h) + bias[j])
            .collect();
        h = if k + 1 < layers {
            z.into_iter().map(S::tanh).collect()
        } else {
            z
        };
    }
    Ok(h)
}

/// Output and input-gradient of a scalar-valued MLP.
///
/// The gradient is built from the same primitives as the forward pass, so on
/// a tape it is itself differentiable with respect to the parameters.
pub fn mlp_value_and_input_grad<S: Scalar>(
    widths: &[usize],
    theta: &[S],
    x: &[S],
) -> Result<(S, Vec<S>)> {
    check_len("MLP parameters", mlp_param_count(widths), theta.len())?;
    check_len("MLP input", widths[0], x.len())?;
    if *widths.last().unwrap() != 1 {
        return Err(Error::InvalidArgument(
            "input gradient requires a scalar-valued MLP".into(),
        ));
    }
    let layers = widths.len() - 1;
    // Forward, keeping hidden activations and layer offsets.
    let mut acts: Vec<Vec<S>> = Vec::with_capacity(layers);
    let mut offsets = Vec::with_capacity(layers);
    let mut h: Vec<S> = x.to_vec();
    let mut offset = 0;
    for (k, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        offsets.push(offset);
        let weights = &theta[offset..offset + fan_in * fan_out];
        let bias = &theta[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        offset += (fan_in + 1) * fan_out;
        let z: Vec<S> = (0..fan_out)
            .map(|j| S::dot(&weights[j * fan_in..(j + 1) * fan_in], &h) + bias[j])
            .collect();
        acts.push(std::mem::take(&mut h));
        h = if k + 1 < layers {
            z.into_iter().map(S::tanh).collect()
        } else {
            z
        };
    }
    let value = h[0];

    // Backward by hand: start from the output row, walk down the layers.
    let last_in = widths[layers - 1];
    let mut g: Vec<S> = theta[offsets[layers - 1]..offsets[layers - 1] + last_in].to_vec();
    for k in (0..layers - 1).rev() {
        let (fan_in, fan_out) = (widths[k], widths[k + 1]);
        // acts[k + 1] holds tanh(z_k).
        let gz: Vec<S> = g
            .iter()
            .zip(&acts[k + 1])
            .map(|(&gi, &t)| gi - gi * t * t)
            .collect();
        let weights = &theta[offsets[k]..offsets[k] + fan_in * fan_out];
        g = (0..fan_in)
            .map(|i| {
                let col: Vec<S> = (0..fan_out).map(|j| weights[j * fan_in + i]).collect();
                S::dot(&col, &gz)
            })
            .collect();
    }
    Ok((value, g))
}

/// How the symmetric factor `D = K Kᵀ` is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DMode {
    /// Lower-triangular `r x r` factor, `C(r+1, 2)` outputs.
    Cholesky,
    /// Full `r x r'` factor, `r * r'` outputs.
    Full,
}

/// Dimensions and architecture of a metriplectic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// State dimension.
    pub n: usize,
    /// Rank bound of the irreversible operator.
    pub r: usize,
    /// Inner width of the full `K` factor (ignored in Cholesky mode).
    pub r_prime: usize,
    pub d_mode: DMode,
    /// Forces `M = 0`.
    pub hamiltonian: bool,
    pub hidden_a: Vec<usize>,
    pub hidden_b: Vec<usize>,
    pub hidden_k: Vec<usize>,
    pub hidden_e: Vec<usize>,
    pub hidden_s: Vec<usize>,
}

/// Index of each network inside a model's parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    A,
    B,
    K,
    E,
    S,
}

impl NetKind {
    pub const ALL: [NetKind; 5] = [NetKind::A, NetKind::B, NetKind::K, NetKind::E, NetKind::S];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::A => "a_tri",
            NetKind::B => "b",
            NetKind::K => "k",
            NetKind::E => "energy",
            NetKind::S => "entropy",
        }
    }
}

impl ModelConfig {
    /// Same hidden widths for every network, Cholesky mode.
    pub fn uniform(n: usize, r: usize, hidden: &[usize]) -> Self {
        Self {
            n,
            r,
            r_prime: r,
            d_mode: DMode::Cholesky,
            hamiltonian: false,
            hidden_a: hidden.to_vec(),
            hidden_b: hidden.to_vec(),
            hidden_k: hidden.to_vec(),
            hidden_e: hidden.to_vec(),
            hidden_s: hidden.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "state dimension must be at least 2, got {}",
                self.n
            )));
        }
        if self.r == 0 || self.r > self.n {
            return Err(Error::InvalidArgument(format!(
                "rank r = {} must satisfy 1 <= r <= n = {}",
                self.r, self.n
            )));
        }
        if self.d_mode == DMode::Full && self.r_prime < self.r {
            return Err(Error::InvalidArgument(format!(
                "r' = {} must be at least r = {}",
                self.r_prime, self.r
            )));
        }
        for kind in NetKind::ALL {
            validate_widths(&self.widths(kind))?;
        }
        Ok(())
    }

    /// Number of columns of `K`.
    pub fn k_cols(&self) -> usize {
        match self.d_mode {
            DMode::Cholesky => self.r,
            DMode::Full => self.r_prime,
        }
    }

    pub fn output_dim(&self, kind: NetKind) -> usize {
        match kind {
            NetKind::A => choose2(self.n),
            NetKind::B => self.n * self.r,
            NetKind::K => match self.d_mode {
                DMode::Cholesky => choose2(self.r + 1),
                DMode::Full => self.r * self.r_prime,
            },
            NetKind::E | NetKind::S => 1,
        }
    }

    fn hidden(&self, kind: NetKind) -> &[usize] {
        match kind {
            NetKind::A => &self.hidden_a,
            NetKind::B => &self.hidden_b,
            NetKind::K => &self.hidden_k,
            NetKind::E => &self.hidden_e,
            NetKind::S => &self.hidden_s,
        }
    }

    pub fn widths(&self, kind: NetKind) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden(kind).len() + 2);
        w.push(self.n);
        w.extend_from_slice(self.hidden(kind));
        w.push(self.output_dim(kind));
        w
    }

    /// Total count of learnable scalar functions (network outputs).
    pub fn learnable_functions(&self) -> usize {
        NetKind::ALL.iter().map(|&k| self.output_dim(k)).sum()
    }

    /// Parameter ranges of the five networks in the flat parameter vector.
    pub fn layout(&self) -> [std::ops::Range<usize>; 5] {
        let mut start = 0;
        NetKind::ALL.map(|k| {
            let len = mlp_param_count(&self.widths(k));
            let r = start..start + len;
            start += len;
            r
        })
    }

    pub fn param_count(&self) -> usize {
        NetKind::ALL
            .iter()
            .map(|&k| mlp_param_count(&self.widths(k)))
            .sum()
    }
}

/// Fills the strictly lower triangle of an `n x n` matrix, row-major.
///
/// For `n <= 1` there are no entries to infer a scalar context from; use
/// [`pack_strict_lower_in`] there.
pub fn pack_strict_lower<S: Scalar>(v: &[S], n: usize) -> Result<Mat<S>> {
    check_len("strictly lower triangle", choose2(n), v.len())?;
    let zero = v
        .first()
        .map(|x| x.lift(0.0))
        .ok_or_else(|| Error::InvalidArgument("strictly lower part of a 1x1 matrix is empty".into()))?;
    pack_strict_lower_in(zero, v, n)
}

/// As [`pack_strict_lower`], with an explicit zero of the right scalar context.
pub fn pack_strict_lower_in<S: Scalar>(zero: S, v: &[S], n: usize) -> Result<Mat<S>> {
    check_len("strictly lower triangle", choose2(n), v.len())?;
    let mut m = Mat::filled(n, n, zero);
    let mut k = 0;
    for i in 0..n {
        for j in 0..i {
            m.set(i, j, v[k]);
            k += 1;
        }
    }
    Ok(m)
}

pub fn unpack_strict_lower<S: Scalar>(m: &Mat<S>) -> Vec<S> {
    let n = m.rows();
    let mut v = Vec::with_capacity(choose2(n));
    for i in 0..n {
        for j in 0..i {
            v.push(m.get(i, j));
        }
    }
    v
}

/// Fills the lower triangle (diagonal included) of an `r x r` matrix, row-major.
pub fn pack_lower<S: Scalar>(v: &[S], r: usize) -> Result<Mat<S>> {
    check_len("lower triangle", choose2(r + 1), v.len())?;
    let zero = v
        .first()
        .map(|x| x.lift(0.0))
        .ok_or_else(|| Error::InvalidArgument("lower-triangular factor needs r >= 1".into()))?;
    let mut m = Mat::filled(r, r, zero);
    let mut k = 0;
    for i in 0..r {
        for j in 0..=i {
            m.set(i, j, v[k]);
            k += 1;
        }
    }
    Ok(m)
}

pub fn unpack_lower<S: Scalar>(m: &Mat<S>) -> Vec<S> {
    let r = m.rows();
    let mut v = Vec::with_capacity(choose2(r + 1));
    for i in 0..r {
        for j in 0..=i {
            v.push(m.get(i, j));
        }
    }
    v
}

/// Row-major `rows x cols` matrix from a flat vector.
pub fn pack_rect<S: Scalar>(v: &[S], rows: usize, cols: usize) -> Result<Mat<S>> {
    check_len("rectangular matrix", rows * cols, v.len())?;
    Ok(Mat::from_vec(rows, cols, v.to_vec()))
}

pub fn unpack_rect<S: Scalar>(m: &Mat<S>) -> Vec<S> {
    m.data().to_vec()
}
