//! Time integration: classical RK4 and the Dormand–Prince 5(4) pair.
//!
//! Both integrators are generic over [`Scalar`], so running them on tape
//! variables records every accepted stage for differentiation. Step-size
//! control only ever looks at plain values, which keeps controller decisions
//! out of the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Dopri5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Fixed step for RK4.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            dt: 1e-3,
            rtol: 1e-7,
            atol: 1e-9,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver tolerances and step must be positive (rtol={}, atol={}, dt={})",
                self.rtol, self.atol, self.dt
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// States sampled on a time grid; row `i` is the state at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self { times, states };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::Dimension {
                what: "trajectory rows",
                expected: self.times.len(),
                got: self.states.len(),
            });
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("trajectory times must be strictly increasing".into()));
        }
        let n = self.dim();
        for (i, s) in self.states.iter().enumerate() {
            if s.len() != n {
                return Err(Error::Dimension {
                    what: "trajectory state",
                    expected: n,
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite state at row {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }
}

fn check_stage<S: Scalar>(k: &[S], stage: usize, t: f64) -> Result<()> {
    if k.iter().all(|v| v.value().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteStage { stage, t })
    }
}

/// `x + Σ_j c_j k_j` componentwise.
fn combine<S: Scalar>(x: &[S], coeffs: &[f64], ks: &[&[S]]) -> Vec<S> {
    let mut cs = Vec::with_capacity(coeffs.len() + 1);
    cs.push(1.0);
    cs.extend_from_slice(coeffs);
    let mut terms = Vec::with_capacity(cs.len());
    (0..x.len())
        .map(|i| {
            terms.clear();
            terms.push(x[i]);
            terms.extend(ks.iter().map(|k| k[i]));
            S::lincomb(&cs, &terms)
        })
        .collect()
}

/// One classical RK4 step.
pub fn rk4_step<S, F>(f: &mut F, t: f64, x: &[S], dt: f64) -> Result<Vec<S>>
where
    S: Scalar,
    F: FnMut(f64, &[S]) -> Result<Vec<S>>,
{
    let k1 = f(t, x)?;
    check_stage(&k1, 1, t)?;
    let k2 = f(t + 0.5 * dt, &combine(x, &[0.5 * dt], &[&k1]))?;
    check_stage(&k2, 2, t)?;
    let k3 = f(t + 0.5 * dt, &combine(x, &[0.5 * dt], &[&k2]))?;
    check_stage(&k3, 3, t)?;
    let k4 = f(t + dt, &combine(x, &[dt], &[&k3]))?;
    check_stage(&k4, 4, t)?;
    let w = dt / 6.0;
    Ok(combine(x, &[w, 2.0 * w, 2.0 * w, w], &[&k1, &k2, &k3, &k4]))
}

/// `steps` RK4 steps of size `dt` from `(t0, x0)`; returns all `steps + 1` states.
pub fn rk4_integrate<S, F>(mut f: F, t0: f64, x0: &[S], dt: f64, steps: usize) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    F: FnMut(f64, &[S]) -> Result<Vec<S>>,
{
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for s in 0..steps {
        let t = t0 + s as f64 * dt;
        let next = rk4_step(&mut f, t, out.last().unwrap(), dt)?;
        out.push(next);
    }
    Ok(out)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (Hairer & Wanner, DOPRI5 dense output).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

fn rms_scaled(v: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, sc) in v {
        sum += (x / sc).powi(2);
        n += 1;
    }
    (sum / n.max(1) as f64).sqrt()
}

fn initial_step<S, F>(f: &mut F, t0: f64, y0: &[S], f0: &[S], span: f64, cfg: &SolverConfig) -> Result<f64>
where
    S: Scalar,
    F: FnMut(f64, &[S]) -> Result<Vec<S>>,
{
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.value().abs()).collect();
    let d0 = rms_scaled(y0.iter().zip(&sk).map(|(y, s)| (y.value(), *s)));
    let d1 = rms_scaled(f0.iter().zip(&sk).map(|(y, s)| (y.value(), *s)));
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let detached: Vec<S> = y0
        .iter()
        .zip(f0)
        .map(|(y, k)| y.lift(y.value() + h0 * k.value()))
        .collect();
    let f1 = f(t0 + h0, &detached)?;
    let d2 = rms_scaled(
        f1.iter()
            .zip(f0)
            .zip(&sk)
            .map(|((a, b), s)| (a.value() - b.value(), *s)),
    ) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Dormand–Prince integration reporting states at the (sorted) `t_eval`
/// times; `t_eval[0]` is the initial time. Interior outputs use the
/// continuous extension of the accepted step that contains them.
pub fn dopri5_integrate<S, F>(mut f: F, x0: &[S], t_eval: &[f64], cfg: &SolverConfig) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    F: FnMut(f64, &[S]) -> Result<Vec<S>>,
{
    cfg.validate()?;
    let (&t0, &tf) = match (t_eval.first(), t_eval.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidArgument("t_eval must be nonempty".into())),
    };
    if t_eval.windows(2).any(|w| w[1] < w[0]) || !t_eval.iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidArgument("t_eval must be sorted ascending".into()));
    }
    let mut out: Vec<Vec<S>> = Vec::with_capacity(t_eval.len());
    let mut next = 0;
    while next < t_eval.len() && t_eval[next] == t0 {
        out.push(x0.to_vec());
        next += 1;
    }
    if next == t_eval.len() {
        return Ok(out);
    }

    let mut t = t0;
    let mut y = x0.to_vec();
    let mut k1 = f(t, &y)?;
    check_stage(&k1, 1, t)?;
    let mut h = initial_step(&mut f, t, &y, &k1, tf - t0, cfg)?;
    let mut facold: f64 = 1e-4;
    let mut rejected_last = false;
    let mut steps = 0usize;
    let expo = 0.2 - BETA * 0.75;

    while next < t_eval.len() {
        if steps >= cfg.max_steps {
            return Err(Error::Stiffness {
                max_steps: cfg.max_steps,
                t,
            });
        }
        if h < 1e-14 * t.abs() || h <= 0.0 {
            return Err(Error::StepUnderflow { t, h });
        }
        if t + 1.01 * h >= tf {
            h = tf - t;
        }
        steps += 1;

        let k2 = f(t + C2 * h, &combine(&y, &[h * A21], &[&k1]))?;
        check_stage(&k2, 2, t)?;
        let k3 = f(t + C3 * h, &combine(&y, &[h * A31, h * A32], &[&k1, &k2]))?;
        check_stage(&k3, 3, t)?;
        let k4 = f(
            t + C4 * h,
            &combine(&y, &[h * A41, h * A42, h * A43], &[&k1, &k2, &k3]),
        )?;
        check_stage(&k4, 4, t)?;
        let k5 = f(
            t + C5 * h,
            &combine(&y, &[h * A51, h * A52, h * A53, h * A54], &[&k1, &k2, &k3, &k4]),
        )?;
        check_stage(&k5, 5, t)?;
        let k6 = f(
            t + h,
            &combine(
                &y,
                &[h * A61, h * A62, h * A63, h * A64, h * A65],
                &[&k1, &k2, &k3, &k4, &k5],
            ),
        )?;
        check_stage(&k6, 6, t)?;
        let y5 = combine(
            &y,
            &[h * A71, h * A73, h * A74, h * A75, h * A76],
            &[&k1, &k3, &k4, &k5, &k6],
        );
        let k7 = f(t + h, &y5)?;
        check_stage(&k7, 7, t)?;

        // Detached error estimate.
        let err = rms_scaled((0..y.len()).map(|i| {
            let e = h
                * (E1 * k1[i].value()
                    + E3 * k3[i].value()
                    + E4 * k4[i].value()
                    + E5 * k5[i].value()
                    + E6 * k6[i].value()
                    + E7 * k7[i].value());
            let sc = cfg.atol + cfg.rtol * y[i].value().abs().max(y5[i].value().abs());
            (e, sc)
        }));
        if !err.is_finite() {
            h *= FAC_MIN;
            rejected_last = true;
            continue;
        }
        let fac11 = err.powf(expo);

        if err <= 1.0 {
            let t_new = if h == tf - t { tf } else { t + h };
            while next < t_eval.len() && t_eval[next] <= t_new {
                let te = t_eval[next];
                if te == t_new {
                    out.push(y5.clone());
                } else {
                    out.push(dense_output(&y, &y5, [&k1, &k3, &k4, &k5, &k6, &k7], (te - t) / h, h));
                }
                next += 1;
            }
            let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if rejected_last {
                h_new = h_new.min(h);
            }
            facold = err.max(1e-4);
            rejected_last = false;
            t = t_new;
            y = y5;
            k1 = k7;
            h = h_new;
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            rejected_last = true;
        }
    }
    Ok(out)
}

/// Order-4 interpolant at fraction `s` of an accepted step of size `h`.
fn dense_output<S: Scalar>(y: &[S], y5: &[S], k: [&[S]; 6], s: f64, h: f64) -> Vec<S> {
    let s1 = 1.0 - s;
    let q = s * s * s1;
    let qq = q * s1;
    let coeffs = [
        1.0 - s + s * s1 - 2.0 * q,
        s - s * s1 + 2.0 * q,
        h * (s * s1 - q + qq * D1),
        h * qq * D3,
        h * qq * D4,
        h * qq * D5,
        h * qq * D6,
        h * (-q + qq * D7),
    ];
    let mut terms = Vec::with_capacity(8);
    (0..y.len())
        .map(|i| {
            terms.clear();
            terms.push(y[i]);
            terms.push(y5[i]);
            terms.extend(k.iter().map(|ki| ki[i]));
            S::lincomb(&coeffs, &terms)
        })
        .collect()
}

/// Plain-value Dormand–Prince solve.
pub fn dopri5_solve<F>(f: F, x0: &[f64], t_eval: &[f64], cfg: &SolverConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let states = dopri5_integrate(f, x0, t_eval, cfg)?;
    Ok(Trajectory {
        times: t_eval.to_vec(),
        states,
    })
}

/// Solve with either method. RK4 uses `cfg.dt`, shortened to land on each
/// requested time.
pub fn solve<S, F>(mut f: F, x0: &[S], t_eval: &[f64], cfg: &SolverConfig) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    F: FnMut(f64, &[S]) -> Result<Vec<S>>,
{
    match cfg.method {
        Method::Dopri5 => dopri5_integrate(f, x0, t_eval, cfg),
        Method::Rk4 => {
            cfg.validate()?;
            let mut out = Vec::with_capacity(t_eval.len());
            let Some(&t0) = t_eval.first() else {
                return Err(Error::InvalidArgument("t_eval must be nonempty".into()));
            };
            let mut t = t0;
            let mut y = x0.to_vec();
            let mut steps = 0usize;
            for &te in t_eval {
                if te < t {
                    return Err(Error::InvalidArgument("t_eval must be sorted ascending".into()));
                }
                while te - t > 1e-12 * te.abs().max(1.0) {
                    let h = cfg.dt.min(te - t);
                    y = rk4_step(&mut f, t, &y, h)?;
                    t += h;
                    steps += 1;
                    if steps > cfg.max_steps {
                        return Err(Error::Stiffness {
                            max_steps: cfg.max_steps,
                            t,
                        });
                    }
                }
                t = te;
                out.push(y.clone());
            }
            Ok(out)
        }
    }
}

/// Dormand–Prince run whose accepted stages are recorded on the tape carrying
/// `x0` and whatever parameters `f` closes over.
pub fn integrate_recorded<'t, F>(
    f: F,
    x0: &[Var<'t>],
    t_eval: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Vec<Var<'t>>>>
where
    F: FnMut(f64, &[Var<'t>]) -> Result<Vec<Var<'t>>>,
{
    dopri5_integrate(f, x0, t_eval, cfg)
}
