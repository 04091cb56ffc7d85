//! Autonomous Ito SDEs `dX = f(X) dt + sum_r g^r(X) dW_r`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `g^r(x)` written into the output slice for channel `r`.
pub type ChannelDiffusionFn = Arc<dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync>;
/// Diagonal noise: `out[i]` is the only nonzero entry of `g^i(x)`.
pub type DiagonalDiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Pathwise solution `(x0, t, W(t)) -> X(t)`.
pub type ExactFn = Arc<dyn Fn(&[f64], f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Diffusion {
    General {
        channels: usize,
        g: ChannelDiffusionFn,
    },
    Diagonal(DiagonalDiffusionFn),
    /// `g^r = sigma e_r`, one channel per coordinate.
    AdditiveScalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKind {
    General,
    AdditiveScalar,
    Diagonal,
}

#[derive(Clone)]
pub struct SdeProblem {
    dim: usize,
    drift: DriftFn,
    diffusion: Diffusion,
    lambda_max: Option<f64>,
    spectral_radius: Option<ScalarFn>,
    exact: Option<ExactFn>,
    gibbs_potential: Option<ScalarFn>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("dim", &self.dim)
            .field("channels", &self.channels())
            .field("diffusion_kind", &self.diffusion_kind())
            .field("lambda_max", &self.lambda_max)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl SdeProblem {
    pub fn new(dim: usize, drift: DriftFn, diffusion: Diffusion) -> Self {
        Self { dim, drift, diffusion, lambda_max: None, spectral_radius: None, exact: None, gibbs_potential: None }
    }

    pub fn with_lambda_max(mut self, lambda_max: f64) -> Self {
        self.lambda_max = Some(lambda_max);
        self
    }

    /// State-dependent spectral radius bound, preferred over the constant
    /// `lambda_max` when present.
    pub fn with_spectral_radius(mut self, rho: ScalarFn) -> Self {
        self.spectral_radius = Some(rho);
        self
    }

    pub fn with_exact(mut self, exact: ExactFn) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn with_gibbs_potential(mut self, potential: ScalarFn) -> Self {
        self.gibbs_potential = Some(potential);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        match &self.diffusion {
            Diffusion::General { channels, .. } => *channels,
            Diffusion::Diagonal(_) | Diffusion::AdditiveScalar(_) => self.dim,
        }
    }

    pub fn diffusion_kind(&self) -> DiffusionKind {
        match self.diffusion {
            Diffusion::General { .. } => DiffusionKind::General,
            Diffusion::Diagonal(_) => DiffusionKind::Diagonal,
            Diffusion::AdditiveScalar(_) => DiffusionKind::AdditiveScalar,
        }
    }

    pub fn additive_sigma(&self) -> Option<f64> {
        match self.diffusion {
            Diffusion::AdditiveScalar(sigma) => Some(sigma),
            _ => None,
        }
    }

    pub fn lambda_max(&self) -> Option<f64> {
        self.lambda_max
    }

    /// Spectral radius bound at `x`: the state-dependent estimate if one was
    /// supplied, otherwise the constant bound.
    pub fn lambda_max_at(&self, x: &[f64]) -> Option<f64> {
        match &self.spectral_radius {
            Some(rho) => Some(rho(x)),
            None => self.lambda_max,
        }
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn exact(&self, x0: &[f64], t: f64, w: &[f64], out: &mut [f64]) -> Result<()> {
        let exact =
            self.exact.as_ref().ok_or_else(|| Error::Contract("problem has no exact pathwise solution".into()))?;
        exact(x0, t, w, out);
        Ok(())
    }

    pub fn gibbs_potential(&self) -> Option<&ScalarFn> {
        self.gibbs_potential.as_ref()
    }

    #[inline]
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    /// `g^r(x)`.
    pub fn diffusion(&self, x: &[f64], r: usize, out: &mut [f64]) {
        match &self.diffusion {
            Diffusion::General { g, .. } => g(x, r, out),
            Diffusion::Diagonal(g) => {
                let mut diag = vec![0.0; self.dim];
                g(x, &mut diag);
                out.fill(0.0);
                out[r] = diag[r];
            }
            Diffusion::AdditiveScalar(sigma) => {
                out.fill(0.0);
                out[r] = *sigma;
            }
        }
    }

    /// `Q = sum_r g^r(x) dw_r`; `scratch` must have length `dim`.
    #[inline]
    pub fn noise_term(&self, x: &[f64], dw: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match &self.diffusion {
            Diffusion::General { g, channels } => {
                out.fill(0.0);
                for r in 0..*channels {
                    g(x, r, scratch);
                    for (o, v) in out.iter_mut().zip(scratch.iter()) {
                        *o += v * dw[r];
                    }
                }
            }
            Diffusion::Diagonal(g) => {
                g(x, out);
                for (o, w) in out.iter_mut().zip(dw) {
                    *o *= w;
                }
            }
            Diffusion::AdditiveScalar(sigma) => {
                for (o, w) in out.iter_mut().zip(dw) {
                    *o = sigma * w;
                }
            }
        }
    }

    /// Evaluates drift and diffusion on a random state and checks the
    /// results are finite.
    pub fn validate(&self, seed: u64) -> Result<()> {
        if self.dim == 0 || self.channels() == 0 {
            return Err(Error::InvalidInput("dimension and channel count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut out = vec![0.0; self.dim];
        self.drift(&x, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("drift is not finite at a sample state".into()));
        }
        for r in 0..self.channels() {
            self.diffusion(&x, r, &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("diffusion channel {r} is not finite at a sample state")));
            }
        }
        Ok(())
    }
}

/// Power iteration for the spectral radius of an affine drift
/// `f(x) = M x + b`, using `f(v) - f(0)` as the matrix-vector product.
pub fn estimate_lambda_max_linear(problem: &SdeProblem, iterations: usize, seed: u64) -> f64 {
    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zero = vec![0.0; d];
    let mut f0 = vec![0.0; d];
    problem.drift(&zero, &mut f0);
    let mut fv = vec![0.0; d];
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        problem.drift(&v, &mut fv);
        for (a, b) in fv.iter_mut().zip(&f0) {
            *a -= b;
        }
        estimate = fv.iter().map(|a| a * a).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut fv);
    }
    estimate
}
