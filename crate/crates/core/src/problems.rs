//! Built-in test problems.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Diffusion, SdeProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Reference {
    None,
    /// The problem carries a pathwise solution `(x0, t, W(t)) -> X(t)`.
    ExactPathwise,
    /// Stationary first and second moments, per coordinate.
    Stationary {
        mean: Vec<f64>,
        second_moment: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub id: &'static str,
    pub problem: SdeProblem,
    pub x0: Vec<f64>,
    /// Named parameter values, for CSV headers.
    pub parameters: Vec<(&'static str, f64)>,
    pub reference: Reference,
}

impl ProblemSpec {
    fn checked(self) -> Result<Self> {
        self.problem.validate(0x5eed)?;
        if self.x0.len() != self.problem.dim() {
            return Err(Error::InvalidInput(format!(
                "initial state has length {}, problem dimension is {}",
                self.x0.len(),
                self.problem.dim()
            )));
        }
        Ok(self)
    }

    pub fn stationary_second_moment(&self, coordinate: usize) -> Option<f64> {
        match &self.reference {
            Reference::Stationary { second_moment, .. } => second_moment.get(coordinate).copied(),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        let params: Vec<String> = self.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.id, params.join(","))
    }
}

pub const PROBLEM_IDS: [&str; 6] = ["lintest", "pb1", "population", "ou", "double_well", "heat_spde"];

/// Problem with default parameters by registry id.
pub fn problem_by_id(id: &str) -> Result<ProblemSpec> {
    match id {
        "lintest" => make_linear_test(-1.0, 0.5),
        "pb1" => make_pb1(),
        "population" => make_population(PopulationParams::default()),
        "ou" => make_ou(1.0, 2f64.sqrt(), 1, None),
        "double_well" => make_double_well(),
        "heat_spde" => make_heat_spde(100),
        other => {
            Err(Error::InvalidInput(format!("unknown problem '{other}', expected one of {}", PROBLEM_IDS.join(", "))))
        }
    }
}

/// `dX = lambda X dt + mu X dW`, `X(0) = 1`.
pub fn make_linear_test(lambda: f64, mu: f64) -> Result<ProblemSpec> {
    let problem = SdeProblem::new(
        1,
        Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = lambda * x[0]),
        Diffusion::General { channels: 1, g: Arc::new(move |x: &[f64], _, out: &mut [f64]| out[0] = mu * x[0]) },
    )
    .with_lambda_max(lambda.abs())
    .with_exact(Arc::new(move |x0: &[f64], t: f64, w: &[f64], out: &mut [f64]| {
        out[0] = x0[0] * ((lambda - 0.5 * mu * mu) * t + mu * w[0]).exp();
    }));
    ProblemSpec {
        id: "lintest",
        problem,
        x0: vec![1.0],
        parameters: vec![("lambda", lambda), ("mu", mu)],
        reference: Reference::ExactPathwise,
    }
    .checked()
}

/// `dX = (X/4 + sqrt(X^2+1)/2) dt + sqrt((X^2+1)/2) dW`, `X(0) = 0`,
/// solved by `X(t) = sinh(t/2 + W(t)/sqrt(2))`.
pub fn make_pb1() -> Result<ProblemSpec> {
    let problem = SdeProblem::new(
        1,
        Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 0.25 * x[0] + 0.5 * (x[0] * x[0] + 1.0).sqrt()),
        Diffusion::General {
            channels: 1,
            g: Arc::new(|x: &[f64], _, out: &mut [f64]| out[0] = (0.5 * (x[0] * x[0] + 1.0)).sqrt()),
        },
    )
    .with_exact(Arc::new(|x0: &[f64], t: f64, w: &[f64], out: &mut [f64]| {
        out[0] = (x0[0].asinh() + 0.5 * t + w[0] / 2f64.sqrt()).sinh();
    }));
    ProblemSpec { id: "pb1", problem, x0: vec![0.0], parameters: vec![], reference: Reference::ExactPathwise }.checked()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationParams {
    pub nu: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl Default for PopulationParams {
    /// The non-stiff case `-lambda1 = mu1 = 1`.
    fn default() -> Self {
        Self { nu: 2.0, lambda1: -1.0, lambda2: -1.0, mu1: 1.0, mu2: 0.5 }
    }
}

impl PopulationParams {
    /// `-lambda1 = mu1^2 = 100`.
    pub fn stiff() -> Self {
        Self { lambda1: -100.0, mu1: 10.0, ..Self::default() }
    }
}

/// Two-species population model with one noise channel, started at
/// `(0.95, 0.95)`; `lambda_max = |lambda1|`.
pub fn make_population(params: PopulationParams) -> Result<ProblemSpec> {
    let PopulationParams { nu, lambda1, lambda2, mu1, mu2 } = params;
    let problem = SdeProblem::new(
        2,
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = nu * (x[1] - 1.0) - lambda1 * x[0] * (1.0 - x[0]);
            out[1] = -lambda2 * x[1] * (1.0 - x[1]);
        }),
        Diffusion::General {
            channels: 1,
            g: Arc::new(move |x: &[f64], _, out: &mut [f64]| {
                out[0] = -mu1 * x[0] * (1.0 - x[0]);
                out[1] = -mu2 * x[1] * (1.0 - x[1]);
            }),
        },
    )
    .with_lambda_max(lambda1.abs());
    ProblemSpec {
        id: "population",
        problem,
        x0: vec![0.95, 0.95],
        parameters: vec![("nu", nu), ("lambda1", lambda1), ("lambda2", lambda2), ("mu1", mu1), ("mu2", mu2)],
        reference: Reference::None,
    }
    .checked()
}

/// `dX = M X dt + sigma dW` with diagonal `M`: `-delta` in every coordinate,
/// or the given eigenvalues. `X(0) = 2`.
pub fn make_ou(delta: f64, sigma: f64, d: usize, spectrum: Option<&[f64]>) -> Result<ProblemSpec> {
    let eigenvalues: Vec<f64> = match spectrum {
        Some(ev) => {
            if ev.len() != d {
                return Err(Error::InvalidInput(format!("{} eigenvalues given for dimension {d}", ev.len())));
            }
            ev.to_vec()
        }
        None => vec![-delta; d],
    };
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    if let Some(l) = eigenvalues.iter().find(|l| !(**l < 0.0)) {
        return Err(Error::InvalidInput(format!("OU eigenvalue {l} is not negative")));
    }
    let lambda_max = eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let second_moment: Vec<f64> = eigenvalues.iter().map(|l| sigma * sigma / (2.0 * l.abs())).collect();
    let ev = eigenvalues.clone();
    let problem = SdeProblem::new(
        d,
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            for i in 0..x.len() {
                out[i] = ev[i] * x[i];
            }
        }),
        Diffusion::AdditiveScalar(sigma),
    )
    .with_lambda_max(lambda_max);
    ProblemSpec {
        id: "ou",
        problem,
        x0: vec![2.0; d],
        parameters: vec![("delta", delta), ("sigma", sigma), ("d", d as f64)],
        reference: Reference::Stationary { mean: vec![0.0; d], second_moment },
    }
    .checked()
}

pub fn double_well_potential(x: f64) -> f64 {
    let a = 1.0 - x * x;
    0.25 * a * a
}

/// `dX = (X - X^3) dt + sqrt(2) dW`, `X(0) = 0`, with Gibbs reference moments
/// and the local stiffness `max(3x^2 - 1, 0)` as spectral radius.
pub fn make_double_well() -> Result<ProblemSpec> {
    let sigma = 2f64.sqrt();
    let mean = gibbs_expectation(&double_well_potential, sigma, &|x| x);
    let second = gibbs_expectation(&double_well_potential, sigma, &|x| x * x);
    let problem = SdeProblem::new(
        1,
        Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] - x[0] * x[0] * x[0]),
        Diffusion::AdditiveScalar(sigma),
    )
    .with_spectral_radius(Arc::new(|x: &[f64]| (3.0 * x[0] * x[0] - 1.0).max(0.0)))
    .with_gibbs_potential(Arc::new(|x: &[f64]| double_well_potential(x[0])));
    ProblemSpec {
        id: "double_well",
        problem,
        x0: vec![0.0],
        parameters: vec![("sigma", sigma)],
        reference: Reference::Stationary { mean: vec![mean], second_moment: vec![second] },
    }
    .checked()
}

/// `E phi` under the density proportional to `exp(-2 V / sigma^2)`:
/// trapezoid rule on `[-10, 10]`, doubling the nodes until the relative
/// change drops below `1e-10`.
pub fn gibbs_expectation(potential: &dyn Fn(f64) -> f64, sigma: f64, observable: &dyn Fn(f64) -> f64) -> f64 {
    let (a, b) = (-10.0, 10.0);
    let beta = 2.0 / (sigma * sigma);
    let weight = |x: f64| (-beta * potential(x)).exp();
    let mut n = 1024usize;
    let hx = (b - a) / n as f64;
    let mut z = 0.5 * (weight(a) + weight(b));
    let mut m = 0.5 * (weight(a) * observable(a) + weight(b) * observable(b));
    for j in 1..n {
        let x = a + hx * j as f64;
        let w = weight(x);
        z += w;
        m += w * observable(x);
    }
    let mut estimate = m / z;
    while n < 1 << 24 {
        // add the midpoints of the current grid
        let hx = (b - a) / n as f64;
        for j in 0..n {
            let x = a + hx * (j as f64 + 0.5);
            let w = weight(x);
            z += w;
            m += w * observable(x);
        }
        n *= 2;
        let next = m / z;
        let change = (next - estimate).abs();
        estimate = next;
        if change <= 1e-10 * estimate.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    estimate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HeatInitial {
    /// `u(0, x) = 5 cos(pi x)`, compatible with the boundary conditions.
    Cosine,
    Constant(f64),
}

/// Finite-difference stochastic heat equation on `[0, 1]` with `u(t, 0) = 5`
/// and a zero-flux right end.
pub fn make_heat_spde(n: usize) -> Result<ProblemSpec> {
    make_heat_spde_with(n, HeatInitial::Cosine, 1.0)
}

/// Unknowns `u_1..u_N` at `x_i = i/N`; the noise on `u_i` is
/// `noise_amplitude * u_i / sqrt(dx) dw_i`.
pub fn make_heat_spde_with(n: usize, initial: HeatInitial, noise_amplitude: f64) -> Result<ProblemSpec> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("grid size must be at least 2, got {n}")));
    }
    let dx = 1.0 / n as f64;
    let inv_dx2 = 1.0 / (dx * dx);
    let boundary = 5.0;
    let noise_scale = noise_amplitude / dx.sqrt();
    let problem = SdeProblem::new(
        n,
        Arc::new(move |u: &[f64], out: &mut [f64]| {
            let n = u.len();
            out[0] = (u[1] - 2.0 * u[0] + boundary) * inv_dx2;
            for i in 1..n - 1 {
                out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv_dx2;
            }
            // ghost value u_{N+1} = u_{N-1}
            out[n - 1] = (2.0 * u[n - 2] - 2.0 * u[n - 1]) * inv_dx2;
        }),
        Diffusion::Diagonal(Arc::new(move |u: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(u) {
                *o = noise_scale * v;
            }
        })),
    )
    .with_lambda_max(4.0 * inv_dx2);
    let x0 = (1..=n)
        .map(|i| match initial {
            HeatInitial::Cosine => 5.0 * (std::f64::consts::PI * i as f64 * dx).cos(),
            HeatInitial::Constant(c) => c,
        })
        .collect();
    ProblemSpec {
        id: "heat_spde",
        problem,
        x0,
        parameters: vec![("n", n as f64), ("noise_amplitude", noise_amplitude)],
        reference: Reference::None,
    }
    .checked()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_all_ids() {
        for id in PROBLEM_IDS {
            assert_eq!(problem_by_id(id).unwrap().id, id);
        }
        assert!(matches!(problem_by_id("nope"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pb1_exact_values() {
        let p = make_pb1().unwrap();
        let mut out = [0.0];
        p.problem.exact(&[0.0], 1.0, &[0.0], &mut out).unwrap();
        assert!((out[0] - 0.5f64.sinh()).abs() < 1e-15);
        assert!((out[0] - 0.521095).abs() < 1e-6);
        p.problem.exact(&[0.0], 0.0, &[0.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn pb1_exact_solves_the_sde_locally() {
        // one Euler step from the exact solution matches the next exact value
        // up to the local error, which shrinks like h for the increment below
        let p = make_pb1().unwrap();
        let mut prev_err = f64::INFINITY;
        for h in [1e-2f64, 1e-3, 1e-4] {
            let (t, w) = (0.3, 0.2);
            let dw = 0.5 * h.sqrt();
            let mut x = [0.0];
            let mut y = [0.0];
            p.problem.exact(&[0.0], t, &[w], &mut x).unwrap();
            p.problem.exact(&[0.0], t + h, &[w + dw], &mut y).unwrap();
            let (mut f, mut g) = ([0.0], [0.0]);
            p.problem.drift(&x, &mut f);
            p.problem.diffusion(&x, 0, &mut g);
            // Milstein correction g g' (dw^2 - h)/2 with g g' = x/2
            let predicted = x[0] + f[0] * h + g[0] * dw + 0.25 * x[0] * (dw * dw - h);
            let err = (predicted - y[0]).abs();
            assert!(err < prev_err / 10.0, "h={h}: {err}");
            prev_err = err;
        }
    }

    #[test]
    fn linear_test_exact_second_moment() {
        let (lambda, mu, t) = (-1.0, 0.8, 0.7);
        let p = make_linear_test(lambda, mu).unwrap();
        // E X^2 by Gauss-Hermite-free quadrature over W(t) ~ N(0, t)
        let n = 20000;
        let (mut acc, mut norm) = (0.0, 0.0);
        for j in 0..=n {
            let z = -10.0 + 20.0 * j as f64 / n as f64;
            let w = (-z * z / 2.0).exp();
            let mut out = [0.0];
            p.problem.exact(&[1.0], t, &[z * t.sqrt()], &mut out).unwrap();
            acc += w * out[0] * out[0];
            norm += w;
        }
        let expect = ((2.0 * lambda + mu * mu) * t).exp();
        assert!((acc / norm - expect).abs() < 1e-10);
        assert_eq!(p.problem.lambda_max(), Some(1.0));
    }

    #[test]
    fn population_fixed_point() {
        let p = make_population(PopulationParams::stiff()).unwrap();
        let mut out = [1.0; 2];
        p.problem.drift(&[1.0, 1.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        p.problem.diffusion(&[1.0, 1.0], 0, &mut out);
        assert_eq!(out, [0.0, 0.0]);
        assert_eq!(p.problem.lambda_max(), Some(100.0));
        assert_eq!(p.x0, vec![0.95, 0.95]);
    }

    #[test]
    fn ou_reference_and_errors() {
        let p = make_ou(1.0, 2f64.sqrt(), 1, None).unwrap();
        assert!((p.stationary_second_moment(0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(p.x0, vec![2.0]);
        let p = make_ou(1.0, 1.0, 3, Some(&[-1.0, -4.0, -0.5])).unwrap();
        assert_eq!(p.stationary_second_moment(1), Some(0.125));
        assert_eq!(p.problem.lambda_max(), Some(4.0));
        assert!(make_ou(1.0, 1.0, 2, Some(&[-1.0, 0.0])).is_err());
        assert!(make_ou(-1.0, 1.0, 1, None).is_err());
    }

    #[test]
    fn double_well_reference() {
        let p = make_double_well().unwrap();
        let Reference::Stationary { mean, second_moment } = &p.reference else { panic!() };
        assert!(mean[0].abs() < 1e-12);
        // independent check: Simpson with 10^4 nodes
        let n = 10_000;
        let h = 20.0 / n as f64;
        let (mut z, mut m) = (0.0, 0.0);
        for j in 0..=n {
            let x = -10.0 + h * j as f64;
            let w = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let e = (-double_well_potential(x)).exp();
            z += w * e;
            m += w * e * x * x;
        }
        assert!((second_moment[0] - m / z).abs() < 1e-9, "{} vs {}", second_moment[0], m / z);
        let mut out = [0.0];
        for x in [-1.0, 0.0, 1.0] {
            p.problem.drift(&[x], &mut out);
            assert_eq!(out[0], 0.0);
        }
        assert_eq!(p.problem.lambda_max_at(&[0.0]), Some(0.0));
        assert_eq!(p.problem.lambda_max_at(&[2.0]), Some(11.0));
    }

    #[test]
    fn gaussian_gibbs_moment() {
        // V = x^2/2, sigma = sqrt(2): N(0, 1)
        let v = gibbs_expectation(&|x| 0.5 * x * x, 2f64.sqrt(), &|x| x * x);
        assert!((v - 1.0).abs() < 1e-10);
    }

    fn heat_matrix(n: usize) -> Vec<Vec<f64>> {
        // columns of the linear part f(e_j) - f(0)
        let p = make_heat_spde(n).unwrap();
        let zero = vec![0.0; n];
        let mut f0 = vec![0.0; n];
        p.problem.drift(&zero, &mut f0);
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut fe = vec![0.0; n];
                p.problem.drift(&e, &mut fe);
                fe.iter().zip(&f0).map(|(a, b)| a - b).collect()
            })
            .collect()
    }

    #[test]
    fn heat_operator_spectrum() {
        let n = 12;
        let cols = heat_matrix(n);
        let dx = 1.0 / n as f64;
        // symmetric after scaling the last row by 1/sqrt(2)
        let scale = |i: usize| if i == n - 1 { 0.5f64.sqrt() } else { 1.0 };
        for i in 0..n {
            for j in 0..n {
                let a = cols[j][i] * scale(i) / scale(j);
                let b = cols[i][j] * scale(j) / scale(i);
                assert!((a - b).abs() < 1e-9);
            }
        }
        // eigenvector check for lambda_k = -(4/dx^2) sin^2((2k-1) pi / (4N))
        for k in 1..=n {
            let theta = (2 * k - 1) as f64 * std::f64::consts::PI / (2.0 * n as f64);
            let v: Vec<f64> = (1..=n).map(|i| (theta * i as f64).sin()).collect();
            let lambda = -4.0 / (dx * dx) * (theta / 2.0).sin().powi(2);
            assert!(lambda < 0.0 && lambda >= -4.0 / (dx * dx));
            for i in 0..n {
                let mv: f64 = (0..n).map(|j| cols[j][i] * v[j]).sum();
                assert!((mv - lambda * v[i]).abs() < 1e-8 * (1.0 / (dx * dx)));
            }
        }
    }

    #[test]
    fn heat_constant_is_stationary() {
        let p = make_heat_spde_with(50, HeatInitial::Constant(5.0), 0.0).unwrap();
        let mut out = vec![1.0; 50];
        p.problem.drift(&p.x0, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-9));
        let q = make_heat_spde(100).unwrap();
        assert_eq!(q.problem.lambda_max(), Some(40000.0));
        assert!((q.x0[0] - 5.0 * (std::f64::consts::PI / 100.0).cos()).abs() < 1e-15);
        assert!(make_heat_spde(1).is_err());
    }
}
