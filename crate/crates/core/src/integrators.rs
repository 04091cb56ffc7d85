//! One-step maps: Euler–Maruyama, SK-ROCK, PSK-ROCK and S-ROCK.
//!
//! The stage recurrences keep only two previous stages. Every step function
//! comes in two forms: one drawing its increments from a [`NoiseStream`] and
//! one taking the increments explicitly, which is what coupled experiments
//! and the linear-test checks use.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cheb::{build_coefficients, stage_selection, MethodCoefficients};
use crate::error::{Error, Result};
use crate::model::SdeProblem;
use crate::noise::NoiseStream;
use crate::stability::srock_optimal_damping;

pub const DEFAULT_ETA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[value(alias = "euler_maruyama", alias = "em")]
    EulerMaruyama,
    #[value(alias = "sk_rock")]
    SkRock,
    #[value(alias = "psk_rock")]
    PskRock,
    #[value(alias = "s_rock")]
    SRock,
}

impl Method {
    /// Drift evaluations of one step with `s` stages.
    pub fn f_evals(self, s: usize) -> usize {
        match self {
            Method::EulerMaruyama => 1,
            Method::SkRock | Method::SRock => s,
            Method::PskRock => s + 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::EulerMaruyama => "euler-maruyama",
            Method::SkRock => "sk-rock",
            Method::PskRock => "psk-rock",
            Method::SRock => "s-rock",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageMode {
    Fixed(usize),
    /// `s` chosen every step from `h * lambda_max`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Damping. `None` means 0.05 for SK-ROCK / PSK-ROCK and the optimized
    /// per-`s` damping for S-ROCK.
    pub eta: Option<f64>,
    pub stage_mode: StageMode,
    pub h: f64,
}

impl IntegratorConfig {
    pub fn new(method: Method, h: f64) -> Self {
        Self { method, eta: None, stage_mode: StageMode::Fixed(1), h }
    }

    pub fn stages(mut self, s: usize) -> Self {
        self.stage_mode = StageMode::Fixed(s);
        self
    }

    pub fn adaptive(mut self) -> Self {
        self.stage_mode = StageMode::Adaptive;
        self
    }

    pub fn eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub f_evals: usize,
    pub g_evals: usize,
}

/// Scratch buffers for one trajectory.
#[derive(Debug, Clone)]
pub struct Workspace {
    q: Vec<f64>,
    arg: Vec<f64>,
    f_a: Vec<f64>,
    f_b: Vec<f64>,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    pub fn new(d: usize) -> Self {
        let z = vec![0.0; d];
        Self {
            q: z.clone(),
            arg: z.clone(),
            f_a: z.clone(),
            f_b: z.clone(),
            prev: z.clone(),
            cur: z.clone(),
            next: z.clone(),
            scratch: z,
        }
    }
}

#[inline]
fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|a| a.is_finite())
}

/// Index of the stage that produced a non-finite value.
type StageFailure = usize;

fn em_in_place(
    problem: &SdeProblem,
    x: &mut [f64],
    h: f64,
    dw: &[f64],
    ws: &mut Workspace,
) -> Result<(), StageFailure> {
    problem.noise_term(x, dw, &mut ws.q, &mut ws.scratch);
    problem.drift(x, &mut ws.f_a);
    for i in 0..x.len() {
        x[i] += h * ws.f_a[i] + ws.q[i];
    }
    if all_finite(x) {
        Ok(())
    } else {
        Err(1)
    }
}

#[derive(Clone, Copy)]
enum FirstStage {
    /// Noise injected inside the first stage, with the second-difference
    /// correction weighted by `alpha` (zero for plain SK-ROCK).
    Stochastic { alpha: f64 },
    /// Plain Chebyshev first stage; noise added after the last stage.
    Deterministic,
}

fn chebyshev_in_place(
    problem: &SdeProblem,
    c: &MethodCoefficients,
    x: &mut [f64],
    h: f64,
    dw: &[f64],
    ws: &mut Workspace,
    first: FirstStage,
) -> Result<(), StageFailure> {
    let d = x.len();
    ws.prev.copy_from_slice(x);
    match first {
        FirstStage::Stochastic { alpha } => {
            problem.noise_term(x, dw, &mut ws.q, &mut ws.scratch);
            let (nu1, mu1, kappa1) = (c.nu1(), c.mu1(), c.kappa1());
            for i in 0..d {
                ws.arg[i] = x[i] + nu1 * ws.q[i];
            }
            problem.drift(&ws.arg, &mut ws.f_a);
            for i in 0..d {
                ws.cur[i] = x[i] + mu1 * h * ws.f_a[i] + kappa1 * ws.q[i];
            }
            if alpha != 0.0 {
                // alpha h (f(X0 + nu1 Q) - 2 f(X0) + f(X0 - nu1 Q)), reusing f(X0 + nu1 Q)
                problem.drift(x, &mut ws.f_b);
                for i in 0..d {
                    ws.cur[i] += alpha * h * (ws.f_a[i] - 2.0 * ws.f_b[i]);
                    ws.arg[i] = x[i] - nu1 * ws.q[i];
                }
                problem.drift(&ws.arg, &mut ws.f_b);
                for i in 0..d {
                    ws.cur[i] += alpha * h * ws.f_b[i];
                }
            }
        }
        FirstStage::Deterministic => {
            problem.drift(x, &mut ws.f_a);
            let mu1 = c.mu1();
            for i in 0..d {
                ws.cur[i] = x[i] + mu1 * h * ws.f_a[i];
            }
        }
    }
    if !all_finite(&ws.cur) {
        return Err(1);
    }
    for stage in 2..=c.s {
        problem.drift(&ws.cur, &mut ws.f_a);
        let (mu, nu, kappa) = (c.mu[stage], c.nu[stage], c.kappa[stage]);
        for i in 0..d {
            ws.next[i] = mu * h * ws.f_a[i] + nu * ws.cur[i] + kappa * ws.prev[i];
        }
        if !all_finite(&ws.next) {
            return Err(stage);
        }
        std::mem::swap(&mut ws.prev, &mut ws.cur);
        std::mem::swap(&mut ws.cur, &mut ws.next);
    }
    if let FirstStage::Deterministic = first {
        problem.noise_term(&ws.cur, dw, &mut ws.q, &mut ws.scratch);
        for i in 0..d {
            ws.cur[i] += ws.q[i];
        }
        if !all_finite(&ws.cur) {
            return Err(c.s);
        }
    }
    x.copy_from_slice(&ws.cur);
    Ok(())
}

fn check_step_args(problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64]) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
    }
    if x.len() != problem.dim() {
        return Err(Error::InvalidInput(format!(
            "state has length {}, problem dimension is {}",
            x.len(),
            problem.dim()
        )));
    }
    if dw.len() != problem.channels() {
        return Err(Error::InvalidInput(format!("{} increments given for {} channels", dw.len(), problem.channels())));
    }
    Ok(())
}

fn one_step(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    dw: &[f64],
    coeffs: Option<&MethodCoefficients>,
    method: Method,
) -> Result<StepResult> {
    check_step_args(problem, x, h, dw)?;
    let mut ws = Workspace::new(problem.dim());
    let mut state = x.to_vec();
    let outcome = match (method, coeffs) {
        (Method::EulerMaruyama, _) => em_in_place(problem, &mut state, h, dw, &mut ws),
        (Method::SkRock, Some(c)) => {
            chebyshev_in_place(problem, c, &mut state, h, dw, &mut ws, FirstStage::Stochastic { alpha: 0.0 })
        }
        (Method::PskRock, Some(c)) => {
            chebyshev_in_place(problem, c, &mut state, h, dw, &mut ws, FirstStage::Stochastic { alpha: c.alpha })
        }
        (Method::SRock, Some(c)) => {
            chebyshev_in_place(problem, c, &mut state, h, dw, &mut ws, FirstStage::Deterministic)
        }
        (_, None) => unreachable!("stabilized methods always carry coefficients"),
    };
    outcome.map_err(|stage| Error::Divergence { step: 0, stage })?;
    let s = coeffs.map_or(1, |c| c.s);
    Ok(StepResult { state, f_evals: method.f_evals(s), g_evals: 1 })
}

pub fn em_step_with_increments(problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64]) -> Result<StepResult> {
    one_step(problem, x, h, dw, None, Method::EulerMaruyama)
}

pub fn em_step(problem: &SdeProblem, x: &[f64], h: f64, stream: &mut NoiseStream) -> Result<StepResult> {
    let dw = stream.draw_increments(h, problem.channels());
    em_step_with_increments(problem, x, h, &dw)
}

pub fn skrock_step_with_increments(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    coeffs: &MethodCoefficients,
    dw: &[f64],
) -> Result<StepResult> {
    one_step(problem, x, h, dw, Some(coeffs), Method::SkRock)
}

pub fn skrock_step(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    coeffs: &MethodCoefficients,
    stream: &mut NoiseStream,
) -> Result<StepResult> {
    let dw = stream.draw_increments(h, problem.channels());
    skrock_step_with_increments(problem, x, h, coeffs, &dw)
}

pub fn pskrock_step_with_increments(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    coeffs: &MethodCoefficients,
    dw: &[f64],
) -> Result<StepResult> {
    one_step(problem, x, h, dw, Some(coeffs), Method::PskRock)
}

pub fn pskrock_step(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    coeffs: &MethodCoefficients,
    stream: &mut NoiseStream,
) -> Result<StepResult> {
    let dw = stream.draw_increments(h, problem.channels());
    pskrock_step_with_increments(problem, x, h, coeffs, &dw)
}

pub fn srock_step_with_increments(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    coeffs: &MethodCoefficients,
    dw: &[f64],
) -> Result<StepResult> {
    one_step(problem, x, h, dw, Some(coeffs), Method::SRock)
}

pub fn srock_step(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    coeffs: &MethodCoefficients,
    stream: &mut NoiseStream,
) -> Result<StepResult> {
    let dw = stream.draw_increments(h, problem.channels());
    srock_step_with_increments(problem, x, h, coeffs, &dw)
}

/// `x + c sigma sqrt(h) xi` for an explicit `xi`.
pub fn postprocess_with_noise(problem: &SdeProblem, x: &[f64], c: f64, h: f64, xi: &[f64]) -> Result<Vec<f64>> {
    let sigma = problem
        .additive_sigma()
        .ok_or_else(|| Error::Contract("postprocessor requires additive scalar noise".into()))?;
    let scale = c * sigma * h.sqrt();
    Ok(x.iter().zip(xi).map(|(a, b)| a + scale * b).collect())
}

/// Output-only correction `x + c sigma sqrt(h) xi` with fresh `xi` from the
/// postprocessor substream.
pub fn postprocess(problem: &SdeProblem, x: &[f64], c: f64, h: f64, stream: &mut NoiseStream) -> Result<Vec<f64>> {
    if problem.additive_sigma().is_none() {
        return Err(Error::Contract("postprocessor requires additive scalar noise".into()));
    }
    let xi = stream.draw_postprocess_noise(x.len());
    postprocess_with_noise(problem, x, c, h, &xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepCost {
    pub stages: usize,
    pub f_evals: usize,
    pub g_evals: usize,
}

/// A configured integrator bound to one problem, with memoized coefficients
/// and reusable buffers.
pub struct Integrator<'p> {
    problem: &'p SdeProblem,
    config: IntegratorConfig,
    coefficients: HashMap<usize, Arc<MethodCoefficients>>,
    ws: Workspace,
    dw: Vec<f64>,
    xi: Vec<f64>,
}

impl<'p> Integrator<'p> {
    pub fn new(problem: &'p SdeProblem, config: IntegratorConfig) -> Result<Self> {
        if !(config.h > 0.0) || !config.h.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", config.h)));
        }
        if let Some(eta) = config.eta {
            if !(eta >= 0.0) {
                return Err(Error::Config(format!("damping must be >= 0, got {eta}")));
            }
        }
        match config.stage_mode {
            StageMode::Fixed(0) => return Err(Error::Config("stage count must be at least 1".into())),
            StageMode::Adaptive if config.method != Method::EulerMaruyama => {
                let x0 = vec![0.0; problem.dim()];
                if problem.lambda_max_at(&x0).is_none() {
                    return Err(Error::Config("adaptive stage selection needs a lambda_max bound".into()));
                }
            }
            _ => {}
        }
        Ok(Self {
            problem,
            config,
            coefficients: HashMap::new(),
            ws: Workspace::new(problem.dim()),
            dw: vec![0.0; problem.channels()],
            xi: vec![0.0; problem.dim()],
        })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn problem(&self) -> &SdeProblem {
        self.problem
    }

    /// Damping used with `s` stages.
    pub fn eta_for(&self, s: usize) -> f64 {
        match (self.config.method, self.config.eta) {
            (_, Some(eta)) => eta,
            (Method::SRock, None) => srock_optimal_damping(s).eta,
            (_, None) => DEFAULT_ETA,
        }
    }

    pub fn coefficients(&mut self, s: usize) -> Result<Arc<MethodCoefficients>> {
        if let Some(c) = self.coefficients.get(&s) {
            return Ok(c.clone());
        }
        let c = Arc::new(build_coefficients(s, self.eta_for(s))?);
        self.coefficients.insert(s, c.clone());
        Ok(c)
    }

    /// Stage count for a step starting at `x`.
    pub fn stages_at(&self, x: &[f64]) -> usize {
        match (self.config.method, self.config.stage_mode) {
            (Method::EulerMaruyama, _) => 1,
            (_, StageMode::Fixed(s)) => s,
            (method, StageMode::Adaptive) => {
                let hl = self.config.h * self.problem.lambda_max_at(x).unwrap_or(0.0);
                match (method, self.config.eta) {
                    (Method::SRock, None) => crate::stability::srock_stage_selection(hl),
                    (Method::SRock, Some(eta)) => crate::stability::srock_stage_selection_fixed_damping(hl, eta),
                    (_, eta) => stage_selection(hl, eta.unwrap_or(DEFAULT_ETA)),
                }
            }
        }
    }

    /// Advances `x` by one step using the given increments. On failure the
    /// error carries the failing stage; `x` is left unspecified.
    pub fn step_with_increments(&mut self, x: &mut [f64], dw: &[f64]) -> Result<StepCost> {
        let h = self.config.h;
        let method = self.config.method;
        let s = self.stages_at(x);
        let outcome = match method {
            Method::EulerMaruyama => em_in_place(self.problem, x, h, dw, &mut self.ws),
            _ => {
                let c = self.coefficients(s)?;
                let first = match method {
                    Method::SkRock => FirstStage::Stochastic { alpha: 0.0 },
                    Method::PskRock => FirstStage::Stochastic { alpha: c.alpha },
                    _ => FirstStage::Deterministic,
                };
                chebyshev_in_place(self.problem, &c, x, h, dw, &mut self.ws, first)
            }
        };
        outcome.map_err(|stage| Error::Divergence { step: 0, stage })?;
        Ok(StepCost { stages: s, f_evals: method.f_evals(s), g_evals: 1 })
    }

    /// Draws the step increments from `stream` (accumulating them into
    /// `wiener` when given) and advances `x`.
    pub fn step(&mut self, x: &mut [f64], stream: &mut NoiseStream, wiener: Option<&mut [f64]>) -> Result<StepCost> {
        let mut dw = std::mem::take(&mut self.dw);
        stream.draw_increments_into(self.config.h, &mut dw);
        if let Some(w) = wiener {
            for (a, b) in w.iter_mut().zip(&dw) {
                *a += b;
            }
        }
        let out = self.step_with_increments(x, &dw);
        self.dw = dw;
        out
    }

    /// Postprocessed sample for a state produced with `s` stages.
    pub fn postprocess_into(&mut self, x: &[f64], s: usize, stream: &mut NoiseStream, out: &mut [f64]) -> Result<()> {
        let sigma = self
            .problem
            .additive_sigma()
            .ok_or_else(|| Error::Contract("postprocessor requires additive scalar noise".into()))?;
        let c = self.coefficients(s)?.c()?;
        stream.draw_postprocess_noise_into(&mut self.xi);
        let scale = c * sigma * self.config.h.sqrt();
        for i in 0..x.len() {
            out[i] = x[i] + scale * self.xi[i];
        }
        Ok(())
    }

    /// Whether samples from this integrator get the postprocessor applied.
    pub fn postprocesses(&self) -> bool {
        self.config.method == Method::PskRock && self.problem.additive_sigma().is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub state: Vec<f64>,
    /// Final state after the postprocessor (PSK-ROCK on additive problems).
    pub postprocessed: Option<Vec<f64>>,
    /// `W(T)`, the sum of all increments drawn.
    pub wiener: Vec<f64>,
    pub steps: usize,
    pub f_evals: usize,
    pub g_evals: usize,
    pub min_stages: usize,
    pub max_stages: usize,
}

/// Number of steps of size `h` in `[0, t_final]`; rejects non-integer ratios.
pub fn step_count(t_final: f64, h: f64) -> Result<usize> {
    if !(t_final >= 0.0) || !(h > 0.0) {
        return Err(Error::Config(format!("need T >= 0 and h > 0, got T={t_final}, h={h}")));
    }
    let n = (t_final / h).round();
    if (n * h - t_final).abs() > 1e-9 * t_final.max(h) {
        return Err(Error::Config(format!("T={t_final} is not an integer multiple of h={h}")));
    }
    Ok(n as usize)
}

pub fn integrate(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    x0: &[f64],
    t_final: f64,
    stream: &mut NoiseStream,
) -> Result<TrajectorySummary> {
    if x0.len() != problem.dim() {
        return Err(Error::InvalidInput(format!("initial state has length {}, expected {}", x0.len(), problem.dim())));
    }
    let n = step_count(t_final, config.h)?;
    let mut integrator = Integrator::new(problem, config.clone())?;
    let mut x = x0.to_vec();
    let mut wiener = vec![0.0; problem.channels()];
    let (mut f_evals, mut g_evals) = (0, 0);
    let (mut min_stages, mut max_stages) = (usize::MAX, 0);
    let mut last_stages = integrator.stages_at(&x);
    for step in 0..n {
        let cost = integrator.step(&mut x, stream, Some(&mut wiener)).map_err(|e| match e {
            Error::Divergence { stage, .. } => Error::Divergence { step, stage },
            other => other,
        })?;
        f_evals += cost.f_evals;
        g_evals += cost.g_evals;
        min_stages = min_stages.min(cost.stages);
        max_stages = max_stages.max(cost.stages);
        last_stages = cost.stages;
    }
    if n == 0 {
        min_stages = 0;
    }
    let postprocessed = if integrator.postprocesses() && n > 0 {
        let mut out = vec![0.0; x.len()];
        integrator.postprocess_into(&x, last_stages, stream, &mut out)?;
        Some(out)
    } else {
        None
    };
    Ok(TrajectorySummary { state: x, postprocessed, wiener, steps: n, f_evals, g_evals, min_stages, max_stages })
}
