//! Monte Carlo error estimation and convergence fits.
//!
//! Trajectory `i` always draws its noise from `NoiseStream::new(kind, seed, i)`
//! and per-trajectory results are reduced in index order, so estimates are
//! bit-identical for any thread count.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{step_count, Integrator, IntegratorConfig, Method};
use crate::model::SdeProblem;
use crate::noise::{NoiseKind, NoiseStream};

pub type Observable<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Sum in a fixed binary tree, independent of how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    /// The error (or quantity) being estimated.
    pub value: f64,
    pub std_error: f64,
    /// Trajectories that contributed.
    pub samples: usize,
    /// Mean drift / diffusion evaluations per trajectory.
    pub mean_f_evals: f64,
    pub mean_g_evals: f64,
    pub diverged: usize,
    /// Signed Monte Carlo mean behind `value`.
    pub estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McSettings {
    pub samples: usize,
    pub seed: u64,
    pub noise: NoiseKind,
}

impl McSettings {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, noise: NoiseKind::Gaussian }
    }

    pub fn noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PathCost {
    f_evals: usize,
    g_evals: usize,
    last_stages: usize,
}

/// Advances `x` by `n` steps, accumulating increments into `wiener`.
fn advance(
    integ: &mut Integrator<'_>,
    x: &mut [f64],
    n: usize,
    stream: &mut NoiseStream,
    mut wiener: Option<&mut [f64]>,
    cost: &mut PathCost,
) -> Result<()> {
    for step in 0..n {
        let c = integ.step(x, stream, wiener.as_deref_mut()).map_err(|e| match e {
            Error::Divergence { stage, .. } => Error::Divergence { step, stage },
            other => other,
        })?;
        cost.f_evals += c.f_evals;
        cost.g_evals += c.g_evals;
        cost.last_stages = c.stages;
    }
    Ok(())
}

struct Outcome {
    value: f64,
    cost: PathCost,
}

/// Runs `per_path` for every trajectory index in parallel and reduces in
/// index order. Divergent trajectories are counted and left out.
fn ensemble<F>(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    samples: usize,
    per_path: F,
) -> Result<(Vec<Outcome>, usize, Option<Error>)>
where
    F: Fn(&mut Integrator<'_>, u64) -> Result<Outcome> + Sync,
{
    if samples == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    Integrator::new(problem, config.clone())?;
    let results: Vec<Result<Outcome>> = (0..samples as u64)
        .into_par_iter()
        .map_init(
            || Integrator::new(problem, config.clone()).expect("configuration validated above"),
            |integ, i| per_path(integ, i),
        )
        .collect();
    let mut ok = Vec::with_capacity(samples);
    let mut diverged = 0;
    let mut first_divergence = None;
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e @ Error::Divergence { .. }) => {
                diverged += 1;
                first_divergence.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((ok, diverged, first_divergence))
}

fn summarize(outcomes: &[Outcome], diverged: usize, first: Option<Error>, reference: f64) -> Result<McEstimate> {
    if outcomes.is_empty() {
        return Err(first.unwrap_or(Error::Divergence { step: 0, stage: 0 }));
    }
    let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let (mean, se) = mean_and_std_error(&values);
    let n = outcomes.len() as f64;
    let f: Vec<f64> = outcomes.iter().map(|o| o.cost.f_evals as f64).collect();
    let g: Vec<f64> = outcomes.iter().map(|o| o.cost.g_evals as f64).collect();
    Ok(McEstimate {
        value: (mean - reference).abs(),
        std_error: se,
        samples: outcomes.len(),
        mean_f_evals: pairwise_sum(&f) / n,
        mean_g_evals: pairwise_sum(&g) / n,
        diverged,
        estimate: mean,
    })
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `E |X(T) - X_N|`, comparing against the exact solution driven by the
/// same Brownian path, `W(T)` being the sum of the step increments.
pub fn strong_error(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    x0: &[f64],
    t_final: f64,
    settings: McSettings,
) -> Result<McEstimate> {
    if !problem.has_exact() {
        return Err(Error::Contract("strong error needs an exact pathwise solution".into()));
    }
    let n = step_count(t_final, config.h)?;
    let (out, diverged, first) = ensemble(problem, config, settings.samples, |integ, i| {
        let mut stream = NoiseStream::new(settings.noise, settings.seed, i);
        let mut x = x0.to_vec();
        let mut w = vec![0.0; problem.channels()];
        let mut cost = PathCost::default();
        advance(integ, &mut x, n, &mut stream, Some(&mut w), &mut cost)?;
        let mut exact = vec![0.0; x.len()];
        problem.exact(x0, t_final, &w, &mut exact)?;
        Ok(Outcome { value: norm_diff(&x, &exact), cost })
    })?;
    summarize(&out, diverged, first, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeakReference {
    /// Known `E phi(X(T))`.
    Value(f64),
    /// Difference against `phi` of the exact solution on the same path; the
    /// exact expectation cancels.
    Pathwise,
    /// Difference against the same method with step `h / refine`, the
    /// coarse increments being sums of the fine ones.
    FineStep { refine: usize },
}

/// `|E phi(X(T)) - E phi(X_N)|`.
pub fn weak_error(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    x0: &[f64],
    t_final: f64,
    settings: McSettings,
    observable: Observable<'_>,
    reference: WeakReference,
) -> Result<McEstimate> {
    let n = step_count(t_final, config.h)?;
    match reference {
        WeakReference::Value(v) => {
            let (out, diverged, first) = ensemble(problem, config, settings.samples, |integ, i| {
                let mut stream = NoiseStream::new(settings.noise, settings.seed, i);
                let mut x = x0.to_vec();
                let mut cost = PathCost::default();
                advance(integ, &mut x, n, &mut stream, None, &mut cost)?;
                Ok(Outcome { value: observable(&x), cost })
            })?;
            summarize(&out, diverged, first, v)
        }
        WeakReference::Pathwise => {
            if !problem.has_exact() {
                return Err(Error::Contract("pathwise weak reference needs an exact solution".into()));
            }
            let (out, diverged, first) = ensemble(problem, config, settings.samples, |integ, i| {
                let mut stream = NoiseStream::new(settings.noise, settings.seed, i);
                let mut x = x0.to_vec();
                let mut w = vec![0.0; problem.channels()];
                let mut cost = PathCost::default();
                advance(integ, &mut x, n, &mut stream, Some(&mut w), &mut cost)?;
                let mut exact = vec![0.0; x.len()];
                problem.exact(x0, t_final, &w, &mut exact)?;
                Ok(Outcome { value: observable(&x) - observable(&exact), cost })
            })?;
            summarize(&out, diverged, first, 0.0)
        }
        WeakReference::FineStep { refine } => {
            if refine < 2 {
                return Err(Error::Config("refinement factor must be at least 2".into()));
            }
            let fine_config = config.clone().with_h(config.h / refine as f64);
            Integrator::new(problem, fine_config.clone())?;
            let m = problem.channels();
            let (out, diverged, first) = ensemble(problem, config, settings.samples, |coarse, i| {
                let mut fine = Integrator::new(problem, fine_config.clone())?;
                let mut stream = NoiseStream::new(settings.noise, settings.seed, i);
                let mut xc = x0.to_vec();
                let mut xf = x0.to_vec();
                let mut dw_fine = vec![0.0; m];
                let mut dw_coarse = vec![0.0; m];
                let mut cost = PathCost::default();
                for step in 0..n {
                    dw_coarse.fill(0.0);
                    for _ in 0..refine {
                        stream.draw_increments_into(fine_config.h, &mut dw_fine);
                        for (a, b) in dw_coarse.iter_mut().zip(&dw_fine) {
                            *a += b;
                        }
                        fine.step_with_increments(&mut xf, &dw_fine).map_err(|e| relabel_step(e, step))?;
                    }
                    let c = coarse.step_with_increments(&mut xc, &dw_coarse).map_err(|e| relabel_step(e, step))?;
                    cost.f_evals += c.f_evals;
                    cost.g_evals += c.g_evals;
                }
                Ok(Outcome { value: observable(&xc) - observable(&xf), cost })
            })?;
            summarize(&out, diverged, first, 0.0)
        }
    }
}

fn relabel_step(e: Error, step: usize) -> Error {
    match e {
        Error::Divergence { stage, .. } => Error::Divergence { step, stage },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InvariantMode {
    /// `phi` of the (postprocessed) state at `T_long`, averaged over
    /// `settings.samples` trajectories.
    Ensemble,
    /// Average of `phi` along trajectory 0 after discarding
    /// `burn_in_fraction` of the steps; standard error from `batches` batch means.
    TimeAverage { burn_in_fraction: f64, batches: usize },
}

impl InvariantMode {
    pub fn time_average() -> Self {
        InvariantMode::TimeAverage { burn_in_fraction: 0.2, batches: 50 }
    }
}

/// `|E_mu phi - estimate|`, using postprocessed samples when the method has
/// a postprocessor.
#[allow(clippy::too_many_arguments)]
pub fn invariant_measure_error(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    x0: &[f64],
    t_long: f64,
    mode: InvariantMode,
    settings: McSettings,
    observable: Observable<'_>,
    reference: Option<f64>,
) -> Result<McEstimate> {
    let reference = reference.ok_or_else(|| Error::Contract("problem has no stationary reference".into()))?;
    let n = step_count(t_long, config.h)?;
    match mode {
        InvariantMode::Ensemble => {
            let (out, diverged, first) = ensemble(problem, config, settings.samples, |integ, i| {
                let mut stream = NoiseStream::new(settings.noise, settings.seed, i);
                let mut x = x0.to_vec();
                let mut cost = PathCost::default();
                advance(integ, &mut x, n, &mut stream, None, &mut cost)?;
                let value = if integ.postprocesses() && n > 0 {
                    let mut y = vec![0.0; x.len()];
                    integ.postprocess_into(&x, cost.last_stages, &mut stream, &mut y)?;
                    observable(&y)
                } else {
                    observable(&x)
                };
                Ok(Outcome { value, cost })
            })?;
            summarize(&out, diverged, first, reference)
        }
        InvariantMode::TimeAverage { burn_in_fraction, batches } => {
            if !(0.0..1.0).contains(&burn_in_fraction) || batches < 2 {
                return Err(Error::Config("need burn-in fraction in [0, 1) and at least 2 batches".into()));
            }
            let burn = (burn_in_fraction * n as f64).round() as usize;
            let kept = n - burn;
            if kept < batches {
                return Err(Error::Config(format!("{kept} samples after burn-in is fewer than {batches} batches")));
            }
            let mut integ = Integrator::new(problem, config.clone())?;
            let post = integ.postprocesses();
            let mut stream = NoiseStream::new(settings.noise, settings.seed, 0);
            let mut x = x0.to_vec();
            let mut y = vec![0.0; x.len()];
            let mut cost = PathCost::default();
            advance(&mut integ, &mut x, burn, &mut stream, None, &mut cost)?;
            let batch_len = kept / batches;
            // the first kept % batches samples go into the overall mean only
            let lead = kept - batch_len * batches;
            let mut batch_means = Vec::with_capacity(batches);
            let mut lead_values = Vec::with_capacity(lead);
            let mut current = Vec::with_capacity(batch_len);
            for k in 0..kept {
                let c = integ.step(&mut x, &mut stream, None).map_err(|e| relabel_step(e, burn + k))?;
                cost.f_evals += c.f_evals;
                cost.g_evals += c.g_evals;
                let v = if post {
                    integ.postprocess_into(&x, c.stages, &mut stream, &mut y)?;
                    observable(&y)
                } else {
                    observable(&x)
                };
                if k < lead {
                    lead_values.push(v);
                    continue;
                }
                current.push(v);
                if current.len() == batch_len {
                    batch_means.push(pairwise_sum(&current) / batch_len as f64);
                    current.clear();
                }
            }
            let (batch_mean, batch_se) = mean_and_std_error(&batch_means);
            let mean = (batch_mean * (batch_len * batches) as f64 + pairwise_sum(&lead_values)) / kept as f64;
            Ok(McEstimate {
                value: (mean - reference).abs(),
                std_error: batch_se,
                samples: kept,
                mean_f_evals: cost.f_evals as f64,
                mean_g_evals: cost.g_evals as f64,
                diverged: 0,
                estimate: mean,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceCount {
    pub samples: usize,
    pub diverged: usize,
    pub mean_f_evals: f64,
}

/// Number of trajectories on `[0, T]` that produce a non-finite value.
pub fn count_divergences(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    x0: &[f64],
    t_final: f64,
    settings: McSettings,
) -> Result<DivergenceCount> {
    let n = step_count(t_final, config.h)?;
    let (out, diverged, _) = ensemble(problem, config, settings.samples, |integ, i| {
        let mut stream = NoiseStream::new(settings.noise, settings.seed, i);
        let mut x = x0.to_vec();
        let mut cost = PathCost::default();
        advance(integ, &mut x, n, &mut stream, None, &mut cost)?;
        Ok(Outcome { value: 0.0, cost })
    })?;
    let f: Vec<f64> = out.iter().map(|o| o.cost.f_evals as f64).collect();
    let mean_f_evals = if f.is_empty() { f64::NAN } else { pairwise_sum(&f) / f.len() as f64 };
    Ok(DivergenceCount { samples: settings.samples, diverged, mean_f_evals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    pub std_error: f64,
    /// Mean drift evaluations per trajectory.
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, h: f64, estimate: &McEstimate) {
        self.rows.push(ConvergenceRow {
            h,
            error: estimate.value,
            std_error: estimate.std_error,
            cost: estimate.mean_f_evals,
        });
    }

    /// Rows whose error stands above three standard errors.
    pub fn usable_rows(&self) -> Vec<ConvergenceRow> {
        self.rows.iter().filter(|r| r.error > 0.0 && r.h > 0.0 && r.error > 3.0 * r.std_error).copied().collect()
    }

    pub fn fit_slope(&self) -> Result<f64> {
        fit_slope(self)
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("h,error,std_error,cost\n");
        for r in &self.rows {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", r.h, r.error, r.std_error, r.cost);
        }
        out
    }
}

/// Least-squares slope of `log error` against `log h` over the usable rows.
pub fn fit_slope(table: &ConvergenceTable) -> Result<f64> {
    let rows = table.usable_rows();
    if rows.len() < 3 {
        return Err(Error::InsufficientData { usable: rows.len(), needed: 3 });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData { usable: 1, needed: 3 });
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpdeCostRow {
    pub dt: f64,
    pub method: Method,
    pub eta: f64,
    pub steps: usize,
    pub min_stages: usize,
    pub max_stages: usize,
    /// Drift evaluations over `[0, T]`.
    pub f_evals: usize,
    /// Whether the realization stayed finite.
    pub finite: bool,
}

/// Runs one adaptive realization per `(method, dt)` and records the cost.
/// A divergent run still reports the cost of the steps it was scheduled for.
pub fn spde_cost_table(
    problem: &SdeProblem,
    x0: &[f64],
    t_final: f64,
    methods: &[(Method, Option<f64>)],
    dts: &[f64],
    seed: u64,
) -> Result<Vec<SpdeCostRow>> {
    let mut rows = Vec::new();
    for &(method, eta) in methods {
        for &dt in dts {
            let mut config = IntegratorConfig::new(method, dt).adaptive();
            config.eta = eta;
            let n = step_count(t_final, dt)?;
            let mut integ = Integrator::new(problem, config)?;
            let mut stream = NoiseStream::new(NoiseKind::Gaussian, seed, 0);
            let mut x = x0.to_vec();
            let (mut f_evals, mut min_s, mut max_s) = (0, usize::MAX, 0);
            let mut finite = true;
            for _ in 0..n {
                let planned = integ.stages_at(&x);
                min_s = min_s.min(planned);
                max_s = max_s.max(planned);
                match integ.step(&mut x, &mut stream, None) {
                    Ok(c) => f_evals += c.f_evals,
                    Err(Error::Divergence { .. }) => {
                        finite = false;
                        // the failed step plus the ones left, at the last planned stage count
                        let left = n + 1 - stream.step() as usize;
                        f_evals += method.f_evals(planned) * left;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            rows.push(SpdeCostRow {
                dt,
                method,
                eta: integ.eta_for(max_s.max(1)),
                steps: n,
                min_stages: if n == 0 { 0 } else { min_s },
                max_stages: max_s,
                f_evals,
                finite,
            });
        }
    }
    Ok(rows)
}

/// Stage count used at every step of one realization.
pub fn stage_history(
    problem: &SdeProblem,
    config: &IntegratorConfig,
    x0: &[f64],
    t_final: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = step_count(t_final, config.h)?;
    let mut integ = Integrator::new(problem, config.clone())?;
    let mut stream = NoiseStream::new(NoiseKind::Gaussian, seed, 0);
    let mut x = x0.to_vec();
    let mut stages = Vec::with_capacity(n);
    for step in 0..n {
        let c = integ.step(&mut x, &mut stream, None).map_err(|e| relabel_step(e, step))?;
        stages.push(c.stages);
    }
    Ok((stages, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_linear_test, make_ou};

    #[test]
    fn pairwise_matches_naive_sum() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
        let (m, se) = mean_and_std_error(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn slope_fit_exact_powers() {
        for order in [0.5, 1.0, 2.0] {
            let mut t = ConvergenceTable::new();
            for k in 1..6 {
                let h = 2f64.powi(-k);
                t.rows.push(ConvergenceRow { h, error: 3.0 * h.powf(order), std_error: 0.0, cost: 1.0 });
            }
            assert!((fit_slope(&t).unwrap() - order).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_fit_needs_three_rows_above_noise() {
        let mut t = ConvergenceTable::new();
        for k in 1..6 {
            let h = 2f64.powi(-k);
            let se = if k > 2 { h } else { 0.0 };
            t.rows.push(ConvergenceRow { h, error: h, std_error: se, cost: 1.0 });
        }
        assert!(matches!(fit_slope(&t), Err(Error::InsufficientData { usable: 2, needed: 3 })));
    }

    #[test]
    fn zero_noise_weak_error_is_deterministic_error() {
        let spec = make_linear_test(-2.0, 0.0).unwrap();
        let cfg = IntegratorConfig::new(Method::SkRock, 0.1).stages(2);
        let est = weak_error(
            &spec.problem,
            &cfg,
            &spec.x0,
            1.0,
            McSettings::new(10, 1),
            &|x: &[f64]| x[0],
            WeakReference::Value((-2.0f64).exp()),
        )
        .unwrap();
        let mut integ = Integrator::new(&spec.problem, cfg).unwrap();
        let mut x = vec![1.0];
        for _ in 0..10 {
            integ.step_with_increments(&mut x, &[0.0]).unwrap();
        }
        assert!((est.value - (x[0] - (-2.0f64).exp()).abs()).abs() < 1e-14);
        assert!(est.std_error.abs() < 1e-15);
        assert_eq!(est.mean_f_evals, 20.0);
    }

    #[test]
    fn strong_error_std_error_scales() {
        let spec = make_linear_test(-1.0, 0.5).unwrap();
        let cfg = IntegratorConfig::new(Method::SkRock, 0.25).stages(1);
        let a = strong_error(&spec.problem, &cfg, &spec.x0, 1.0, McSettings::new(1000, 3)).unwrap();
        let b = strong_error(&spec.problem, &cfg, &spec.x0, 1.0, McSettings::new(16000, 3)).unwrap();
        let ratio = a.std_error / b.std_error;
        assert!((ratio - 4.0).abs() < 0.6, "{ratio}");
    }

    #[test]
    fn missing_references_are_contract_errors() {
        let spec = make_ou(1.0, 1.0, 1, None).unwrap();
        let cfg = IntegratorConfig::new(Method::SkRock, 0.5);
        assert!(matches!(
            strong_error(&spec.problem, &cfg, &spec.x0, 1.0, McSettings::new(4, 0)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            invariant_measure_error(
                &spec.problem,
                &cfg,
                &spec.x0,
                1.0,
                InvariantMode::Ensemble,
                McSettings::new(4, 0),
                &|x: &[f64]| x[0],
                None
            ),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn results_independent_of_thread_count() {
        let spec = make_linear_test(-1.0, 0.5).unwrap();
        let cfg = IntegratorConfig::new(Method::SkRock, 0.125).stages(3);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| strong_error(&spec.problem, &cfg, &spec.x0, 1.0, McSettings::new(3000, 9)).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn ou_time_average_and_ensemble_agree() {
        let spec = make_ou(1.0, 2f64.sqrt(), 1, None).unwrap();
        let cfg = IntegratorConfig::new(Method::SkRock, 0.25).stages(3).eta(0.05);
        let phi = |x: &[f64]| x[0] * x[0];
        let reference = spec.stationary_second_moment(0);
        let ens = invariant_measure_error(
            &spec.problem,
            &cfg,
            &spec.x0,
            10.0,
            InvariantMode::Ensemble,
            McSettings::new(20000, 5),
            &phi,
            reference,
        )
        .unwrap();
        let ta = invariant_measure_error(
            &spec.problem,
            &cfg,
            &spec.x0,
            20000.0,
            InvariantMode::time_average(),
            McSettings::new(1, 6),
            &phi,
            reference,
        )
        .unwrap();
        let combined = (ens.std_error.powi(2) + ta.std_error.powi(2)).sqrt();
        assert!((ens.estimate - ta.estimate).abs() <= 3.0 * combined, "{ens:?} {ta:?}");
    }

    #[test]
    fn cost_equals_per_step_count_times_steps() {
        let spec = make_ou(1.0, 1.0, 2, None).unwrap();
        for method in [Method::EulerMaruyama, Method::SkRock, Method::PskRock, Method::SRock] {
            let cfg = IntegratorConfig::new(method, 0.1).stages(4).eta(0.05);
            let est = weak_error(
                &spec.problem,
                &cfg,
                &spec.x0,
                2.0,
                McSettings::new(8, 0),
                &|x: &[f64]| x[0],
                WeakReference::Value(0.0),
            )
            .unwrap();
            assert_eq!(est.mean_f_evals, (20 * method.f_evals(4)) as f64);
            assert_eq!(est.mean_g_evals, 20.0);
        }
    }
}
