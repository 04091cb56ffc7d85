//! Mean-square stability of the linear test `dX = lambda X dt + mu X dW`
//! with `p = lambda h`, `q = mu sqrt(h)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::cheb::{cheb_t_closed, cheb_tu};
use crate::error::{Error, Result};
use crate::integrators::Method;

/// Slack on `amplification <= 1`, absorbing rounding in the recurrences.
pub const AMPLIFICATION_SLACK: f64 = 1e-12;

/// `omega0`, `omega1` and the normalisations `T_s(omega0)`, `U_{s-1}(omega0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPolynomials {
    pub s: usize,
    pub eta: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub t_omega0: f64,
    pub u_omega0: f64,
}

impl StabilityPolynomials {
    pub fn new(s: usize, eta: f64) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidInput("stage count must be at least 1".into()));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidInput(format!("damping must be finite and >= 0, got {eta}")));
        }
        let sf = s as f64;
        let omega0 = 1.0 + eta / (sf * sf);
        let (t, u) = cheb_tu(s, omega0);
        if !t.is_finite() || !u.is_finite() {
            return Err(Error::Capacity { s, eta, index: s });
        }
        Ok(Self { s, eta, omega0, omega1: t / (sf * u), t_omega0: t, u_omega0: u })
    }

    pub fn argument(&self, p: f64) -> f64 {
        self.omega0 + self.omega1 * p
    }

    pub fn p_of(&self, x: f64) -> f64 {
        (x - self.omega0) / self.omega1
    }

    /// `(A(p), B(p))`.
    pub fn ab(&self, p: f64) -> (f64, f64) {
        let (t, u) = cheb_tu(self.s, self.argument(p));
        (t / self.t_omega0, u / self.u_omega0 * (1.0 + 0.5 * self.omega1 * p))
    }

    pub fn a(&self, p: f64) -> f64 {
        cheb_tu(self.s, self.argument(p)).0 / self.t_omega0
    }

    /// `A(p)` through the closed form of `T_s`; O(1) in `s`.
    pub fn a_closed(&self, p: f64) -> f64 {
        cheb_t_closed(self.s, self.argument(p)) / cheb_t_closed(self.s, self.omega0)
    }

    /// `E|R|^2` of `method` at `(p, q^2)`.
    pub fn amplification(&self, method: Method, p: f64, q2: f64) -> f64 {
        match method {
            Method::SkRock | Method::PskRock => {
                let (a, b) = self.ab(p);
                a * a + b * b * q2
            }
            Method::SRock => {
                let a = self.a(p);
                a * a * (1.0 + q2)
            }
            Method::EulerMaruyama => em_amplification(p, q2),
        }
    }
}

/// `(A(p), B(p))` of SK-ROCK.
pub fn stab_ab(p: f64, s: usize, eta: f64) -> Result<(f64, f64)> {
    Ok(StabilityPolynomials::new(s, eta)?.ab(p))
}

/// `E|R(p, q, xi)|^2 = A(p)^2 + B(p)^2 q^2` for SK-ROCK.
pub fn ms_amplification(p: f64, q2: f64, s: usize, eta: f64) -> Result<f64> {
    check_q2(q2)?;
    Ok(StabilityPolynomials::new(s, eta)?.amplification(Method::SkRock, p, q2))
}

/// S-ROCK evaluates the noise at the last stage, so on the linear test
/// `X1 = A(p) X0 (1 + q xi)` and `E|R|^2 = A(p)^2 (1 + q^2)`.
pub fn srock_amplification(p: f64, q2: f64, s: usize, eta: f64) -> Result<f64> {
    check_q2(q2)?;
    Ok(StabilityPolynomials::new(s, eta)?.amplification(Method::SRock, p, q2))
}

pub fn em_amplification(p: f64, q2: f64) -> f64 {
    (1.0 + p) * (1.0 + p) + q2
}

fn check_q2(q2: f64) -> Result<()> {
    if q2 >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("q^2 must be >= 0, got {q2}")))
    }
}

/// Points along the boundary `q^2 = -2p`, as stability arguments
/// `x = omega0 + omega1 p` walking down from `omega0`.
fn boundary_arguments(omega0: f64, interior_points: usize) -> Vec<f64> {
    let mut xs = Vec::with_capacity(interior_points + 400);
    if omega0 > 1.0 {
        let m = 64;
        for j in 0..m {
            xs.push(omega0 - (omega0 - 1.0) * j as f64 / m as f64);
        }
    }
    let n = interior_points.max(2);
    for j in 0..n {
        xs.push((std::f64::consts::PI * j as f64 / (n - 1) as f64).cos());
    }
    let m = 200;
    for j in 1..=m {
        let t = j as f64 / m as f64;
        xs.push(-1.0 - 0.5 * t * t);
    }
    xs
}

/// Largest `a` such that `amplification(p, -2p) <= 1` for all `p` in `[-a, 0]`,
/// scanning with `interior_points` points for `|x| <= 1` and bisecting the
/// first violation down to `tolerance` in `p`.
fn boundary_length(
    amp: impl Fn(f64) -> f64,
    poly: &StabilityPolynomials,
    interior_points: usize,
    tolerance: f64,
) -> f64 {
    let ok = |x: f64| amp(poly.p_of(x)) <= 1.0 + AMPLIFICATION_SLACK;
    let xs = boundary_arguments(poly.omega0, interior_points);
    let mut good = poly.omega0;
    for &x in &xs {
        if ok(x) {
            good = x;
            continue;
        }
        let mut bad = x;
        let x_tol = tolerance * poly.omega1;
        while good - bad > x_tol {
            let mid = 0.5 * (good + bad);
            if ok(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        return -poly.p_of(good);
    }
    -poly.p_of(good)
}

fn default_interior_points(s: usize) -> usize {
    200 * s + 2000
}

/// Mean-square domain length of SK-ROCK.
pub fn domain_length(s: usize, eta: f64, tolerance: f64) -> Result<f64> {
    domain_length_for(Method::SkRock, s, eta, tolerance)
}

pub fn domain_length_for(method: Method, s: usize, eta: f64, tolerance: f64) -> Result<f64> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tolerance}")));
    }
    let poly = StabilityPolynomials::new(s, eta)?;
    Ok(domain_length_with(method, &poly, default_interior_points(s), tolerance))
}

fn domain_length_with(method: Method, poly: &StabilityPolynomials, interior_points: usize, tolerance: f64) -> f64 {
    match method {
        Method::SRock => {
            let t0 = cheb_t_closed(poly.s, poly.omega0);
            let s = poly.s;
            let omega0 = poly.omega0;
            let omega1 = poly.omega1;
            boundary_length(
                move |p| {
                    let a = cheb_t_closed(s, omega0 + omega1 * p) / t0;
                    a * a * (1.0 - 2.0 * p)
                },
                poly,
                interior_points,
                tolerance,
            )
        }
        Method::EulerMaruyama => 0.0,
        _ => boundary_length(|p| poly.amplification(method, p, -2.0 * p), poly, interior_points, tolerance),
    }
}

/// Largest value of `amplification(p, -2p)` over `n` equispaced `p` in `[p_min, 0]`.
pub fn max_boundary_amplification(method: Method, s: usize, eta: f64, p_min: f64, n: usize) -> Result<f64> {
    let poly = StabilityPolynomials::new(s, eta)?;
    let n = n.max(2);
    Ok((0..n)
        .map(|j| {
            let p = p_min * j as f64 / (n - 1) as f64;
            poly.amplification(method, p, -2.0 * p)
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityScan {
    pub method: Method,
    pub s: usize,
    pub eta: f64,
    pub p_grid: Vec<f64>,
    pub q2_grid: Vec<f64>,
    /// `amplification[i][j]` at `(p_grid[i], q2_grid[j])`.
    pub amplification: Vec<Vec<f64>>,
    pub length: f64,
}

impl StabilityScan {
    pub fn compute(method: Method, s: usize, eta: f64, p_grid: Vec<f64>, q2_grid: Vec<f64>) -> Result<Self> {
        if let Some(q2) = q2_grid.iter().find(|q| !(**q >= 0.0)) {
            return Err(Error::InvalidInput(format!("q^2 grid value {q2} is negative")));
        }
        let poly = StabilityPolynomials::new(s, eta)?;
        let amplification =
            p_grid.par_iter().map(|&p| q2_grid.iter().map(|&q2| poly.amplification(method, p, q2)).collect()).collect();
        let length = domain_length_with(method, &poly, default_interior_points(s), 1e-6 * (s * s) as f64);
        Ok(Self { method, s, eta, p_grid, q2_grid, amplification, length })
    }

    /// Equispaced grids `p in [p_min, 0]`, `q^2 in [0, q2_max]`.
    pub fn uniform(method: Method, s: usize, eta: f64, p_min: f64, q2_max: f64, np: usize, nq: usize) -> Result<Self> {
        let lin = |a: f64, b: f64, n: usize| -> Vec<f64> {
            let n = n.max(2);
            (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect()
        };
        Self::compute(method, s, eta, lin(p_min, 0.0, np), lin(0.0, q2_max, nq))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# method={},s={},eta={},L={:.16e}", self.method.name(), self.s, self.eta, self.length);
        out.push_str("p,q2,amplification\n");
        for (i, p) in self.p_grid.iter().enumerate() {
            for (j, q2) in self.q2_grid.iter().enumerate() {
                let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", p, q2, self.amplification[i][j]);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DampingOptimum {
    pub s: usize,
    pub eta: f64,
    pub length: f64,
}

const COARSE_POINTS_PER_LOBE: usize = 32;

/// Damping in `eta_range` maximizing the S-ROCK domain length: a 0.05 grid
/// scanned coarsely, then golden-section on the best cell at full resolution.
pub fn optimize_damping(s: usize, eta_range: (f64, f64), scan_tolerance: f64) -> Result<DampingOptimum> {
    let (lo, hi) = eta_range;
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("bad damping range [{lo}, {hi}]")));
    }
    if !(scan_tolerance > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {scan_tolerance}")));
    }
    let step = 0.05;
    let n = ((hi - lo) / step).floor() as usize + 1;
    let coarse_points = COARSE_POINTS_PER_LOBE * s + 200;
    let coarse: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let eta = lo + step * j as f64;
            StabilityPolynomials::new(s, eta)
                .map(|poly| domain_length_with(Method::SRock, &poly, coarse_points, scan_tolerance))
                .unwrap_or(0.0)
        })
        .collect();
    let mut best = 0;
    for (j, l) in coarse.iter().enumerate() {
        if *l > coarse[best] {
            best = j;
        }
    }
    let fine = |eta: f64| -> f64 {
        StabilityPolynomials::new(s, eta)
            .map(|poly| domain_length_with(Method::SRock, &poly, default_interior_points(s), scan_tolerance))
            .unwrap_or(0.0)
    };
    let grid_eta = lo + step * best as f64;
    let mut best_eta = grid_eta;
    let mut best_len = fine(grid_eta);
    let (mut a, mut b) = ((grid_eta - step).max(lo), (grid_eta + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (fine(c), fine(d));
    for _ in 0..40 {
        if b - a < 1e-6 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = fine(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = fine(d);
        }
        for (e, l) in [(c, fc), (d, fd)] {
            if l > best_len {
                best_len = l;
                best_eta = e;
            }
        }
    }
    Ok(DampingOptimum { s, eta: best_eta, length: best_len })
}

/// Search range for the S-ROCK damping, wide enough for `s` up to several hundred.
pub fn default_damping_range(s: usize) -> (f64, f64) {
    (0.0, 3.0 * (s as f64).sqrt() + 5.0)
}

fn damping_cache() -> &'static Mutex<HashMap<usize, DampingOptimum>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, DampingOptimum>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Optimized S-ROCK damping for `s` stages, memoized per process.
pub fn srock_optimal_damping(s: usize) -> DampingOptimum {
    if let Some(opt) = damping_cache().lock().unwrap().get(&s) {
        return *opt;
    }
    let s = s.max(1);
    let opt =
        optimize_damping(s, default_damping_range(s), 1e-6 * (s * s) as f64).expect("default damping range is valid");
    damping_cache().lock().unwrap().insert(s, opt);
    opt
}

/// Smallest `s` with `length(s) >= target`, assuming `length` grows with `s`.
fn smallest_covering(target: f64, length: impl Fn(usize) -> f64) -> usize {
    if length(1) >= target {
        return 1;
    }
    let mut hi = ((target / 0.3).sqrt().ceil() as usize).max(2);
    while length(hi) < target {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while lo > 1 && length(lo) >= target {
        lo /= 2;
    }
    // length(lo) < target <= length(hi)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if length(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// S-ROCK stage count with optimized damping covering `h * lambda_max`.
pub fn srock_stage_selection(h_lambda_max: f64) -> usize {
    smallest_covering(h_lambda_max, |s| srock_optimal_damping(s).length)
}

/// S-ROCK stage count covering `h * lambda_max` at a fixed damping.
pub fn srock_stage_selection_fixed_damping(h_lambda_max: f64, eta: f64) -> usize {
    smallest_covering(h_lambda_max, |s| domain_length_for(Method::SRock, s, eta, 1e-6 * (s * s) as f64).unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuRatio {
    /// Stationary variance of the scheme over the exact `sigma^2 / (2 delta)`.
    pub ratio: f64,
    /// The same ratio after the postprocessor, `ratio - 2 c^2 p`.
    pub postprocessed: f64,
}

/// `R(p) = 2 p B(p)^2 / (A(p)^2 - 1)` for SK-ROCK on the OU process.
pub fn ou_invariant_ratio(p: f64, s: usize, eta: f64) -> Result<OuRatio> {
    if !(p < 0.0) {
        return Err(Error::Domain(format!("p must be negative, got {p}")));
    }
    let poly = StabilityPolynomials::new(s, eta)?;
    let (a, b) = poly.ab(p);
    if !(a.abs() < 1.0) {
        return Err(Error::Domain(format!("|A(p)| = {} >= 1 at p = {p}", a.abs())));
    }
    let ratio = 2.0 * p * b * b / (a * a - 1.0);
    let c2 = crate::cheb::build_coefficients(s, eta)?.c_squared;
    Ok(OuRatio { ratio, postprocessed: ratio - 2.0 * c2 * p })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityCheck {
    pub holds: bool,
    /// `min_j (bound - |A(-lambda_j h)|)`; negative when violated.
    pub worst_margin: f64,
    pub violations: usize,
    pub bound: f64,
}

/// Checks `|A(-lambda_j h)| <= exp(-lambda_1 h / (1 + eta))` over
/// `lambda_grid`, with `lambda_1` its smallest entry.
pub fn ergodicity_bound_check(s: usize, eta: f64, lambda_grid: &[f64], h: f64) -> Result<ErgodicityCheck> {
    if !(eta > 0.0) {
        return Err(Error::Contract(format!("damping must be positive, got {eta}")));
    }
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Contract("eigenvalue grid must be non-empty and positive".into()));
    }
    let poly = StabilityPolynomials::new(s, eta)?;
    let lambda1 = lambda_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let rel = 1e-12;
    if !(h > 0.0) || h > eta / lambda1 * (1.0 + rel) {
        return Err(Error::Contract(format!("need 0 < h <= eta/lambda1 = {}, got {h}", eta / lambda1)));
    }
    let limit = 2.0 / poly.omega1;
    if let Some(l) = lambda_grid.iter().find(|l| **l * h > limit * (1.0 + rel)) {
        return Err(Error::Contract(format!("h*lambda = {} exceeds 2/omega1 = {limit}", l * h)));
    }
    let bound = (-lambda1 * h / (1.0 + eta)).exp();
    let margins: Vec<f64> = lambda_grid.iter().map(|l| bound - poly.a(-l * h).abs()).collect();
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let violations = margins.iter().filter(|m| **m < 0.0).count();
    Ok(ErgodicityCheck { holds: violations == 0, worst_margin, violations, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonErgodicWitness {
    pub h: f64,
    pub a: f64,
    pub b: f64,
}

/// For `eta = 0` and `s > 1`, the step `h` where `A(-lambda1 h)` reaches its
/// first minimum `-1` (and `B = 0`), located by golden-section search.
pub fn non_ergodic_witness(s: usize, lambda1: f64, tolerance: f64) -> Result<NonErgodicWitness> {
    if s < 2 {
        return Err(Error::Contract("witness needs s >= 2".into()));
    }
    if !(lambda1 > 0.0) || !(tolerance > 0.0) {
        return Err(Error::InvalidInput("lambda1 and tolerance must be positive".into()));
    }
    let poly = StabilityPolynomials::new(s, 0.0)?;
    // A(p) = T_s(1 + p / s^2) decreases from 1 to its first minimum, which
    // lies between the first two extrema of T_s.
    let sf = s as f64;
    let x_hi = (0.5 * std::f64::consts::PI / sf).cos();
    let x_lo = (1.5 * std::f64::consts::PI / sf).cos();
    let (mut a, mut b) = (poly.p_of(x_lo), poly.p_of(x_hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |p: f64| poly.a(p);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) / lambda1 > tolerance * 1e-3 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let p = 0.5 * (a + b);
    let (av, bv) = poly.ab(p);
    Ok(NonErgodicWitness { h: -p / lambda1, a: av, b: bv })
}

/// `(s^2 omega1 / T_s(omega0)^2) (1 - (1 - omega1)^2) / (1 - (omega0 - omega1)^2)`,
/// which is at most 1 for `0 < eta < 1`.
pub fn stability_estimate_ratio(s: usize, eta: f64) -> Result<f64> {
    let poly = StabilityPolynomials::new(s, eta)?;
    let (w0, w1) = (poly.omega0, poly.omega1);
    let sf = s as f64;
    Ok(sf * sf * w1 / (poly.t_omega0 * poly.t_omega0) * (1.0 - (1.0 - w1).powi(2)) / (1.0 - (w0 - w1).powi(2)))
}
