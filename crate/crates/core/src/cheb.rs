//! Chebyshev polynomial kernels and the per-(s, eta) method constants.
//!
//! Everything an integrator step needs is computed once in
//! [`build_coefficients`] and kept in an immutable [`MethodCoefficients`];
//! stepping code never touches a polynomial.

use serde::Serialize;

use crate::error::{Error, Result};

/// First and second kind Chebyshev values at a point, plus the first two
/// derivatives of the first kind family.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebValues {
    pub x: f64,
    pub s: usize,
    /// `T_0(x) ..= T_s(x)`.
    pub t: Vec<f64>,
    /// `U_0(x) .. U_{s-1}(x)`.
    pub u: Vec<f64>,
    /// `T'_0(x) ..= T'_s(x)`.
    pub dt: Vec<f64>,
    /// `T''_0(x) ..= T''_s(x)`.
    pub ddt: Vec<f64>,
}

impl ChebValues {
    pub fn t_s(&self) -> f64 {
        self.t[self.s]
    }

    /// `U_{s-1}(x)`.
    pub fn u_last(&self) -> f64 {
        self.u[self.s - 1]
    }

    pub fn dt_s(&self) -> f64 {
        self.dt[self.s]
    }

    pub fn ddt_s(&self) -> f64 {
        self.ddt[self.s]
    }
}

/// Evaluates `T_0..T_s`, `U_0..U_{s-1}` and the derivatives `T'_i`, `T''_i`
/// by the three-term recurrences and their differentiated forms.
pub fn cheb_eval(x: f64, s: usize) -> Result<ChebValues> {
    if s == 0 {
        return Err(Error::InvalidInput("stage count must be at least 1".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("evaluation point {x} is not finite")));
    }
    let mut t = vec![0.0; s + 1];
    let mut dt = vec![0.0; s + 1];
    let mut ddt = vec![0.0; s + 1];
    t[0] = 1.0;
    t[1] = x;
    dt[1] = 1.0;
    for i in 2..=s {
        t[i] = 2.0 * x * t[i - 1] - t[i - 2];
        dt[i] = 2.0 * t[i - 1] + 2.0 * x * dt[i - 1] - dt[i - 2];
        ddt[i] = 4.0 * dt[i - 1] + 2.0 * x * ddt[i - 1] - ddt[i - 2];
    }
    let mut u = vec![0.0; s];
    u[0] = 1.0;
    if s > 1 {
        u[1] = 2.0 * x;
    }
    for i in 2..s {
        u[i] = 2.0 * x * u[i - 1] - u[i - 2];
    }
    Ok(ChebValues { x, s, t, u, dt, ddt })
}

/// `T_s(x)` by recurrence, without allocating.
#[inline]
pub fn cheb_t(s: usize, x: f64) -> f64 {
    cheb_tu(s, x).0
}

/// `(T_s(x), U_{s-1}(x))` by recurrence, without allocating. `s >= 1`.
#[inline]
pub fn cheb_tu(s: usize, x: f64) -> (f64, f64) {
    debug_assert!(s >= 1);
    let (mut t_prev, mut t_cur) = (1.0, x);
    // U_{-1} = 0, U_0 = 1
    let (mut u_prev, mut u_cur) = (0.0, 1.0);
    for _ in 1..s {
        let t_next = 2.0 * x * t_cur - t_prev;
        let u_next = 2.0 * x * u_cur - u_prev;
        t_prev = t_cur;
        t_cur = t_next;
        u_prev = u_cur;
        u_cur = u_next;
    }
    (t_cur, u_cur)
}

/// `T_s(x)` from the trigonometric / hyperbolic closed form. O(1) in `s`,
/// used by the large-`s` stability scans.
#[inline]
pub fn cheb_t_closed(s: usize, x: f64) -> f64 {
    let n = s as f64;
    if x.abs() <= 1.0 {
        (n * x.acos()).cos()
    } else if x > 1.0 {
        (n * x.acosh()).cosh()
    } else {
        let v = (n * (-x).acosh()).cosh();
        if s.is_multiple_of(2) {
            v
        } else {
            -v
        }
    }
}

/// All constants of the SK-ROCK / PSK-ROCK family for one `(s, eta)`.
///
/// Stage-indexed arrays (`mu`, `nu`, `kappa`, `delta`) have length `s + 1`
/// and an unused slot 0, so `mu[i]` is the weight of stage `i`. Slot 1 of
/// `nu` and `kappa` holds the first-stage noise weights `s*omega1/2` and
/// `s*omega1/omega0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodCoefficients {
    pub s: usize,
    pub eta: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub kappa: Vec<f64>,
    /// `r_0 ..= r_s`.
    pub r: Vec<f64>,
    pub delta: Vec<f64>,
    /// Squared postprocessor amplitude; may be negative for extreme damping,
    /// in which case [`MethodCoefficients::c`] fails.
    pub c_squared: f64,
    pub alpha: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// `T_s(omega0)`, `T'_s(omega0)`, `T''_s(omega0)`.
    pub t_s: f64,
    pub dt_s: f64,
    pub ddt_s: f64,
    /// `U_{s-1}(omega0)`.
    pub u_s1: f64,
}

impl MethodCoefficients {
    pub fn mu1(&self) -> f64 {
        self.mu[1]
    }

    pub fn nu1(&self) -> f64 {
        self.nu[1]
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa[1]
    }

    /// Nonnegative postprocessor amplitude.
    pub fn c(&self) -> Result<f64> {
        if self.c_squared < 0.0 {
            return Err(Error::Domain(format!(
                "postprocessor c^2 = {} < 0 for s={}, eta={}",
                self.c_squared, self.s, self.eta
            )));
        }
        Ok(self.c_squared.sqrt())
    }

    /// Residuals of the two order-two conditions
    /// `c3 - c2 - c^2` and `c4 - 1/4 - c2/2 - c^2`.
    pub fn order_condition_residuals(&self) -> (f64, f64) {
        (self.c3 - self.c2 - self.c_squared, self.c4 - 0.25 - 0.5 * self.c2 - self.c_squared)
    }

    /// `omega0 + omega1 * p`, the argument of the stability polynomials.
    pub fn stability_argument(&self, p: f64) -> f64 {
        self.omega0 + self.omega1 * p
    }
}

pub fn build_coefficients(s: usize, eta: f64) -> Result<MethodCoefficients> {
    if s == 0 {
        return Err(Error::InvalidInput("stage count must be at least 1".into()));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidInput(format!("damping must be finite and >= 0, got {eta}")));
    }
    let sf = s as f64;
    let omega0 = 1.0 + eta / (sf * sf);
    let cv = cheb_eval(omega0, s)?;
    for i in 0..=s {
        if !(cv.t[i].is_finite() && cv.dt[i].is_finite() && cv.ddt[i].is_finite()) {
            return Err(Error::Capacity { s, eta, index: i });
        }
    }
    let (t, dt) = (&cv.t, &cv.dt);
    let t_s = cv.t_s();
    let dt_s = cv.dt_s();
    let ddt_s = cv.ddt_s();
    let omega1 = t_s / dt_s;

    let mut mu = vec![0.0; s + 1];
    let mut nu = vec![0.0; s + 1];
    let mut kappa = vec![0.0; s + 1];
    mu[1] = omega1 / omega0;
    nu[1] = sf * omega1 / 2.0;
    kappa[1] = sf * omega1 / omega0;
    for i in 2..=s {
        mu[i] = 2.0 * omega1 * t[i - 1] / t[i];
        nu[i] = 2.0 * omega0 * t[i - 1] / t[i];
        kappa[i] = -t[i - 2] / t[i];
    }

    // Noise weight carried by stage j: s*omega1*T'_j / (j*T_j).
    let noise_weight = |j: usize| sf * omega1 * dt[j] / (j as f64 * t[j]);

    // r_i: coefficient of (sigma^2/2) h^2 f''(xi, xi) in K_i.
    let mut delta = vec![0.0; s + 1];
    let mut r = vec![0.0; s + 1];
    delta[1] = sf * sf * omega1.powi(3) / (4.0 * omega0);
    r[1] = delta[1];
    for i in 2..=s {
        let w = noise_weight(i - 1);
        delta[i] = mu[i] * w * w;
        r[i] = nu[i] * r[i - 1] + kappa[i] * r[i - 2] + delta[i];
    }

    let c2 = omega1 * omega1 * ddt_s / (2.0 * t_s);
    let c4 = ddt_s * omega1 / dt_s + omega1 / 2.0;
    let c_squared = -0.25 + omega1 / 2.0 + omega1 * ddt_s / dt_s - omega1 * omega1 * ddt_s / (4.0 * t_s);
    let alpha = 2.0 / (sf * omega0 * omega1) * (c_squared + c2 - r[s]);

    // c3 is r_s of the scheme with the modified first stage: the alpha
    // bracket adds alpha * h * nu1^2 * f''(Q, Q) to K_1.
    let mut r_mod_prev = 0.0;
    let mut r_mod = r[1] + 2.0 * nu[1] * nu[1] * alpha;
    for i in 2..=s {
        let next = nu[i] * r_mod + kappa[i] * r_mod_prev + delta[i];
        r_mod_prev = r_mod;
        r_mod = next;
    }
    let c3 = r_mod;

    Ok(MethodCoefficients {
        s,
        eta,
        omega0,
        omega1,
        mu,
        nu,
        kappa,
        r,
        delta,
        c_squared,
        alpha,
        c2,
        c3,
        c4,
        t_s,
        dt_s,
        ddt_s,
        u_s1: cv.u_last(),
    })
}

/// Postprocessor amplitude `c` (nonnegative root) and first-stage weight `alpha`.
pub fn build_postprocessor(s: usize, eta: f64) -> Result<(f64, f64)> {
    let coeffs = build_coefficients(s, eta)?;
    Ok((coeffs.c()?, coeffs.alpha))
}

/// Limit of `1 / (omega1 s^2)` as `s -> inf`: `tanh(sqrt(2 eta)) / sqrt(2 eta)`.
pub fn omega_limit(eta: f64) -> f64 {
    if eta <= 0.0 {
        return 1.0;
    }
    let z = (2.0 * eta).sqrt();
    z.tanh() / z
}

/// Stage count covering `h * lambda_max` for damping `eta`.
///
/// Rounds half-way cases to even and never returns less than 1.
pub fn stage_selection(h_lambda_max: f64, eta: f64) -> usize {
    let arg = (h_lambda_max.max(0.0) + 1.5) / (2.0 * omega_limit(eta));
    let s = (arg.sqrt() + 0.5).round_ties_even();
    if s < 1.0 {
        1
    } else {
        s as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const ETAS: [f64; 5] = [0.0, 0.05, 0.5, 1.0, 4.0];

    #[test]
    fn cheb_eval_at_one() {
        let cv = cheb_eval(1.0, 4).unwrap();
        assert_eq!(cv.t_s(), 1.0);
        assert_eq!(cv.dt_s(), 16.0);
        assert_eq!(cv.ddt_s(), 80.0);
    }

    #[test]
    fn cheb_eval_cubic() {
        let cv = cheb_eval(0.5, 3).unwrap();
        assert_relative_eq!(cv.t_s(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn cheb_eval_small_damping_point() {
        let cv = cheb_eval(1.0125, 2).unwrap();
        assert_relative_eq!(cv.t_s(), 1.0503125, max_relative = 1e-15);
        assert_relative_eq!(cv.u_last(), 2.025, max_relative = 1e-15);
    }

    #[test]
    fn cheb_eval_rejects_bad_input() {
        assert!(matches!(cheb_eval(f64::NAN, 3), Err(Error::InvalidInput(_))));
        assert!(matches!(cheb_eval(f64::INFINITY, 3), Err(Error::InvalidInput(_))));
        assert!(matches!(cheb_eval(0.3, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn derivatives_match_closed_forms_at_one() {
        for s in 1..=30 {
            let cv = cheb_eval(1.0, s).unwrap();
            let n = s as f64;
            assert_relative_eq!(cv.dt_s(), n * n, max_relative = 1e-14);
            if s > 1 {
                assert_relative_eq!(cv.ddt_s(), n * n * (n * n - 1.0) / 3.0, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn scalar_kernels_agree_with_tables() {
        for s in 1..=40 {
            for &x in &[-1.3, -1.0, -0.7, 0.0, 0.2, 0.99, 1.0, 1.001, 1.2] {
                let cv = cheb_eval(x, s).unwrap();
                let (t, u) = cheb_tu(s, x);
                assert_relative_eq!(t, cv.t_s(), epsilon = 1e-12, max_relative = 1e-13);
                assert_relative_eq!(u, cv.u_last(), epsilon = 1e-12, max_relative = 1e-13);
                assert_relative_eq!(cheb_t_closed(s, x), cv.t_s(), epsilon = 1e-11, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn one_stage_coefficients() {
        let c = build_coefficients(1, 0.0).unwrap();
        assert_eq!(c.omega0, 1.0);
        assert_eq!(c.omega1, 1.0);
        assert_eq!(c.mu1(), 1.0);
        assert_eq!(c.nu1(), 0.5);
        assert_eq!(c.kappa1(), 1.0);
    }

    #[test]
    fn two_stage_coefficients() {
        let c = build_coefficients(2, 0.0).unwrap();
        assert_relative_eq!(c.omega1, 0.25, max_relative = 1e-15);
        assert_relative_eq!(c.mu[2], 0.5, max_relative = 1e-15);
        assert_relative_eq!(c.nu[2], 2.0, max_relative = 1e-15);
        assert_relative_eq!(c.kappa[2], -1.0, max_relative = 1e-15);

        let c = build_coefficients(2, 0.05).unwrap();
        assert_relative_eq!(c.omega0, 1.0125, max_relative = 1e-15);
        assert_relative_eq!(c.omega1, 1.0503125 / 4.05, max_relative = 1e-14);
        assert!((c.omega1 - 0.259336).abs() < 1e-6);
    }

    #[test]
    fn coefficient_identities_hold_over_parameter_grid() {
        for s in 1..=50 {
            for &eta in &ETAS {
                let c = build_coefficients(s, eta).unwrap();
                let cv = cheb_eval(c.omega0, s).unwrap();
                assert_eq!(c.omega1, cv.t_s() / cv.dt_s());
                assert_relative_eq!(c.mu1(), c.omega1 / c.omega0, max_relative = 1e-15);
                for i in 2..=s {
                    assert!((c.kappa[i] - (1.0 - c.nu[i])).abs() <= 1e-13 * c.nu[i].abs().max(1.0));
                }
                let su = s as f64 * cv.u_last();
                assert!((cv.dt_s() - su).abs() <= 1e-12 * cv.dt_s().abs());
                let (r1, r2) = c.order_condition_residuals();
                assert!(r1.abs() <= 1e-12, "s={s} eta={eta} residual {r1}");
                assert!(r2.abs() <= 1e-12, "s={s} eta={eta} residual {r2}");
            }
        }
    }

    #[test]
    fn undamped_postprocessor_amplitude() {
        for s in 1..=50 {
            let c = build_coefficients(s, 0.0).unwrap();
            assert!((c.c().unwrap() - 0.5 / s as f64).abs() <= 1e-12, "s={s}");
        }
        let (c, alpha) = build_postprocessor(1, 0.0).unwrap();
        assert_relative_eq!(c, 0.5, max_relative = 1e-15);
        assert!(alpha.abs() < 1e-15);
        let (c, _) = build_postprocessor(5, 0.0).unwrap();
        assert_relative_eq!(c, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn damped_order_conditions() {
        let c = build_coefficients(3, 0.05).unwrap();
        let (r1, r2) = c.order_condition_residuals();
        assert!(r1.abs() < 1e-12 && r2.abs() < 1e-12);
    }

    #[test]
    fn closed_form_of_modified_r() {
        // the alpha perturbation propagates as omega0 * U_{i-1}/T_i times its
        // first-stage size, giving c3 = r_s + s*omega0*omega1*alpha/2
        for s in 1..=30 {
            for &eta in &ETAS {
                let c = build_coefficients(s, eta).unwrap();
                let closed = c.r[s] + s as f64 * c.omega0 * c.omega1 * c.alpha / 2.0;
                assert_relative_eq!(c.c3, closed, epsilon = 1e-13, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn capacity_guard_names_index() {
        match build_coefficients(2000, 1.0e6) {
            Err(Error::Capacity { index, .. }) => assert!(index > 0),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn negative_c_squared_is_a_domain_error() {
        // heavy damping with one stage: c^2 = -1/4 + 1/2 + 0 - 0 > 0, so look
        // for a case that goes negative on a coarse sweep instead
        let bad = (1..=60)
            .flat_map(|s| [20.0, 50.0, 100.0].map(move |eta| (s, eta)))
            .find(|&(s, eta)| build_coefficients(s, eta).unwrap().c_squared < 0.0);
        if let Some((s, eta)) = bad {
            assert!(matches!(build_postprocessor(s, eta), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn omega_limit_values() {
        assert_eq!(omega_limit(0.0), 1.0);
        assert!((omega_limit(0.05) - 0.967_948_133_514_745_1).abs() < 1e-15);
        for &eta in &[1e-4, 1e-3] {
            let approx = 1.0 - 2.0 / 3.0 * eta;
            assert!((omega_limit(eta) - approx).abs() < 2.0 * eta * eta);
        }
        let mut prev = omega_limit(0.0);
        for k in 1..=1000 {
            let v = omega_limit(k as f64 * 0.01);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn stage_selection_examples() {
        assert_eq!(stage_selection(0.0, 0.05), 1);
        assert_eq!(stage_selection(2.0, 0.05), 2);
        assert_eq!(stage_selection(800.0, 0.05), 21);
        // stiff population setting
        assert_eq!(stage_selection(100.0, 4.0), 13);
    }

    #[test]
    fn stage_selection_is_monotone() {
        let mut prev = 0;
        for k in 0..4000 {
            let s = stage_selection(k as f64 * 0.5, 0.05);
            assert!(s >= prev);
            prev = s;
        }
        for &hl in &[0.0, 3.0, 50.0, 800.0] {
            let mut prev = 0;
            for k in 0..200 {
                let s = stage_selection(hl, k as f64 * 0.05);
                assert!(s >= prev);
                prev = s;
            }
        }
    }
}
