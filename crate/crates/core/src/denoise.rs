//! Soft-threshold and Huber denoisers with their Gaussian statistics.
//!
//! Derivatives at the kinks are 0: ST' vanishes at |x| = τ and Ψ' vanishes at
//! |z| = λ(1 + b).

use serde::{Deserialize, Serialize};

use crate::normal::{cdf, pdf, prob_between, sf};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DenoiserSpec {
    SoftThreshold { tau: f64 },
    Huber { lambda: f64, b: f64 },
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::SoftThreshold { tau } => check_tau(tau),
            DenoiserSpec::Huber { lambda, b } => check_huber(lambda, b),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            DenoiserSpec::SoftThreshold { tau } => st(x, tau),
            DenoiserSpec::Huber { lambda, b } => big_psi(x, b, lambda),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            DenoiserSpec::SoftThreshold { tau } => st_deriv(x, tau),
            DenoiserSpec::Huber { lambda, b } => big_psi_deriv(x, b, lambda),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            DenoiserSpec::SoftThreshold { .. } => 1.0,
            DenoiserSpec::Huber { b, .. } => b / (1.0 + b),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::param("tau", format!("must be finite and >= 0, got {tau}")))
    }
}

fn check_huber(lambda: f64, b: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::param("b", format!("must be finite and > 0, got {b}")));
    }
    Ok(())
}

// Unchecked kernels for the hot loops.

#[inline]
pub(crate) fn st(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn st_deriv(x: f64, tau: f64) -> f64 {
    if x.abs() > tau {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn clamp(z: f64, lambda: f64) -> f64 {
    z.clamp(-lambda, lambda)
}

/// Ψ(z, b) = b ψ(z/(1+b); λ)
#[inline]
pub(crate) fn big_psi(z: f64, b: f64, lambda: f64) -> f64 {
    b * clamp(z / (1.0 + b), lambda)
}

#[inline]
pub(crate) fn big_psi_deriv(z: f64, b: f64, lambda: f64) -> f64 {
    if z.abs() < lambda * (1.0 + b) {
        b / (1.0 + b)
    } else {
        0.0
    }
}

pub fn soft_threshold(x: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(st(x, tau))
}

pub fn soft_threshold_deriv(x: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(st_deriv(x, tau))
}

/// ψ(z; λ) = min{max{z, −λ}, λ}
pub fn huber_psi(z: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
    }
    Ok(clamp(z, lambda))
}

pub fn huber_big_psi(z: f64, b: f64, lambda: f64) -> Result<f64> {
    check_huber(lambda, b)?;
    Ok(big_psi(z, b, lambda))
}

pub fn huber_big_psi_deriv(z: f64, b: f64, lambda: f64) -> Result<f64> {
    check_huber(lambda, b)?;
    Ok(big_psi_deriv(z, b, lambda))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must be finite and > 0, got {alpha}")))
    }
}

/// E(θ − ST_τ(θ + sZ))² for one coordinate, Z ~ N(0, 1), s > 0.
pub(crate) fn st_risk_coord(theta: f64, s: f64, tau: f64) -> f64 {
    let a = (tau - theta) / s; // θ + sZ > τ  ⇔  Z > a
    let c = (-tau - theta) / s; // θ + sZ < −τ ⇔  Z < c
    let (qa, fa) = (sf(a), pdf(a));
    let (pc, fc) = (cdf(c), pdf(c));
    let upper = s * s * (a * fa + qa) - 2.0 * s * tau * fa + tau * tau * qa;
    let lower = s * s * (pc - c * fc) - 2.0 * s * tau * fc + tau * tau * pc;
    upper + lower + theta * theta * prob_between(c, a)
}

/// d/dτ of [`st_risk_coord`].
pub(crate) fn st_risk_grad_coord(theta: f64, s: f64, tau: f64) -> f64 {
    let a = (tau - theta) / s;
    let c = (-tau - theta) / s;
    2.0 * (tau * (sf(a) + cdf(c)) - s * (pdf(a) + pdf(c)))
}

/// E‖θ − ST_τ(θ + αg)‖₂² with g ~ N(0, I/n), summed coordinate by coordinate.
pub fn st_risk(theta: &[f64], alpha: f64, tau: f64, n: usize) -> Result<f64> {
    check_alpha(alpha)?;
    check_tau(tau)?;
    let s = alpha / (n as f64).sqrt();
    Ok(theta.iter().map(|&t| st_risk_coord(t, s, tau)).sum())
}

/// ∂/∂τ of [`st_risk`]:
/// 2 Σ_i [τ P(|θ_i + sZ| > τ) − s(φ(a_i) + φ(c_i))].
pub fn st_risk_grad_tau(theta: &[f64], alpha: f64, tau: f64, n: usize) -> Result<f64> {
    check_alpha(alpha)?;
    check_tau(tau)?;
    let s = alpha / (n as f64).sqrt();
    Ok(theta.iter().map(|&t| st_risk_grad_coord(t, s, tau)).sum())
}

/// E[ST_ω(|G|)] = E(|G| − ω)₊ = 2φ(ω) − 2ωΦ̄(ω).
pub fn st_mean_abs(omega: f64) -> Result<f64> {
    if !(omega >= 0.0) {
        return Err(Error::param("omega", format!("must be >= 0, got {omega}")));
    }
    Ok(2.0 * (pdf(omega) - omega * sf(omega)))
}

/// E[|G| 1(|G| > ω)] = √(2/π) e^{−ω²/2}.
pub fn abs_tail_mean(omega: f64) -> Result<f64> {
    if !(omega >= 0.0) {
        return Err(Error::param("omega", format!("must be >= 0, got {omega}")));
    }
    Ok(2.0 * pdf(omega))
}

/// E[min{(μ + sZ)², c²}] for one coordinate; s = 0 gives min{μ², c²}.
pub(crate) fn huber_moment_coord(mu: f64, s: f64, c: f64) -> f64 {
    if s == 0.0 {
        return (mu * mu).min(c * c);
    }
    let a = (c - mu) / s;
    let l = (-c - mu) / s;
    let pin = prob_between(l, a);
    let (fa, fl) = (pdf(a), pdf(l));
    let ez = fl - fa;
    let ez2 = pin + l * fl - a * fa;
    mu * mu * pin + 2.0 * mu * s * ez + s * s * ez2 + c * c * (1.0 - pin)
}

/// Σ_i E[min{(ε_i + γ g_i)², c²}] with g_i ~ N(0, 1/n).
pub fn huber_moment(eps: &[f64], gamma: f64, c: f64, n: usize) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be finite and >= 0, got {gamma}")));
    }
    if !(c > 0.0) {
        return Err(Error::param("c", format!("must be > 0, got {c}")));
    }
    let s = gamma / (n as f64).sqrt();
    Ok(eps.iter().map(|&e| huber_moment_coord(e, s, c)).sum())
}

/// P(|μ + sZ| < c) for s > 0.
#[inline]
pub(crate) fn active_prob_sd(mu: f64, s: f64, c: f64) -> f64 {
    prob_between((-c - mu) / s, (c - mu) / s)
}

/// P(|ε_i + γ g_i| < c) with g_i ~ N(0, 1/n).
pub fn huber_active_prob(eps_i: f64, gamma: f64, c: f64, n: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be finite and > 0, got {gamma}")));
    }
    if !(c >= 0.0) {
        return Err(Error::param("c", format!("must be >= 0, got {c}")));
    }
    if c == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(active_prob_sd(eps_i, gamma / (n as f64).sqrt(), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(5.0, 2.0).unwrap(), 3.0);
        assert_eq!(soft_threshold(-1.5, 2.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-7.25, 0.0).unwrap(), -7.25);
        assert_eq!(soft_threshold_deriv(3.0, 2.0).unwrap(), 1.0);
        assert_eq!(soft_threshold_deriv(1.0, 2.0).unwrap(), 0.0);
        assert_eq!(soft_threshold_deriv(2.0, 2.0).unwrap(), 0.0);
        assert!(matches!(soft_threshold(1.0, -0.1), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber_psi(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(huber_psi(3.0, 1.0).unwrap(), 1.0);
        assert_eq!(huber_psi(-3.0, 1.0).unwrap(), -1.0);
        assert_eq!(huber_big_psi(0.0, 0.7, 2.0).unwrap(), 0.0);
        let d = huber_big_psi_deriv(0.5, 1.0, 1.0).unwrap();
        assert_eq!(d, 0.5);
        let h = 1e-6;
        let fd = (big_psi(0.5 + h, 1.0, 1.0) - big_psi(0.5 - h, 1.0, 1.0)) / (2.0 * h);
        assert!((fd - d).abs() < 1e-6);
        // boundary |z| = λ(1+b) → 0
        assert_eq!(huber_big_psi_deriv(2.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(huber_big_psi(1.0, 0.0, 1.0).is_err());
        assert!(huber_psi(1.0, -1.0).is_err());
    }

    #[test]
    fn st_risk_limits() {
        let n = 50;
        let alpha = 0.8;
        let zero = vec![0.0; 7];
        let r = st_risk(&zero, alpha, 0.0, n).unwrap();
        assert!((r - 7.0 * alpha * alpha / n as f64).abs() < 1e-15);

        let theta = vec![0.3, -0.1, 0.0, 0.05];
        let tau = 0.3 + 20.0 * alpha / (n as f64).sqrt();
        let r = st_risk(&theta, alpha, tau, n).unwrap();
        assert!((r - crate::linalg::norm2(&theta)).abs() < 1e-8);
        let g = st_risk_grad_tau(&theta, alpha, tau, n).unwrap();
        assert!(g.abs() < 1e-8);
    }

    #[test]
    fn st_risk_gradient_matches_finite_difference() {
        // θ = 0, τ = 0: gradient = −2p·s·√(2/π)
        let (p, n, alpha) = (5, 9, 1.3);
        let s = alpha / (n as f64).sqrt();
        let g = st_risk_grad_tau(&vec![0.0; p], alpha, 0.0, n).unwrap();
        assert!((g + 2.0 * p as f64 * s * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);

        let theta = vec![0.5, -0.2, 0.0, 1.1, -0.03];
        for &tau in &[0.05, 0.2, 0.45, 0.9] {
            let h = 1e-5;
            let fd = (st_risk(&theta, alpha, tau + h, n).unwrap()
                - st_risk(&theta, alpha, tau - h, n).unwrap())
                / (2.0 * h);
            let g = st_risk_grad_tau(&theta, alpha, tau, n).unwrap();
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-3), "tau {tau}: {fd} vs {g}");
        }
    }

    #[test]
    fn st_mean_abs_values() {
        let sq = (2.0 / std::f64::consts::PI).sqrt();
        assert!((st_mean_abs(0.0).unwrap() - 0.797_884_560_802_865_4).abs() < 1e-15);
        assert!((abs_tail_mean(0.0).unwrap() - sq).abs() < 1e-15);
        assert!((abs_tail_mean(1.0).unwrap() - sq * (-0.5f64).exp()).abs() < 1e-15);
        // E(|G|−1)₊ from mpmath
        assert!((st_mean_abs(1.0).unwrap() - 0.166_630_941_175_372_6).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..=50 {
            let v = st_mean_abs(i as f64 / 10.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn huber_moment_limits() {
        let eps = [0.3, -0.1, 0.7, 0.0, -1.2];
        let n = 5;
        let big = huber_moment(&eps, 1.0, 1e3, n).unwrap();
        let want = crate::linalg::norm2(&eps) + 1.0;
        assert!((big / want - 1.0).abs() < 1e-6);
        let c = 0.5;
        let zero = huber_moment(&eps, 0.0, c, n).unwrap();
        let direct: f64 = eps.iter().map(|e| (e * e).min(c * c)).sum();
        assert!((zero - direct).abs() < 1e-15);
        // the γ → 0⁺ limit is continuous
        let tiny = huber_moment(&eps, 1e-9, c, n).unwrap();
        assert!((tiny - direct).abs() < 1e-8);
    }

    #[test]
    fn active_prob_examples() {
        assert_eq!(huber_active_prob(0.3, 1.0, f64::INFINITY, 10).unwrap(), 1.0);
        let (gamma, n, z) = (0.7, 16, 1.3);
        let c = gamma / (n as f64).sqrt() * z;
        let p = huber_active_prob(0.0, gamma, c, n).unwrap();
        assert!((p - (2.0 * cdf(z) - 1.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_odd_and_lipschitz(a in -10.0..10.0f64, b in -10.0..10.0f64, tau in 0.0..5.0f64) {
            prop_assert!((st(a, tau) - st(b, tau)).abs() <= (a - b).abs() + 1e-12);
            prop_assert_eq!(st(-a, tau), -st(a, tau));
        }

        #[test]
        fn huber_psi_is_bounded_and_lipschitz(
            a in -10.0..10.0f64, b in -10.0..10.0f64, lambda in 0.01..3.0f64, bb in 0.01..20.0f64
        ) {
            prop_assert!(clamp(a, lambda).abs() <= lambda);
            let lip = bb / (1.0 + bb);
            prop_assert!((big_psi(a, bb, lambda) - big_psi(b, bb, lambda)).abs() <= lip * (a - b).abs() + 1e-12);
        }

        #[test]
        fn st_risk_continuous_and_gradient_consistent(
            t0 in -1.0..1.0f64, t1 in -1.0..1.0f64, alpha in 0.2..2.0f64, tau in 0.01..1.5f64
        ) {
            let theta = [t0, t1, 0.0];
            let n = 4;
            let h = 1e-5;
            let r0 = st_risk(&theta, alpha, tau, n).unwrap();
            let rp = st_risk(&theta, alpha, tau + h, n).unwrap();
            let rm = st_risk(&theta, alpha, tau - h, n).unwrap();
            prop_assert!((rp - r0).abs() < 1e-3 && (rm - r0).abs() < 1e-3);
            let g = st_risk_grad_tau(&theta, alpha, tau, n).unwrap();
            let fd = (rp - rm) / (2.0 * h);
            prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-2));
        }
    }
}
