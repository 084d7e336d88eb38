//! Characteristic functions of the linearization at the predator-free state,
//! the minimal wave speed `c*`, and the decay rates that shape the upper and
//! lower solutions.
//!
//! With `M_i(λ)` the exponential moment of kernel `J_i`:
//!
//! ```text
//! Δ(λ, c) = d2 (M2(λ) - 1) - cλ + s     (predator tail)
//! Π(λ, c) = d1 (M1(λ) - 1) - cλ         (prey tail)
//! c*      = inf_{λ>0} [d2 (M2(λ) - 1) + s] / λ
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::Params;
use crate::numeric::{bisect, golden_section};

/// Relative tolerance below which `c` is treated as equal to `c*`.
pub const SPEED_TANGENCY_TOL: f64 = 1e-12;

const BRACKET_START: f64 = 1e-6;
const GOLDEN_XTOL: f64 = 1e-12;
const MAX_HALVINGS: usize = 60;

/// Largest decay rate the searches are allowed to probe.
fn search_cap(k: &Kernel) -> f64 {
    let l0 = k.lambda0();
    if l0.is_finite() {
        0.999 * l0
    } else {
        f64::INFINITY
    }
}

/// `Δ(λ, c) = d2 (M2(λ) - 1) - cλ + s`.
pub fn delta(lam: f64, c: f64, p: &Params, k2: &Kernel) -> Result<f64> {
    // M2(-λ) = M2(λ) by symmetry
    Ok(p.d2 * (k2.moment(lam)? - 1.0) - c * lam + p.s)
}

/// `Π(λ, c) = d1 (M1(λ) - 1) - cλ`.
pub fn pi(lam: f64, c: f64, p: &Params, k1: &Kernel) -> Result<f64> {
    Ok(p.d1 * (k1.moment(lam)? - 1.0) - c * lam)
}

/// Speed at which the tail `e^{λξ}` travels: `q(λ) = [d2(M2(λ)-1) + s]/λ`.
pub fn speed_of_rate(lam: f64, p: &Params, k2: &Kernel) -> Result<f64> {
    Ok((p.d2 * (k2.moment(lam)? - 1.0) + p.s) / lam)
}

/// Minimal wave speed `c*` and the tangency rate `λ*`.
///
/// Golden-section search on a bracket grown geometrically from `1e-6`, then
/// a bisection on the stationarity condition `λ d2 M2'(λ) = d2(M2(λ)-1) + s`
/// to resolve `λ*` below the flatness limit of a pure comparison search.
pub fn cstar(p: &Params, k2: &Kernel) -> Result<(f64, f64)> {
    let cap = search_cap(k2);
    let q = |lam: f64| speed_of_rate(lam, p, k2).unwrap_or(f64::INFINITY);

    let mut x0 = BRACKET_START.min(0.5 * cap);
    let mut x1 = (2.0 * x0).min(cap);
    let (lo, hi) = if q(x1) >= q(x0) {
        (x0 * 1e-3, x1)
    } else {
        let mut found = None;
        for _ in 0..2000 {
            let x2 = (2.0 * x1).min(cap);
            if q(x2) > q(x1) {
                found = Some((x0, x2));
                break;
            }
            if x2 >= cap {
                return Err(Error::UnboundedMinimizer { cap });
            }
            x0 = x1;
            x1 = x2;
        }
        found.ok_or(Error::UnboundedMinimizer { cap: x1 })?
    };

    let golden = golden_section(q, lo, hi, GOLDEN_XTOL * hi.max(1.0));
    let lambda_star = polish_tangency(p, k2, golden, lo, hi).unwrap_or(golden);
    let c_star = q(lambda_star);
    if !c_star.is_finite() {
        return Err(Error::NumericalFailure(
            "c* evaluated to a non-finite value".into(),
        ));
    }
    Ok((c_star, lambda_star))
}

/// Root of `T(λ) = λ d2 M2'(λ) - d2 (M2(λ) - 1) - s`, which is increasing.
fn polish_tangency(p: &Params, k2: &Kernel, guess: f64, lo: f64, hi: f64) -> Option<f64> {
    let t = |lam: f64| -> f64 {
        match (k2.moment(lam), k2.moment_derivative(lam)) {
            (Ok(m), Ok(dm)) => lam * p.d2 * dm - p.d2 * (m - 1.0) - p.s,
            _ => f64::NAN,
        }
    };
    let mut w = 1e-6 * guess.max(1e-3);
    loop {
        let a = (guess - w).max(lo);
        let b = (guess + w).min(hi);
        let (ta, tb) = (t(a), t(b));
        if ta.is_nan() || tb.is_nan() {
            return None;
        }
        if ta <= 0.0 && tb >= 0.0 {
            return bisect(t, a, b, 0.0);
        }
        if a <= lo && b >= hi {
            return None;
        }
        w *= 4.0;
    }
}

/// Real roots `λ1 < λ2` of `Δ(·, c) = 0` for `c > c*`.
///
/// At `c = c*` (relative tolerance [`SPEED_TANGENCY_TOL`]) the tangency
/// pair `(λ*, λ*)` is returned.
pub fn lambda_roots(c: f64, p: &Params, k2: &Kernel) -> Result<(f64, f64)> {
    let (c_star, lambda_star) = cstar(p, k2)?;
    lambda_roots_with(c, c_star, lambda_star, p, k2)
}

/// [`lambda_roots`] with a precomputed `(c*, λ*)`.
pub fn lambda_roots_with(
    c: f64,
    c_star: f64,
    lambda_star: f64,
    p: &Params,
    k2: &Kernel,
) -> Result<(f64, f64)> {
    if (c - c_star).abs() <= SPEED_TANGENCY_TOL * c_star {
        return Ok((lambda_star, lambda_star));
    }
    if c < c_star {
        return Err(Error::NoRoots { c, c_star });
    }
    let d = |lam: f64| delta(lam, c, p, k2).unwrap_or(f64::INFINITY);
    if !(d(lambda_star) < 0.0) {
        return Err(Error::NumericalFailure(format!(
            "Δ(λ*, c) = {} is not negative for c = {c} > c*",
            d(lambda_star)
        )));
    }
    let lambda1 = bisect(d, 0.0, lambda_star, 0.0)
        .ok_or_else(|| Error::NumericalFailure("no sign change of Δ on (0, λ*)".into()))?;

    let cap = search_cap(k2);
    let mut hi = lambda_star;
    loop {
        hi = (2.0 * hi).min(cap);
        if d(hi) > 0.0 {
            break;
        }
        if hi >= cap {
            return Err(Error::NumericalFailure(format!(
                "Δ(·, {c}) stays negative up to the search cap {cap}"
            )));
        }
    }
    let lambda2 = bisect(d, lambda_star, hi, 0.0)
        .ok_or_else(|| Error::NumericalFailure("no sign change of Δ above λ*".into()))?;
    Ok((lambda1, lambda2))
}

/// Checks the sign pattern of `Δ(·, c)` on `n` points: positive on
/// `(0, λ1)`, negative on `(λ1, λ2)`, positive on `(λ2, top)`.
pub fn sign_pattern_holds(
    c: f64,
    lambda1: f64,
    lambda2: f64,
    p: &Params,
    k2: &Kernel,
    n: usize,
) -> Result<bool> {
    let cap = search_cap(k2);
    let top = if cap.is_finite() {
        cap
    } else {
        2.0 * lambda2 + 1.0
    };
    for i in 1..n {
        let lam = top * i as f64 / n as f64;
        // skip the immediate neighbourhood of the roots
        if (lam - lambda1).abs() < 1e-9 || (lam - lambda2).abs() < 1e-9 {
            continue;
        }
        let v = delta(lam, c, p, k2)?;
        let inside = lam > lambda1 && lam < lambda2;
        if inside != (v < 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Prey decay rate `η ∈ (0, λ1)` with `Π(η, c) < 0`: starts at `λ1/2` and
/// halves until the sign condition holds.
pub fn eta_select(c: f64, p: &Params, k1: &Kernel, lambda1: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Precondition(format!(
            "speed must be positive, got {c}"
        )));
    }
    if !(lambda1 > 0.0) {
        return Err(Error::Precondition(format!(
            "λ1 must be positive, got {lambda1}"
        )));
    }
    let mut eta = 0.5 * lambda1;
    for _ in 0..MAX_HALVINGS {
        if pi(eta, c, p, k1)? < 0.0 {
            return Ok(eta);
        }
        eta *= 0.5;
    }
    Err(Error::NumericalFailure(format!(
        "no η with Π(η, {c}) < 0 after {MAX_HALVINGS} halvings"
    )))
}

/// Everything the upper/lower construction needs for one speed `c > c*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub c_star: f64,
    pub lambda_star: f64,
    pub c: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
}

impl DispersionReport {
    pub fn new(c: f64, p: &Params, k1: &Kernel, k2: &Kernel) -> Result<Self> {
        let (c_star, lambda_star) = cstar(p, k2)?;
        Self::with_cstar(c, c_star, lambda_star, p, k1, k2)
    }

    pub fn with_cstar(
        c: f64,
        c_star: f64,
        lambda_star: f64,
        p: &Params,
        k1: &Kernel,
        k2: &Kernel,
    ) -> Result<Self> {
        let (lambda1, lambda2) = lambda_roots_with(c, c_star, lambda_star, p, k2)?;
        let eta = eta_select(c, p, k1, lambda1)?;
        Ok(DispersionReport {
            c_star,
            lambda_star,
            c,
            lambda1,
            lambda2,
            eta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local(d2: f64, s: f64) -> (Params, Kernel) {
        let p = Params {
            d2,
            s,
            ..Params::reference()
        };
        (p, Kernel::local_diffusion())
    }

    #[test]
    fn delta_at_zero_is_s() {
        let p = Params::reference();
        let k = Kernel::gaussian(1.0).unwrap();
        for c in [0.1, 1.0, 7.0] {
            assert_eq!(delta(0.0, c, &p, &k).unwrap(), p.s);
        }
    }

    #[test]
    fn delta_local_values() {
        let (p, k) = local(1.0, 1.0);
        assert!(delta(1.0, 2.0, &p, &k).unwrap().abs() < 1e-15);
        assert!((delta(1.0, 3.0, &p, &k).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cstar_local_cases() {
        let (p, k) = local(1.0, 1.0);
        let (c, l) = cstar(&p, &k).unwrap();
        assert!((c - 2.0).abs() < 1e-12, "{c}");
        assert!((l - 1.0).abs() < 1e-9, "{l}");

        let (p, k) = local(2.0, 3.0);
        let (c, l) = cstar(&p, &k).unwrap();
        assert!((c - 2.0 * 6f64.sqrt()).abs() < 1e-12);
        assert!((l - 1.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn cstar_laplace_matches_grid_search() {
        let p = Params {
            d2: 1.0,
            s: 0.5,
            ..Params::reference()
        };
        let k = Kernel::laplace(2.0).unwrap();
        let (c, l) = cstar(&p, &k).unwrap();
        let mut best = f64::INFINITY;
        let mut lam = 1e-5;
        while lam < 2.0 {
            best = best.min(speed_of_rate(lam, &p, &k).unwrap());
            lam += 1e-5;
        }
        assert!((c - best).abs() < 1e-8, "{c} vs {best}");
        assert!(delta(l, c, &p, &k).unwrap().abs() < 1e-12);
    }

    #[test]
    fn tangency_is_a_double_root() {
        let p = Params::reference();
        let k = Kernel::gaussian(1.0).unwrap();
        let (c, l) = cstar(&p, &k).unwrap();
        // Gaussian with d2 = s = 1: q(λ) = e^{λ²/2}/λ, minimized at λ = 1
        assert!((l - 1.0).abs() < 1e-10);
        assert!((c - 0.5f64.exp()).abs() < 1e-12);
        for dl in [-0.3, -0.01, 0.01, 0.3] {
            assert!(delta(l + dl, c, &p, &k).unwrap() > 0.0);
        }
    }

    #[test]
    fn cstar_increases_with_growth_rate() {
        let k = Kernel::laplace(2.0).unwrap();
        let p1 = Params::reference();
        let p2 = Params { s: 2.0, ..p1 };
        assert!(cstar(&p2, &k).unwrap().0 > cstar(&p1, &k).unwrap().0);
    }

    #[test]
    fn unbounded_minimizer_detected() {
        // M = 1 + λ⁴/10⁴ with a finite cap: q keeps falling up to λ0
        let m = crate::kernel::MomentFn::polynomial(vec![1.0, 0.0, 0.0, 0.0, 1e-4]).unwrap();
        let k = Kernel::moment_defined(m, 0.5).unwrap();
        let p = Params::reference();
        assert!(matches!(
            cstar(&p, &k),
            Err(Error::UnboundedMinimizer { .. })
        ));
    }

    #[test]
    fn roots_local_case() {
        let (p, k) = local(1.0, 1.0);
        let (l1, l2) = lambda_roots(2.5, &p, &k).unwrap();
        assert!((l1 - 0.5).abs() < 1e-12);
        assert!((l2 - 2.0).abs() < 1e-12);
        assert!(sign_pattern_holds(2.5, l1, l2, &p, &k, 1000).unwrap());
    }

    #[test]
    fn roots_at_and_below_cstar() {
        let p = Params::reference();
        let k = Kernel::gaussian(1.0).unwrap();
        let (c, l) = cstar(&p, &k).unwrap();
        let (l1, l2) = lambda_roots(c, &p, &k).unwrap();
        assert!((l1 - l).abs() < 1e-6 && (l2 - l).abs() < 1e-6);
        assert!(matches!(
            lambda_roots(0.5 * c, &p, &k),
            Err(Error::NoRoots { .. })
        ));
    }

    #[test]
    fn roots_are_zeros_of_delta() {
        let p = Params::reference();
        for k in [
            Kernel::gaussian(1.0).unwrap(),
            Kernel::laplace(2.0).unwrap(),
        ] {
            let (c0, _) = cstar(&p, &k).unwrap();
            for f in [1.01, 1.2, 2.0, 5.0] {
                let c = f * c0;
                let (l1, l2) = lambda_roots(c, &p, &k).unwrap();
                assert!(l1 < l2);
                assert!(delta(l1, c, &p, &k).unwrap().abs() < 1e-10);
                assert!(delta(l2, c, &p, &k).unwrap().abs() < 1e-10);
                assert!(sign_pattern_holds(c, l1, l2, &p, &k, 1000).unwrap());
            }
        }
    }

    #[test]
    fn eta_selection() {
        let (p, k) = local(1.0, 1.0);
        assert_eq!(pi(0.0, 2.5, &p, &k).unwrap(), 0.0);
        let eta = eta_select(2.5, &p, &k, 0.5).unwrap();
        assert_eq!(eta, 0.25);
        assert!(matches!(
            eta_select(2.5, &p, &k, 0.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn eta_halves_when_needed() {
        // Π(λ) = 10 λ² - 0.5 λ on a wide first guess forces halving
        let p = Params {
            d1: 10.0,
            ..Params::reference()
        };
        let k = Kernel::local_diffusion();
        let eta = eta_select(0.5, &p, &k, 0.3).unwrap();
        assert!(eta < 0.05 && eta > 0.0);
        assert!(pi(eta, 0.5, &p, &k).unwrap() < 0.0);
    }

    #[test]
    fn report_invariants() {
        let p = Params::reference();
        let k = Kernel::gaussian(1.0).unwrap();
        let (c0, _) = cstar(&p, &k).unwrap();
        let r = DispersionReport::new(1.2 * c0, &p, &k, &k).unwrap();
        assert!(r.eta > 0.0 && r.eta < r.lambda1);
        assert!(pi(r.eta, r.c, &p, &k).unwrap() < 0.0);
    }
}
