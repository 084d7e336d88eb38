//! Model constants, kinetic terms and equilibria of the ratio-dependent
//! Holling–Tanner system with a strong Allee effect in the prey.
//!
//! Prey `u` and predator `v` obey
//!
//! ```text
//! u_t = d1 N1[u] + u (1 - u)(u/b - 1) - m u v / (u + a v)
//! v_t = d2 N2[v] + s v (1 - v/u)
//! ```
//!
//! where `N_i[w] = J_i * w - w` is the nonlocal dispersal operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to decide the tangency case `b == b1`.
pub const TANGENCY_TOL: f64 = 1e-14;

const RATIO_GUARD: f64 = 1e-300;

/// The six model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Prey dispersal rate.
    pub d1: f64,
    /// Predator dispersal rate.
    pub d2: f64,
    /// Quality of the prey as food for the predator.
    pub m: f64,
    /// Predator saturation rate.
    pub a: f64,
    /// Predator intrinsic growth rate.
    pub s: f64,
    /// Allee threshold, in (0, 1).
    pub b: f64,
}

impl Params {
    pub fn new(d1: f64, d2: f64, m: f64, a: f64, s: f64, b: f64) -> Result<Self> {
        let p = Params { d1, d2, m, a, s, b };
        p.validate()?;
        Ok(p)
    }

    /// The parameter set used throughout the test suite:
    /// `(b, a, m, s, d1, d2) = (0.2, 1, 0.1, 1, 1, 1)`.
    pub fn reference() -> Self {
        Params {
            d1: 1.0,
            d2: 1.0,
            m: 0.1,
            a: 1.0,
            s: 1.0,
            b: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("m", self.m),
            ("a", self.a),
            ("s", self.s),
            ("b", self.b),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        if self.b >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "Allee threshold b must lie in (0, 1), got {}",
                self.b
            )));
        }
        Ok(())
    }

    /// `m / (1 + a)`, the predation load at a coexistence state `u = v`.
    pub fn load(&self) -> f64 {
        self.m / (1.0 + self.a)
    }

    /// Lower edge `(1 + b)/2` of the invariant prey band.
    pub fn prey_floor(&self) -> f64 {
        0.5 * (1.0 + self.b)
    }
}

/// Per-capita prey growth `f(φ, ψ) = (1-φ)(φ/b-1) - mψ/(φ+aψ)`.
pub fn reaction_f(phi: f64, psi: f64, p: &Params) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::Domain(format!(
            "prey density must be positive in f, got {phi}"
        )));
    }
    if psi < 0.0 {
        return Err(Error::Domain(format!(
            "predator density must be nonnegative in f, got {psi}"
        )));
    }
    let denom = phi + p.a * psi;
    if denom < RATIO_GUARD {
        return Err(Error::Domain("ratio term undefined: φ + aψ ≈ 0".into()));
    }
    Ok(allee(phi, p.b) - p.m * psi / denom)
}

/// Per-capita predator growth `g(φ, ψ) = s(1 - ψ/φ)`.
pub fn reaction_g(phi: f64, psi: f64, p: &Params) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::Domain(format!(
            "prey density must be positive in g, got {phi}"
        )));
    }
    Ok(p.s * (1.0 - psi / phi))
}

/// Unchecked kinetic terms for inner loops whose arguments are already
/// known to lie in the positive box.
#[inline]
pub(crate) fn f_unchecked(phi: f64, psi: f64, p: &Params) -> f64 {
    allee(phi, p.b) - p.m * psi / (phi + p.a * psi)
}

#[inline]
pub(crate) fn g_unchecked(phi: f64, psi: f64, p: &Params) -> f64 {
    p.s * (1.0 - psi / phi)
}

#[inline]
fn allee(u: f64, b: f64) -> f64 {
    (1.0 - u) * (u / b - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    TwoPositive,
    OnePositive,
    NonePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriaReport {
    /// Critical Allee threshold.
    pub b1: f64,
    /// Doubled root `(1 + b1)/2`, only in the tangency case.
    pub u_star: Option<f64>,
    pub u1_star: Option<f64>,
    pub u2_star: Option<f64>,
    pub classification: Classification,
}

impl EquilibriaReport {
    /// The upper coexistence value, which is the right-hand limit of the
    /// invasion wave. Fails unless two positive equilibria exist.
    pub fn coexistence(&self) -> Result<f64> {
        self.u2_star.ok_or_else(|| {
            Error::AssumptionViolation(format!(
                "no upper coexistence equilibrium ({:?})",
                self.classification
            ))
        })
    }
}

/// Critical threshold `b1 = 1 + 2k - 2 sqrt(k (1 + k))` with `k = m/(1+a)`.
pub fn critical_threshold(p: &Params) -> f64 {
    let k = p.load();
    1.0 + 2.0 * k - 2.0 * (k * (1.0 + k)).sqrt()
}

/// Positive equilibria `(u, u)` of the kinetic system.
pub fn equilibria(p: &Params) -> EquilibriaReport {
    let b = p.b;
    let k = p.load();
    let b1 = critical_threshold(p);

    if (b - b1).abs() <= TANGENCY_TOL {
        let u = 0.5 * (1.0 + b1);
        return EquilibriaReport {
            b1,
            u_star: Some(u),
            u1_star: None,
            u2_star: None,
            classification: Classification::OnePositive,
        };
    }
    if b > b1 {
        return EquilibriaReport {
            b1,
            u_star: None,
            u1_star: None,
            u2_star: None,
            classification: Classification::NonePositive,
        };
    }

    let disc = b * b - 2.0 * (1.0 + 2.0 * k) * b + 1.0;
    let root = disc.max(0.0).sqrt();
    let u2 = 0.5 * (b + 1.0 + root);
    // Product form avoids cancellation in the smaller root.
    let u1 = b * (1.0 + k) / u2;
    EquilibriaReport {
        b1,
        u_star: None,
        u1_star: Some(u1),
        u2_star: Some(u2),
        classification: Classification::TwoPositive,
    }
}

/// The three bounds on `m` under which invasion waves exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub min_term: f64,
    /// `m < min_term`.
    pub admissible: bool,
    /// `b < b1`, recorded separately; implied by `admissible`.
    pub below_critical_threshold: bool,
}

impl Admissibility {
    /// Name and value of the smallest bound, used in diagnostics.
    pub fn binding_term(&self) -> (&'static str, f64) {
        let mut best = ("term1", self.term1);
        if self.term2 < best.1 {
            best = ("term2", self.term2);
        }
        if self.term3 < best.1 {
            best = ("term3", self.term3);
        }
        best
    }

    pub fn require(&self, p: &Params) -> Result<()> {
        if self.admissible {
            return Ok(());
        }
        let (name, value) = self.binding_term();
        Err(Error::AssumptionViolation(format!(
            "m = {} is not below {name} = {value}",
            p.m
        )))
    }
}

pub fn check_strong_allee_assumption(p: &Params) -> Admissibility {
    let (a, b) = (p.a, p.b);
    let one_b2 = (1.0 - b) * (1.0 - b);
    let term1 = one_b2 * (1.0 + b) / (8.0 * b);
    let term2 = one_b2 * (1.0 + a) / (4.0 * b);
    let q = (1.0 - b) / (1.0 + a);
    let term3 = (1.0 + a).powi(3) / 8.0 * ((b * b + 4.0 * q * q).sqrt() - b);
    let min_term = term1.min(term2).min(term3);
    Admissibility {
        term1,
        term2,
        term3,
        min_term,
        admissible: p.m < min_term,
        below_critical_threshold: p.b < critical_threshold(p),
    }
}
