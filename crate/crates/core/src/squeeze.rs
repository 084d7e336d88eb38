//! The alternating scalar sequence that pinches the coexistence value `u2*`.
//!
//! `γ₋₁ = (1+b)/2`, `γ₀ = 1`, and `γ_{n+1}` is the larger root of
//! `(1-γ)(γ/b-1) = m γ_n / (γ_{n-1} + a γ_n)`. Odd terms increase, even
//! terms decrease, and both squeeze `u2*`; consecutive gaps contract at
//! least by the ratio `ρ` every two steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_num, Table};
use crate::model::{equilibria, Params};

/// Default iteration cap; geometric convergence makes reaching it a bug.
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// Slack for order comparisons once terms agree to rounding.
const ORDER_SLACK: f64 = 4.0 * f64::EPSILON;

pub fn squeeze_step(gamma_prev: f64, gamma_curr: f64, p: &Params) -> Result<f64> {
    let lo = p.prey_floor();
    for g in [gamma_prev, gamma_curr] {
        if !(g >= lo - ORDER_SLACK && g <= 1.0 + ORDER_SLACK) {
            return Err(Error::Precondition(format!(
                "squeeze argument {g} outside [{lo}, 1]"
            )));
        }
    }
    let b = p.b;
    let radicand =
        (1.0 - b) * (1.0 - b) - 4.0 * p.m * b * gamma_curr / (gamma_prev + p.a * gamma_curr);
    if radicand < 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "negative radicand {radicand} in the squeeze recursion"
        )));
    }
    Ok(0.5 * (b + 1.0 + radicand.sqrt()))
}

/// `ρ = (4m/(1+a)²) / sqrt((1-b)² - 4mb/(1+a))`; below one exactly when
/// `m` is below the third admissibility bound.
pub fn contraction_ratio(p: &Params) -> Result<f64> {
    let b = p.b;
    let radicand = (1.0 - b) * (1.0 - b) - 4.0 * p.m * b / (1.0 + p.a);
    if !(radicand > 0.0) {
        return Err(Error::AssumptionViolation(format!(
            "contraction ratio undefined: (1-b)² - 4mb/(1+a) = {radicand}"
        )));
    }
    Ok(4.0 * p.m / ((1.0 + p.a) * (1.0 + p.a)) / radicand.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezeTrace {
    /// `γ₋₁, γ₀, γ₁, …`; `gammas[i]` is `γ_{i-1}`.
    pub gammas: Vec<f64>,
    pub rho: f64,
    pub u2_star: f64,
    /// First index `n` with `|γ_n - u2*| < tol`.
    pub n_converged: Option<usize>,
    /// Index at which the successive-difference test stopped the run.
    pub n_stopped: usize,
    /// Observed `|γ_{2n} - γ_{2n-1}| / |γ_{2n-2} - γ_{2n-3}|` for `n ≥ 2`.
    pub step_ratios: Vec<f64>,
}

impl SqueezeTrace {
    pub fn gamma(&self, n: isize) -> f64 {
        self.gammas[(n + 1) as usize]
    }

    pub fn limit(&self) -> f64 {
        *self.gammas.last().expect("trace always holds γ₋₁ and γ₀")
    }

    pub fn max_step_ratio(&self) -> f64 {
        self.step_ratios.iter().cloned().fold(0.0, f64::max)
    }

    /// Rows `(n, γ_n, |γ_n - u2*|)`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["n", "gamma", "abs_err"]);
        for (i, g) in self.gammas.iter().enumerate() {
            let n = i as isize - 1;
            t.push(vec![
                n.to_string(),
                fmt_num(*g),
                fmt_num((g - self.u2_star).abs()),
            ]);
        }
        t
    }
}

pub fn run_squeeze(p: &Params, tol: f64, n_max: usize) -> Result<SqueezeTrace> {
    let u2 = equilibria(p).coexistence()?;
    let rho = contraction_ratio(p)?;
    let mut g = vec![p.prey_floor(), 1.0];
    let mut step_ratios = Vec::new();

    for _ in 0..n_max {
        let len = g.len();
        let next = squeeze_step(g[len - 2], g[len - 1], p)?;
        g.push(next);
        let n = len as isize - 1; // index of the new term
        check_interleaving(&g, n, u2)?;

        if n >= 2 && n % 2 == 0 {
            // |γ_{n} - γ_{n-1}| against |γ_{n-2} - γ_{n-3}|
            let at = |k: isize| g[(k + 1) as usize];
            let prev = (at(n - 2) - at(n - 3)).abs();
            let gap = (at(n) - at(n - 1)).abs();
            if gap > rho * prev * (1.0 + 1e-9) + 1e-14 {
                return Err(Error::Internal(format!(
                    "squeeze contraction broken at n = {n}: gap {gap} > ρ·{prev} with ρ = {rho}"
                )));
            }
            if prev > 1e-13 {
                step_ratios.push(gap / prev);
            }
        }

        if (next - g[len - 1]).abs() < tol {
            let n_converged = g
                .iter()
                .position(|x| (x - u2).abs() < tol)
                .map(|i| i.saturating_sub(1));
            return Ok(SqueezeTrace {
                gammas: g,
                rho,
                u2_star: u2,
                n_converged,
                n_stopped: n as usize,
                step_ratios,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: n_max,
        last: (g[g.len() - 1] - g[g.len() - 2]).abs(),
        history: g,
    })
}

/// Odd terms strictly increase below `u2*`, even terms strictly decrease
/// above it (up to rounding once the terms have met).
fn check_interleaving(g: &[f64], n: isize, u2: f64) -> Result<()> {
    let at = |k: isize| g[(k + 1) as usize];
    let x = at(n);
    let prev_same = at(n - 2);
    let slack = ORDER_SLACK * u2;
    let ok = if n % 2 != 0 {
        x >= prev_same - slack && x <= u2 + slack && (x > prev_same || (x - u2).abs() <= slack)
    } else {
        x <= prev_same + slack && x >= u2 - slack && (x < prev_same || (x - u2).abs() <= slack)
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Internal(format!(
            "squeeze interleaving broken at n = {n}: γ_n = {x}, γ_(n-2) = {prev_same}, u2* = {u2}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_strong_allee_assumption;

    fn reference() -> Params {
        Params::reference()
    }

    #[test]
    fn first_step_by_hand() {
        let p = reference();
        let g1 = squeeze_step(0.6, 1.0, &p).unwrap();
        assert!((g1 - 0.984057).abs() < 1e-6);
        // oracle: larger root of (1-γ)(γ/b-1) = 2m/(1+b+2a) by bisection
        let target = 2.0 * p.m / (1.0 + p.b + 2.0 * p.a);
        let h = |x: f64| (1.0 - x) * (x / p.b - 1.0) - target;
        let (mut lo, mut hi) = (p.prey_floor(), 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((g1 - lo).abs() < 1e-12);
    }

    #[test]
    fn no_predation_gives_one() {
        let p = Params {
            m: 0.0,
            ..reference()
        };
        for (a, b) in [(0.6, 1.0), (0.7, 0.8), (1.0, 0.6)] {
            assert_eq!(squeeze_step(a, b, &p).unwrap(), 1.0);
        }
    }

    #[test]
    fn coexistence_is_a_fixed_point() {
        let p = reference();
        let u2 = equilibria(&p).u2_star.unwrap();
        assert!((squeeze_step(u2, u2, &p).unwrap() - u2).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_arguments_rejected() {
        let p = reference();
        assert!(squeeze_step(0.3, 1.0, &p).is_err());
        assert!(squeeze_step(0.7, 1.2, &p).is_err());
    }

    #[test]
    fn negative_radicand_surfaces() {
        // far outside the admissible region
        let p = Params {
            m: 5.0,
            ..reference()
        };
        assert!(matches!(
            squeeze_step(0.6, 1.0, &p),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn contraction_ratio_values() {
        let p = reference();
        assert!((contraction_ratio(&p).unwrap() - 0.1 / 0.6f64.sqrt()).abs() < 1e-15);
        let tiny = Params { m: 1e-12, ..p };
        assert!(contraction_ratio(&tiny).unwrap() < 1e-10);
        let edge = Params {
            m: check_strong_allee_assumption(&p).term3,
            ..p
        };
        assert!((contraction_ratio(&edge).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reference_run() {
        let p = reference();
        let tr = run_squeeze(&p, 1e-12, DEFAULT_MAX_STEPS).unwrap();
        let u2 = tr.u2_star;
        assert!(tr.n_stopped <= 30, "stopped at {}", tr.n_stopped);
        assert!((tr.limit() - u2).abs() < 1e-10);
        assert!(tr.n_converged.is_some());
        // γ₋₁ < γ₁ < u2* < γ₂ < γ₀
        assert!(tr.gamma(-1) < tr.gamma(1));
        assert!(tr.gamma(1) < u2 && u2 < tr.gamma(2));
        assert!(tr.gamma(2) < tr.gamma(0));
        assert!(tr.max_step_ratio() <= tr.rho + 1e-6);
        let lo = p.prey_floor();
        assert!(tr.gammas.iter().all(|g| *g >= lo && *g <= 1.0));
    }

    #[test]
    fn zero_predation_run_is_constant() {
        let p = Params {
            m: 0.0,
            ..reference()
        };
        let tr = run_squeeze(&p, 1e-12, 100).unwrap();
        assert!(tr.gammas[1..].iter().all(|g| *g == 1.0));
    }

    #[test]
    fn monotone_in_arguments() {
        let p = reference();
        let e = 1e-6;
        for i in 0..10 {
            for j in 0..10 {
                let prev = 0.6 + 0.039 * i as f64;
                let curr = 0.6 + 0.039 * j as f64;
                let base = squeeze_step(prev, curr, &p).unwrap();
                assert!(squeeze_step(prev, curr + e, &p).unwrap() < base);
                assert!(squeeze_step(prev + e, curr, &p).unwrap() > base);
            }
        }
    }

    #[test]
    fn trace_table() {
        let tr = run_squeeze(&reference(), 1e-12, 100).unwrap();
        let t = tr.to_table();
        assert_eq!(t.rows.len(), tr.gammas.len());
        assert_eq!(t.rows[0][0], "-1");
    }
}
