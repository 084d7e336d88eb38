//! Explicit upper and lower solutions of the wave system and a grid
//! verifier for their differential inequalities.
//!
//! ```text
//! φ⁺ ≡ 1                      φ⁻ = (1+b)/2                 (ξ > 0)
//!                                  1 - ((1-b)/2) e^{ηξ}      (ξ ≤ 0)
//! ψ⁺ = 1          (ξ > 0)     ψ⁻ = 0                        (ξ > ξ₁)
//!      e^{λ₁ξ}    (ξ ≤ 0)          e^{λ₁ξ}(1 - r e^{εξ})    (ξ ≤ ξ₁)
//! ```
//! with `ε = ½ min(λ₁, λ₂-λ₁)`, `r = 2 max(1, -2s/((1+b)Δ(λ₁+ε, c)))` and
//! `ξ₁ = -ln(r)/ε`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{delta, DispersionReport};
use crate::error::{Error, Result};
use crate::io::{fmt_num, Table};
use crate::kernel::Kernel;
use crate::model::{f_unchecked, g_unchecked, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersubPair {
    pub c: f64,
    pub b: f64,
    pub eta: f64,
    pub lambda1: f64,
    pub epsilon: f64,
    pub r: f64,
    pub xi1: f64,
}

impl SupersubPair {
    pub fn phi_upper(&self, _xi: f64) -> f64 {
        1.0
    }

    pub fn phi_lower(&self, xi: f64) -> f64 {
        if xi > 0.0 {
            0.5 * (1.0 + self.b)
        } else {
            1.0 - 0.5 * (1.0 - self.b) * (self.eta * xi).exp()
        }
    }

    pub fn psi_upper(&self, xi: f64) -> f64 {
        if xi > 0.0 {
            1.0
        } else {
            (self.lambda1 * xi).exp()
        }
    }

    pub fn psi_lower(&self, xi: f64) -> f64 {
        if xi > self.xi1 {
            0.0
        } else {
            (self.lambda1 * xi).exp() * (1.0 - self.r * (self.epsilon * xi).exp())
        }
    }

    pub fn d_phi_lower(&self, xi: f64) -> f64 {
        if xi > 0.0 {
            0.0
        } else {
            -0.5 * (1.0 - self.b) * self.eta * (self.eta * xi).exp()
        }
    }

    pub fn d_psi_upper(&self, xi: f64) -> f64 {
        if xi > 0.0 {
            0.0
        } else {
            self.lambda1 * (self.lambda1 * xi).exp()
        }
    }

    pub fn d_psi_lower(&self, xi: f64) -> f64 {
        if xi > self.xi1 {
            0.0
        } else {
            let l = self.lambda1;
            let le = l + self.epsilon;
            l * (l * xi).exp() - self.r * le * (le * xi).exp()
        }
    }

    /// The breakpoints `{ξ₁, 0}`, in increasing order.
    pub fn exception_set(&self) -> [f64; 2] {
        [self.xi1, 0.0]
    }

    /// Lipschitz bounds of `(φ⁺, φ⁻, ψ⁺, ψ⁻)`.
    pub fn lipschitz(&self) -> [f64; 4] {
        let l = self.lambda1;
        let le = l + self.epsilon;
        // |ψ⁻'| ≤ λ₁ + r(λ₁+ε) e^{εξ} ≤ λ₁ + (λ₁+ε) on ξ ≤ ξ₁
        [0.0, 0.5 * (1.0 - self.b) * self.eta, l, l + le]
    }

    /// `[φ⁺, φ⁻, ψ⁺, ψ⁻]` sampled on `grid`.
    pub fn sample(&self, grid: &[f64]) -> [Vec<f64>; 4] {
        [
            grid.iter().map(|x| self.phi_upper(*x)).collect(),
            grid.iter().map(|x| self.phi_lower(*x)).collect(),
            grid.iter().map(|x| self.psi_upper(*x)).collect(),
            grid.iter().map(|x| self.psi_lower(*x)).collect(),
        ]
    }
}

pub fn build_supersub(
    c: f64,
    p: &Params,
    k2: &Kernel,
    rep: &DispersionReport,
) -> Result<SupersubPair> {
    p.validate()?;
    if !(c > rep.c_star) {
        return Err(Error::Precondition(format!(
            "upper/lower solutions need c > c* = {}, got {c}",
            rep.c_star
        )));
    }
    if (rep.c - c).abs() > 1e-12 * c {
        return Err(Error::Precondition(format!(
            "dispersion report computed for c = {}, not {c}",
            rep.c
        )));
    }
    let (l1, l2) = (rep.lambda1, rep.lambda2);
    let epsilon = 0.5 * l1.min(l2 - l1);
    let d = delta(l1 + epsilon, c, p, k2)?;
    if !(d < 0.0) {
        return Err(Error::Construction(format!(
            "Δ(λ₁+ε, c) = {d} is not negative"
        )));
    }
    let r = 2.0 * f64::max(1.0, -2.0 * p.s / ((1.0 + p.b) * d));
    Ok(SupersubPair {
        c,
        b: p.b,
        eta: rep.eta,
        lambda1: l1,
        epsilon,
        r,
        xi1: -r.ln() / epsilon,
    })
}

/// `N[w](ξ) = ∫ J(y) (w(ξ-y) - w(ξ)) dy` by composite Simpson with step at
/// most `hq`, split wherever the integrand has a kink: at `y = 0` and at
/// `y = ξ - e` for each breakpoint `e` of `w`.
pub(crate) fn nonlocal_quadrature(
    k: &Kernel,
    w: impl Fn(f64) -> f64,
    xi: f64,
    hq: f64,
    breaks: &[f64],
) -> Result<f64> {
    let radius = k.truncation_radius()?;
    let mut cuts = vec![-radius, 0.0, radius];
    cuts.extend(breaks.iter().map(|e| xi - e).filter(|y| y.abs() < radius));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let w0 = w(xi);
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let n = 2 * ((b - a) / (2.0 * hq)).ceil().max(1.0) as usize;
        let step = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            // nudge segment ends inward so one-sided limits are used at jumps
            let y = match i {
                0 => a + 1e-12 * step,
                _ if i == n => b - 1e-12 * step,
                _ => a + i as f64 * step,
            };
            let wt = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += wt * k.density(y)? * (w(xi - y) - w0);
        }
        total += acc * step / 3.0;
    }
    Ok(total)
}

/// Left-hand sides of the four inequalities at one point:
/// s1 for `(φ⁺, ψ⁻)`, s2 for `(φ⁻, ψ⁺)`, s3 for `(φ⁺, ψ⁺)`, s4 for `(φ⁻, ψ⁻)`.
pub fn residuals_at(
    pair: &SupersubPair,
    p: &Params,
    k1: &Kernel,
    k2: &Kernel,
    xi: f64,
    hq: f64,
) -> Result<[f64; 4]> {
    let c = pair.c;
    let phi_u = pair.phi_upper(xi);
    let phi_l = pair.phi_lower(xi);
    let psi_u = pair.psi_upper(xi);
    let psi_l = pair.psi_lower(xi);

    let e = pair.exception_set();
    let n_phi_u = nonlocal_quadrature(k1, |x| pair.phi_upper(x), xi, hq, &e)?;
    let n_phi_l = nonlocal_quadrature(k1, |x| pair.phi_lower(x), xi, hq, &e)?;
    let n_psi_u = nonlocal_quadrature(k2, |x| pair.psi_upper(x), xi, hq, &e)?;
    let n_psi_l = nonlocal_quadrature(k2, |x| pair.psi_lower(x), xi, hq, &e)?;

    Ok([
        p.d1 * n_phi_u + phi_u * f_unchecked(phi_u, psi_l, p),
        p.d1 * n_phi_l - c * pair.d_phi_lower(xi) + phi_l * f_unchecked(phi_l, psi_u, p),
        p.d2 * n_psi_u - c * pair.d_psi_upper(xi) + psi_u * g_unchecked(phi_u, psi_u, p),
        p.d2 * n_psi_l - c * pair.d_psi_lower(xi) + psi_l * g_unchecked(phi_l, psi_l, p),
    ])
}

/// Per-point residuals plus the worst signed value of each inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub xi: Vec<f64>,
    /// `residuals[k][i]` is inequality `k+1` at `xi[i]`.
    pub residuals: [Vec<f64>; 4],
    /// Max of s1 and s3, min of s2 and s4.
    pub worst: [f64; 4],
    pub tol: [f64; 4],
    pub quadrature_step: f64,
    pub excluded: usize,
}

impl ResidualReport {
    pub fn passes_each(&self) -> [bool; 4] {
        [
            self.worst[0] <= self.tol[0],
            self.worst[1] >= -self.tol[1],
            self.worst[2] <= self.tol[2],
            self.worst[3] >= -self.tol[3],
        ]
    }

    pub fn passes(&self) -> bool {
        self.passes_each().iter().all(|x| *x)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new([
            "xi",
            "residual_s1",
            "residual_s2",
            "residual_s3",
            "residual_s4",
        ]);
        for (i, x) in self.xi.iter().enumerate() {
            t.push(
                std::iter::once(*x)
                    .chain(self.residuals.iter().map(|r| r[i]))
                    .map(fmt_num)
                    .collect(),
            );
        }
        t
    }
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * h).collect()
}

/// Evaluates all four inequalities on `grid`, skipping points within half a
/// spacing of the breakpoints. Nonlocal terms use quadrature of the exact
/// formulas with step `spacing/4`.
pub fn verify_supersub(
    pair: &SupersubPair,
    p: &Params,
    k1: &Kernel,
    k2: &Kernel,
    grid: &[f64],
) -> Result<ResidualReport> {
    if grid.len() < 2 {
        return Err(Error::Precondition(
            "verification grid needs two points".into(),
        ));
    }
    let spacing = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let hq = spacing / 4.0;
    let e = pair.exception_set();
    let xi: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|x| e.iter().all(|b| (x - b).abs() > 0.5 * spacing))
        .collect();
    let excluded = grid.len() - xi.len();

    let rows: Vec<[f64; 4]> = xi
        .par_iter()
        .map(|x| residuals_at(pair, p, k1, k2, *x, hq))
        .collect::<Result<_>>()?;

    let mut residuals: [Vec<f64>; 4] = Default::default();
    for row in &rows {
        for (k, v) in row.iter().enumerate() {
            residuals[k].push(*v);
        }
    }
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = [
        max(&residuals[0]),
        min(&residuals[1]),
        max(&residuals[2]),
        min(&residuals[3]),
    ];

    let lip = pair.lipschitz();
    let bound = |d: f64, k: &Kernel, l: f64| 1e-8 + d * k.second_moment() * l * hq;
    let tol = [
        bound(p.d1, k1, lip[0]),
        bound(p.d1, k1, lip[1]),
        bound(p.d2, k2, lip[2]),
        bound(p.d2, k2, lip[3]),
    ];

    Ok(ResidualReport {
        xi,
        residuals,
        worst,
        tol,
        quadrature_step: hq,
        excluded,
    })
}
