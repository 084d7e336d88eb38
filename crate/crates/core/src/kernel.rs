//! Dispersal kernels and the discrete nonlocal operator `N[w] = J*w - w`.
//!
//! A [`Kernel`] is a symmetric probability density on the line with an
//! exponential moment `M(λ) = ∫ J(y) e^{λy} dy` that is finite on
//! `|λ| < λ0`. [`discretize`] samples it onto a uniform stencil, and
//! [`Convolver`] applies the resulting [`DiscreteKernel`] to sampled fields,
//! either by direct summation or through an FFT.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail mass allowed to be discarded when truncating a kernel.
pub const TAIL_MASS: f64 = 1e-12;

/// Largest relative mass defect a tabulated kernel may carry before it is
/// rejected instead of renormalized.
pub const TABULATED_MASS_SLACK: f64 = 0.01;

/// Exponential moment supplied directly, for kernels that only take part in
/// the dispersion analysis.
#[derive(Clone)]
pub struct MomentFn {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl MomentFn {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        MomentFn {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    /// `M(λ) = Σ c_k λ^k`. Odd coefficients must vanish so that `M` is even.
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidKernel("empty moment polynomial".into()));
        }
        if (coeffs[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!(
                "moment polynomial must equal 1 at λ = 0, got {}",
                coeffs[0]
            )));
        }
        if coeffs.iter().skip(1).step_by(2).any(|c| *c != 0.0) {
            return Err(Error::InvalidKernel(
                "moment polynomial must be even (odd coefficients nonzero)".into(),
            ));
        }
        let label = format!("poly{coeffs:?}");
        Ok(MomentFn::new(label, move |lam| {
            coeffs.iter().rev().fold(0.0, |acc, c| acc * lam + c)
        }))
    }

    pub fn eval(&self, lam: f64) -> f64 {
        (self.f)(lam)
    }
}

impl fmt::Debug for MomentFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MomentFn({})", self.label)
    }
}

/// Kernel sampled on a symmetric, uniformly spaced grid of offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    offsets: Vec<f64>,
    density: Vec<f64>,
    total_variation: f64,
}

impl TabulatedKernel {
    /// Checks symmetry and nonnegativity, and renormalizes the trapezoid
    /// mass to one when it is off by less than one percent.
    pub fn new(offsets: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let n = offsets.len();
        if n < 3 || density.len() != n {
            return Err(Error::InvalidKernel(format!(
                "tabulated kernel needs at least 3 matching samples, got {} offsets and {} densities",
                n,
                density.len()
            )));
        }
        if offsets.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidKernel(
                "offsets must be strictly increasing".into(),
            ));
        }
        let spacing = offsets[1] - offsets[0];
        let scale = offsets[n - 1].abs().max(1.0);
        for i in 0..n {
            let j = n - 1 - i;
            if (offsets[i] + offsets[j]).abs() > 1e-9 * scale {
                return Err(Error::InvalidKernel(format!(
                    "offsets are not symmetric: {} vs {}",
                    offsets[i], offsets[j]
                )));
            }
            if i > 0 && ((offsets[i] - offsets[i - 1]) - spacing).abs() > 1e-9 * scale {
                return Err(Error::InvalidKernel(
                    "offsets must be uniformly spaced".into(),
                ));
            }
            if !(density[i] >= 0.0) || !density[i].is_finite() {
                return Err(Error::InvalidKernel(format!(
                    "density must be finite and nonnegative, got {} at {}",
                    density[i], offsets[i]
                )));
            }
            let dmax = density[i].abs().max(density[j].abs()).max(1e-300);
            if (density[i] - density[j]).abs() > 1e-12 * dmax {
                return Err(Error::InvalidKernel(format!(
                    "density is not symmetric at ±{}",
                    offsets[i].abs()
                )));
            }
        }
        let mass = trapezoid(&density, spacing);
        if !(mass > 0.0) || (mass - 1.0).abs() > TABULATED_MASS_SLACK {
            return Err(Error::InvalidKernel(format!(
                "tabulated mass {mass} deviates from 1 by more than {TABULATED_MASS_SLACK}"
            )));
        }
        let density: Vec<f64> = density.iter().map(|d| d / mass).collect();
        let total_variation = density.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        Ok(TabulatedKernel {
            offsets,
            density,
            total_variation,
        })
    }

    /// Reads a two-column CSV `offset,density`. A header row is optional.
    pub fn from_csv_reader<R: Read>(rdr: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(rdr);
        let mut offsets = Vec::new();
        let mut density = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::InvalidKernel(format!(
                    "line {}: expected two columns",
                    line + 1
                )));
            }
            let (x, d) = match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(x), Ok(d)) => (x, d),
                _ if line == 0 => continue,
                _ => {
                    return Err(Error::InvalidKernel(format!(
                        "line {}: cannot parse numbers",
                        line + 1
                    )))
                }
            };
            offsets.push(x);
            density.push(d);
        }
        TabulatedKernel::new(offsets, density)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    pub fn spacing(&self) -> f64 {
        self.offsets[1] - self.offsets[0]
    }

    pub fn radius(&self) -> f64 {
        self.offsets[self.offsets.len() - 1]
    }

    /// Total variation of the samples, the discrete stand-in for `∫|J'|`.
    pub fn total_variation(&self) -> f64 {
        self.total_variation
    }

    fn density_at(&self, x: f64) -> f64 {
        let x = x.abs();
        let r = self.radius();
        if x > r {
            return 0.0;
        }
        let t = (x - self.offsets[0]) / self.spacing();
        let i = (t.floor() as usize).min(self.offsets.len() - 2);
        let frac = t - i as f64;
        self.density[i] * (1.0 - frac) + self.density[i + 1] * frac
    }

    fn moment(&self, lam: f64) -> f64 {
        let weighted: Vec<f64> = self
            .offsets
            .iter()
            .zip(&self.density)
            .map(|(x, d)| d * (lam * x).exp())
            .collect();
        trapezoid(&weighted, self.spacing())
    }
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    let n = v.len();
    let inner: f64 = v[1..n - 1].iter().sum();
    h * (inner + 0.5 * (v[0] + v[n - 1]))
}

/// Symmetric unit-mass dispersal kernel.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// `exp(-x²/2σ²)/(σ√(2π))`
    Gaussian {
        sigma: f64,
    },
    /// `(α/2) exp(-α|x|)`
    Laplace {
        alpha: f64,
    },
    /// `1/(2R)` on `[-R, R]`
    Uniform {
        radius: f64,
    },
    Tabulated(TabulatedKernel),
    /// Known only through its exponential moment.
    MomentDefined {
        moment: MomentFn,
        lambda0: f64,
    },
}

impl Kernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        Ok(Kernel::Gaussian { sigma })
    }

    pub fn laplace(alpha: f64) -> Result<Self> {
        positive("alpha", alpha)?;
        Ok(Kernel::Laplace { alpha })
    }

    pub fn uniform(radius: f64) -> Result<Self> {
        positive("radius", radius)?;
        Ok(Kernel::Uniform { radius })
    }

    pub fn moment_defined(moment: MomentFn, lambda0: f64) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "decay abscissa must be positive, got {lambda0}"
            )));
        }
        Ok(Kernel::MomentDefined { moment, lambda0 })
    }

    /// `M(λ) = 1 + λ²`: the moment of the formal kernel that turns the
    /// nonlocal operator into the Laplacian.
    pub fn local_diffusion() -> Self {
        Kernel::MomentDefined {
            moment: MomentFn::new("1+λ²", |lam| 1.0 + lam * lam),
            lambda0: f64::INFINITY,
        }
    }

    /// Supremum `λ0` of decay rates with a finite exponential moment.
    pub fn lambda0(&self) -> f64 {
        match self {
            Kernel::Laplace { alpha } => *alpha,
            Kernel::MomentDefined { lambda0, .. } => *lambda0,
            _ => f64::INFINITY,
        }
    }

    /// Exponential moment `∫ J(y) e^{λy} dy`.
    pub fn moment(&self, lam: f64) -> Result<f64> {
        let lambda0 = self.lambda0();
        if !(lam.abs() < lambda0) {
            return Err(Error::DivergentMoment {
                lambda: lam,
                lambda0,
            });
        }
        let m = match self {
            Kernel::Gaussian { sigma } => (0.5 * sigma * sigma * lam * lam).exp(),
            Kernel::Laplace { alpha } => alpha * alpha / (alpha * alpha - lam * lam),
            Kernel::Uniform { radius } => {
                let z = lam * radius;
                if z.abs() < 1e-4 {
                    1.0 + z * z / 6.0 + z.powi(4) / 120.0
                } else {
                    z.sinh() / z
                }
            }
            Kernel::Tabulated(t) => t.moment(lam),
            Kernel::MomentDefined { moment, .. } => moment.eval(lam),
        };
        if !m.is_finite() {
            return Err(Error::DivergentMoment {
                lambda: lam,
                lambda0,
            });
        }
        Ok(m)
    }

    /// `dM/dλ`, analytic where the shape allows and a central difference
    /// for moment-defined kernels.
    pub fn moment_derivative(&self, lam: f64) -> Result<f64> {
        let lambda0 = self.lambda0();
        if !(lam.abs() < lambda0) {
            return Err(Error::DivergentMoment {
                lambda: lam,
                lambda0,
            });
        }
        Ok(match self {
            Kernel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                s2 * lam * (0.5 * s2 * lam * lam).exp()
            }
            Kernel::Laplace { alpha } => {
                let a2 = alpha * alpha;
                2.0 * a2 * lam / ((a2 - lam * lam) * (a2 - lam * lam))
            }
            Kernel::Uniform { radius } => {
                let z = lam * radius;
                if z.abs() < 1e-4 {
                    radius * (z / 3.0 + z.powi(3) / 30.0)
                } else {
                    radius * (z * z.cosh() - z.sinh()) / (z * z)
                }
            }
            Kernel::Tabulated(t) => {
                let w: Vec<f64> = t
                    .offsets
                    .iter()
                    .zip(&t.density)
                    .map(|(x, d)| d * x * (lam * x).exp())
                    .collect();
                trapezoid(&w, t.spacing())
            }
            Kernel::MomentDefined { moment, lambda0 } => {
                let mut e = 1e-5 * lam.abs().max(1.0);
                if lambda0.is_finite() {
                    e = e.min(0.5 * (lambda0 - lam.abs()));
                }
                (moment.eval(lam + e) - moment.eval(lam - e)) / (2.0 * e)
            }
        })
    }

    /// Pointwise density. Unavailable for moment-defined kernels.
    pub fn density(&self, x: f64) -> Result<f64> {
        Ok(match self {
            Kernel::Gaussian { sigma } => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            Kernel::Laplace { alpha } => 0.5 * alpha * (-alpha * x.abs()).exp(),
            Kernel::Uniform { radius } => {
                let ax = x.abs();
                if ax < *radius {
                    0.5 / radius
                } else if ax == *radius {
                    // half value at the jump
                    0.25 / radius
                } else {
                    0.0
                }
            }
            Kernel::Tabulated(t) => t.density_at(x),
            Kernel::MomentDefined { .. } => {
                return Err(Error::UnsupportedKernel(
                    "moment-defined kernels have no pointwise density".into(),
                ))
            }
        })
    }

    /// Radius beyond which the discarded tail mass is below [`TAIL_MASS`].
    pub fn truncation_radius(&self) -> Result<f64> {
        Ok(match self {
            Kernel::Gaussian { sigma } => 8.0 * sigma,
            Kernel::Laplace { alpha } => 28.0 / alpha,
            Kernel::Uniform { radius } => *radius,
            Kernel::Tabulated(t) => t.radius(),
            Kernel::MomentDefined { .. } => {
                return Err(Error::UnsupportedKernel(
                    "moment-defined kernels have no spatial extent".into(),
                ))
            }
        })
    }

    /// `∫ J(y) y² dy`.
    pub fn second_moment(&self) -> f64 {
        match self {
            Kernel::Gaussian { sigma } => sigma * sigma,
            Kernel::Laplace { alpha } => 2.0 / (alpha * alpha),
            Kernel::Uniform { radius } => radius * radius / 3.0,
            Kernel::Tabulated(t) => {
                let w: Vec<f64> = t
                    .offsets
                    .iter()
                    .zip(&t.density)
                    .map(|(x, d)| d * x * x)
                    .collect();
                trapezoid(&w, t.spacing())
            }
            Kernel::MomentDefined { moment, lambda0 } => {
                let e = 1e-4_f64.min(0.5 * lambda0);
                (moment.eval(e) - 2.0 * moment.eval(0.0) + moment.eval(-e)) / (e * e)
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// Free-function form of [`Kernel::moment`].
pub fn moment(k: &Kernel, lam: f64) -> Result<f64> {
    k.moment(lam)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RadiusPolicy {
    /// Truncate where the tail mass drops below [`TAIL_MASS`].
    #[default]
    TailMass,
    Fixed(f64),
}

/// Convolution weights on the stencil `-K..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    weights: Vec<f64>,
    h: f64,
    truncation_radius: f64,
    raw_mass: f64,
}

impl DiscreteKernel {
    /// Builds a stencil from the nonnegative half `w[0], w[1], .., w[K]`,
    /// mirrors it and renormalizes to unit sum.
    pub fn from_half(half: &[f64], h: f64) -> Result<Self> {
        if half.is_empty() || half.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidKernel("weights must be nonnegative".into()));
        }
        let k = half.len() - 1;
        let mut weights = vec![0.0; 2 * k + 1];
        for (j, w) in half.iter().enumerate() {
            weights[k + j] = *w;
            weights[k - j] = *w;
        }
        let raw_mass = stencil_sum(&weights);
        if !(raw_mass > 0.0) {
            return Err(Error::InvalidKernel("stencil has zero mass".into()));
        }
        if raw_mass != 1.0 {
            for w in &mut weights {
                *w /= raw_mass;
            }
        }
        Ok(DiscreteKernel {
            weights,
            h,
            truncation_radius: k as f64 * h,
            raw_mass,
        })
    }

    /// Half-width `K` of the stencil in grid points.
    pub fn radius_points(&self) -> usize {
        (self.weights.len() - 1) / 2
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    /// Stencil mass before renormalization.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `k` (in grid points), zero outside the stencil.
    pub fn weight(&self, k: isize) -> f64 {
        let kk = self.radius_points() as isize;
        if k.abs() > kk {
            0.0
        } else {
            self.weights[(k + kk) as usize]
        }
    }

    /// `Σ_k w_k (k h)²`.
    pub fn second_moment(&self) -> f64 {
        let kk = self.radius_points() as isize;
        (-kk..=kk)
            .map(|k| {
                let y = k as f64 * self.h;
                self.weight(k) * y * y
            })
            .sum()
    }
}

/// Sums symmetric weights pairwise from the tails inward so that the result
/// does not depend on traversal direction.
fn stencil_sum(w: &[f64]) -> f64 {
    let k = (w.len() - 1) / 2;
    let mut s = 0.0;
    for j in (1..=k).rev() {
        s += w[k - j] + w[k + j];
    }
    s + w[k]
}

/// Midpoint sampling `w_k = h J(kh)` truncated by `policy`, renormalized to
/// unit sum.
pub fn discretize(k: &Kernel, h: f64, policy: RadiusPolicy) -> Result<DiscreteKernel> {
    if let Kernel::MomentDefined { .. } = k {
        return Err(Error::UnsupportedKernel(
            "moment-defined kernels cannot be discretized".into(),
        ));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!(
            "grid spacing must be positive, got {h}"
        )));
    }
    let radius = match policy {
        RadiusPolicy::TailMass => k.truncation_radius()?,
        RadiusPolicy::Fixed(r) if r >= 0.0 => r,
        RadiusPolicy::Fixed(r) => {
            return Err(Error::Precondition(format!(
                "negative truncation radius {r}"
            )))
        }
    };
    let kk = (radius / h + 1e-9).floor() as usize;
    let half: Vec<f64> = (0..=kk)
        .map(|j| k.density(j as f64 * h).map(|d| h * d))
        .collect::<Result<_>>()?;
    DiscreteKernel::from_half(&half, h)
}

/// How a sampled field is continued past either end of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// Repeat the end values.
    #[default]
    Clamp,
    Periodic,
    /// Constant states outside the grid.
    Fixed {
        left: f64,
        right: f64,
    },
}

impl Extension {
    fn value(&self, w: &[f64], m: isize) -> f64 {
        let n = w.len() as isize;
        if (0..n).contains(&m) {
            return w[m as usize];
        }
        match *self {
            Extension::Clamp => {
                if m < 0 {
                    w[0]
                } else {
                    w[(n - 1) as usize]
                }
            }
            Extension::Periodic => w[m.rem_euclid(n) as usize],
            Extension::Fixed { left, right } => {
                if m < 0 {
                    left
                } else {
                    right
                }
            }
        }
    }

    fn pad(&self, w: &[f64], k: usize) -> Vec<f64> {
        let n = w.len() as isize;
        let k = k as isize;
        (-k..n + k).map(|m| self.value(w, m)).collect()
    }
}

/// `(J*w - w)[i] = Σ_k w_k (w_ext[i-k] - w[i])` by direct summation.
///
/// Written in difference form so constant fields map to exactly zero.
pub fn nonlocal_op(dk: &DiscreteKernel, w: &[f64], ext: Extension) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    nonlocal_direct_into(dk, w, ext, &mut out);
    out
}

fn nonlocal_direct_into(dk: &DiscreteKernel, w: &[f64], ext: Extension, out: &mut [f64]) {
    assert!(!w.is_empty(), "nonlocal operator on an empty field");
    assert_eq!(w.len(), out.len());
    let k = dk.radius_points();
    let pad = ext.pad(w, k);
    let wts = dk.weights();
    out.par_iter_mut()
        .enumerate()
        .with_min_len(256)
        .for_each(|(i, o)| {
            let wi = w[i];
            let window = &pad[i..i + 2 * k + 1];
            // symmetric stencil: orientation of the window is irrelevant
            *o = wts
                .iter()
                .zip(window)
                .map(|(a, b)| a * (b - wi))
                .sum::<f64>();
        });
}

/// Which convolution path a [`Convolver`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    Direct,
    Fft,
    /// FFT for wide stencils on long fields, direct otherwise.
    #[default]
    Auto,
}

/// A discrete kernel bound to a field length, with a cached FFT plan when
/// the transform path is selected.
pub struct Convolver {
    dk: DiscreteKernel,
    n: usize,
    fft: Option<FftPlan>,
}

struct FftPlan {
    len: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Convolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Convolver")
            .field("n", &self.n)
            .field("stencil", &self.dk.weights.len())
            .field("fft", &self.fft.as_ref().map(|p| p.len))
            .finish()
    }
}

impl Convolver {
    pub fn new(dk: DiscreteKernel, n: usize, method: ConvolutionMethod) -> Self {
        let stencil = dk.weights.len();
        let use_fft = match method {
            ConvolutionMethod::Direct => false,
            ConvolutionMethod::Fft => true,
            ConvolutionMethod::Auto => stencil > 64 && n > 256,
        };
        let fft = use_fft.then(|| FftPlan::new(&dk, n));
        Convolver { dk, n, fft }
    }

    pub fn kernel(&self) -> &DiscreteKernel {
        &self.dk
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    /// Writes `J*w - w` into `out`.
    pub fn apply_into(&self, w: &[f64], ext: Extension, out: &mut [f64]) {
        assert_eq!(w.len(), self.n, "field length does not match convolver");
        match &self.fft {
            None => nonlocal_direct_into(&self.dk, w, ext, out),
            Some(plan) => plan.apply_into(&self.dk, w, ext, out),
        }
    }

    pub fn apply(&self, w: &[f64], ext: Extension) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        self.apply_into(w, ext, &mut out);
        out
    }
}

impl FftPlan {
    fn new(dk: &DiscreteKernel, n: usize) -> Self {
        let k = dk.radius_points();
        let len = (n + 4 * k).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex::new(0.0, 0.0); len];
        for (j, w) in dk.weights.iter().enumerate() {
            spectrum[j] = Complex::new(*w, 0.0);
        }
        forward.process(&mut spectrum);
        let scale = 1.0 / len as f64;
        for z in &mut spectrum {
            *z *= scale;
        }
        FftPlan {
            len,
            spectrum,
            forward,
            inverse,
        }
    }

    fn apply_into(&self, dk: &DiscreteKernel, w: &[f64], ext: Extension, out: &mut [f64]) {
        let k = dk.radius_points();
        let pad = ext.pad(w, k);
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for (b, p) in buf.iter_mut().zip(&pad) {
            b.re = *p;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        for (i, o) in out.iter_mut().enumerate() {
            *o = buf[i + 2 * k].re - w[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Adaptive Simpson quadrature, used as an independent oracle.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn quad_moment(k: &Kernel, lam: f64, lo: f64, hi: f64) -> f64 {
        // split at 0 so kinks sit on panel edges
        let f = |y: f64| k.density(y).unwrap() * (lam * y).exp();
        adaptive_simpson(&f, lo, 0.0, 1e-13) + adaptive_simpson(&f, 0.0, hi, 1e-13)
    }

    #[test]
    fn unit_mass_moment() {
        for k in [
            Kernel::gaussian(0.7).unwrap(),
            Kernel::laplace(2.0).unwrap(),
            Kernel::uniform(1.5).unwrap(),
            Kernel::local_diffusion(),
        ] {
            assert_eq!(k.moment(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn laplace_moment_matches_quadrature() {
        let k = Kernel::laplace(2.0).unwrap();
        let m = k.moment(1.0).unwrap();
        assert!((m - 4.0 / 3.0).abs() < 1e-15);
        let q = quad_moment(&k, 1.0, -40.0, 40.0);
        assert!((m - q).abs() < 1e-9, "{m} vs {q}");
    }

    #[test]
    fn uniform_moment_matches_quadrature() {
        let k = Kernel::uniform(1.0).unwrap();
        let m = k.moment(1.0).unwrap();
        assert!((m - 1.175201).abs() < 1e-6);
        let q = quad_moment(&k, 1.0, -1.0, 1.0);
        assert!((m - q).abs() < 1e-10, "{m} vs {q}");
    }

    #[test]
    fn gaussian_moment_matches_quadrature() {
        let k = Kernel::gaussian(1.3).unwrap();
        for lam in [0.3, 1.0, 2.0] {
            let m = k.moment(lam).unwrap();
            let q = quad_moment(&k, lam, -20.0, 20.0);
            assert!((m - q).abs() < 1e-9 * m, "λ={lam}: {m} vs {q}");
        }
    }

    #[test]
    fn divergent_moment_is_an_error() {
        let k = Kernel::laplace(2.0).unwrap();
        assert!(matches!(k.moment(2.0), Err(Error::DivergentMoment { .. })));
        assert!(matches!(k.moment(-2.5), Err(Error::DivergentMoment { .. })));
        assert!(k.moment(1.999).unwrap() > 100.0);
    }

    #[test]
    fn moment_even_and_convex() {
        let t = tabulated_triangle(1.0, 0.01);
        for k in [
            Kernel::gaussian(1.0).unwrap(),
            Kernel::laplace(2.0).unwrap(),
            Kernel::uniform(1.0).unwrap(),
            Kernel::Tabulated(t),
        ] {
            let top = k.lambda0().min(5.0) * 0.95;
            let e = 1e-3;
            let mut lam = 0.05;
            while lam + e < top {
                let m = k.moment(lam).unwrap();
                assert!((m - k.moment(-lam).unwrap()).abs() <= 1e-12 * m);
                let d2 = k.moment(lam + e).unwrap() - 2.0 * m + k.moment(lam - e).unwrap();
                assert!(d2 > 0.0, "{k:?} not convex at {lam}");
                lam += 0.05;
            }
        }
    }

    fn tabulated_triangle(r: f64, dx: f64) -> TabulatedKernel {
        let n = (r / dx).round() as i64;
        let offsets: Vec<f64> = (-n..=n).map(|i| i as f64 * dx).collect();
        let density = offsets
            .iter()
            .map(|x| (1.0 - x.abs() / r).max(0.0) / r)
            .collect();
        TabulatedKernel::new(offsets, density).unwrap()
    }

    #[test]
    fn tabulated_kernel_checks() {
        let t = tabulated_triangle(1.0, 0.05);
        let k = Kernel::Tabulated(t.clone());
        assert!((k.moment(0.0).unwrap() - 1.0).abs() < 1e-14);
        // triangle density has TV = 2 * peak
        assert!((t.total_variation() - 2.0).abs() < 1e-12);
        // moment of the triangle: 2(cosh λ - 1)/λ²
        let lam: f64 = 1.0;
        let exact = 2.0 * (lam.cosh() - 1.0) / (lam * lam);
        assert!((k.moment(lam).unwrap() - exact).abs() < 1e-3);

        let offsets = vec![-1.0, 0.0, 1.0];
        assert!(TabulatedKernel::new(offsets.clone(), vec![0.5, 1.0, 0.4]).is_err());
        assert!(TabulatedKernel::new(offsets.clone(), vec![0.0, 2.0, 0.0]).is_err());
        assert!(TabulatedKernel::new(offsets.clone(), vec![-0.1, 1.2, -0.1]).is_err());
        // 0.5% low is renormalized
        let t = TabulatedKernel::new(offsets, vec![0.0, 0.995, 0.0]).unwrap();
        assert!((Kernel::Tabulated(t).moment(0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tabulated_csv_roundtrip() {
        let text = "offset,density\n-1,0\n-0.5,0.5\n0,1\n0.5,0.5\n1,0\n";
        let t = TabulatedKernel::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(t.radius(), 1.0);
        assert!(TabulatedKernel::from_csv_reader("x\n1,zz\n".as_bytes()).is_err());
    }

    #[test]
    fn discretize_rejects_moment_defined() {
        assert!(matches!(
            discretize(&Kernel::local_diffusion(), 0.1, RadiusPolicy::TailMass),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn gaussian_stencil_mass() {
        let dk = discretize(&Kernel::gaussian(1.0).unwrap(), 0.1, RadiusPolicy::TailMass).unwrap();
        assert_eq!(dk.radius_points(), 80);
        assert!((dk.raw_mass() - 1.0).abs() < 1e-14, "{}", dk.raw_mass());
        assert!((stencil_sum(dk.weights()) - 1.0).abs() < 1e-15);
        for k in 0..=80 {
            assert_eq!(dk.weight(k), dk.weight(-k));
        }
        assert!((dk.second_moment() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn uniform_stencil_by_hand() {
        let dk = discretize(&Kernel::uniform(1.0).unwrap(), 0.5, RadiusPolicy::TailMass).unwrap();
        assert_eq!(dk.weights(), &[0.125, 0.25, 0.25, 0.25, 0.125]);
        assert_eq!(stencil_sum(dk.weights()), 1.0);
    }

    #[test]
    fn laplace_truncation_radius() {
        let dk = discretize(&Kernel::laplace(2.0).unwrap(), 0.05, RadiusPolicy::TailMass).unwrap();
        assert!((dk.truncation_radius() - 14.0).abs() < 0.05 + 1e-12);
        assert!(dk.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn constant_field_maps_to_zero() {
        let dk = discretize(&Kernel::gaussian(1.0).unwrap(), 0.1, RadiusPolicy::TailMass).unwrap();
        let w = vec![0.731; 300];
        for ext in [Extension::Clamp, Extension::Periodic] {
            assert!(nonlocal_op(&dk, &w, ext).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn linear_and_quadratic_fields() {
        let h = 0.1;
        let dk = discretize(&Kernel::gaussian(1.0).unwrap(), h, RadiusPolicy::TailMass).unwrap();
        let k = dk.radius_points();
        let n = 500;
        let lin: Vec<f64> = (0..n).map(|i| i as f64 * h - 25.0).collect();
        let quad: Vec<f64> = lin.iter().map(|x| x * x).collect();
        let out_lin = nonlocal_op(&dk, &lin, Extension::Clamp);
        let out_quad = nonlocal_op(&dk, &quad, Extension::Clamp);
        let m2 = dk.second_moment();
        for i in k..n - k {
            assert!(out_lin[i].abs() < 1e-12, "linear at {i}: {}", out_lin[i]);
            assert!((out_quad[i] - m2).abs() < 1e-10, "quadratic at {i}");
        }
    }

    #[test]
    fn fft_matches_direct_on_random_fields() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for (kernel, h) in [
            (Kernel::gaussian(1.0).unwrap(), 0.05),
            (Kernel::laplace(2.0).unwrap(), 0.1),
        ] {
            let dk = discretize(&kernel, h, RadiusPolicy::TailMass).unwrap();
            for trial in 0..10 {
                let n = 400 + 37 * trial;
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let ext = if trial % 2 == 0 {
                    Extension::Clamp
                } else {
                    Extension::Fixed {
                        left: 1.0,
                        right: 0.3,
                    }
                };
                let fast = Convolver::new(dk.clone(), n, ConvolutionMethod::Fft);
                assert!(fast.uses_fft());
                let a = fast.apply(&w, ext);
                let b = nonlocal_op(&dk, &w, ext);
                let err = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-10, "fft/direct mismatch {err}");
            }
        }
    }

    #[test]
    fn periodic_conserves_mass() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let h = 0.1;
        let dk = discretize(&Kernel::laplace(1.0).unwrap(), h, RadiusPolicy::TailMass).unwrap();
        // stencil wider than the field exercises wrap-around
        for n in [100, 700, 2000] {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let total: f64 = nonlocal_op(&dk, &w, Extension::Periodic)
                .iter()
                .sum::<f64>()
                * h;
            assert!(total.abs() < 1e-10, "n={n}: {total}");
        }
    }

    proptest! {
        #[test]
        fn convolution_stays_within_range(
            w in proptest::collection::vec(0.0f64..5.0, 60..200),
            sigma in 0.2f64..2.0,
        ) {
            let dk = discretize(&Kernel::gaussian(sigma).unwrap(), 0.1, RadiusPolicy::TailMass).unwrap();
            let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let n = nonlocal_op(&dk, &w, Extension::Clamp);
            for (i, v) in n.iter().enumerate() {
                let conv = v + w[i];
                prop_assert!(conv >= lo - 1e-12 && conv <= hi + 1e-12);
            }
        }
    }
}
