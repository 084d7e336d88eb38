//! Method-of-lines simulation of the nonlocal predator–prey system and of
//! the scalar logistic comparison equation, with front tracking.
//!
//! ```text
//! u_t = d₁N₁[u] + u(1-u)(u/b-1) - m u v/(u+a v)
//! v_t = d₂N₂[v] + s v (1 - v/u)
//! ```

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::cstar;
use crate::error::{Error, Result};
use crate::io::{fmt_num, Table};
use crate::kernel::{
    discretize, ConvolutionMethod, Convolver, DiscreteKernel, Extension, Kernel, RadiusPolicy,
};
use crate::model::{check_strong_allee_assumption, equilibria, Params};
use crate::numeric::linear_fit;

/// Prey densities below this abort the run.
pub const U_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    Euler,
    #[default]
    Rk4,
}

/// Uniform grid `x_min, x_min + h, …, x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub h: f64,
}

impl Domain {
    pub fn symmetric(half_width: f64, h: f64) -> Self {
        Domain {
            x_min: -half_width,
            x_max: half_width,
            h,
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.h > 0.0 && self.x_max > self.x_min + 2.0 * self.h) {
            return Err(Error::Precondition(format!("degenerate domain {self:?}")));
        }
        let n = ((self.x_max - self.x_min) / self.h).round() as usize + 1;
        Ok((0..n).map(|i| self.x_min + i as f64 * self.h).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Front level; `None` means `u2*/2`.
    pub theta: Option<f64>,
    /// Further levels tracked alongside `theta`.
    pub extra_levels: Vec<f64>,
    pub extension: Extension,
    pub stepper: Stepper,
    /// Time between front samples.
    pub sample_every: f64,
    /// Ray speeds along which `v(x = c t, t)` is recorded.
    pub probe_speeds: Vec<f64>,
    pub snapshot_times: Vec<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 0.05,
            t_end: 60.0,
            theta: None,
            extra_levels: Vec::new(),
            extension: Extension::Clamp,
            stepper: Stepper::Rk4,
            sample_every: 0.5,
            probe_speeds: Vec::new(),
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `(t, front position)` at the main level.
    pub front_history: Vec<(f64, f64)>,
}

impl SimState {
    pub fn new(x: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != u.len() || x.len() != v.len() {
            return Err(Error::Precondition(
                "field lengths differ from the grid".into(),
            ));
        }
        if let Some(i) = u.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Precondition(format!(
                "u must be positive, u[{i}] = {}",
                u[i]
            )));
        }
        if let Some(i) = v.iter().position(|w| !(*w >= 0.0)) {
            return Err(Error::Precondition(format!(
                "v must be nonnegative, v[{i}] = {}",
                v[i]
            )));
        }
        Ok(SimState {
            t: 0.0,
            x,
            u,
            v,
            front_history: Vec::new(),
        })
    }

    pub fn h(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn snapshot_table(&self) -> Table {
        let mut t = Table::new(["x", "u", "v"]);
        for i in 0..self.x.len() {
            t.push_numbers(&[self.x[i], self.u[i], self.v[i]]);
        }
        t
    }
}

/// `0.9/(max(d₁,d₂) + R)` with `R` the largest absolute row sum of the
/// reaction Jacobian over `[(1+b)/2, 1] × [0, 1]`.
pub fn positivity_bound(p: &Params) -> f64 {
    let b = p.b;
    let lo = p.prey_floor();
    // |d/du u(1-u)(u/b-1)| = |-3u² + 2(1+b)u - b|/b: check ends and vertex
    let hp = |u: f64| ((-3.0 * u * u + 2.0 * (1.0 + b) * u - b) / b).abs();
    let vertex = (1.0 + b) / 3.0;
    let mut allee = hp(lo).max(hp(1.0));
    if (lo..=1.0).contains(&vertex) {
        allee = allee.max(hp(vertex));
    }
    // predation: ∂_u ≤ m a v²/(u+av)² ≤ m a/(lo+a)², ∂_v ≤ m u²/(u+av)² ≤ m
    let row1 = allee + p.m * p.a / ((lo + p.a) * (lo + p.a)) + p.m;
    // ∂_u(sv(1-v/u)) = s v²/u² ≤ s/lo², |∂_v| = s|1 - 2v/u| ≤ s max(1, 2/lo - 1)
    let row2 = p.s / (lo * lo) + p.s * f64::max(1.0, 2.0 / lo - 1.0);
    0.9 / (p.d1.max(p.d2) + row1.max(row2))
}

/// `0.9/(d₂ + s)`: keeps the explicit Euler map for the logistic
/// comparison equation monotone.
pub fn logistic_bound(p: &Params) -> f64 {
    0.9 / (p.d2 + p.s)
}

/// Right-hand side of the full system on a fixed grid.
pub struct Simulator {
    p: Params,
    conv1: Convolver,
    conv2: Convolver,
    ext: Extension,
    bound: f64,
}

impl Simulator {
    pub fn new(
        p: &Params,
        dk1: DiscreteKernel,
        dk2: DiscreteKernel,
        n: usize,
        ext: Extension,
    ) -> Result<Self> {
        p.validate()?;
        // direct sums keep exact zeros; transform roundoff seeds the unstable v = 0 state
        Ok(Simulator {
            p: *p,
            conv1: Convolver::new(dk1, n, ConvolutionMethod::Direct),
            conv2: Convolver::new(dk2, n, ConvolutionMethod::Direct),
            ext,
            bound: positivity_bound(p),
        })
    }

    pub fn dt_bound(&self) -> f64 {
        self.bound
    }

    fn rhs(&self, u: &[f64], v: &[f64], du: &mut [f64], dv: &mut [f64]) {
        self.conv1.apply_into(u, self.ext, du);
        self.conv2.apply_into(v, self.ext, dv);
        let p = &self.p;
        du.par_iter_mut()
            .zip(dv.par_iter_mut())
            .enumerate()
            .with_min_len(512)
            .for_each(|(i, (a, c))| {
                let (ui, vi) = (u[i], v[i]);
                let pred = p.m * ui * vi / (ui + p.a * vi);
                *a = p.d1 * *a + ui * (1.0 - ui) * (ui / p.b - 1.0) - pred;
                *c = p.d2 * *c + p.s * vi * (1.0 - vi / ui);
            });
    }

    /// Advances `state` by `dt`.
    pub fn step(&self, state: &mut SimState, dt: f64, stepper: Stepper) -> Result<()> {
        if dt > self.bound {
            return Err(Error::StepTooLarge {
                dt,
                bound: self.bound,
            });
        }
        let n = state.u.len();
        match stepper {
            Stepper::Euler => {
                let (mut du, mut dv) = (vec![0.0; n], vec![0.0; n]);
                self.rhs(&state.u, &state.v, &mut du, &mut dv);
                axpy(&mut state.u, dt, &du);
                axpy(&mut state.v, dt, &dv);
            }
            Stepper::Rk4 => {
                let (u0, v0) = (&state.u, &state.v);
                let mut k = [(); 4].map(|_| (vec![0.0; n], vec![0.0; n]));
                let (mut ut, mut vt) = (vec![0.0; n], vec![0.0; n]);
                for s in 0..4 {
                    if s == 0 {
                        ut.copy_from_slice(u0);
                        vt.copy_from_slice(v0);
                    } else {
                        let c = if s == 3 { dt } else { 0.5 * dt };
                        let (pu, pv) = &k[s - 1];
                        for i in 0..n {
                            ut[i] = u0[i] + c * pu[i];
                            vt[i] = v0[i] + c * pv[i];
                        }
                        // intermediate stages must keep v/u defined
                        clamp_positive(&mut ut);
                    }
                    let (a, b) = &mut k[s];
                    self.rhs(&ut, &vt, a, b);
                }
                for i in 0..n {
                    state.u[i] +=
                        dt / 6.0 * (k[0].0[i] + 2.0 * k[1].0[i] + 2.0 * k[2].0[i] + k[3].0[i]);
                    state.v[i] +=
                        dt / 6.0 * (k[0].1[i] + 2.0 * k[1].1[i] + 2.0 * k[2].1[i] + k[3].1[i]);
                }
            }
        }
        state.t += dt;
        let (imin, umin) = state
            .u
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, w)| if *w < acc.1 { (i, *w) } else { acc },
            );
        if !(umin >= U_FLOOR) {
            return Err(Error::BlowUp {
                value: umin,
                x: state.x[imin],
                t: state.t,
            });
        }
        Ok(())
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn clamp_positive(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x < U_FLOOR {
            *x = U_FLOOR;
        }
    }
}

/// One step with freshly built convolvers; loops should hold a [`Simulator`].
pub fn step(
    state: &mut SimState,
    p: &Params,
    dk1: &DiscreteKernel,
    dk2: &DiscreteKernel,
    opts: &SimOptions,
) -> Result<()> {
    let sim = Simulator::new(p, dk1.clone(), dk2.clone(), state.u.len(), opts.extension)?;
    sim.step(state, opts.dt, opts.stepper)
}

/// Rightmost `x` with `v(x) ≥ θ`, interpolated linearly towards the next
/// sample below `θ`.
pub fn front_position(x: &[f64], v: &[f64], theta: f64) -> Option<f64> {
    let i = v.iter().rposition(|w| *w >= theta)?;
    if i + 1 == v.len() {
        return Some(x[i]);
    }
    let (a, b) = (v[i], v[i + 1]);
    Some(x[i] + (x[i + 1] - x[i]) * (a - theta) / (a - b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub speed: f64,
    /// Twice the standard error of the slope.
    pub half_width: f64,
    pub samples: usize,
}

/// Least-squares slope of the history samples with `t` in `window`.
pub fn front_speed(history: &[(f64, f64)], window: Range<f64>) -> Result<SpeedEstimate> {
    let (t, x): (Vec<f64>, Vec<f64>) = history
        .iter()
        .filter(|(t, _)| window.contains(t) || *t == window.end)
        .copied()
        .unzip();
    if t.len() < 10 {
        return Err(Error::InsufficientHistory {
            got: t.len(),
            need: 10,
        });
    }
    let (slope, _, sd) = linear_fit(&t, &x);
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let sxx: f64 = t.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(SpeedEstimate {
        speed: slope,
        half_width: 2.0 * sd / sxx.sqrt(),
        samples: t.len(),
    })
}

/// Time window covering the second half of a history.
pub fn second_half(history: &[(f64, f64)]) -> Range<f64> {
    match (history.first(), history.last()) {
        (Some(a), Some(b)) => 0.5 * (a.0 + b.0)..b.0,
        _ => 0.0..0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrack {
    pub theta: f64,
    pub history: Vec<(f64, f64)>,
    pub speed: Option<SpeedEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub speed: f64,
    /// `(t, v(speed·t, t))`.
    pub samples: Vec<(f64, f64)>,
}

impl Probe {
    /// Smallest sampled `v` over `t ≥ t_from`.
    pub fn min_after(&self, t_from: f64) -> f64 {
        self.samples
            .iter()
            .filter(|(t, _)| *t >= t_from)
            .map(|s| s.1)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvasionReport {
    pub state: SimState,
    pub c_star: f64,
    pub theta: f64,
    pub speed: SpeedEstimate,
    pub levels: Vec<LevelTrack>,
    pub probes: Vec<Probe>,
    pub snapshots: Vec<Snapshot>,
}

impl InvasionReport {
    pub fn speed_ratio(&self) -> f64 {
        self.speed.speed / self.c_star
    }

    /// `(t, front_x, speed_running)`; the running speed is the slope over
    /// the second half of the samples so far, blank while fewer than ten.
    pub fn front_table(&self) -> Table {
        let h = &self.state.front_history;
        let mut t = Table::new(["t", "front_x", "speed_running"]);
        for i in 0..h.len() {
            let running = front_speed(&h[..=i], second_half(&h[..=i]))
                .map(|s| fmt_num(s.speed))
                .unwrap_or_default();
            t.push(vec![fmt_num(h[i].0), fmt_num(h[i].1), running]);
        }
        t
    }

    pub fn snapshot_table(&self, k: usize) -> Table {
        let s = &self.snapshots[k];
        let mut t = Table::new(["x", "u", "v"]);
        for i in 0..s.u.len() {
            t.push_numbers(&[self.state.x[i], s.u[i], s.v[i]]);
        }
        t
    }
}

/// Linear interpolation of `w` at `x`, `None` outside the grid.
fn sample_at(x: &[f64], w: &[f64], at: f64) -> Option<f64> {
    let h = x[1] - x[0];
    let t = (at - x[0]) / h;
    if t < 0.0 || t > (x.len() - 1) as f64 {
        return None;
    }
    let i = (t.floor() as usize).min(x.len() - 2);
    let f = t - i as f64;
    Some(w[i] + f * (w[i + 1] - w[i]))
}

/// Evolves from `u ≡ 1` and a predator bump of height `u2*/2` on `[-1, 1]`.
pub fn run_invasion(
    p: &Params,
    k1: &Kernel,
    k2: &Kernel,
    domain: &Domain,
    opts: &SimOptions,
) -> Result<InvasionReport> {
    check_strong_allee_assumption(p).require(p)?;
    let u2 = equilibria(p).coexistence()?;
    let (c_star, _) = cstar(p, k2)?;
    let x = domain.grid()?;
    let n = x.len();
    let dk1 = discretize(k1, domain.h, RadiusPolicy::TailMass)?;
    let dk2 = discretize(k2, domain.h, RadiusPolicy::TailMass)?;
    let margin = 5.0 * dk1.truncation_radius().max(dk2.truncation_radius());
    let sim = Simulator::new(p, dk1, dk2, n, opts.extension)?;

    let u = vec![1.0; n];
    let v = x
        .iter()
        .map(|xi| if xi.abs() <= 1.0 { 0.5 * u2 } else { 0.0 })
        .collect();
    let mut state = SimState::new(x, u, v)?;
    let theta = opts.theta.unwrap_or(0.5 * u2);
    let mut levels: Vec<LevelTrack> = opts
        .extra_levels
        .iter()
        .map(|th| LevelTrack {
            theta: *th,
            history: Vec::new(),
            speed: None,
        })
        .collect();
    let mut probes: Vec<Probe> = opts
        .probe_speeds
        .iter()
        .map(|c| Probe {
            speed: *c,
            samples: Vec::new(),
        })
        .collect();
    let mut snapshots = Vec::new();

    let steps = (opts.t_end / opts.dt).round() as usize;
    let every = ((opts.sample_every / opts.dt).round() as usize).max(1);
    let mut pending: Vec<f64> = opts.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    pending.reverse();
    let (lo, hi) = (domain.x_min + margin, domain.x_max - margin);

    for k in 1..=steps {
        sim.step(&mut state, opts.dt, opts.stepper)?;
        while pending
            .last()
            .is_some_and(|ts| *ts <= state.t + 0.5 * opts.dt)
        {
            pending.pop();
            snapshots.push(Snapshot {
                t: state.t,
                u: state.u.clone(),
                v: state.v.clone(),
            });
        }
        if k % every != 0 {
            continue;
        }
        let t = state.t;
        // predators within the margin of either end invalidate the run
        let near_end = state
            .x
            .iter()
            .zip(&state.v)
            .any(|(xi, vi)| (*xi < lo || *xi > hi) && *vi >= theta);
        if near_end {
            return Err(Error::DomainTooSmall {
                reason: format!("front within {margin} of the boundary at t = {t}"),
                suggested: 0.75 * (domain.x_max - domain.x_min) + margin,
            });
        }
        if let Some(xf) = front_position(&state.x, &state.v, theta) {
            state.front_history.push((t, xf));
        }
        for l in levels.iter_mut() {
            if let Some(xf) = front_position(&state.x, &state.v, l.theta) {
                l.history.push((t, xf));
            }
        }
        for pr in probes.iter_mut() {
            if let Some(val) = sample_at(&state.x, &state.v, pr.speed * t) {
                pr.samples.push((t, val));
            }
        }
    }
    let speed = front_speed(&state.front_history, second_half(&state.front_history))?;
    for l in levels.iter_mut() {
        l.speed = front_speed(&l.history, second_half(&l.history)).ok();
    }
    Ok(InvasionReport {
        state,
        c_star,
        theta,
        speed,
        levels,
        probes,
        snapshots,
    })
}

/// Initial data for the logistic comparison: `ζ/4` on `[-ε₁/2, ε₁/2]`,
/// linear flanks, zero for `|x| ≥ ε₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticInit {
    pub zeta: f64,
    pub eps1: f64,
}

impl LogisticInit {
    pub fn value(&self, x: f64) -> f64 {
        let ax = x.abs();
        let top = 0.25 * self.zeta;
        if ax <= 0.5 * self.eps1 {
            top
        } else if ax < self.eps1 {
            top * (self.eps1 - ax) / (0.5 * self.eps1)
        } else {
            0.0
        }
    }
}

/// `φ_t = d₂N₂[φ] + sφ(1 - 2φ/(1+b))` on a fixed grid.
pub struct LogisticSimulator {
    d2: f64,
    s: f64,
    capacity: f64,
    conv: Convolver,
    ext: Extension,
    bound: f64,
}

impl LogisticSimulator {
    pub fn new(p: &Params, dk2: DiscreteKernel, n: usize, ext: Extension) -> Result<Self> {
        p.validate()?;
        Ok(LogisticSimulator {
            d2: p.d2,
            s: p.s,
            capacity: p.prey_floor(),
            conv: Convolver::new(dk2, n, ConvolutionMethod::Direct),
            ext,
            bound: logistic_bound(p),
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    fn rhs(&self, w: &[f64], out: &mut [f64]) {
        self.conv.apply_into(w, self.ext, out);
        for (o, wi) in out.iter_mut().zip(w) {
            *o = self.d2 * *o + self.s * wi * (1.0 - wi / self.capacity);
        }
    }

    pub fn step(&self, w: &mut [f64], dt: f64, stepper: Stepper) -> Result<()> {
        if dt > self.bound {
            return Err(Error::StepTooLarge {
                dt,
                bound: self.bound,
            });
        }
        let n = w.len();
        match stepper {
            Stepper::Euler => {
                let mut d = vec![0.0; n];
                self.rhs(w, &mut d);
                axpy(w, dt, &d);
            }
            Stepper::Rk4 => {
                let w0 = w.to_vec();
                let mut k = [(); 4].map(|_| vec![0.0; n]);
                let mut tmp = w0.clone();
                for s in 0..4 {
                    if s > 0 {
                        let c = if s == 3 { dt } else { 0.5 * dt };
                        for i in 0..n {
                            tmp[i] = w0[i] + c * k[s - 1][i];
                        }
                    }
                    self.rhs(&tmp, &mut k[s]);
                }
                for i in 0..n {
                    w[i] = w0[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadingReport {
    pub capacity: f64,
    pub speeds: Vec<f64>,
    pub times: Vec<f64>,
    /// `inf_{|x| < c t} φ(x, t)` per speed (rows) and sample time (columns).
    pub inf: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub final_field: Vec<f64>,
}

impl SpreadingReport {
    pub fn final_inf(&self, k: usize) -> f64 {
        *self.inf[k].last().expect("at least one sample time")
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend(self.speeds.iter().map(|c| format!("inf_c_{}", fmt_num(*c))));
        let mut t = Table::new(header);
        for (j, time) in self.times.iter().enumerate() {
            let mut row = vec![*time];
            row.extend(self.inf.iter().map(|r| r[j]));
            t.push_numbers(&row);
        }
        t
    }
}

/// Evolves the logistic comparison equation from [`LogisticInit`] and
/// records `inf_{|x|<ct} φ` for each `c` in `speeds`.
pub fn run_logistic_comparison(
    p: &Params,
    k2: &Kernel,
    init: &LogisticInit,
    domain: &Domain,
    opts: &SimOptions,
    speeds: &[f64],
) -> Result<SpreadingReport> {
    p.validate()?;
    let capacity = p.prey_floor();
    if !(init.zeta > 0.0 && 0.25 * init.zeta < capacity && init.eps1 > 0.0) {
        return Err(Error::Precondition(format!(
            "need ζ > 0, ζ/4 < (1+b)/2 and ε₁ > 0, got {init:?}"
        )));
    }
    if speeds.is_empty() {
        return Err(Error::Precondition("no spreading speeds requested".into()));
    }
    let x = domain.grid()?;
    let n = x.len();
    let dk2 = discretize(k2, domain.h, RadiusPolicy::TailMass)?;
    let margin = 5.0 * dk2.truncation_radius();
    let sim = LogisticSimulator::new(p, dk2, n, opts.extension)?;
    let mut w: Vec<f64> = x.iter().map(|xi| init.value(*xi)).collect();

    let steps = (opts.t_end / opts.dt).round() as usize;
    let every = ((opts.sample_every / opts.dt).round() as usize).max(1);
    let (lo, hi) = (domain.x_min + margin, domain.x_max - margin);
    let mut times = Vec::new();
    let mut inf = vec![Vec::new(); speeds.len()];
    for k in 1..=steps {
        sim.step(&mut w, opts.dt, opts.stepper)?;
        if k % every != 0 {
            continue;
        }
        let t = k as f64 * opts.dt;
        if x.iter()
            .zip(&w)
            .any(|(xi, wi)| (*xi < lo || *xi > hi) && *wi >= 0.5 * capacity)
        {
            return Err(Error::DomainTooSmall {
                reason: format!("spreading front within {margin} of the boundary at t = {t}"),
                suggested: (domain.x_max - domain.x_min) + margin,
            });
        }
        for (row, c) in inf.iter_mut().zip(speeds) {
            let r = c * t;
            if r > hi.min(-lo) {
                return Err(Error::DomainTooSmall {
                    reason: format!("the window |x| < {r} leaves the usable domain"),
                    suggested: r + 2.0 * margin,
                });
            }
            let m = x
                .iter()
                .zip(&w)
                .filter(|(xi, _)| xi.abs() < r)
                .map(|(_, wi)| *wi)
                .fold(f64::INFINITY, f64::min);
            row.push(if m.is_finite() {
                m
            } else {
                sample_at(&x, &w, 0.0).unwrap_or(0.0)
            });
        }
        times.push(t);
    }
    if times.is_empty() {
        return Err(Error::Precondition(
            "run too short to record a sample".into(),
        ));
    }
    Ok(SpreadingReport {
        capacity,
        speeds: speeds.to_vec(),
        times,
        inf,
        x,
        final_field: w,
    })
}
