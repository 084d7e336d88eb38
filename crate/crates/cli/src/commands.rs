use std::path::{Path, PathBuf};
use std::str::FromStr;

use nlwave::bounds::{build_supersub, uniform_grid, verify_supersub};
use nlwave::dispersion::{cstar, DispersionReport};
use nlwave::evolve::{
    front_position, front_speed, run_invasion, run_logistic_comparison, second_half, SpeedEstimate,
};
use nlwave::io::{fmt_num, Table};
use nlwave::kernel::{discretize, ConvolutionMethod, Convolver, RadiusPolicy};
use nlwave::model::{check_strong_allee_assumption, equilibria, Admissibility};
use nlwave::profile::{
    apply_p, beta_min, solve_profile, solve_profile_at_cstar, tail_check, ContinuationStep,
    ProfileSummary, SolverOptions, TailCheck, WaveProfile, SANDWICH_TOL,
};
use nlwave::squeeze::{contraction_ratio, run_squeeze, SqueezeTrace};
use nlwave::{Error, Extension, Kernel, Params};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Loaded;
use crate::exit::CliError;

/// Value of `--c`: an absolute speed or the minimal speed itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedArg {
    Value(f64),
    Cstar,
}

impl FromStr for SpeedArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("cstar") {
            return Ok(SpeedArg::Cstar);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(SpeedArg::Value(v)),
            _ => Err(format!("expected a positive speed or \"cstar\", got {s:?}")),
        }
    }
}

/// Output directory; created on first write.
pub struct Out {
    dir: PathBuf,
}

impl Out {
    pub fn new(dir: PathBuf) -> Self {
        Out { dir }
    }

    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", self.dir.display())))?;
        Ok(self.dir.join(name))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(name)?, text)?;
        Ok(())
    }

    pub fn table(&self, name: &str, table: &Table) -> Result<(), CliError> {
        table.write_csv(self.path(name)?)?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Serialize)]
struct AdmissibilityRecord {
    m: f64,
    #[serde(flatten)]
    bounds: Admissibility,
    binding_term: &'static str,
    binding_value: f64,
}

fn admissibility_record(p: &Params) -> AdmissibilityRecord {
    let bounds = check_strong_allee_assumption(p);
    let (binding_term, binding_value) = bounds.binding_term();
    AdmissibilityRecord {
        m: p.m,
        bounds,
        binding_term,
        binding_value,
    }
}

#[derive(Serialize)]
struct SpeedEntry {
    c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<DispersionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct DispersionRecord {
    c_star: f64,
    lambda_star: f64,
    speeds: Vec<SpeedEntry>,
}

pub fn analyze(l: &Loaded, out: &Out, c: Option<SpeedArg>) -> Result<(), CliError> {
    let p = &l.cfg.params;
    out.json("equilibria.json", &equilibria(p))?;
    let adm = admissibility_record(p);
    out.json("admissibility.json", &adm)?;
    adm.bounds.require(p)?;

    let (c_star, lambda_star) = cstar(p, &l.k2)?;
    let mut speeds = l.cfg.analyze.speeds.clone();
    speeds.extend(l.cfg.analyze.speed_factors.iter().map(|k| k * c_star));
    if let Some(SpeedArg::Value(v)) = c {
        speeds.push(v);
    }
    let entries = speeds
        .iter()
        .map(
            |&c| match DispersionReport::with_cstar(c, c_star, lambda_star, p, &l.k1, &l.k2) {
                Ok(r) => SpeedEntry {
                    c,
                    report: Some(r),
                    error: None,
                },
                Err(e) => SpeedEntry {
                    c,
                    report: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    out.json(
        "dispersion.json",
        &DispersionRecord {
            c_star,
            lambda_star,
            speeds: entries,
        },
    )?;
    println!(
        "c* = {c_star}, λ* = {lambda_star}; reports in {}",
        out.dir().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SqueezeSummary {
    steps: Option<usize>,
    limit: f64,
    u2_star: f64,
    rho: f64,
    max_step_ratio: f64,
}

impl From<&SqueezeTrace> for SqueezeSummary {
    fn from(t: &SqueezeTrace) -> Self {
        SqueezeSummary {
            steps: t.n_converged,
            limit: t.limit(),
            u2_star: t.u2_star,
            rho: t.rho,
            max_step_ratio: t.max_step_ratio(),
        }
    }
}

#[derive(Serialize)]
struct SupersubSummary {
    s1: &'static str,
    s2: &'static str,
    s3: &'static str,
    s4: &'static str,
    worst: [f64; 4],
    tol: [f64; 4],
    excluded: usize,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

#[derive(Serialize)]
struct WaveSummary {
    c: f64,
    dispersion: DispersionReport,
    supersub: SupersubSummary,
    sandwich: &'static str,
    squeeze: SqueezeSummary,
    profile: ProfileSummary,
    tail: Option<TailCheck>,
    boundary_errors: (f64, f64),
}

#[derive(Serialize)]
struct CstarSummary {
    c_star: f64,
    lambda_star: f64,
    delta: f64,
    steps: Vec<ContinuationStep>,
    squeeze: SqueezeSummary,
    profile: ProfileSummary,
    tail: Option<TailCheck>,
    boundary_errors: (f64, f64),
}

/// Writes the iteration history before passing a non-convergence on.
fn keep_history<T>(out: &Out, r: nlwave::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| {
        if let Error::NonConvergence { history, .. } = &e {
            let mut t = Table::new(["iteration", "change"]);
            for (i, h) in history.iter().enumerate() {
                t.push(vec![i.to_string(), fmt_num(*h)]);
            }
            if let Err(w) = out.table("residual_history.csv", &t) {
                eprintln!("could not write residual history: {w}");
            }
        }
        CliError::Core(e)
    })
}

pub fn wave(l: &Loaded, out: &Out, c: Option<SpeedArg>) -> Result<(), CliError> {
    let cfg = &l.cfg;
    let p = &cfg.params;
    check_strong_allee_assumption(p).require(p)?;
    let (c_star, lambda_star) = cstar(p, &l.k2)?;
    let target = match c {
        Some(s) => s,
        None => SpeedArg::Value(cfg.wave.c.unwrap_or(cfg.wave.c_factor * c_star)),
    };
    let trace = run_squeeze(p, cfg.wave.squeeze_tol, cfg.wave.squeeze_max_steps)?;
    out.table("squeeze.csv", &trace.to_table())?;
    let u2 = trace.u2_star;

    let c = match target {
        SpeedArg::Cstar => return wave_at_cstar(l, out, c_star, lambda_star, &trace),
        SpeedArg::Value(v) => v,
    };
    if c <= c_star {
        return Err(Error::NoRoots { c, c_star }.into());
    }
    let rep = DispersionReport::with_cstar(c, c_star, lambda_star, p, &l.k1, &l.k2)?;
    let pair = build_supersub(c, p, &l.k2, &rep)?;
    let lo = (1.5 * pair.xi1).min(-40.0);
    let grid = uniform_grid(lo, 40.0, cfg.wave.verify_points.max(3));
    let ver = verify_supersub(&pair, p, &l.k1, &l.k2, &grid)?;
    out.table("supersub.csv", &ver.to_table())?;

    let opts = cfg.solver.options(&rep);
    let wp = keep_history(out, solve_profile(c, p, &l.k1, &l.k2, &rep, &opts))?;
    let tail = tail_check(&wp, p, rep.lambda1).ok();
    write_profile(out, &wp, tail)?;

    let each = ver.passes_each();
    let sandwich_ok = wp.sandwich_violation <= SANDWICH_TOL;
    let summary = WaveSummary {
        c,
        dispersion: rep,
        supersub: SupersubSummary {
            s1: verdict(each[0]),
            s2: verdict(each[1]),
            s3: verdict(each[2]),
            s4: verdict(each[3]),
            worst: ver.worst,
            tol: ver.tol,
            excluded: ver.excluded,
        },
        sandwich: verdict(sandwich_ok),
        squeeze: (&trace).into(),
        profile: wp.summary(tail.map(|t| t.lambda_hat)),
        tail,
        boundary_errors: wp.boundary_errors(u2),
    };
    out.json("summary.json", &summary)?;
    println!(
        "c = {c}: residual {:.3e}, {} iterations, sandwich {}, s1..s4 {:?}",
        wp.residual,
        wp.iterations,
        summary.sandwich,
        each.map(verdict)
    );
    if !(sandwich_ok && ver.passes()) {
        return Err(Error::NumericalFailure(
            "profile or super/sub-solution checks failed; see summary.json".into(),
        )
        .into());
    }
    Ok(())
}

fn write_profile(out: &Out, wp: &WaveProfile, tail: Option<TailCheck>) -> Result<(), CliError> {
    out.table("profile.csv", &wp.to_table())?;
    out.json("profile.json", &wp.summary(tail.map(|t| t.lambda_hat)))
}

fn wave_at_cstar(
    l: &Loaded,
    out: &Out,
    c_star: f64,
    lambda_star: f64,
    trace: &SqueezeTrace,
) -> Result<(), CliError> {
    let cfg = &l.cfg;
    let p = &cfg.params;
    let cont = cfg.continuation.continuation();
    let c0 = c_star * (1.0 + cont.factor);
    let rep0 = DispersionReport::with_cstar(c0, c_star, lambda_star, p, &l.k1, &l.k2)?;
    let opts: SolverOptions = cfg.solver.options(&rep0);
    let res = keep_history(out, solve_profile_at_cstar(p, &l.k1, &l.k2, &opts, &cont))?;
    out.table("continuation.csv", &res.to_table())?;
    let tail = tail_check(&res.profile, p, lambda_star).ok();
    write_profile(out, &res.profile, tail)?;
    let summary = CstarSummary {
        c_star,
        lambda_star,
        delta: res.delta,
        steps: res.steps.clone(),
        squeeze: trace.into(),
        profile: res.profile.summary(tail.map(|t| t.lambda_hat)),
        tail,
        boundary_errors: res.profile.boundary_errors(trace.u2_star),
    };
    out.json("summary.json", &summary)?;
    for s in &res.steps {
        println!(
            "c = {:.10}: {} iterations, gap {}",
            s.c,
            s.iterations,
            s.gap.map_or("-".to_string(), |g| format!("{g:.3e}"))
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct LevelSummary {
    theta: f64,
    speed: Option<SpeedEstimate>,
}

#[derive(Serialize)]
struct ProbeSummary {
    speed: f64,
    min_last_quarter: f64,
}

#[derive(Serialize)]
struct LogisticSummary {
    capacity: f64,
    speeds: Vec<f64>,
    final_inf: Vec<f64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    c_star: f64,
    theta: f64,
    speed: SpeedEstimate,
    speed_ratio: f64,
    levels: Vec<LevelSummary>,
    probes: Vec<ProbeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    translation_check: Option<SpeedEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logistic: Option<LogisticSummary>,
}

/// Tracks a linear ramp translating at a known speed; linear interpolation
/// recovers its position exactly.
pub fn translation_check(speed: f64) -> nlwave::Result<SpeedEstimate> {
    let x: Vec<f64> = (0..=800).map(|i| -20.0 + 0.1 * i as f64).collect();
    let history: Vec<(f64, f64)> = (0..=40)
        .map(|k| {
            let t = 0.5 * k as f64;
            let v: Vec<f64> = x
                .iter()
                .map(|xi| (0.5 - 0.25 * (xi - speed * t)).clamp(0.0, 1.0))
                .collect();
            front_position(&x, &v, 0.5).map(|xf| (t, xf))
        })
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Internal("synthetic front left the grid".into()))?;
    front_speed(&history, second_half(&history))
}

pub fn simulate(l: &Loaded, out: &Out, check: bool) -> Result<(), CliError> {
    let cfg = &l.cfg;
    let p = &cfg.params;
    let translation = if check {
        let c = 1.3;
        let est = translation_check(c)?;
        println!("translation check: recovered {} for speed {c}", est.speed);
        Some(est)
    } else {
        None
    };
    let (c_star, _) = cstar(p, &l.k2)?;
    let opts = cfg.sim.options(c_star);
    let domain = cfg.sim.domain();
    let r = run_invasion(p, &l.k1, &l.k2, &domain, &opts)?;
    out.table("front.csv", &r.front_table())?;
    for (k, s) in r.snapshots.iter().enumerate() {
        out.table(
            &format!("snapshot_{k}_t{}.csv", s.t.round()),
            &r.snapshot_table(k),
        )?;
    }
    let logistic = match &cfg.logistic {
        Some(ls) => {
            let speeds: Vec<f64> = ls.speed_factors.iter().map(|k| k * c_star).collect();
            let s = run_logistic_comparison(p, &l.k2, &ls.init(), &domain, &opts, &speeds)?;
            out.table("logistic.csv", &s.to_table())?;
            Some(LogisticSummary {
                capacity: s.capacity,
                final_inf: (0..speeds.len()).map(|k| s.final_inf(k)).collect(),
                speeds,
            })
        }
        None => None,
    };
    let summary = SimulateSummary {
        c_star,
        theta: r.theta,
        speed: r.speed,
        speed_ratio: r.speed_ratio(),
        levels: r
            .levels
            .iter()
            .map(|lv| LevelSummary {
                theta: lv.theta,
                speed: lv.speed,
            })
            .collect(),
        probes: r
            .probes
            .iter()
            .map(|pr| ProbeSummary {
                speed: pr.speed,
                min_last_quarter: pr.min_after(0.75 * opts.t_end),
            })
            .collect(),
        translation_check: translation,
        logistic,
    };
    out.json("summary.json", &summary)?;
    println!(
        "front speed {} (c* = {c_star}, ratio {:.4})",
        summary.speed.speed, summary.speed_ratio
    );
    Ok(())
}

#[derive(Default)]
struct SweepRow {
    admissible: Option<bool>,
    binding: Option<(&'static str, f64)>,
    c_star: Option<f64>,
    rho: Option<f64>,
    residual: Option<f64>,
    iterations: Option<usize>,
    error: Option<String>,
}

fn sweep_point(l: &Loaded, p: Params) -> SweepRow {
    let mut row = SweepRow::default();
    if let Err(e) = p.validate() {
        row.error = Some(e.to_string());
        return row;
    }
    let adm = check_strong_allee_assumption(&p);
    row.admissible = Some(adm.admissible);
    row.binding = Some(adm.binding_term());
    let c_star = match cstar(&p, &l.k2) {
        Ok((c, _)) => c,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.c_star = Some(c_star);
    if let Err(e) = adm.require(&p) {
        row.error = Some(e.to_string());
        return row;
    }
    match contraction_ratio(&p) {
        Ok(r) => row.rho = Some(r),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    let Some(sw) = &l.cfg.sweep else { return row };
    if sw.solve_wave {
        let solved =
            DispersionReport::new(sw.c_factor * c_star, &p, &l.k1, &l.k2).and_then(|rep| {
                solve_profile(rep.c, &p, &l.k1, &l.k2, &rep, &l.cfg.solver.options(&rep))
            });
        match solved {
            Ok(wp) => {
                row.residual = Some(wp.residual);
                row.iterations = Some(wp.iterations);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    row
}

fn set_param(p: &mut Params, name: &str, v: f64) {
    match name {
        "d1" => p.d1 = v,
        "d2" => p.d2 = v,
        "m" => p.m = v,
        "a" => p.a = v,
        "s" => p.s = v,
        "b" => p.b = v,
        _ => unreachable!("axis names are checked at load"),
    }
}

pub fn sweep(l: &Loaded, out: &Out) -> Result<(), CliError> {
    let plan = l
        .cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [sweep] section".into()))?;
    plan.check()?;
    // Cartesian product, last axis fastest
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &plan.axes {
        points = points
            .into_iter()
            .flat_map(|pt| {
                axis.values.iter().map(move |v| {
                    let mut q = pt.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|pt| {
            let mut p = l.cfg.params;
            for (axis, v) in plan.axes.iter().zip(pt) {
                set_param(&mut p, &axis.name, *v);
            }
            sweep_point(l, p)
        })
        .collect();

    let mut header: Vec<String> = plan.axes.iter().map(|a| a.name.clone()).collect();
    header.extend(
        [
            "admissible",
            "binding_term",
            "binding_value",
            "c_star",
            "rho",
            "residual",
            "iterations",
            "error",
        ]
        .map(String::from),
    );
    let mut table = Table::new(header);
    let num = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    let mut failures = 0;
    for (pt, r) in points.iter().zip(&rows) {
        let mut cells: Vec<String> = pt.iter().map(|v| fmt_num(*v)).collect();
        cells.push(r.admissible.map(|a| a.to_string()).unwrap_or_default());
        cells.push(r.binding.map(|b| b.0.to_string()).unwrap_or_default());
        cells.push(num(r.binding.map(|b| b.1)));
        cells.push(num(r.c_star));
        cells.push(num(r.rho));
        cells.push(num(r.residual));
        cells.push(r.iterations.map(|i| i.to_string()).unwrap_or_default());
        cells.push(r.error.clone().unwrap_or_default());
        failures += usize::from(r.error.is_some());
        table.push(cells);
    }
    out.table("atlas.csv", &table)?;
    println!(
        "{} points over {:?}, {failures} flagged; atlas in {}",
        rows.len(),
        plan.axes
            .iter()
            .map(|a| a.name.as_str())
            .collect::<Vec<_>>(),
        out.dir().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, r: nlwave::Result<(bool, String)>) -> Check {
    match r {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: e.to_string(),
        },
    }
}

/// Fast oracle checks of the core operators.
pub fn selftest(out: Option<&Out>, seed: u64) -> Result<(), CliError> {
    let p = Params::reference();
    let g = Kernel::gaussian(1.0)?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut checks = Vec::new();

    checks.push(check("exact dispersion", {
        let (c, l) = cstar(&p, &Kernel::local_diffusion())?;
        Ok((
            (c - 2.0).abs() < 1e-9 && (l - 1.0).abs() < 1e-9,
            format!("c* = {c}, λ* = {l}"),
        ))
    }));

    checks.push(check(
        "transform convolution",
        (|| {
            let dk = discretize(&g, 0.05, RadiusPolicy::TailMass)?;
            let n = 1500;
            let fft = Convolver::new(dk.clone(), n, ConvolutionMethod::Fft);
            let direct = Convolver::new(dk, n, ConvolutionMethod::Direct);
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (a, b) = (
                    fft.apply(&w, Extension::Clamp),
                    direct.apply(&w, Extension::Clamp),
                );
                worst = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(worst, f64::max);
            }
            Ok((worst < 1e-10, format!("max gap {worst:.3e}")))
        })(),
    ));

    checks.push(check(
        "operator fixes (1,0)",
        (|| {
            let dk = discretize(&g, 0.05, RadiusPolicy::TailMass)?;
            let c = 1.2 * cstar(&p, &g)?.0;
            let r = apply_p(&[1.0; 200], &[0.0; 200], c, &p, &dk, &dk, beta_min(&p))?;
            let fixed = r.phi.iter().all(|x| *x == 1.0) && r.psi.iter().all(|x| *x == 0.0);
            Ok((fixed, format!("β = {}", beta_min(&p))))
        })(),
    ));

    checks.push(check(
        "squeeze limit",
        (|| {
            let t = run_squeeze(&p, 1e-12, 100)?;
            let err = (t.limit() - t.u2_star).abs();
            Ok((
                err < 1e-10,
                format!("|γ - u2*| = {err:.3e} after {:?} steps", t.n_converged),
            ))
        })(),
    ));

    checks.push(check(
        "super/sub-solutions",
        (|| {
            let c = 1.2 * cstar(&p, &g)?.0;
            let rep = DispersionReport::new(c, &p, &g, &g)?;
            let pair = build_supersub(c, &p, &g, &rep)?;
            let r = verify_supersub(&pair, &p, &g, &g, &uniform_grid(-40.0, 40.0, 801))?;
            Ok((r.passes(), format!("worst {:?}", r.worst)))
        })(),
    ));

    checks.push(check(
        "translation tracking",
        (|| {
            let est = translation_check(1.3)?;
            let err = (est.speed - 1.3).abs();
            Ok((err < 1e-8, format!("recovered {}", est.speed)))
        })(),
    ));

    for c in &checks {
        println!(
            "{}: {} ({})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    if let Some(out) = out {
        out.json("selftest.json", &checks)?;
    }
    if checks.iter().all(|c| c.pass) {
        Ok(())
    } else {
        Err(Error::NumericalFailure("self-test failed".into()).into())
    }
}
