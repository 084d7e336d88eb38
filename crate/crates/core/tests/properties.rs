//! Property tests for the invariants of each module.

use nlwave::bounds::{build_supersub, uniform_grid, verify_supersub};
use nlwave::dispersion::{
    cstar, delta, lambda_roots, sign_pattern_holds, speed_of_rate, DispersionReport,
};
use nlwave::kernel::{discretize, nonlocal_op, RadiusPolicy};
use nlwave::model::{check_strong_allee_assumption, equilibria, reaction_f, Classification};
use nlwave::profile::{apply_p, beta_min};
use nlwave::squeeze::{run_squeeze, squeeze_step};
use nlwave::{Extension, Kernel, Params};
use proptest::prelude::*;

/// Admissible parameters: `m` drawn below the binding bound.
fn admissible() -> impl Strategy<Value = Params> {
    (
        0.05f64..0.6,
        0.2f64..3.0,
        0.02f64..0.98,
        0.3f64..2.0,
        0.3f64..2.0,
        0.3f64..2.0,
    )
        .prop_map(|(b, a, frac, s, d1, d2)| {
            let mut p = Params {
                d1,
                d2,
                m: 1.0,
                a,
                s,
                b,
            };
            p.m = frac * check_strong_allee_assumption(&p).min_term;
            p
        })
}

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.3f64..2.0).prop_map(|s| Kernel::gaussian(s).unwrap()),
        (0.7f64..3.0).prop_map(|a| Kernel::laplace(a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn admissible_params_have_two_coexistence_states(p in admissible()) {
        let adm = check_strong_allee_assumption(&p);
        prop_assert!(adm.admissible);
        prop_assert!(adm.below_critical_threshold);
        prop_assert_eq!(equilibria(&p).classification, Classification::TwoPositive);
        // the second bound is the threshold condition 4mb < (1-b)²(1+a)
        prop_assert!(4.0 * p.m * p.b < (1.0 - p.b).powi(2) * (1.0 + p.a));
    }

    #[test]
    fn equilibria_satisfy_vieta(p in admissible()) {
        let eq = equilibria(&p);
        let (u1, u2) = (eq.u1_star.unwrap(), eq.u2_star.unwrap());
        let k = p.m / (1.0 + p.a);
        prop_assert!((u1 + u2 - (1.0 + p.b)).abs() < 1e-12);
        prop_assert!((u1 * u2 - p.b * (1.0 + k)).abs() < 1e-12);
    }

    #[test]
    fn prey_reaction_decreases_in_predator(p in admissible(), phi in 0.05f64..1.5) {
        let mut prev = reaction_f(phi, 0.0, &p).unwrap();
        for i in 1..50 {
            let next = reaction_f(phi, i as f64 * 0.05, &p).unwrap();
            prop_assert!(next < prev);
            prev = next;
        }
    }

    #[test]
    fn moment_is_even_and_convex(k in kernel(), frac in 0.01f64..0.9) {
        let top = k.lambda0().min(4.0);
        let lam = frac * top;
        let m = k.moment(lam).unwrap();
        prop_assert!((m - k.moment(-lam).unwrap()).abs() <= 1e-12 * m);
        let h = 1e-3 * top;
        let second = k.moment(lam + h).unwrap() - 2.0 * m + k.moment(lam - h).unwrap();
        prop_assert!(second > 0.0);
    }

    #[test]
    fn periodic_nonlocal_operator_conserves_mass(
        w in proptest::collection::vec(-2.0f64..2.0, 64..300),
        k in kernel(),
    ) {
        let h = 0.1;
        let dk = discretize(&k, h, RadiusPolicy::TailMass).unwrap();
        prop_assume!(2 * dk.radius_points() < w.len());
        let total: f64 = nonlocal_op(&dk, &w, Extension::Periodic).iter().sum::<f64>() * h;
        prop_assert!(total.abs() < 1e-10, "mass drift {}", total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn cstar_minimizes_the_speed_function(p in admissible(), k in kernel()) {
        let (c, lam) = cstar(&p, &k).unwrap();
        prop_assert!((speed_of_rate(lam, &p, &k).unwrap() - c).abs() < 1e-10 * c.max(1.0));
        let top = k.lambda0().min(4.0 * lam);
        let n = (top / 1e-4) as usize;
        for i in (1..n).step_by(7) {
            let l = i as f64 * 1e-4;
            if l >= 0.999 * k.lambda0() {
                break;
            }
            prop_assert!(c <= speed_of_rate(l, &p, &k).unwrap() + 1e-10);
        }
    }

    #[test]
    fn roots_and_sign_pattern(p in admissible(), k in kernel(), f in 1.01f64..4.0) {
        let (cs, _) = cstar(&p, &k).unwrap();
        let c = f * cs;
        let (l1, l2) = lambda_roots(c, &p, &k).unwrap();
        prop_assert!(l1 < l2);
        prop_assert!(delta(l1, c, &p, &k).unwrap().abs() < 1e-10);
        prop_assert!(delta(l2, c, &p, &k).unwrap().abs() < 1e-10);
        prop_assert!(sign_pattern_holds(c, l1, l2, &p, &k, 1000).unwrap());
    }

    #[test]
    fn cstar_increases_with_predator_growth(p in admissible(), k in kernel()) {
        let mut q = p;
        q.s = 2.0 * p.s;
        prop_assert!(cstar(&q, &k).unwrap().0 > cstar(&p, &k).unwrap().0);
    }

    #[test]
    fn bound_shapes(p in admissible(), f in 1.05f64..5.0) {
        let k = Kernel::gaussian(1.0).unwrap();
        let (cs, _) = cstar(&p, &k).unwrap();
        let rep = DispersionReport::new(f * cs, &p, &k, &k).unwrap();
        let pair = build_supersub(rep.c, &p, &k, &rep).unwrap();
        let grid = uniform_grid(3.0 * pair.xi1 - 10.0, 20.0, 2001);
        let [_, pl, su, sl] = pair.sample(&grid);
        let floor = 0.5 * (1.0 + p.b);
        let arg_max = (0..grid.len())
            .max_by(|i, j| sl[*i].total_cmp(&sl[*j]))
            .unwrap();
        prop_assert!(grid[arg_max] <= pair.xi1);
        for j in 0..grid.len() {
            prop_assert!(pl[j] >= floor);
            prop_assert!(sl[j] < su[j]);
        }
    }

    #[test]
    fn squeeze_map_is_monotone(p in admissible(), t in 0.1f64..0.9, u in 0.1f64..0.9) {
        let lo = 0.5 * (1.0 + p.b);
        let g_prev = lo + t * (1.0 - lo);
        let g_curr = lo + u * (1.0 - lo);
        let d = 1e-6 * (1.0 - lo);
        let base = squeeze_step(g_prev, g_curr, &p);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        if let Ok(v) = squeeze_step(g_prev, g_curr + d, &p) {
            prop_assert!(v <= base);
        }
        if let Ok(v) = squeeze_step(g_prev + d, g_curr, &p) {
            prop_assert!(v >= base);
        }
    }

    #[test]
    fn squeeze_contracts_to_coexistence(p in admissible()) {
        // the contraction estimate is asserted inside every run
        let t = run_squeeze(&p, 1e-12, 10_000).unwrap();
        prop_assert!((t.limit() - t.u2_star).abs() < 1e-10);
        prop_assert!(t.step_ratios.iter().all(|r| *r <= t.rho * (1.0 + 1e-9) + 1e-12));
    }

    #[test]
    fn operator_is_mixed_quasi_monotone(
        seed in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 80),
        p in admissible(),
    ) {
        let k = Kernel::gaussian(1.0).unwrap();
        let h = 0.05;
        let dk = discretize(&k, h, RadiusPolicy::TailMass).unwrap();
        let c = 1.2 * cstar(&p, &k).unwrap().0;
        let beta = beta_min(&p);
        prop_assume!(beta * h < 2.0 * c);
        let lo = p.prey_floor();
        let phi1: Vec<f64> = seed.iter().map(|s| lo + s.0 * (1.0 - lo)).collect();
        let phi2: Vec<f64> = phi1.iter().zip(&seed).map(|(x, s)| x + s.1 * (1.0 - x)).collect();
        let psi1: Vec<f64> = seed.iter().map(|s| s.2).collect();
        let psi2: Vec<f64> = psi1.iter().zip(&seed).map(|(x, s)| x + s.3 * (1.0 - x)).collect();
        let run = |a: &[f64], b: &[f64]| apply_p(a, b, c, &p, &dk, &dk, beta).unwrap();
        // raising φ raises both outputs
        let (a, b) = (run(&phi1, &psi1), run(&phi2, &psi1));
        for j in 0..phi1.len() {
            prop_assert!(a.phi[j] <= b.phi[j] + 1e-13 && a.psi[j] <= b.psi[j] + 1e-13);
        }
        // raising ψ lowers the prey output and raises the predator output
        let d = run(&phi1, &psi2);
        for j in 0..phi1.len() {
            prop_assert!(d.phi[j] <= a.phi[j] + 1e-13 && d.psi[j] >= a.psi[j] - 1e-13);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn supersub_inequalities_hold(p in admissible(), f in prop_oneof![Just(1.05), Just(1.2), Just(2.0), Just(5.0)]) {
        let k = Kernel::gaussian(1.0).unwrap();
        let (cs, _) = cstar(&p, &k).unwrap();
        let rep = DispersionReport::new(f * cs, &p, &k, &k).unwrap();
        let pair = build_supersub(rep.c, &p, &k, &rep).unwrap();
        let lo = (1.5 * pair.xi1).min(-40.0);
        let n = ((40.0 - lo) / 0.04).round() as usize + 1;
        let res = verify_supersub(&pair, &p, &k, &k, &uniform_grid(lo, 40.0, n)).unwrap();
        prop_assert!(res.passes(), "worst {:?} tol {:?}", res.worst, res.tol);
    }
}
