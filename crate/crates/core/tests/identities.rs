use std::sync::Arc;

use poisson_malliavin::expansions::{
    chaotic_sum, pco_suite, pco_verify, pseudo_chaotic_sum, within_tolerance, DEFAULT_TOLERANCE,
};
use poisson_malliavin::integrals::{
    eval_compensated, eval_uncompensated, symmetrize, to_compensated, to_uncompensated, KernelRef, TensorIndicator,
};
use poisson_malliavin::library;
use poisson_malliavin::malliavin::pco_integrand;
use poisson_malliavin::measure::{Density, MarkSpace};
use poisson_malliavin::montecarlo::{ibp_check, isometry_check, mecke_check};
use poisson_malliavin::processes::{hawkes_functional, imbedding_indicators, ExcitationKernel, HawkesModel};
use poisson_malliavin::{Atom, Configuration, Functional, MarkSet, ProductIntensity, Seed, TimeInterval, Window};
use proptest::prelude::*;

fn uniform() -> ProductIntensity {
    ProductIntensity::new(1.0, MarkSpace::uniform(1.0, 5.0).unwrap()).unwrap()
}

fn tilted() -> ProductIntensity {
    // π(dx) = 7.5 x dx on [0, 1], mass 3.75
    let density = Density::parse_expr("7.5 * x").unwrap();
    ProductIntensity::new(2.0, MarkSpace::with_density(1.0, density, Some(3.75)).unwrap()).unwrap()
}

fn discrete() -> ProductIntensity {
    ProductIntensity::new(1.0, MarkSpace::discrete(vec![1.0, 2.0, 3.0], vec![1.0, 2.5, 0.5]).unwrap()).unwrap()
}

fn a() -> Window {
    Window::new(TimeInterval::half_open(0.0, 0.6), MarkSet::Interval { lo: 0.0, hi: 0.5 })
}

fn b() -> Window {
    Window::new(TimeInterval::closed(0.3, 1.0), MarkSet::Interval { lo: 0.25, hi: 1.0 })
}

fn full_library(rho: &ProductIntensity, a: Window, b: Window) -> Vec<Functional> {
    vec![
        library::count_full(a, rho).unwrap(),
        library::count_squared_full(a, rho).unwrap(),
        library::product_counts_full(a, b, rho).unwrap(),
        library::exp_count_full(a, -0.4, rho).unwrap(),
    ]
}

fn arb_conf(horizon: f64, marks: f64, max: usize) -> impl Strategy<Value = Configuration> {
    prop::collection::vec((0.0..horizon, 0.0..marks), 0..max).prop_map(move |v| {
        let mut atoms: Vec<Atom> = v.into_iter().map(|(t, x)| Atom::new(t, x)).collect();
        atoms.sort_by(Atom::order);
        atoms.dedup_by(|p, q| p.same_point(q));
        Configuration::new(atoms, horizon).unwrap()
    })
}

fn arb_window() -> impl Strategy<Value = Window> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(t0, t1, x0, x1)| {
        Window::new(
            TimeInterval::half_open(t0.min(t1), t0.max(t1)),
            MarkSet::Interval { lo: x0.min(x1), hi: x0.max(x1) },
        )
    })
}

#[test]
fn hawkes_pco_on_handmade_ground() {
    let m = HawkesModel::new(1.0, ExcitationKernel::Exp { alpha: 0.9, beta: 2.0 }, 3.0, 8.0).unwrap();
    let ground = Configuration::new(
        vec![Atom::new(0.2, 0.5), Atom::new(0.4, 1.6), Atom::new(0.45, 1.2), Atom::new(1.0, 7.9), Atom::new(2.5, 0.99)],
        3.0,
    )
    .unwrap();
    let f = hawkes_functional(&m);
    assert_eq!(imbedding_indicators(&m, &ground), vec![1.0, 1.0, 1.0, 0.0, 1.0]);
    assert_eq!(f.eval(&ground), 4.0);
    assert_eq!(pco_verify(&f, &ground).unwrap(), 0.0);
}

#[test]
fn chaos_under_nonuniform_and_discrete_marks() {
    for rho in [tilted(), discrete()] {
        let horizon = rho.horizon();
        let wa = Window::new(TimeInterval::half_open(0.0, 0.7 * horizon), MarkSet::Interval { lo: 0.0, hi: 2.2 });
        let wb = Window::new(TimeInterval::closed(0.2, horizon), MarkSet::Interval { lo: 0.5, hi: 3.0 });
        for f in full_library(&rho, wa, wb) {
            for i in 0..200 {
                let w = rho.sample(Seed(i));
                let order = f.chaos().unwrap().kernels.len();
                let r = chaotic_sum(&f, &w, &rho, order, DEFAULT_TOLERANCE).unwrap();
                if f.chaos().unwrap().complete {
                    assert!(within_tolerance(r.final_residual(), r.value, DEFAULT_TOLERANCE), "{} {r:?}", f.name());
                }
                let p = pseudo_chaotic_sum(&f, &w, w.len().min(12), DEFAULT_TOLERANCE).unwrap();
                if w.len() <= 12 {
                    assert!(within_tolerance(p.final_residual(), p.value, DEFAULT_TOLERANCE));
                }
            }
        }
    }
}

#[test]
fn statistical_identities_with_discrete_marks() {
    let rho = discrete();
    let w = Window::new(TimeInterval::closed(0.0, 1.0), MarkSet::Interval { lo: 1.5, hi: 3.0 });
    let f = library::count_squared(w);
    let h = TensorIndicator::power(w, 2);
    assert!(mecke_check(&f, &h, &rho, 50_000, Seed(1), 4.0).unwrap().pass);
    assert!(ibp_check(&f, &h, &rho, 50_000, Seed(2), 4.0).unwrap().pass);
    let rep = isometry_check(Arc::new(h), &rho, 50_000, Seed(3), 4.0).unwrap();
    assert!(rep.pass.unwrap(), "{rep:?}");
    assert_eq!(rep.target, Some(2.0 * 9.0));
}

#[test]
fn suites_are_thread_count_invariant() {
    let rho = uniform();
    let f = library::exp_count_full(a(), 0.3, &rho).unwrap();
    let h = TensorIndicator::power(a(), 2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let pco = pco_suite(&f, &rho, 2000, Seed(5), DEFAULT_TOLERANCE).unwrap();
            let mecke = mecke_check(&f, &h, &rho, 5000, Seed(6), 4.0).unwrap();
            (serde_json::to_string(&pco).unwrap(), serde_json::to_string(&mecke).unwrap())
        })
    };
    assert_eq!(run(1), run(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pco_is_exact_for_every_builtin(w in arb_conf(1.0, 1.0, 16)) {
        let rho = uniform();
        for f in full_library(&rho, a(), b()) {
            let r = pco_verify(&f, &w).unwrap();
            prop_assert!(within_tolerance(r, f.eval(&w), DEFAULT_TOLERANCE), "{} {r}", f.name());
        }
    }

    #[test]
    fn hawkes_integrand_is_the_acceptance_indicator(ground in arb_conf(5.0, 6.0, 40)) {
        let m = HawkesModel::new(1.0, ExcitationKernel::Exp { alpha: 0.5, beta: 1.0 }, 5.0, 6.0).unwrap();
        let f = hawkes_functional(&m);
        let closed = imbedding_indicators(&m, &ground);
        for (x, z) in ground.atoms().iter().zip(&closed) {
            prop_assert_eq!(pco_integrand(&f, &ground, *x).unwrap(), *z);
        }
        prop_assert_eq!(pco_verify(&f, &ground).unwrap(), 0.0);
    }

    #[test]
    fn pseudo_chaotic_brute_force_is_exact(w in arb_conf(1.0, 1.0, 9), beta in -1.0..1.0f64) {
        let f = library::product_counts(a(), b()).bare();
        let r = pseudo_chaotic_sum(&f, &w, w.len(), DEFAULT_TOLERANCE).unwrap();
        prop_assert!(within_tolerance(r.final_residual(), r.value, DEFAULT_TOLERANCE));
        let g = library::exp_count(b(), beta).bare();
        let r = pseudo_chaotic_sum(&g, &w, w.len(), DEFAULT_TOLERANCE).unwrap();
        prop_assert!(within_tolerance(r.final_residual(), r.value, DEFAULT_TOLERANCE));
    }

    #[test]
    fn span_lemma_for_random_windows(w in arb_conf(1.0, 1.0, 12), p in arb_window(), q in arb_window()) {
        let rho = uniform();
        let kernels: Vec<KernelRef> = vec![
            Arc::new(TensorIndicator::power(p, 1)),
            Arc::new(TensorIndicator::power(p, 2)),
            symmetrize(Arc::new(TensorIndicator::new(vec![p, q], 1.5))).unwrap(),
        ];
        for f in kernels {
            let direct = eval_uncompensated(f.as_ref(), &w).unwrap();
            let via = to_compensated(f.clone(), &rho).unwrap().evaluate(&w, &rho).unwrap();
            prop_assert!((direct - via).abs() < 1e-9 * (1.0 + direct.abs()));
            let comp = eval_compensated(f.as_ref(), &w, &rho).unwrap();
            let back = to_uncompensated(f.clone(), &rho).unwrap().evaluate(&w, &rho).unwrap();
            prop_assert!((comp - back).abs() < 1e-9 * (1.0 + comp.abs()));
        }
    }
}
