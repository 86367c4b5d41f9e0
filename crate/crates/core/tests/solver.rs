use dcvs::baselines::{ard_em_step, ard_surrogate, run_baseline, BaselineConfig, Method};
use dcvs::experiments::{draw_design, gen_synthetic, DesignKind, ScenarioConfig};
use dcvs::model::{BoxBounds, ConstraintSpec};
use dcvs::objective::{evaluate, loss, LinearPath};
use dcvs::solver::{solve, SolverConfig};
use dcvs::{build_instance, PrecisionVector, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn instance(seed: u64, n: usize, p: usize) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let theta = DVector::from_fn(p, |j, _| if j < 2 { 1.5 } else { 0.0 });
    let y = &x * theta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    build_instance(x, y, 1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dc_trace_never_increases(seed in 0u64..10_000, n in 3usize..25, p in 1usize..40, period in 1usize..6) {
        let inst = instance(seed, n, p);
        let cfg = SolverConfig {
            constraint: ConstraintSpec::box_only(BoxBounds::new(1e-3, 1e3).unwrap()),
            accel_period: period,
            max_iters: 200,
            ..Default::default()
        };
        let res = solve(&inst, &cfg).unwrap();
        for w in res.trace.losses().windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(res.d.as_slice().iter().all(|&v| (1e-3..=1e3).contains(&v)));
    }

    #[test]
    fn ard_surrogate_sandwich(seed in 0u64..10_000, n in 3usize..20, p in 1usize..30) {
        let inst = instance(seed, n, p);
        let b = BoxBounds::default();
        let mut d = PrecisionVector::uniform(p, 1.0).unwrap();
        for _ in 0..10 {
            let ev = evaluate(&inst, &d, LinearPath::Auto).unwrap();
            let next = ard_em_step(&inst, &d, &b).unwrap();
            let s = ard_surrogate(&ev, &d, &next);
            let f_next = loss(&inst, &next).unwrap().loss;
            let tol = 1e-10 * ev.objective.loss.abs().max(1.0);
            prop_assert!(ev.objective.loss >= s - tol);
            prop_assert!(s >= f_next - tol);
            d = next;
        }
    }
}

#[test]
fn pgd_reaches_one_dimensional_grid_minimum() {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    let y = DVector::from_fn(20, |_, _| 3.0 + rng.sample::<f64, _>(StandardNormal));
    let inst = build_instance(DMatrix::from_element(20, 1, 1.0), y, 1.0, 1.0).unwrap();
    let grid_min = (0..4001)
        .map(|k| 10f64.powf(-4.0 + 8.0 * k as f64 / 4000.0))
        .min_by(|&a, &b| {
            let la = loss(&inst, &PrecisionVector::uniform(1, a).unwrap()).unwrap().loss;
            let lb = loss(&inst, &PrecisionVector::uniform(1, b).unwrap()).unwrap().loss;
            la.total_cmp(&lb)
        })
        .unwrap();
    let solver = SolverConfig {
        rel_tol: 1e-13,
        max_iters: 100_000,
        ..Default::default()
    };
    let res = run_baseline(&inst, &BaselineConfig::new(Method::Pgd, solver)).unwrap();
    assert!((res.d[0] - grid_min).abs() <= 0.01 * grid_min, "pgd {} grid {grid_min}", res.d[0]);
}

#[test]
fn toeplitz_design_has_ar1_correlation() {
    let rho: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = draw_design(40_000, 4, DesignKind::Toeplitz(rho), &mut rng);
    let n = x.nrows() as f64;
    for j in 0..4 {
        for k in 0..4 {
            let cov = x.column(j).dot(&x.column(k)) / n;
            let want = rho.powi((j as i32 - k as i32).abs());
            assert!((cov - want).abs() < 0.02, "cov({j},{k}) = {cov}, want {want}");
        }
    }
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let cfg = ScenarioConfig {
        n: 30,
        p: 50,
        ..Default::default()
    };
    let (a, ta) = gen_synthetic(&cfg, 0).unwrap();
    let (b, tb) = gen_synthetic(&cfg, 0).unwrap();
    let (c, _) = gen_synthetic(&cfg, 1).unwrap();
    assert_eq!(a.y(), b.y());
    assert_eq!(ta, tb);
    assert_ne!(a.y(), c.y());
    assert_eq!(ta.support.len(), 5);
    assert!(ta.support.iter().all(|&j| [-3.0, -2.5, 2.5, 3.0].contains(&ta.theta[j])));
}

#[test]
fn independent_and_toeplitz_strings_round_trip() {
    for s in ["independent", "toeplitz(0.5)"] {
        let d: DesignKind = s.parse().unwrap();
        assert_eq!(d.to_string(), s);
    }
    assert!("toeplitz(1.5)".parse::<DesignKind>().is_err());
}
