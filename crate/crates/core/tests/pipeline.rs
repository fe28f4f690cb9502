use cafe_core::baselines::{fairness_from_groups, permutation_importance, Metric};
use cafe_core::cafe::{cafe_estimate, CafeConfig};
use cafe_core::data::{Dataset, UnlearningTarget};
use cafe_core::fuzz::{fuzz, fuzz_instances, FuzzConfig, FuzzMode};
use cafe_core::graph::CausalGraph;
use cafe_core::linalg;
use cafe_core::models::{train, Hyperparams, ModelKind};
use cafe_core::sem::{fit_sem, InterventionStrategy, Mechanism};
use cafe_core::synth::{GeneratorSpec, RandomSpecShape};
use proptest::prelude::*;

const SHIPPED: [&str; 4] = ["heart", "heart_opposed", "heart_age", "performance"];

fn spec(name: &str) -> GeneratorSpec {
    GeneratorSpec::load(format!("{}/../../specs/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn setup(name: &str, rows: usize, seed: u64) -> (GeneratorSpec, CausalGraph, Dataset) {
    let mut s = spec(name);
    s.n = rows;
    s.seed = seed;
    let g = s.causal_graph().unwrap();
    let ds = s.generate().unwrap();
    (s, g, ds)
}

fn coefficient(m: &Mechanism, parents: &[String], parent: &str) -> f64 {
    let Mechanism::LinearRegression { coefficients, .. } = m else {
        panic!("expected a linear mechanism");
    };
    coefficients[parents.iter().position(|p| p == parent).unwrap()]
}

#[test]
fn sem_recovers_heart_mechanisms() {
    let (_, g, ds) = setup("heart", 10_000, 7);
    let sem = fit_sem(&g, &ds).unwrap();
    let b = sem.get("B").unwrap();
    let slope = coefficient(&b.mechanism, &b.parents, "S");
    assert!((9.9..=10.1).contains(&slope), "B on S: {slope}");
    let m = sem.get("M").unwrap();
    assert!((coefficient(&m.mechanism, &m.parents, "S") - 2.0).abs() < 0.1);
    assert!((coefficient(&m.mechanism, &m.parents, "E") + 3.0).abs() < 0.05);
    assert!(!sem.any_ridge());
}

#[test]
fn sem_estimates_concentrate_across_seeds() {
    for seed in 0..20 {
        let (_, g, ds) = setup("heart", 4_000, seed);
        let sem = fit_sem(&g, &ds).unwrap();
        let b = sem.get("B").unwrap();
        let m = sem.get("M").unwrap();
        assert!(
            (coefficient(&b.mechanism, &b.parents, "S") - 10.0).abs() < 0.2,
            "seed {seed}"
        );
        assert!(
            (coefficient(&m.mechanism, &m.parents, "E") + 3.0).abs() < 0.1,
            "seed {seed}"
        );
        let sd = b.residual().unwrap();
        assert!((sd - 1.0).abs() < 0.1, "seed {seed}: residual sd {sd}");
    }
}

#[test]
fn observed_values_leave_every_prediction_unchanged() {
    for name in SHIPPED {
        let (_, g, ds) = setup(name, 500, 1);
        let sem = fit_sem(&g, &ds).unwrap();
        let features = ds.schema().feature_names();
        let model = train(ModelKind::Linear, &ds, &features, &Hyperparams::default(), 0).unwrap();
        let cfg = FuzzConfig {
            strategy: InterventionStrategy::Observed,
            samples: 3,
            stochastic: true,
            ..FuzzConfig::default()
        };
        let target = UnlearningTarget::features_only(features.clone());
        for mode in [FuzzMode::Total, FuzzMode::Direct] {
            let deltas = fuzz_instances(&g, &sem, &model, &ds, &target, &cfg, mode).unwrap();
            assert_eq!(deltas.len(), 500 * features.len());
            assert!(
                deltas.iter().all(|d| d.deltas.iter().all(|&v| v == 0.0)),
                "{name}"
            );
        }
    }
}

#[test]
fn regression_estimate_matches_generator_effects() {
    for name in ["heart", "performance", "heart_opposed"] {
        let (s, g, ds) = setup(name, 10_000, 11);
        let truth = s.ground_truth_effects().unwrap();
        let model = s.outcome_model().unwrap();
        let target = UnlearningTarget::features_only(ds.schema().feature_names());
        let r = cafe_estimate(&g, &ds, &model, &target, &CafeConfig::default()).unwrap();
        for f in &r.features {
            let t = truth.get(&f.feature);
            // standard errors at this size: about 0.045 for heart's B and
            // 0.2 for performance's G, whose adjustment set is empty
            let tol = (0.05 * t.total.abs()).max(0.15);
            assert!(
                (f.total - t.total).abs() < tol,
                "{name}/{}: {} vs {}",
                f.feature,
                f.total,
                t.total
            );
            assert!((f.direct - t.direct).abs() < tol, "{name}/{}: direct", f.feature);
        }
    }
}

#[test]
fn fuzz_spread_shrinks_with_more_samples() {
    let (_, g, ds) = setup("heart", 200, 3);
    let sem = fit_sem(&g, &ds).unwrap();
    let model = train(
        ModelKind::Linear,
        &ds,
        &ds.schema().feature_names(),
        &Hyperparams::default(),
        0,
    )
    .unwrap();
    let target = UnlearningTarget::features_only(["E"]);
    let spread = |samples: usize| {
        let totals: Vec<f64> = (0..40)
            .map(|seed| {
                let cfg = FuzzConfig {
                    samples,
                    seed,
                    ..FuzzConfig::default()
                };
                fuzz(&g, &sem, &model, &ds, &target, &cfg).unwrap()[0].total
            })
            .collect();
        linalg::std_dev(&totals).powi(2)
    };
    let ratio = spread(5) / spread(20);
    assert!(
        (2.0..8.0).contains(&ratio),
        "variance ratio {ratio}, expected about 4"
    );
}

#[test]
fn permutation_importance_is_seed_deterministic() {
    let (_, _, ds) = setup("heart", 1_000, 2);
    let model = train(
        ModelKind::Linear,
        &ds,
        &ds.schema().feature_names(),
        &Hyperparams::default(),
        0,
    )
    .unwrap();
    let a = permutation_importance(&ds, &model, "M", Metric::NegRmse, 9, 5).unwrap();
    let b = permutation_importance(&ds, &model, "M", Metric::NegRmse, 9, 5).unwrap();
    assert_eq!(a, b);
    assert!(a > 1.0);
}

fn shape() -> RandomSpecShape {
    RandomSpecShape {
        features: 4,
        edge_probability: 0.5,
        binary_roots: 0.5,
        rows: 300,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn indirect_is_total_minus_direct(seed in any::<u64>(), mask in 1u8..16) {
        let s = GeneratorSpec::random_linear(shape(), seed);
        let g = s.causal_graph().unwrap();
        let ds = s.generate().unwrap();
        let names = ds.schema().feature_names();
        let chosen: Vec<String> = names.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, n)| n.clone()).collect();
        let target = UnlearningTarget::features_only(chosen);
        let model = train(ModelKind::Linear, &ds, &names, &Hyperparams::default(), seed).unwrap();
        let sem = fit_sem(&g, &ds).unwrap();
        let fz = fuzz(&g, &sem, &model, &ds, &target, &FuzzConfig { seed, ..FuzzConfig::default() }).unwrap();
        let cf = cafe_estimate(&g, &ds, &model, &target, &CafeConfig::default()).unwrap();
        for f in fz.iter().chain(&cf.features) {
            prop_assert_eq!(f.indirect, f.total - f.direct);
        }
    }

    #[test]
    fn fairness_ignores_row_order(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 2..40),
        perm_seed in any::<u64>(),
    ) {
        let mut rows = rows;
        rows[0].2 = true;
        rows[1].2 = false;
        let split = |r: &[(bool, bool, bool)]| {
            let yhat: Vec<bool> = r.iter().map(|x| x.0).collect();
            let labels: Vec<bool> = r.iter().map(|x| x.1).collect();
            let member: Vec<bool> = r.iter().map(|x| x.2).collect();
            fairness_from_groups(&yhat, Some(&labels), &member).unwrap()
        };
        let before = split(&rows);
        let mut shuffled = rows.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut cafe_core::rng::stream(perm_seed, &[]));
        let after = split(&shuffled);
        prop_assert!((before.spd - after.spd).abs() < 1e-12);
        prop_assert_eq!(before.di.is_some(), after.di.is_some());
        prop_assert!(before.spd.abs() <= 1.0);
        if let Some(di) = before.di {
            prop_assert!(di >= 0.0);
        }
    }
}
