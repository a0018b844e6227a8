//! Property tests over the public API of every pipeline stage.

use chrono::TimeDelta;
use fegp::eval::{ace, EvalReport, SegmentLabel, StepRecord};
use fegp::features::{FeatureVector, FeatureWeights};
use fegp::forecast::{component, map_point, MixturePosterior, Posterior, PosteriorComponent};
use fegp::gp::{
    build_covariance, fit_report, nlml, prune, FeatureMap, FitOptions, GpModel, Hyperparams,
    KernelKind, PrunePolicy, TrainingWindow,
};
use fegp::relief::{optimize_weights, Category, CategoryTag};
use fegp::sarima::{difference, fit_sarima_report, undifference, SarimaOrder};
use fegp::series::{decompose, synthesize, synthetic_epoch, SyntheticSpec, TrafficSeries};
use fegp::Method;
use proptest::prelude::*;

fn series(values: Vec<f64>) -> TrafficSeries {
    TrafficSeries::new(synthetic_epoch(), TimeDelta::minutes(15), values).unwrap()
}

fn day_multiple() -> impl Strategy<Value = Vec<f64>> {
    (1usize..4).prop_flat_map(|days| prop::collection::vec(0.0..500.0f64, days * 96))
}

fn features(n: usize, dim: usize) -> impl Strategy<Value = Vec<FeatureVector>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), n).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, v)| FeatureVector::new(i, v))
            .collect()
    })
}

fn hyper() -> impl Strategy<Value = Hyperparams> {
    (0.2..5.0f64, 0.2..5.0f64, 0.05..2.0f64).prop_map(|(s, b, n)| Hyperparams::new(s, b, n).unwrap())
}

fn weights(dim: usize) -> impl Strategy<Value = FeatureWeights> {
    prop::collection::vec(0.01..1.0f64, dim).prop_map(|w| FeatureWeights::new(w).unwrap())
}

fn relief_instance() -> impl Strategy<Value = (Vec<FeatureVector>, Vec<CategoryTag>)> {
    (4usize..16, 1usize..4).prop_flat_map(|(n, n_extreme)| {
        (features(n, 4), Just(n_extreme.min(n - 1)))
    })
    .prop_map(|(f, n_extreme)| {
        let tags = (0..f.len())
            .map(|i| CategoryTag {
                index: i,
                delta_y: 0.0,
                category: if i < n_extreme {
                    Category::Extreme
                } else {
                    Category::Typical
                },
            })
            .collect();
        (f, tags)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decompose_then_recompose_reproduces_input(values in day_multiple()) {
        let d = decompose(&series(values.clone())).unwrap();
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in d.recompose().iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn residual_decomposes_to_zero_baseline(values in day_multiple()) {
        let d = decompose(&series(values.clone())).unwrap();
        let again = decompose(&d.residual).unwrap();
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(again.baseline.iter().all(|b| b.abs() <= 1e-9 * scale));
    }

    #[test]
    fn synthesize_is_a_function_of_its_spec(seed in 0u64..1000, days in 1usize..4) {
        let spec = SyntheticSpec { seed, days, ..SyntheticSpec::default() };
        prop_assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
    }

    #[test]
    fn relief_weights_are_unit_and_nonnegative((f, tags) in relief_instance()) {
        let w = optimize_weights(&f, &tags).unwrap().weights;
        let norm: f64 = w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-9);
        prop_assert!(w.as_slice().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn relief_weights_ignore_feature_scale((f, tags) in relief_instance(), c in 0.1..20.0f64) {
        let scaled: Vec<FeatureVector> = f
            .iter()
            .map(|v| FeatureVector::new(v.time_index, v.values.iter().map(|x| x * c).collect()))
            .collect();
        let a = optimize_weights(&f, &tags).unwrap().weights;
        let b = optimize_weights(&scaled, &tags).unwrap().weights;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn widening_gaps_in_one_dimension_never_lowers_its_weight(
        (f, tags) in relief_instance(),
        theta in 0usize..4,
        push in 0.0..5.0f64,
    ) {
        // Push each extreme point away from its nearest typical point along
        // `theta`; cases where the pairing changes are skipped.
        let before = optimize_weights(&f, &tags).unwrap();
        let mut moved = f.clone();
        for m in &before.margins {
            let a = &f[m.index].values[theta];
            let b = &f[m.nearest_typical].values[theta];
            let dir = if a >= b { 1.0 } else { -1.0 };
            moved[m.index].values[theta] += dir * push;
        }
        let after = optimize_weights(&moved, &tags).unwrap();
        let same_pairs = before
            .margins
            .iter()
            .zip(&after.margins)
            .all(|(x, y)| x.nearest_typical == y.nearest_typical);
        prop_assume!(same_pairs);
        prop_assert!(after.weights.as_slice()[theta] >= before.weights.as_slice()[theta] - 1e-12);
    }

    #[test]
    fn covariance_is_symmetric(f in features(12, 3), w in weights(3), h in hyper()) {
        let targets = vec![0.0; f.len()];
        let window = TrainingWindow::new((0..f.len()).collect(), targets, f, 0.0).unwrap();
        for kind in [KernelKind::FeatureEmbedded, KernelKind::NaiveTime] {
            let c = build_covariance(&window, &w, &h, kind).unwrap().matrix;
            prop_assert_eq!(c.clone(), c.transpose());
        }
    }

    #[test]
    fn prune_keeps_a_subsequence(
        n in 1usize..80,
        max_size in 1usize..40,
        fraction in 0.0..=1.0f64,
        extreme_mask in prop::collection::vec(any::<bool>(), 80),
    ) {
        let indices: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
        let targets: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let window = TrainingWindow::new(indices.clone(), targets, Vec::new(), 0.0).unwrap();
        let tags: Vec<CategoryTag> = indices
            .iter()
            .zip(&extreme_mask)
            .map(|(&index, &e)| CategoryTag {
                index,
                delta_y: 0.0,
                category: if e { Category::Extreme } else { Category::Typical },
            })
            .collect();
        let policy = PrunePolicy { max_size, extreme_keep_fraction: fraction };
        let out = prune(&window, &tags, &policy);
        prop_assert_eq!(out.len(), n.min(max_size));
        let mut cursor = 0;
        for (&i, &y) in out.indices.iter().zip(&out.targets) {
            let pos = indices[cursor..].iter().position(|&j| j == i);
            prop_assert!(pos.is_some());
            cursor += pos.unwrap() + 1;
            prop_assert_eq!(y, ((i - 1) / 3) as f64);
        }
    }

    #[test]
    fn component_variance_lies_in_the_noise_band(
        f in features(10, 3),
        probe in prop::collection::vec(-3.0..3.0f64, 3),
        w in weights(3),
        h in hyper(),
    ) {
        let targets: Vec<f64> = (0..f.len()).map(|i| (i as f64).sin()).collect();
        let window = TrainingWindow::new((0..f.len()).collect(), targets, f, 0.0).unwrap();
        let model = GpModel::new(window, w, h, KernelKind::FeatureEmbedded, FeatureMap::default())
            .unwrap();
        let probe = FeatureVector::new(100, probe);
        let lo = h.noise_variance();
        let hi = h.noise_variance() + model.self_kernel();
        for i in 0..model.window.len() {
            let c = component(&model, &probe, i).unwrap();
            prop_assert!(c.var >= lo * (1.0 - 1e-12) && c.var <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mixture_pdf_is_nonnegative_and_map_ignores_order(
        parts in prop::collection::vec((-20.0..20.0f64, 0.01..10.0f64), 1..30),
        xs in prop::collection::vec(-100.0..100.0f64, 20),
    ) {
        let comps: Vec<PosteriorComponent> = parts
            .iter()
            .enumerate()
            .map(|(i, &(mu, var))| PosteriorComponent { mu, var, source_index: i })
            .collect();
        let fwd = MixturePosterior::new(comps.clone()).unwrap();
        let mut reversed = comps;
        reversed.reverse();
        let rev = MixturePosterior::new(reversed).unwrap();
        for x in xs {
            prop_assert!(fwd.pdf(x) >= 0.0);
        }
        let (a, b) = (map_point(&fwd), map_point(&rev));
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()) || (fwd.pdf(a) - fwd.pdf(b)).abs() <= 1e-12 * fwd.pdf(a));
    }

    #[test]
    fn difference_round_trip(
        values in prop::collection::vec(-100.0..100.0f64, 30..80),
        d in 0usize..3,
        sd in 0usize..2,
        s in 1usize..8,
    ) {
        let m = d + sd * s;
        prop_assume!(values.len() > m);
        let w = difference(&values, d, sd, s).unwrap();
        prop_assert_eq!(w.len(), values.len() - m);
        let back = undifference(&w, &values[..m], d, sd, s).unwrap();
        for (a, b) in back.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn seasonal_naive_is_exact_on_periodic_series(
        period in prop::collection::vec(-50.0..50.0f64, 2..12),
        extra in 0usize..3,
    ) {
        let s = period.len();
        let seasons = 10 / s + 2 + extra;
        let values: Vec<f64> = (0..s * seasons).map(|i| period[i % s]).collect();
        let order = SarimaOrder::new(0, 0, 0, 0, 1, 0, s).unwrap();
        let model = fegp::sarima::fit_sarima(&values, order).unwrap();
        for t in s..values.len() {
            prop_assert_eq!(model.forecast_one(&values[..t]).unwrap(), values[t]);
        }
    }

    #[test]
    fn report_curve_and_segments_add_up(
        pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..120),
        start in 0usize..1000,
        pad in 0usize..4,
    ) {
        let steps: Vec<StepRecord> = pairs
            .iter()
            .enumerate()
            .map(|(k, &(forecast, actual))| StepRecord {
                index: start + k,
                actual,
                forecast,
                prob_below: f64::NAN,
                prob_above: f64::NAN,
                max_index_read: None,
            })
            .collect();
        let r = EvalReport::from_steps(Method::Sarima, steps, 0.9, pad).unwrap();
        let mut running = 0.0;
        for (k, &(forecast, actual)) in pairs.iter().enumerate() {
            running += (forecast - actual).abs();
            prop_assert_eq!(r.ace_curve[k], running);
        }
        prop_assert_eq!(r.ace_total, *r.ace_curve.last().unwrap());
        let seg_sum = r.segment_aces[&SegmentLabel::Spike] + r.segment_aces[&SegmentLabel::Average];
        prop_assert!((seg_sum - r.ace_total).abs() <= 1e-9 * (1.0 + r.ace_total));
        prop_assert!(r.segment_aces.values().all(|v| *v <= r.ace_total + 1e-9));

        let mut cover = start;
        for seg in &r.segments {
            prop_assert_eq!(seg.from, cover);
            cover = seg.to + 1;
        }
        prop_assert_eq!(cover, start + pairs.len());
        let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let a: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assert!((ace(&f, &a, 0, a.len() - 1).unwrap() - r.ace_total).abs() <= 1e-9 * (1.0 + r.ace_total));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fit_returns_the_best_restart(
        f in features(25, 3),
        y in prop::collection::vec(-5.0..5.0f64, 25),
        seed in 0u64..100,
    ) {
        let w = FeatureWeights::uniform(3);
        let window = TrainingWindow::new((0..25).collect(), y, f, 0.0).unwrap();
        let opts = FitOptions { restarts: 4, seed, ..FitOptions::default() };
        let rep = fit_report(&window, &w, KernelKind::FeatureEmbedded, &opts).unwrap();
        let best = rep
            .restarts
            .iter()
            .filter_map(|r| r.result.map(|(_, v)| v))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(rep.nlml <= best);
        let recomputed = nlml(&window, &w, &rep.hyper, KernelKind::FeatureEmbedded).unwrap();
        prop_assert!((recomputed - rep.nlml).abs() <= 1e-8 * (1.0 + rep.nlml.abs()));
        for r in &rep.restarts {
            if let (Some(start), Some((_, end))) = (r.start_nlml, r.result) {
                prop_assert!(end <= start + 1e-9 * (1.0 + start.abs()));
            }
        }
    }

    #[test]
    fn css_objective_never_increases(
        seed in 0u64..1000,
        phi in -0.8..0.8f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0f64; 300];
        for t in 1..y.len() {
            y[t] = phi * y[t - 1] + rng.random_range(-1.0..1.0);
        }
        let order = SarimaOrder::new(1, 0, 1, 0, 0, 0, 1).unwrap();
        let fit = fit_sarima_report(&y, order, &Default::default()).unwrap();
        for w in fit.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}

#[test]
fn equal_features_without_noise_concentrate_on_targets() {
    let f: Vec<FeatureVector> = (0..5).map(|i| FeatureVector::new(i, vec![0.3, -1.0])).collect();
    let targets = vec![2.0, -1.0, 4.0, 0.5, 3.0];
    let window = TrainingWindow::new((0..5).collect(), targets.clone(), f, 0.0).unwrap();
    let probe = FeatureVector::new(9, vec![0.3, -1.0]);
    for sigma_n in [1e-2, 1e-3, 1e-4] {
        let h = Hyperparams::new(1.5, 1.0, sigma_n).unwrap();
        let model = GpModel::new(
            window.clone(),
            FeatureWeights::uniform(2),
            h,
            KernelKind::FeatureEmbedded,
            FeatureMap::default(),
        )
        .unwrap();
        for (i, y) in targets.iter().enumerate() {
            let c = component(&model, &probe, i).unwrap();
            assert!((c.mu - y).abs() <= 10.0 * sigma_n * sigma_n, "{} vs {y}", c.mu);
            assert!(c.var <= 3.0 * sigma_n * sigma_n);
        }
    }
}
