use protoadapt_wasm::{compare_synthetic, run_compare, run_profile, CompareParams, ProfileParams};

fn small_compare() -> CompareParams {
    CompareParams {
        classes: 4,
        dim: 8,
        per_class: 60,
        ..CompareParams::default()
    }
}

#[test]
fn compare_scores_three_methods_on_the_query_split() {
    let p = small_compare();
    let r = run_compare(&p).unwrap();
    assert_eq!(r.support, 4 * p.train.shots);
    assert_eq!(r.query, 4 * 60 - r.support);
    let names: Vec<_> = r.methods.iter().map(|m| m.method).collect();
    assert_eq!(names, ["zeroshot", "map", "bayes"]);
    for m in &r.methods {
        assert!((0.0..=1.0).contains(&m.accuracy));
        assert_eq!(m.bins.len(), p.bins);
        assert_eq!(m.bins.iter().map(|b| b.count).sum::<usize>(), r.query);
        assert_eq!(m.coverage.len(), p.levels.len());
        let cov: Vec<f64> = m.coverage.iter().map(|c| c.coverage).collect();
        assert!(
            cov.windows(2).all(|w| w[0] >= w[1]),
            "coverage must shrink with the level: {cov:?}"
        );
    }
    assert_eq!(r.map_trajectory.len(), p.train.epochs);
    assert_eq!(r.bayes_trajectory.len(), p.train.epochs);
    assert_eq!(r.posterior_std.len(), 4);
}

#[test]
fn compare_is_deterministic_through_the_json_boundary() {
    let params = r#"{"classes": 3, "dim": 6, "per_class": 40, "epochs": 30, "seed": 7}"#;
    let a = compare_synthetic(params).unwrap();
    let b = compare_synthetic(params).unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["methods"].as_array().unwrap().len(), 3);
}

#[test]
fn profile_covers_the_circle() {
    let p = ProfileParams {
        points: 90,
        ..ProfileParams::default()
    };
    let r = run_profile(&p).unwrap();
    assert_eq!(r.angles.len(), 90);
    assert_eq!(r.support.len(), p.classes * p.train.shots);
    let floor = 1.0 / p.classes as f64;
    for c in &r.curves {
        assert_eq!(c.confidence.len(), 90);
        assert!(c.confidence.iter().all(|&v| v >= floor - 1e-12 && v <= 1.0 + 1e-12));
        assert!(c.predicted.iter().all(|&k| k < p.classes));
        assert!(c.class_angles.iter().all(|a| (0.0..std::f64::consts::TAU).contains(a)));
    }
}

#[test]
fn zero_shot_profile_peaks_at_the_prototype_angles() {
    let r = run_profile(&ProfileParams::default()).unwrap();
    let zs = &r.curves[0];
    for (k, &a) in zs.class_angles.iter().enumerate() {
        let i = ((a / std::f64::consts::TAU) * r.angles.len() as f64).round() as usize % r.angles.len();
        assert_eq!(zs.predicted[i], k, "prototype {k} at angle {a}");
    }
}

#[test]
fn wider_prior_lowers_bayes_confidence_near_boundaries() {
    let mean_conf = |prior_std: f64| {
        let mut p = ProfileParams::default();
        p.train.prior_std = prior_std;
        let r = run_profile(&p).unwrap();
        let c = &r.curves[2].confidence;
        c.iter().sum::<f64>() / c.len() as f64
    };
    let tight = mean_conf(1e-3);
    let wide = mean_conf(0.5);
    assert!(wide < tight, "wide {wide} vs tight {tight}");
}

#[test]
fn invalid_parameters_are_errors_not_panics() {
    let p = ProfileParams {
        points: 0,
        ..ProfileParams::default()
    };
    assert!(run_profile(&p).is_err());
    let p = CompareParams {
        classes: 1,
        ..small_compare()
    };
    assert!(run_compare(&p).is_err());
}

#[test]
fn default_profile_shows_map_adapting() {
    let r = run_profile(&ProfileParams::default()).unwrap();
    let shift = r.curves[0]
        .class_angles
        .iter()
        .zip(&r.curves[1].class_angles)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(shift > 0.02, "largest MAP rotation {shift} rad");
}
