use ndarray::Array2;
use protoadapt::map_adapter::{clap_gradient, clap_objective, train_map, MapConfig};
use protoadapt::model::{FeatureSet, Prototypes, WeightMatrix};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

fn unit_rows(rng: &mut Xoshiro256PlusPlus, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

fn instance(seed: u64) -> (FeatureSet, Prototypes) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let x = unit_rows(&mut rng, 20, 4);
    let labels = (0..20).map(|i| i % 3).collect();
    let t = unit_rows(&mut rng, 3, 4);
    (FeatureSet::new(x, labels).unwrap(), Prototypes::new(t).unwrap())
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Plain full-batch gradient descent at step 1/L, run to a gradient norm of 1e-8.
fn gd_oracle(data: &FeatureSet, protos: &Prototypes, cfg: &MapConfig) -> (WeightMatrix, f64) {
    // Softmax CE Hessian is bounded by ½ scale² ‖X‖²_F in this parameterisation.
    let x_sq: f64 = data.features().iter().map(|v| v * v).sum();
    let lam_max = cfg.lambdas.iter().cloned().fold(0.0, f64::max);
    let l = 0.5 * cfg.scale * cfg.scale * x_sq + 2.0 * lam_max;
    let mut w = WeightMatrix::from_prototypes(protos);
    for _ in 0..5_000_000 {
        let g = clap_gradient(&w, data, protos, cfg).unwrap();
        if norm(&g) < 1e-8 {
            break;
        }
        w = WeightMatrix::new(w.view().to_owned() - g / l).unwrap();
    }
    let g = clap_gradient(&w, data, protos, cfg).unwrap();
    assert!(norm(&g) < 1e-8, "oracle stalled at gradient norm {}", norm(&g));
    let obj = clap_objective(&w, data, protos, cfg).unwrap();
    (w, obj)
}

fn convex_cfg(scale: f64) -> MapConfig {
    MapConfig {
        lambdas: vec![0.1; 3],
        epochs: 3000,
        batch_size: 20,
        scale,
        ..MapConfig::from_prior_std(3, 1.0)
    }
}

#[test]
fn full_batch_training_reaches_convex_optimum() {
    for seed in 0..3 {
        let (data, protos) = instance(seed);
        let cfg = convex_cfg(100.0);
        let fit = train_map(&data, &protos, &cfg).unwrap();
        let g = clap_gradient(&fit.weights, &data, &protos, &cfg).unwrap();
        assert!(norm(&g) <= 1e-3, "seed {seed}: gradient norm {}", norm(&g));

        let (_, oracle) = gd_oracle(&data, &protos, &cfg);
        let got = clap_objective(&fit.weights, &data, &protos, &cfg).unwrap();
        assert!((got - oracle).abs() <= 1e-3, "seed {seed}: {got} vs oracle {oracle}");
    }
}

#[test]
fn small_lr_full_batch_objective_never_increases() {
    let (data, protos) = instance(7);
    let cfg = MapConfig {
        lr: 0.01,
        momentum: 0.0,
        epochs: 200,
        ..convex_cfg(10.0)
    };
    let fit = train_map(&data, &protos, &cfg).unwrap();
    let start = clap_objective(&WeightMatrix::from_prototypes(&protos), &data, &protos, &cfg).unwrap();
    let mut prev = start;
    for (epoch, &v) in fit.trajectory.iter().enumerate() {
        assert!(v <= prev + 1e-12, "epoch {epoch}: {v} > {prev}");
        prev = v;
    }
    assert!(prev < start);
}

#[test]
fn runaway_step_reports_divergence() {
    let (data, protos) = instance(3);
    let cfg = MapConfig {
        lr: 1e300,
        epochs: 5,
        ..convex_cfg(100.0)
    };
    match train_map(&data, &protos, &cfg) {
        Err(protoadapt::Error::Divergence { epoch }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {other:?}"),
    }
}
