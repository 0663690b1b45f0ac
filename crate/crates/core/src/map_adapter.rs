//! Point-estimate adapter: a linear probe initialised at the class prototypes
//! and pulled back toward them by a per-class quadratic penalty.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, FeatureSet, Prototypes, WeightMatrix};
use crate::optim::{cosine_lr, SgdState};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Per-class penalty weights λ_c.
    pub lambdas: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub scale: f64,
}

impl MapConfig {
    /// Uniform `λ_c = 1 / (2 σ²)`, the penalty matching a Gaussian prior of
    /// standard deviation `prior_std` around each prototype.
    pub fn from_prior_std(num_classes: usize, prior_std: f64) -> Self {
        Self {
            lambdas: vec![1.0 / (2.0 * prior_std * prior_std); num_classes],
            epochs: 300,
            batch_size: 256,
            lr: 0.1,
            momentum: 0.9,
            seed: 0,
            scale: 100.0,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.lambdas.len() != num_classes {
            return Err(Error::shape(format!(
                "{} lambdas for {} classes",
                self.lambdas.len(),
                num_classes
            )));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::param("lambdas must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

fn check_inputs(w: &WeightMatrix, data: &FeatureSet, protos: &Prototypes, cfg: &MapConfig) -> Result<()> {
    if w.view().dim() != protos.matrix().dim() {
        return Err(Error::shape(format!(
            "weights {:?} vs prototypes {:?}",
            w.view().dim(),
            protos.matrix().dim()
        )));
    }
    if cfg.lambdas.len() != protos.num_classes() {
        return Err(Error::shape(format!(
            "{} lambdas for {} classes",
            cfg.lambdas.len(),
            protos.num_classes()
        )));
    }
    protos.check_compatible(data)
}

fn objective_and_grad(
    w: ArrayView2<'_, f64>,
    data: &FeatureSet,
    protos: ArrayView2<'_, f64>,
    lambdas: &[f64],
    scale: f64,
) -> (f64, Array2<f64>) {
    let (ce, mut grad) = model::ce_value_and_grad(w, data.features(), data.labels(), scale);
    let (reg, reg_grad) = model::weighted_sq_dist(w, protos, lambdas);
    grad += &reg_grad;
    (ce + reg, grad)
}

/// `Σ_n H(y_n, ŷ_n) + Σ_c λ_c ‖w_c − t_c‖²`.
pub fn clap_objective(w: &WeightMatrix, data: &FeatureSet, protos: &Prototypes, cfg: &MapConfig) -> Result<f64> {
    check_inputs(w, data, protos, cfg)?;
    let p = model::softmax_rows(&model::logits_raw(w.view(), data.features(), cfg.scale))?;
    let ce = model::ce_sum_raw(p.view(), data.labels());
    let (reg, _) = model::weighted_sq_dist(w.view(), protos.matrix(), &cfg.lambdas);
    Ok(ce + reg)
}

pub fn clap_gradient(w: &WeightMatrix, data: &FeatureSet, protos: &Prototypes, cfg: &MapConfig) -> Result<Array2<f64>> {
    check_inputs(w, data, protos, cfg)?;
    Ok(objective_and_grad(w.view(), data, protos.matrix(), &cfg.lambdas, cfg.scale).1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapFit {
    pub weights: WeightMatrix,
    /// Full-data objective after each epoch.
    pub trajectory: Vec<f64>,
}

/// Per-class reparameterisation scale `s_c = min(σ_prior,c, 1/√N)`.
///
/// Descending the full objective in `u` with `w_c = t_c + s_c u_c` gives the
/// prior term unit curvature when the prior is tight, and falls back to the
/// per-sample objective when it is weak.
pub(crate) fn prior_preconditioner(prior_std: impl Iterator<Item = f64>, n: usize) -> Vec<f64> {
    let cap = (n as f64).sqrt().recip();
    prior_std.map(|s| s.min(cap)).collect()
}

/// Minibatch SGD with momentum and cosine decay, starting from the prototypes.
///
/// Each step descends the minibatch estimate of the full objective in
/// `w_c = t_c + s_c u_c` coordinates, with `s_c` from [`prior_preconditioner`]
/// and `σ_prior,c = 1/√(2λ_c)`, so strong penalties stay stable at the same
/// learning rate.
pub fn train_map(data: &FeatureSet, protos: &Prototypes, cfg: &MapConfig) -> Result<MapFit> {
    cfg.validate(protos.num_classes())?;
    protos.check_compatible(data)?;

    let t = protos.matrix();
    let (c, d) = t.dim();
    let n = data.len();
    let precond = prior_preconditioner(
        cfg.lambdas.iter().map(|&l| {
            if l > 0.0 {
                (2.0 * l).sqrt().recip()
            } else {
                f64::INFINITY
            }
        }),
        n,
    );
    let precond_col = ndarray::Array1::from(precond.clone()).insert_axis(Axis(1));

    let mut u = Array2::<f64>::zeros((c, d));
    let mut w = t.to_owned();
    let mut rng = rng::seeded(cfg.seed);
    let per_epoch = rng::batches_per_epoch(n, cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut sgd = SgdState::new(&[c * d], cfg.momentum, total)?;
    let mut trajectory = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for batch_idx in rng::shuffled_batches(&mut rng, n, cfg.batch_size) {
            let batch = data.subset(&batch_idx);
            let weight = n as f64 / batch.len() as f64;
            let (_, ce_grad) = model::ce_value_and_grad(w.view(), batch.features(), batch.labels(), cfg.scale);
            let (_, reg_grad) = model::weighted_sq_dist(w.view(), t, &cfg.lambdas);
            let mut grad = ce_grad * weight + reg_grad;
            grad *= &precond_col;

            let lr = cosine_lr(cfg.lr, sgd.step_count(), total)?;
            let u_slice = u.as_slice_mut().expect("standard layout");
            sgd.step(&mut [u_slice], &[grad.as_slice().expect("standard layout")], lr)?;
            w = &t + &(&u * &precond_col);
        }
        if !model::all_finite(&w) {
            return Err(Error::Divergence { epoch });
        }
        let (obj, _) = objective_and_grad(w.view(), data, t, &cfg.lambdas, cfg.scale);
        if !obj.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trajectory.push(obj);
    }

    Ok(MapFit {
        weights: WeightMatrix::new(w)?,
        trajectory,
    })
}
