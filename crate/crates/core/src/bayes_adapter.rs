//! Variational Bayesian adapter.
//!
//! The weights get a Gaussian prior centred on the class prototypes with one
//! standard deviation per class, and the posterior is approximated by a
//! Gaussian with a free mean and one (learned) standard deviation per class.
//! Training minimises the negative ELBO
//!
//! ```text
//! Σ_n E_q[ H(y_n, softmax(scale · x_n Wᵀ)) ] + KL(q ‖ p)
//! ```
//!
//! with the expectation estimated by reparameterised Monte Carlo draws
//! `W = Ω + σ ⊙ ε` and the KL term in closed form. All gradients are
//! analytic.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_adapter::prior_preconditioner;
use crate::model::{self, FeatureSet, ProbMatrix, Prototypes, WeightMatrix};
use crate::optim::{anneal_beta, cosine_lr, KlAnneal, SgdState};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `p(W) = Π_c N(w_c | t_c, σ_c² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mean: Array2<f64>,
    std: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Array2<f64>, std: Vec<f64>) -> Result<Self> {
        if std.len() != mean.nrows() {
            return Err(Error::shape(format!(
                "{} prior stds for {} classes",
                std.len(),
                mean.nrows()
            )));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("prior standard deviations must be positive and finite"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("prior mean contains non-finite values"));
        }
        Ok(Self { mean, std })
    }

    /// Same standard deviation for every class.
    pub fn from_prototypes(protos: &Prototypes, std: f64) -> Result<Self> {
        Self::new(protos.matrix().to_owned(), vec![std; protos.num_classes()])
    }

    /// Prior whose negative log-density matches the penalty `Σ_c λ_c ‖w_c − t_c‖²`
    /// up to a constant, i.e. variance `1/(2λ_c)` per dimension.
    pub fn from_lambdas(protos: &Prototypes, lambdas: &[f64]) -> Result<Self> {
        if lambdas.iter().any(|l| l.is_nan() || *l <= 0.0) {
            return Err(Error::param("lambdas must be positive to define a prior"));
        }
        Self::new(
            protos.matrix().to_owned(),
            lambdas.iter().map(|l| (2.0 * l).sqrt().recip()).collect(),
        )
    }

    pub fn mean(&self) -> ArrayView2<'_, f64> {
        self.mean.view()
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Penalty weights `λ_c = 1/(2σ_c²)`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.std.iter().map(|s| 0.5 / (s * s)).collect()
    }

    /// Normalised log-density `log p(W)`.
    pub fn log_density(&self, w: ArrayView2<'_, f64>) -> Result<f64> {
        self.check_shape(w)?;
        let d = self.mean.ncols() as f64;
        let mut total = 0.0;
        for ((w_row, t_row), &s) in w.rows().into_iter().zip(self.mean.rows()).zip(&self.std) {
            let sq: f64 = w_row.iter().zip(t_row).map(|(a, b)| (a - b) * (a - b)).sum();
            total -= sq / (2.0 * s * s) + d * (s.ln() + 0.5 * LN_2PI);
        }
        Ok(total)
    }

    /// `∇_W log p(W) = −(W − T) / σ²`, row-wise.
    pub fn log_density_gradient(&self, w: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_shape(w)?;
        let mut g = &self.mean - &w;
        for (mut row, &s) in g.rows_mut().into_iter().zip(&self.std) {
            row /= s * s;
        }
        Ok(g)
    }

    fn check_shape(&self, w: ArrayView2<'_, f64>) -> Result<()> {
        if w.dim() != self.mean.dim() {
            return Err(Error::shape(format!(
                "weights {:?} vs prior {:?}",
                w.dim(),
                self.mean.dim()
            )));
        }
        Ok(())
    }
}

/// `q(W) = Π_c N(w_c | Ω_c, σ_c² I)`, stored as `(Ω, log σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    mean: Array2<f64>,
    log_std: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(mean: Array2<f64>, log_std: Vec<f64>) -> Result<Self> {
        if log_std.len() != mean.nrows() {
            return Err(Error::shape(format!(
                "{} log-stds for {} classes",
                log_std.len(),
                mean.nrows()
            )));
        }
        if log_std.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("posterior parameters must be finite"));
        }
        Ok(Self { mean, log_std })
    }

    /// The training initialisation: `Ω = T`, `σ = σ_prior`.
    pub fn from_prior(prior: &GaussianPrior) -> Self {
        Self {
            mean: prior.mean.clone(),
            log_std: prior.std.iter().map(|s| s.ln()).collect(),
        }
    }

    pub fn mean(&self) -> ArrayView2<'_, f64> {
        self.mean.view()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    /// The posterior mean as a point estimate.
    pub fn mean_weights(&self) -> WeightMatrix {
        WeightMatrix::new(self.mean.clone()).expect("posterior mean is finite")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub s_mc_train: usize,
    pub s_mc_predict: usize,
    pub prior_std: f64,
    pub seed: u64,
    pub scale: f64,
    pub kl_anneal: KlAnneal,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            lr: 0.1,
            momentum: 0.9,
            s_mc_train: 3,
            s_mc_predict: 100,
            prior_std: 0.01,
            seed: 0,
            scale: 100.0,
            kl_anneal: KlAnneal::Linear,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if self.s_mc_train == 0 || self.s_mc_predict == 0 {
            return Err(Error::param("Monte Carlo sample counts must be at least 1"));
        }
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return Err(Error::param(format!(
                "prior_std must be positive, got {}",
                self.prior_std
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

fn check_pair(q: &VariationalPosterior, p: &GaussianPrior) -> Result<()> {
    if q.mean.dim() != p.mean.dim() {
        return Err(Error::shape(format!(
            "posterior {:?} vs prior {:?}",
            q.mean.dim(),
            p.mean.dim()
        )));
    }
    Ok(())
}

/// Closed-form `KL(q ‖ p)` for the per-class isotropic Gaussians.
pub fn kl_diag_gaussian(q: &VariationalPosterior, p: &GaussianPrior) -> Result<f64> {
    check_pair(q, p)?;
    Ok(kl_raw(q, p))
}

fn kl_raw(q: &VariationalPosterior, p: &GaussianPrior) -> f64 {
    let d = q.dim() as f64;
    let mut total = 0.0;
    for c in 0..q.num_classes() {
        let var_p = p.std[c] * p.std[c];
        let log_sq = q.log_std[c];
        let var_q = (2.0 * log_sq).exp();
        let sq: f64 = q
            .mean
            .row(c)
            .iter()
            .zip(p.mean.row(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += d * (p.std[c].ln() - log_sq) + (d * var_q + sq) / (2.0 * var_p) - 0.5 * d;
    }
    total
}

/// Gradients of the closed-form KL with respect to `Ω` and `log σ`.
fn kl_gradients(q: &VariationalPosterior, p: &GaussianPrior) -> (Array2<f64>, Vec<f64>) {
    let d = q.dim() as f64;
    let mut g_mean = &q.mean - &p.mean;
    let mut g_log_std = Vec::with_capacity(q.num_classes());
    for (c, mut row) in g_mean.rows_mut().into_iter().enumerate() {
        let var_p = p.std[c] * p.std[c];
        row /= var_p;
        let var_q = (2.0 * q.log_std[c]).exp();
        g_log_std.push(d * (var_q / var_p - 1.0));
    }
    (g_mean, g_log_std)
}

fn std_column(q: &VariationalPosterior) -> Array2<f64> {
    Array1::from(q.std()).insert_axis(Axis(1))
}

/// Reparameterised draw `w_{c,d} = Ω_{c,d} + σ_c ε_{c,d}`.
pub fn sample_weights(q: &VariationalPosterior, eps: &Array2<f64>) -> Result<WeightMatrix> {
    if eps.dim() != q.mean.dim() {
        return Err(Error::shape(format!(
            "noise {:?} vs posterior {:?}",
            eps.dim(),
            q.mean.dim()
        )));
    }
    WeightMatrix::new(&q.mean + &(eps * &std_column(q)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub mean: Array2<f64>,
    pub log_std: Vec<f64>,
}

/// Pieces of one minibatch neg-ELBO evaluation.
struct ElboEval {
    /// `(full_n / batch_n) ·` mean CE over the draws.
    data_term: f64,
    kl: f64,
    grad: ElboGradient,
}

impl ElboEval {
    fn value(&self, beta: f64) -> f64 {
        self.data_term + beta * self.kl
    }
}

fn check_elbo_inputs(
    q: &VariationalPosterior,
    prior: &GaussianPrior,
    batch: &FeatureSet,
    eps_list: &[Array2<f64>],
) -> Result<()> {
    check_pair(q, prior)?;
    if eps_list.is_empty() {
        return Err(Error::param("at least one Monte Carlo draw is required"));
    }
    if let Some(e) = eps_list.iter().find(|e| e.dim() != q.mean.dim()) {
        return Err(Error::shape(format!(
            "noise {:?} vs posterior {:?}",
            e.dim(),
            q.mean.dim()
        )));
    }
    if batch.dim() != q.dim() {
        return Err(Error::shape(format!(
            "features have dimension {}, posterior {}",
            batch.dim(),
            q.dim()
        )));
    }
    batch.check_labels(q.num_classes())
}

fn elbo_eval(
    q: &VariationalPosterior,
    prior: &GaussianPrior,
    batch: &FeatureSet,
    full_n: usize,
    eps_list: &[Array2<f64>],
    scale: f64,
) -> ElboEval {
    let (c, d) = q.mean.dim();
    let sigma = std_column(q);
    let s_mc = eps_list.len() as f64;
    let weight = if batch.is_empty() {
        0.0
    } else {
        full_n as f64 / batch.len() as f64
    };

    let mut ce_total = 0.0;
    let mut g_mean = Array2::<f64>::zeros((c, d));
    let mut g_log_std = vec![0.0; c];
    for eps in eps_list {
        let noise = eps * &sigma;
        let w = &q.mean + &noise;
        let (ce, g) = model::ce_value_and_grad(w.view(), batch.features(), batch.labels(), scale);
        ce_total += ce;
        // ∂w/∂log σ_c = σ_c ε_c, i.e. the noise row itself.
        for (k, (g_row, n_row)) in g.rows().into_iter().zip(noise.rows()).enumerate() {
            g_log_std[k] += g_row.dot(&n_row);
        }
        g_mean += &g;
    }
    let factor = weight / s_mc;
    g_mean *= factor;
    g_log_std.iter_mut().for_each(|v| *v *= factor);

    ElboEval {
        data_term: ce_total * factor,
        kl: kl_raw(q, prior),
        grad: ElboGradient {
            mean: g_mean,
            log_std: g_log_std,
        },
    }
}

/// Minibatch neg-ELBO: `(full_n / batch_n) · mean_s CE(batch; Ω + σ ε_s) + β KL(q ‖ p)`.
/// An empty batch contributes no data term.
pub fn neg_elbo(
    q: &VariationalPosterior,
    prior: &GaussianPrior,
    batch: &FeatureSet,
    full_n: usize,
    eps_list: &[Array2<f64>],
    beta: f64,
    scale: f64,
) -> Result<f64> {
    check_elbo_inputs(q, prior, batch, eps_list)?;
    Ok(neg_elbo_value(q, prior, batch, full_n, eps_list, beta, scale))
}

fn neg_elbo_value(
    q: &VariationalPosterior,
    prior: &GaussianPrior,
    batch: &FeatureSet,
    full_n: usize,
    eps_list: &[Array2<f64>],
    beta: f64,
    scale: f64,
) -> f64 {
    let weight = if batch.is_empty() {
        0.0
    } else {
        full_n as f64 / batch.len() as f64
    };
    let sigma = std_column(q);
    let mut ce_total = 0.0;
    for eps in eps_list {
        let w = &q.mean + &(eps * &sigma);
        let mut p = model::logits_raw(w.view(), batch.features(), scale);
        model::softmax_in_place(&mut p);
        ce_total += model::ce_sum_raw(p.view(), batch.labels());
    }
    weight * ce_total / eps_list.len() as f64 + beta * kl_raw(q, prior)
}

/// Pathwise gradient of [`neg_elbo`] at fixed draws, plus `β` times the
/// closed-form KL gradient.
pub fn neg_elbo_gradient(
    q: &VariationalPosterior,
    prior: &GaussianPrior,
    batch: &FeatureSet,
    full_n: usize,
    eps_list: &[Array2<f64>],
    beta: f64,
    scale: f64,
) -> Result<ElboGradient> {
    check_elbo_inputs(q, prior, batch, eps_list)?;
    let mut eval = elbo_eval(q, prior, batch, full_n, eps_list, scale);
    let (kl_mean, kl_log_std) = kl_gradients(q, prior);
    eval.grad.mean.scaled_add(beta, &kl_mean);
    for (g, k) in eval.grad.log_std.iter_mut().zip(kl_log_std) {
        *g += beta * k;
    }
    Ok(eval.grad)
}

/// `log p(Y | W, X) + log p(W)`, the unnormalised log posterior.
pub fn log_joint(w: &WeightMatrix, data: &FeatureSet, prior: &GaussianPrior, scale: f64) -> Result<f64> {
    let p = predict_point(w, data, scale)?;
    data.check_labels(w.num_classes())?;
    Ok(-model::ce_sum_raw(p.view(), data.labels()) + prior.log_density(w.view())?)
}

/// `∇_W [log p(Y | W, X) + log p(W)]`.
pub fn log_joint_gradient(
    w: &WeightMatrix,
    data: &FeatureSet,
    prior: &GaussianPrior,
    scale: f64,
) -> Result<Array2<f64>> {
    let ce = model::ce_gradient(w, data, scale)?;
    Ok(prior.log_density_gradient(w.view())? - ce)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayesFit {
    pub posterior: VariationalPosterior,
    /// Per-epoch mean over minibatches of the full (`β = 1`) neg-ELBO,
    /// evaluated at each step's pre-update parameters with one fixed set of
    /// monitor draws, so the curve reflects parameter changes and not fresh
    /// Monte Carlo noise.
    pub trajectory: Vec<f64>,
}

/// SGD-momentum training of `(Ω, log σ)`.
///
/// Starts at `Ω = T`, `σ = σ_prior`. Each step draws fresh noise (shared by
/// the whole minibatch within one Monte Carlo sample), evaluates the
/// β-annealed minibatch neg-ELBO and steps with a cosine-decayed learning
/// rate. The mean is parameterised as `Ω_c = T_c + s_c U_c` with
/// `s_c = min(σ_prior,c, 1/√N)`; the `log σ` block descends the objective
/// divided by N, since its KL curvature grows with D. While `σ_c > s_c` its
/// step is further damped by `(s_c/σ_c)²`: the likelihood curvature in
/// `log σ` grows like `σ²`, and an undamped first step from a wide prior
/// overshoots far below the optimum. The damping depends only on the
/// iterate, so stationary points are unchanged.
pub fn train_bayes(data: &FeatureSet, protos: &Prototypes, cfg: &BayesConfig) -> Result<BayesFit> {
    cfg.validate()?;
    protos.check_compatible(data)?;
    let prior = GaussianPrior::from_prototypes(protos, cfg.prior_std)?;
    let mut q = VariationalPosterior::from_prior(&prior);

    let (c, d) = q.mean.dim();
    let n = data.len();
    let precond = prior_preconditioner(prior.std.iter().copied(), n);
    let precond_col = Array1::from(precond).insert_axis(Axis(1));
    let mut u = Array2::<f64>::zeros((c, d));

    let mut rng = rng::seeded(cfg.seed);
    let per_epoch = rng::batches_per_epoch(n, cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut sgd = SgdState::new(&[c * d, c], cfg.momentum, total)?;
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let monitor_eps: Vec<Array2<f64>> = (0..cfg.s_mc_train)
        .map(|_| rng::standard_normal_matrix(&mut rng, c, d))
        .collect();

    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        let batches = rng::shuffled_batches(&mut rng, n, cfg.batch_size);
        let num_batches = batches.len();
        for batch_idx in batches {
            let batch = data.subset(&batch_idx);
            let eps_list: Vec<Array2<f64>> = (0..cfg.s_mc_train)
                .map(|_| rng::standard_normal_matrix(&mut rng, c, d))
                .collect();
            let step = sgd.step_count();
            let beta = anneal_beta(step, total, cfg.kl_anneal);

            let eval = elbo_eval(&q, &prior, &batch, n, &eps_list, cfg.scale);
            let monitored = neg_elbo_value(&q, &prior, &batch, n, &monitor_eps, 1.0, cfg.scale);
            if !(eval.value(beta).is_finite() && monitored.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            epoch_sum += monitored;

            let (kl_mean, kl_log_std) = kl_gradients(&q, &prior);
            let mut g_u = eval.grad.mean;
            g_u.scaled_add(beta, &kl_mean);
            g_u *= &precond_col;
            let g_log_std: Vec<f64> = eval
                .grad
                .log_std
                .iter()
                .zip(&kl_log_std)
                .zip(precond_col.iter().zip(&q.log_std))
                .map(|((g, k), (s, l))| (g + beta * k) / n as f64 * (s / l.exp()).powi(2).min(1.0))
                .collect();

            let lr = cosine_lr(cfg.lr, step, total)?;
            sgd.step(
                &mut [u.as_slice_mut().expect("standard layout"), &mut q.log_std],
                &[g_u.as_slice().expect("standard layout"), &g_log_std],
                lr,
            )?;
            q.mean = &prior.mean + &(&u * &precond_col);
            if !model::all_finite(&q.mean) || q.log_std.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
        }
        trajectory.push(epoch_sum / num_batches as f64);
    }

    Ok(BayesFit {
        posterior: q,
        trajectory,
    })
}

/// Monte Carlo predictive: the average of `s_mc` softmax outputs under
/// weights drawn from `q` with a stream seeded by `seed`.
pub fn predict_bayes(
    q: &VariationalPosterior,
    x: &FeatureSet,
    s_mc: usize,
    seed: u64,
    scale: f64,
) -> Result<ProbMatrix> {
    if s_mc == 0 {
        return Err(Error::param("at least one Monte Carlo draw is required"));
    }
    if x.dim() != q.dim() {
        return Err(Error::shape(format!(
            "features have dimension {}, posterior {}",
            x.dim(),
            q.dim()
        )));
    }
    let (c, d) = q.mean.dim();
    let sigma = std_column(q);
    let mut rng = rng::seeded(seed);
    let mut acc = Array2::<f64>::zeros((x.len(), c));
    for _ in 0..s_mc {
        let eps = rng::standard_normal_matrix(&mut rng, c, d);
        let w = &q.mean + &(eps * &sigma);
        let mut p = model::logits_raw(w.view(), x.features(), scale);
        model::softmax_in_place(&mut p);
        acc += &p;
    }
    acc /= s_mc as f64;
    Ok(ProbMatrix::from_raw(acc))
}

/// Deterministic prediction `softmax(scale · X Wᵀ)`.
pub fn predict_point(w: &WeightMatrix, x: &FeatureSet, scale: f64) -> Result<ProbMatrix> {
    model::softmax_rows(&model::logits(w, x, scale)?)
}
