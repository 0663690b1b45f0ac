//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes a JSON object of parameters (missing keys fall back to
//! defaults) and returns a JSON string, so the page needs no generated
//! TypeScript types. The plain-Rust functions behind them are public so they
//! can be tested natively.

use ndarray::Array2;
use protoadapt::bayes_adapter::{predict_bayes, predict_point, train_bayes, BayesConfig};
use protoadapt::data::{few_shot_sample, synth_generate, SynthConfig};
use protoadapt::map_adapter::{train_map, MapConfig};
use protoadapt::metrics::{calibration_bins, coverage_at, records_from_probs, CalibrationBin, CoverageReport};
use protoadapt::model::{FeatureSet, ProbMatrix, Prototypes, WeightMatrix};
use protoadapt::rng::{seeded, standard_normal_matrix};
use protoadapt::{Error, Result};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const METHODS: [&str; 3] = ["zeroshot", "map", "bayes"];

/// Shared training knobs exposed by both panels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    pub shots: usize,
    pub epochs: usize,
    pub prior_std: f64,
    pub mc_predict: usize,
    pub scale: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let b = BayesConfig::default();
        Self {
            shots: 4,
            epochs: 150,
            prior_std: b.prior_std,
            mc_predict: 50,
            scale: b.scale,
            seed: 0,
        }
    }
}

impl TrainParams {
    fn bayes(&self) -> BayesConfig {
        BayesConfig {
            epochs: self.epochs,
            s_mc_predict: self.mc_predict,
            prior_std: self.prior_std,
            seed: self.seed,
            scale: self.scale,
            ..BayesConfig::default()
        }
    }

    fn map(&self, num_classes: usize) -> MapConfig {
        let b = self.bayes();
        MapConfig {
            epochs: b.epochs,
            batch_size: b.batch_size,
            lr: b.lr,
            momentum: b.momentum,
            seed: b.seed,
            scale: b.scale,
            ..MapConfig::from_prior_std(num_classes, self.prior_std)
        }
    }
}

/// The three fitted models on one support set.
struct Trio {
    zeroshot: WeightMatrix,
    map: protoadapt::map_adapter::MapFit,
    bayes: protoadapt::bayes_adapter::BayesFit,
}

impl Trio {
    fn fit(support: &FeatureSet, protos: &Prototypes, p: &TrainParams) -> Result<Self> {
        Ok(Self {
            zeroshot: WeightMatrix::from_prototypes(protos),
            map: train_map(support, protos, &p.map(protos.num_classes()))?,
            bayes: train_bayes(support, protos, &p.bayes())?,
        })
    }

    fn predict(&self, x: &FeatureSet, p: &TrainParams) -> Result<[ProbMatrix; 3]> {
        Ok([
            predict_point(&self.zeroshot, x, p.scale)?,
            predict_point(&self.map.weights, x, p.scale)?,
            predict_bayes(&self.bayes.posterior, x, p.mc_predict, p.seed, p.scale)?,
        ])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareParams {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub noise: f64,
    pub bins: usize,
    pub levels: Vec<f64>,
    #[serde(flatten)]
    pub train: TrainParams,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 16,
            per_class: 200,
            spread: 0.4,
            noise: 0.2,
            bins: 10,
            levels: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
            train: TrainParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    pub accuracy: f64,
    pub ece: f64,
    pub aece: f64,
    pub mean_confidence: f64,
    pub bins: Vec<CalibrationBin>,
    pub coverage: Vec<CoverageReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareResult {
    pub support: usize,
    pub query: usize,
    pub methods: Vec<MethodSummary>,
    /// Per-epoch training objective of the MAP adapter.
    pub map_trajectory: Vec<f64>,
    /// Per-epoch negative ELBO of the Bayes adapter.
    pub bayes_trajectory: Vec<f64>,
    pub posterior_std: Vec<f64>,
}

/// Synthesises a dataset, draws a few-shot split and scores all three
/// methods on the query samples.
pub fn run_compare(p: &CompareParams) -> Result<CompareResult> {
    let (data, protos) = synth_generate(&SynthConfig {
        classes: p.classes,
        dim: p.dim,
        per_class: p.per_class,
        cluster_spread: p.spread,
        proto_noise: p.noise,
        seed: p.train.seed,
    })?;
    let split = few_shot_sample(data.labels(), p.classes, p.train.shots, p.train.seed)?;
    let support = data.subset(&split.support_indices);
    let query = data.subset(&split.query_indices);
    let trio = Trio::fit(&support, &protos, &p.train)?;

    let mut methods = Vec::with_capacity(3);
    for (name, probs) in METHODS.iter().zip(trio.predict(&query, &p.train)?) {
        let records = records_from_probs(&probs, query.labels())?;
        let cal = calibration_bins(&records, p.bins)?;
        let coverage = p
            .levels
            .iter()
            .map(|&l| coverage_at(&records, l, p.classes))
            .collect::<Result<Vec<_>>>()?;
        methods.push(MethodSummary {
            method: name,
            accuracy: cal.overall_accuracy,
            ece: cal.ece,
            aece: cal.aece,
            mean_confidence: cal.overall_mean_confidence,
            bins: cal.bins,
            coverage,
        });
    }
    Ok(CompareResult {
        support: support.len(),
        query: query.len(),
        methods,
        posterior_std: trio.bayes.posterior.std(),
        map_trajectory: trio.map.trajectory,
        bayes_trajectory: trio.bayes.trajectory,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileParams {
    pub classes: usize,
    pub per_class: usize,
    /// Angular spread of each class around its direction, in radians.
    pub spread: f64,
    /// Angular error of each prototype, in radians.
    pub noise: f64,
    /// Number of evaluation angles around the unit circle.
    pub points: usize,
    #[serde(flatten)]
    pub train: TrainParams,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 60,
            spread: 0.35,
            noise: 0.8,
            points: 360,
            // A low scale keeps the support margins soft enough that the
            // adapters have something to fit.
            train: TrainParams {
                shots: 8,
                epochs: 300,
                prior_std: 0.3,
                scale: 5.0,
                ..TrainParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub method: &'static str,
    pub confidence: Vec<f64>,
    pub predicted: Vec<usize>,
    /// Angle of each class weight (the posterior mean for bayes).
    pub class_angles: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileResult {
    pub angles: Vec<f64>,
    /// `[angle, label]` for each support sample.
    pub support: Vec<(f64, usize)>,
    pub curves: Vec<Curve>,
    pub posterior_std: Vec<f64>,
}

fn angle(x: f64, y: f64) -> f64 {
    y.atan2(x).rem_euclid(std::f64::consts::TAU)
}

fn unit(a: f64) -> [f64; 2] {
    [a.cos(), a.sin()]
}

/// Classes spaced evenly around the circle, samples jittered in angle and
/// prototypes rotated off their class direction.
fn circle_data(p: &ProfileParams) -> Result<(FeatureSet, Prototypes)> {
    let c = p.classes;
    let n = c * p.per_class;
    let mut rng = seeded(p.train.seed);
    let z = standard_normal_matrix(&mut rng, n + c, 1);
    let home = |k: usize| std::f64::consts::TAU * k as f64 / c as f64;
    let labels: Vec<usize> = (0..n).map(|i| i / p.per_class.max(1)).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| unit(home(labels[i]) + p.spread * z[[i, 0]])[j]);
    let t = Array2::from_shape_fn((c, 2), |(k, j)| unit(home(k) + p.noise * z[[n + k, 0]])[j]);
    Ok((FeatureSet::new(x, labels)?, Prototypes::new(t)?))
}

fn row_angles(w: ndarray::ArrayView2<'_, f64>) -> Vec<f64> {
    w.rows().into_iter().map(|r| angle(r[0], r[1])).collect()
}

/// Fits all three methods on a two-dimensional problem and sweeps the
/// predictive confidence around the unit circle, where every normalised
/// feature lives.
pub fn run_profile(p: &ProfileParams) -> Result<ProfileResult> {
    if p.points == 0 {
        return Err(Error::InvalidParameter("points must be at least 1".into()));
    }
    let (data, protos) = circle_data(p)?;
    let split = few_shot_sample(data.labels(), p.classes, p.train.shots, p.train.seed)?;
    let support = data.subset(&split.support_indices);
    let trio = Trio::fit(&support, &protos, &p.train)?;

    let angles: Vec<f64> = (0..p.points)
        .map(|i| std::f64::consts::TAU * i as f64 / p.points as f64)
        .collect();
    let grid = Array2::from_shape_fn(
        (p.points, 2),
        |(i, j)| if j == 0 { angles[i].cos() } else { angles[i].sin() },
    );
    let grid = FeatureSet::new(grid, vec![0; p.points])?;

    let weights = [
        trio.zeroshot.view(),
        trio.map.weights.view(),
        trio.bayes.posterior.mean(),
    ];
    let curves = METHODS
        .iter()
        .zip(trio.predict(&grid, &p.train)?)
        .zip(weights)
        .map(|((name, probs), w)| Curve {
            method: name,
            confidence: probs.confidences(),
            predicted: probs.predictions(),
            class_angles: row_angles(w),
        })
        .collect();

    let x = support.features();
    let support_points = x
        .rows()
        .into_iter()
        .zip(support.labels())
        .map(|(r, &l)| (angle(r[0], r[1]), l))
        .collect();
    Ok(ProfileResult {
        angles,
        support: support_points,
        curves,
        posterior_std: trio.bayes.posterior.std(),
    })
}

/// Parses `params` as a partial object over `P::default()`. Overlaying on
/// the serialised default keeps flattened sections on their outer defaults,
/// which `#[serde(default)]` would not.
fn parse_params<P>(params: &str) -> std::result::Result<P, String>
where
    P: Serialize + for<'de> Deserialize<'de> + Default,
{
    let serde_json::Value::Object(mut merged) = serde_json::to_value(P::default()).map_err(|e| e.to_string())? else {
        unreachable!("parameter structs serialise to objects")
    };
    if !params.trim().is_empty() {
        let given: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))?;
        for (k, v) in given {
            if !merged.contains_key(&k) {
                return Err(format!("bad parameters: unknown key `{k}`"));
            }
            merged.insert(k, v);
        }
    }
    serde_json::from_value(merged.into()).map_err(|e| format!("bad parameters: {e}"))
}

fn call<P, R>(params: &str, f: impl FnOnce(&P) -> Result<R>) -> std::result::Result<String, String>
where
    P: Serialize + for<'de> Deserialize<'de> + Default,
    R: Serialize,
{
    let p = parse_params::<P>(params)?;
    let r = f(&p).map_err(|e| e.to_string())?;
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

/// `compareSynthetic(json)`: see [`CompareParams`] and [`CompareResult`].
#[wasm_bindgen(js_name = compareSynthetic)]
pub fn compare_synthetic(params: &str) -> std::result::Result<String, JsValue> {
    call(params, run_compare).map_err(|e| JsValue::from_str(&e))
}

/// `confidenceProfile(json)`: see [`ProfileParams`] and [`ProfileResult`].
#[wasm_bindgen(js_name = confidenceProfile)]
pub fn confidence_profile(params: &str) -> std::result::Result<String, JsValue> {
    call(params, run_profile).map_err(|e| JsValue::from_str(&e))
}
