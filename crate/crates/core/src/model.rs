//! Softmax linear probe over fixed embedding features.
//!
//! Weights are stored one row per class (`C×D`), features one row per sample
//! (`N×D`), so logits are `scale · X Wᵀ`.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-300;

/// Labelled embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    features: Array2<f64>,
    labels: Vec<usize>,
}

impl FeatureSet {
    /// Requires at least one row, at least one column and one label per row.
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::shape(format!(
                "feature matrix must be non-empty, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature matrix contains non-finite values"));
        }
        Ok(Self { features, labels })
    }

    /// Rows selected by `indices`, in that order. The result may be empty.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Scales every row to unit Euclidean norm. All-zero rows are left alone.
    pub fn normalize(&mut self) {
        normalize_rows(&mut self.features);
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= num_classes) {
            Some(row) => Err(Error::LabelOutOfRange {
                row,
                label: self.labels[row],
                classes: num_classes,
            }),
            None => Ok(()),
        }
    }
}

/// Class prototype vectors, one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    matrix: Array2<f64>,
    class_names: Option<Vec<String>>,
}

impl Prototypes {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() < 2 {
            return Err(Error::shape(format!("need at least 2 classes, got {}", matrix.nrows())));
        }
        if matrix.ncols() == 0 {
            return Err(Error::shape("prototype dimension is zero"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("prototype matrix contains non-finite values"));
        }
        Ok(Self {
            matrix,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes() {
            return Err(Error::shape(format!(
                "{} class names for {} prototypes",
                names.len(),
                self.num_classes()
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn normalize(&mut self) {
        normalize_rows(&mut self.matrix);
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Checks that `data` lives in the same embedding space and uses valid labels.
    pub fn check_compatible(&self, data: &FeatureSet) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::shape(format!(
                "features have dimension {}, prototypes {}",
                data.dim(),
                self.dim()
            )));
        }
        data.check_labels(self.num_classes())
    }
}

/// Adapter weights, one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("weight matrix contains non-finite values"));
        }
        Ok(Self(w))
    }

    pub fn from_prototypes(protos: &Prototypes) -> Self {
        Self(protos.matrix.clone())
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Row-stochastic class probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    pub(crate) fn from_raw(p: Array2<f64>) -> Self {
        Self(p)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    /// Row maxima.
    pub fn confidences(&self) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Row argmax; the lowest index wins ties.
    pub fn predictions(&self) -> Vec<usize> {
        self.0.rows().into_iter().map(|r| argmax(r.iter())).collect()
    }
}

fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub(crate) fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

fn check_dims(w: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<()> {
    if w.ncols() != x.ncols() {
        return Err(Error::shape(format!(
            "weights have dimension {}, features {}",
            w.ncols(),
            x.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn logits_raw(w: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, scale: f64) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    z *= scale;
    z
}

/// `scale · ⟨x_n, w_c⟩` for every sample and class.
pub fn logits(w: &WeightMatrix, x: &FeatureSet, scale: f64) -> Result<Array2<f64>> {
    check_dims(w.view(), x.features())?;
    Ok(logits_raw(w.view(), x.features(), scale))
}

/// Max-subtracted row softmax, in place. Assumes finite input.
pub(crate) fn softmax_in_place(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn softmax_rows(z: &Array2<f64>) -> Result<ProbMatrix> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("softmax input contains NaN or infinite values"));
    }
    let mut p = z.clone();
    softmax_in_place(&mut p);
    Ok(ProbMatrix(p))
}

pub(crate) fn ce_sum_raw(p: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(n, &y)| -p[[n, y]].max(PROB_FLOOR).ln())
        .sum()
}

/// Summed (not averaged) cross-entropy `Σ_n −log p[n, y_n]`.
pub fn cross_entropy(p: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    if p.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows but {} labels",
            p.nrows(),
            labels.len()
        )));
    }
    if let Some(row) = labels.iter().position(|&l| l >= p.num_classes()) {
        return Err(Error::LabelOutOfRange {
            row,
            label: labels[row],
            classes: p.num_classes(),
        });
    }
    Ok(ce_sum_raw(p.view(), labels))
}

/// Summed cross-entropy and its gradient with respect to the weights.
/// Labels must already be validated against `w.nrows()`.
pub(crate) fn ce_value_and_grad(
    w: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    scale: f64,
) -> (f64, Array2<f64>) {
    let mut p = logits_raw(w, x, scale);
    softmax_in_place(&mut p);
    let value = ce_sum_raw(p.view(), labels);
    // P - Y
    for (n, &y) in labels.iter().enumerate() {
        p[[n, y]] -= 1.0;
    }
    let mut grad = p.t().dot(&x);
    grad *= scale;
    (value, grad)
}

/// `∂CE/∂w = scale · (P − Y)ᵀ X`.
pub fn ce_gradient(w: &WeightMatrix, x: &FeatureSet, scale: f64) -> Result<Array2<f64>> {
    check_dims(w.view(), x.features())?;
    x.check_labels(w.num_classes())?;
    Ok(ce_value_and_grad(w.view(), x.features(), x.labels(), scale).1)
}

/// `Σ_c λ_c ‖w_c − t_c‖²` and its gradient `2λ_c (w_c − t_c)`.
pub(crate) fn weighted_sq_dist(w: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>, weights: &[f64]) -> (f64, Array2<f64>) {
    let mut diff = &w - &t;
    let mut value = 0.0;
    for (mut row, &lambda) in diff.rows_mut().into_iter().zip(weights) {
        value += lambda * row.dot(&row);
        row *= 2.0 * lambda;
    }
    (value, diff)
}

pub(crate) fn all_finite(m: &Array2<f64>) -> bool {
    let mut ok = true;
    Zip::from(m).for_each(|v| ok &= v.is_finite());
    ok
}
