//! BADF container, few-shot splits and the synthetic cluster generator.
//!
//! BADF layout, all integers and floats little-endian:
//!
//! | offset | type            | content                                  |
//! |--------|-----------------|------------------------------------------|
//! | 0      | `[u8; 4]`       | `"BADF"`                                 |
//! | 4      | `u32`           | version, always 1                        |
//! | 8      | `u32` ×3        | N, D, C                                  |
//! | 20     | `u8`            | flags (bit 0: rows already normalised)   |
//! | 21     | `[u8; 3]`       | padding                                  |
//! | 24     | `f32[N·D]`      | features, row-major                      |
//! |        | `u32[N]`        | labels                                   |
//! |        | `f32[C·D]`      | prototypes, row-major                    |
//! |        | sections…       | `[u8; 4]` tag, `u64` length, payload     |
//!
//! Known sections: `PST1` (variational posterior: `f32[C·D]` mean then
//! `f32[C]` log-std) and `MAP1` (point weights: `f32[C·D]`).

use std::path::Path;

use ndarray::Array2;
use rand::seq::index;

use crate::bayes_adapter::VariationalPosterior;
use crate::error::{Error, Result};
use crate::model::{FeatureSet, Prototypes, WeightMatrix};
use crate::rng::{self, standard_normal_matrix};

pub const MAGIC: [u8; 4] = *b"BADF";
pub const VERSION: u32 = 1;
pub const FLAG_NORMALIZED: u8 = 0b1;
pub const HEADER_LEN: usize = 24;
pub const TAG_POSTERIOR: [u8; 4] = *b"PST1";
pub const TAG_MAP_WEIGHTS: [u8; 4] = *b"MAP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: [u8; 4],
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BadfFile {
    pub features: FeatureSet,
    pub prototypes: Prototypes,
    /// Written as header flag bit 0.
    pub normalized: bool,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Normalise rows on load when the file does not say they already are.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

impl BadfFile {
    pub fn new(features: FeatureSet, prototypes: Prototypes, normalized: bool) -> Result<Self> {
        prototypes.check_compatible(&features)?;
        Ok(Self {
            features,
            prototypes,
            normalized,
            sections: Vec::new(),
        })
    }

    pub fn into_parts(self) -> (FeatureSet, Prototypes) {
        (self.features, self.prototypes)
    }

    pub fn section(&self, tag: [u8; 4]) -> Option<&Section> {
        self.sections.iter().find(|s| s.tag == tag)
    }

    /// Replaces any existing section with the same tag.
    pub fn set_section(&mut self, section: Section) {
        self.sections.retain(|s| s.tag != section.tag);
        self.sections.push(section);
    }

    pub fn set_posterior(&mut self, q: &VariationalPosterior) -> Result<()> {
        self.check_weight_shape(q.mean().dim())?;
        let mut payload = Vec::with_capacity(4 * (q.mean().len() + q.log_std().len()));
        put_f32s(&mut payload, q.mean().iter().copied());
        put_f32s(&mut payload, q.log_std().iter().copied());
        self.set_section(Section {
            tag: TAG_POSTERIOR,
            payload,
        });
        Ok(())
    }

    pub fn posterior(&self) -> Result<Option<VariationalPosterior>> {
        let Some(sec) = self.section(TAG_POSTERIOR) else {
            return Ok(None);
        };
        let (c, d) = (self.prototypes.num_classes(), self.prototypes.dim());
        let mut r = Reader::new(&sec.payload);
        let mean = Array2::from_shape_vec((c, d), r.f32s(c * d)?).expect("length checked");
        let log_std = r.f32s(c)?;
        r.finish()?;
        VariationalPosterior::new(mean, log_std).map(Some)
    }

    pub fn set_map_weights(&mut self, w: &WeightMatrix) -> Result<()> {
        self.check_weight_shape(w.view().dim())?;
        let mut payload = Vec::with_capacity(4 * w.view().len());
        put_f32s(&mut payload, w.view().iter().copied());
        self.set_section(Section {
            tag: TAG_MAP_WEIGHTS,
            payload,
        });
        Ok(())
    }

    pub fn map_weights(&self) -> Result<Option<WeightMatrix>> {
        let Some(sec) = self.section(TAG_MAP_WEIGHTS) else {
            return Ok(None);
        };
        let (c, d) = (self.prototypes.num_classes(), self.prototypes.dim());
        let mut r = Reader::new(&sec.payload);
        let w = Array2::from_shape_vec((c, d), r.f32s(c * d)?).expect("length checked");
        r.finish()?;
        WeightMatrix::new(w).map(Some)
    }

    fn check_weight_shape(&self, dim: (usize, usize)) -> Result<()> {
        let expected = (self.prototypes.num_classes(), self.prototypes.dim());
        if dim != expected {
            return Err(Error::shape(format!("weights {dim:?} vs prototypes {expected:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let x = self.features.features();
        let t = self.prototypes.matrix();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (x.len() + x.nrows() + t.len()));
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, x.nrows() as u32, x.ncols() as u32, t.nrows() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(if self.normalized { FLAG_NORMALIZED } else { 0 });
        out.extend_from_slice(&[0; 3]);
        put_f32s(&mut out, x.iter().copied());
        for &l in self.features.labels() {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        put_f32s(&mut out, t.iter().copied());
        for s in &self.sections {
            out.extend_from_slice(&s.tag);
            out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&s.payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], opts: LoadOptions) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let c = r.u32()? as usize;
        let flags = r.take(4)?[0];
        let normalized = flags & FLAG_NORMALIZED != 0;

        let features = r.f32s(n * d)?;
        let labels: Vec<usize> = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let protos = r.f32s(c * d)?;
        let mut sections = Vec::new();
        while !r.is_empty() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| Error::Truncated {
                needed: usize::MAX,
                found: r.remaining(),
            })?;
            sections.push(Section {
                tag,
                payload: r.take(len)?.to_vec(),
            });
        }

        if let Some(row) = labels.iter().position(|&l| l >= c) {
            return Err(Error::LabelOutOfRange {
                row,
                label: labels[row],
                classes: c,
            });
        }
        let mut features = FeatureSet::new(
            Array2::from_shape_vec((n, d), features).expect("length checked"),
            labels,
        )?;
        let mut prototypes = Prototypes::new(Array2::from_shape_vec((c, d), protos).expect("length checked"))?;
        if opts.normalize && !normalized {
            features.normalize();
            prototypes.normalize();
        }
        Ok(Self {
            features,
            prototypes,
            normalized,
            sections,
        })
    }
}

fn put_f32s(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::Truncated {
                needed: self.pos.saturating_add(len),
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(4).ok_or(Error::Truncated {
            needed: usize::MAX,
            found: self.buf.len(),
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if !self.is_empty() {
            return Err(Error::input(format!("{} trailing bytes in section", self.remaining())));
        }
        Ok(())
    }
}

pub fn save_badf(path: impl AsRef<Path>, file: &BadfFile) -> Result<()> {
    std::fs::write(path, file.to_bytes())?;
    Ok(())
}

pub fn load_badf(path: impl AsRef<Path>, opts: LoadOptions) -> Result<BadfFile> {
    let bytes = std::fs::read(path)?;
    BadfFile::from_bytes(&bytes, opts)
}

/// Support/query partition of a labelled set. There is no validation part.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FewShotSplit {
    /// Class-major, ascending within each class.
    pub support_indices: Vec<usize>,
    /// Ascending.
    pub query_indices: Vec<usize>,
    pub shots: usize,
    pub seed: u64,
}

/// Draws `shots` indices per class uniformly without replacement.
pub fn few_shot_sample(labels: &[usize], num_classes: usize, shots: usize, seed: u64) -> Result<FewShotSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                row: i,
                label: l,
                classes: num_classes,
            });
        }
        by_class[l].push(i);
    }
    let mut rng = rng::seeded(seed);
    let mut in_support = vec![false; labels.len()];
    let mut support_indices = Vec::with_capacity(shots * num_classes);
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < shots {
            return Err(Error::InsufficientClassSamples {
                class,
                available: members.len(),
                requested: shots,
            });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), shots)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        for &i in &picked {
            in_support[i] = true;
        }
        support_indices.extend(picked);
    }
    let query_indices = (0..labels.len()).filter(|&i| !in_support[i]).collect();
    Ok(FewShotSplit {
        support_indices,
        query_indices,
        shots,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub cluster_spread: f64,
    pub proto_noise: f64,
    pub seed: u64,
}

/// Unit-norm Gaussian clusters around random directions, with prototypes
/// that are noisy copies of the true class directions.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(FeatureSet, Prototypes)> {
    if cfg.classes < 2 {
        return Err(Error::param(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if cfg.dim == 0 || cfg.per_class == 0 {
        return Err(Error::param("dimension and samples per class must be positive"));
    }
    if !(cfg.cluster_spread >= 0.0 && cfg.proto_noise >= 0.0) {
        return Err(Error::param("spread and noise must be non-negative"));
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut means = standard_normal_matrix(&mut rng, cfg.classes, cfg.dim);
    crate::model::normalize_rows(&mut means);

    let n = cfg.classes * cfg.per_class;
    let mut features = standard_normal_matrix(&mut rng, n, cfg.dim) * cfg.cluster_spread;
    let mut labels = Vec::with_capacity(n);
    for c in 0..cfg.classes {
        for k in 0..cfg.per_class {
            let mut row = features.row_mut(c * cfg.per_class + k);
            row += &means.row(c);
            labels.push(c);
        }
    }
    let mut protos = standard_normal_matrix(&mut rng, cfg.classes, cfg.dim) * cfg.proto_noise + &means;

    crate::model::normalize_rows(&mut features);
    crate::model::normalize_rows(&mut protos);
    Ok((FeatureSet::new(features, labels)?, Prototypes::new(protos)?))
}
