use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use protoadapt::bayes_adapter::{predict_bayes, predict_point, train_bayes, VariationalPosterior};
use protoadapt::data::{
    few_shot_sample, load_badf, save_badf, synth_generate, BadfFile, FewShotSplit, LoadOptions, SynthConfig,
};
use protoadapt::map_adapter::train_map;
use protoadapt::metrics::records_from_probs;
use protoadapt::model::{FeatureSet, ProbMatrix, Prototypes, WeightMatrix};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, CompareArgs, EvalArgs, SplitArg, SynthArgs, TrainArgs};
use crate::config::{Format, Method, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{self, DataSummary, MethodReport, Report, SplitKind, SplitSummary, REPORT_VERSION};

pub const MANIFEST_VERSION: u32 = 1;

/// Trained state of one method.
#[derive(Debug, Clone)]
pub enum Fitted {
    Zeroshot(WeightMatrix),
    Map {
        weights: WeightMatrix,
        trajectory: Vec<f64>,
    },
    Bayes {
        posterior: VariationalPosterior,
        trajectory: Vec<f64>,
    },
}

impl Fitted {
    pub fn method(&self) -> Method {
        match self {
            Fitted::Zeroshot(_) => Method::Zeroshot,
            Fitted::Map { .. } => Method::Map,
            Fitted::Bayes { .. } => Method::Bayes,
        }
    }

    pub fn trajectory(&self) -> &[f64] {
        match self {
            Fitted::Zeroshot(_) => &[],
            Fitted::Map { trajectory, .. } | Fitted::Bayes { trajectory, .. } => trajectory,
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            Fitted::Zeroshot(w) | Fitted::Map { weights: w, .. } => w.num_classes(),
            Fitted::Bayes { posterior, .. } => posterior.num_classes(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Fitted::Zeroshot(w) | Fitted::Map { weights: w, .. } => w.dim(),
            Fitted::Bayes { posterior, .. } => posterior.dim(),
        }
    }

    pub fn predict(&self, x: &FeatureSet, cfg: &RunConfig) -> CliResult<ProbMatrix> {
        Ok(match self {
            Fitted::Zeroshot(w) | Fitted::Map { weights: w, .. } => predict_point(w, x, cfg.scale)?,
            Fitted::Bayes { posterior, .. } => predict_bayes(posterior, x, cfg.mc_predict, cfg.seed, cfg.scale)?,
        })
    }

    /// BADF checkpoint: the support set and prototypes, plus a weight section
    /// for trained methods.
    pub fn checkpoint(&self, support: &FeatureSet, protos: &Prototypes) -> CliResult<BadfFile> {
        let mut file = BadfFile::new(support.clone(), protos.clone(), true)?;
        match self {
            Fitted::Zeroshot(_) => {}
            Fitted::Map { weights, .. } => file.set_map_weights(weights)?,
            Fitted::Bayes { posterior, .. } => file.set_posterior(posterior)?,
        }
        Ok(file)
    }

    /// Reads the weights stored in a checkpoint; no weight section means zero-shot.
    pub fn from_checkpoint(file: &BadfFile) -> CliResult<Self> {
        if let Some(q) = file.posterior()? {
            return Ok(Fitted::Bayes {
                posterior: q,
                trajectory: Vec::new(),
            });
        }
        if let Some(w) = file.map_weights()? {
            return Ok(Fitted::Map {
                weights: w,
                trajectory: Vec::new(),
            });
        }
        Ok(Fitted::Zeroshot(WeightMatrix::from_prototypes(&file.prototypes)))
    }
}

pub fn fit(method: Method, support: &FeatureSet, protos: &Prototypes, cfg: &RunConfig) -> CliResult<Fitted> {
    Ok(match method {
        Method::Zeroshot => Fitted::Zeroshot(WeightMatrix::from_prototypes(protos)),
        Method::Map => {
            let f = train_map(support, protos, &cfg.map_config(protos.num_classes()))?;
            Fitted::Map {
                weights: f.weights,
                trajectory: f.trajectory,
            }
        }
        Method::Bayes => {
            let f = train_bayes(support, protos, &cfg.bayes_config())?;
            Fitted::Bayes {
                posterior: f.posterior,
                trajectory: f.trajectory,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplit {
    pub shots: usize,
    pub seed: u64,
    pub support: usize,
    pub query: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub data: DataSummary,
    pub split: ManifestSplit,
    pub checkpoint: String,
    /// Per-epoch training objective; empty for zero-shot.
    pub trajectory: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a, stdout),
        Command::Compare(a) => compare(&a, stdout),
    }
}

fn load(path: &Path) -> CliResult<BadfFile> {
    load_badf(path, LoadOptions::default()).map_err(|e| CliError::at(path, e))
}

fn save(path: &Path, file: &BadfFile) -> CliResult<()> {
    save_badf(path, file).map_err(|e| CliError::at(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn summary(path: &Path, file: &BadfFile) -> DataSummary {
    DataSummary {
        path: path.display().to_string(),
        samples: file.features.len(),
        dim: file.features.dim(),
        classes: file.prototypes.num_classes(),
    }
}

fn split(file: &BadfFile, cfg: &RunConfig) -> CliResult<FewShotSplit> {
    Ok(few_shot_sample(
        file.features.labels(),
        file.prototypes.num_classes(),
        cfg.shots,
        cfg.seed,
    )?)
}

fn elapsed(start: Instant, cfg: &RunConfig) -> Option<u64> {
    (!cfg.deterministic).then(|| start.elapsed().as_millis() as u64)
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let (features, protos) = synth_generate(&SynthConfig {
        classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        cluster_spread: a.spread,
        proto_noise: a.noise,
        seed: a.seed,
    })?;
    save(&a.out, &BadfFile::new(features, protos, true)?)
}

fn manifest_json(m: &Manifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serialises");
    s.push('\n');
    s
}

struct Outputs {
    checkpoint: PathBuf,
    /// What the manifest records as the checkpoint location.
    checkpoint_name: String,
    manifest: PathBuf,
}

/// Trains one method and writes its checkpoint and manifest.
fn train_one(
    method: Method,
    data_path: &Path,
    file: &BadfFile,
    sp: &FewShotSplit,
    cfg: &RunConfig,
    out: Outputs,
) -> CliResult<Fitted> {
    let start = Instant::now();
    let support = file.features.subset(&sp.support_indices);
    let fitted = fit(method, &support, &file.prototypes, cfg)?;
    save(&out.checkpoint, &fitted.checkpoint(&support, &file.prototypes)?)?;
    let m = Manifest {
        version: MANIFEST_VERSION,
        config: RunConfig { method, ..cfg.clone() },
        data: summary(data_path, file),
        split: ManifestSplit {
            shots: sp.shots,
            seed: sp.seed,
            support: sp.support_indices.len(),
            query: sp.query_indices.len(),
        },
        checkpoint: out.checkpoint_name,
        trajectory: fitted.trajectory().to_vec(),
        elapsed_ms: elapsed(start, cfg),
    };
    write_text(&out.manifest, &manifest_json(&m))?;
    Ok(fitted)
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let (cfg, _) = a.run.resolve(a.method)?;
    let file = load(&a.data)?;
    let sp = split(&file, &cfg)?;
    let manifest = a.manifest.clone().unwrap_or_else(|| a.out.with_extension("json"));
    let out = Outputs {
        checkpoint: a.out.clone(),
        checkpoint_name: a.out.display().to_string(),
        manifest,
    };
    train_one(cfg.method, &a.data, &file, &sp, &cfg, out)?;
    Ok(())
}

fn render(report: &Report, format: Format, wide: bool) -> String {
    match format {
        Format::Json => report::to_json(report),
        Format::Csv if wide => report::to_wide_csv(report),
        Format::Csv => report::to_long_csv(report),
    }
}

fn eval(a: &EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let (mut cfg, requested) = a.run.resolve(a.method)?;
    let file = load(&a.data)?;
    let fitted = match &a.checkpoint {
        Some(path) => {
            let f = Fitted::from_checkpoint(&load(path)?).map_err(|e| match e {
                CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
                other => other,
            })?;
            if let Some(m) = requested.filter(|&m| m != f.method()) {
                return Err(CliError::Data(format!(
                    "{} holds {} weights, but method {m} was requested",
                    path.display(),
                    f.method()
                )));
            }
            f
        }
        None => match requested.unwrap_or(Method::Zeroshot) {
            Method::Zeroshot => Fitted::Zeroshot(WeightMatrix::from_prototypes(&file.prototypes)),
            m => return Err(CliError::Usage(format!("evaluating {m} needs --checkpoint"))),
        },
    };
    cfg.method = fitted.method();
    let (c, d) = (file.prototypes.num_classes(), file.features.dim());
    if (fitted.num_classes(), fitted.dim()) != (c, d) {
        return Err(CliError::Data(format!(
            "checkpoint is {}x{} but the data has {c} classes of dimension {d}",
            fitted.num_classes(),
            fitted.dim()
        )));
    }

    let (x, split_summary) = match a.split {
        SplitArg::All => (
            file.features.clone(),
            SplitSummary {
                kind: SplitKind::All,
                shots: None,
                seed: cfg.seed,
                support: 0,
                evaluated: file.features.len(),
            },
        ),
        SplitArg::Query => {
            let sp = split(&file, &cfg)?;
            (
                file.features.subset(&sp.query_indices),
                SplitSummary {
                    kind: SplitKind::Query,
                    shots: Some(sp.shots),
                    seed: sp.seed,
                    support: sp.support_indices.len(),
                    evaluated: sp.query_indices.len(),
                },
            )
        }
    };
    let probs = fitted.predict(&x, &cfg)?;
    let records = records_from_probs(&probs, x.labels())?;
    let method_report = MethodReport::from_records(cfg.method, &records, &cfg.levels, cfg.bins, c)?;
    let report = Report {
        version: REPORT_VERSION,
        command: "eval".into(),
        data: summary(&a.data, &file),
        split: split_summary,
        config: cfg.clone(),
        methods: vec![method_report],
        elapsed_ms: elapsed(start, &cfg),
    };
    let text = render(&report, cfg.format, false);
    match &a.out {
        Some(path) => write_text(path, &text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn compare(a: &CompareArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let (cfg, _) = a.run.resolve(None)?;
    let file = load(&a.data)?;
    let sp = split(&file, &cfg)?;
    let support = file.features.subset(&sp.support_indices);
    let query = file.features.subset(&sp.query_indices);
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }

    let mut methods = Vec::with_capacity(3);
    for method in Method::ALL {
        let fitted = match &a.out_dir {
            Some(dir) => {
                let name = format!("{method}.badf");
                let out = Outputs {
                    checkpoint: dir.join(&name),
                    checkpoint_name: name,
                    manifest: dir.join(format!("{method}.json")),
                };
                train_one(method, &a.data, &file, &sp, &cfg, out)?
            }
            None => fit(method, &support, &file.prototypes, &cfg)?,
        };
        let probs = fitted.predict(&query, &cfg)?;
        let records = records_from_probs(&probs, query.labels())?;
        methods.push(MethodReport::from_records(
            method,
            &records,
            &cfg.levels,
            cfg.bins,
            file.prototypes.num_classes(),
        )?);
    }

    let report = Report {
        version: REPORT_VERSION,
        command: "compare".into(),
        data: summary(&a.data, &file),
        split: SplitSummary {
            kind: SplitKind::Query,
            shots: Some(sp.shots),
            seed: sp.seed,
            support: sp.support_indices.len(),
            evaluated: sp.query_indices.len(),
        },
        config: cfg.clone(),
        methods,
        elapsed_ms: elapsed(start, &cfg),
    };
    let text = render(&report, cfg.format, true);
    if let Some(dir) = &a.out_dir {
        let ext = match cfg.format {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        write_text(&dir.join(format!("report.{ext}")), &text)?;
    }
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))
}
