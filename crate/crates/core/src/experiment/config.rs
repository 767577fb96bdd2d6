use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkConfig, SplitSpec, TranslationConfig, TranslationPreset};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::trainer::{Objective, TrainConfig};

/// Training recipe, which fixes the active loss terms and whether
/// translated data is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The freshly initialized encoder, no training.
    ImagenetInitOnly,
    /// In-domain instance discrimination only.
    InDomainId,
    /// Instance discrimination plus cross-domain entropy on real data.
    Cds,
    /// The cds objective on real plus translated pools, pair loss off.
    SyncdrNoPpp,
    /// The cds objective on real plus translated pools with the pair loss.
    Syncdr,
    /// Similarity distillation from normalized latents.
    Distill,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ImagenetInitOnly,
        Method::InDomainId,
        Method::Cds,
        Method::SyncdrNoPpp,
        Method::Syncdr,
        Method::Distill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ImagenetInitOnly => "imagenet-init-only",
            Method::InDomainId => "in-domain-id",
            Method::Cds => "cds",
            Method::SyncdrNoPpp => "syncdr-no-ppp",
            Method::Syncdr => "syncdr",
            Method::Distill => "distill",
        }
    }

    pub fn uses_synthetic(self) -> bool {
        matches!(self, Method::Syncdr | Method::SyncdrNoPpp)
    }

    pub fn trains(self) -> bool {
        self != Method::ImagenetInitOnly
    }

    /// The objective implied by this method, given the configured weights.
    pub fn objective(self, weights: &LossWeights) -> Objective {
        match self {
            Method::Distill => Objective::Distill,
            Method::InDomainId => Objective::Contrastive(LossWeights {
                lambda_cdm: 0.0,
                ppp: false,
                ..weights.clone()
            }),
            Method::Cds | Method::SyncdrNoPpp | Method::ImagenetInitOnly => {
                Objective::Contrastive(LossWeights {
                    ppp: false,
                    ..weights.clone()
                })
            }
            Method::Syncdr => Objective::Contrastive(LossWeights {
                ppp: true,
                ..weights.clone()
            }),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Translation dials. A preset provides starting values that explicit keys
/// override. The seed comes from the run seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<TranslationPreset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_keep: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit_strength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl TranslationSection {
    pub fn resolve(&self, seed: u64) -> TranslationConfig {
        let mut cfg = self.preset.unwrap_or(TranslationPreset::Ideal).config(seed);
        if let Some(p) = self.p_keep {
            cfg.p_keep = p;
        }
        if let Some(a) = self.edit_strength {
            cfg.edit_strength = a;
        }
        if let Some(n) = self.noise {
            cfg.noise = n;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            hidden_dims: d.hidden_dims,
            output_dim: d.output_dim,
        }
    }
}

/// Optimiser settings; the batch-order seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_k: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            batch_size: d.batch_size,
            epochs: d.epochs,
            eval_k: d.eval_k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![1, 5, 15] }
    }
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PKeep,
    EditStrength,
    OverlapFrac,
    LambdaCdm,
    TauPpp,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PKeep => "p_keep",
            SweepParam::EditStrength => "edit_strength",
            SweepParam::OverlapFrac => "overlap_frac",
            SweepParam::LambdaCdm => "lambda_cdm",
            SweepParam::TauPpp => "tau_ppp",
        }
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            SweepParam::PKeep | SweepParam::EditStrength | SweepParam::OverlapFrac => (0.0..=1.0).contains(&v),
            SweepParam::LambdaCdm => v >= 0.0 && v.is_finite(),
            SweepParam::TauPpp => v > 0.0 && v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("sweep value {v} is out of range for {}", self.name())))
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::PKeep,
            SweepParam::EditStrength,
            SweepParam::OverlapFrac,
            SweepParam::LambdaCdm,
            SweepParam::TauPpp,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<SweepParam>,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<SweepParam> {
        let param = self
            .parameter
            .ok_or_else(|| Error::Config("sweep.parameter is not set".into()))?;
        if self.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        for &v in &self.values {
            param.check(v)?;
        }
        Ok(param)
    }
}

/// Everything a run needs. Dotted keys map onto sections, e.g.
/// `train.epochs = 15` or `benchmark.domain_gap = 0.8`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Label of the column this run fills in reports.
    pub scenario: String,
    /// Each seed drives encoder init, translations and batch order.
    pub seeds: Vec<u64>,
    /// Also train with the two category sets exchanged and average the two
    /// results per seed.
    pub swap_average: bool,
    pub out: PathBuf,
    /// Directory written by `gen-data`; when set, real samples are loaded
    /// from it instead of generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub split: SplitSpec,
    pub translation: TranslationSection,
    pub losses: LossWeights,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Syncdr,
            scenario: "default".into(),
            seeds: vec![0, 1, 2],
            swap_average: true,
            out: PathBuf::from("results"),
            data: None,
            benchmark: BenchmarkConfig::default(),
            split: SplitSpec::default(),
            translation: TranslationSection::default(),
            losses: LossWeights::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat `section.key = value` lines sorted by key, readable
    /// back by [`ExperimentConfig::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        let value = toml::Table::try_from(self).expect("config serializes");
        let mut out = String::new();
        flatten_into(&mut out, "", &value);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.scenario.is_empty() || self.scenario.contains([',', '\n', '\r']) {
            return Err(Error::Config("scenario must be nonempty without commas or newlines".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be nonempty and positive".into()));
        }
        self.benchmark.validate()?;
        self.split.validate()?;
        self.translation.resolve(0).validate()?;
        self.losses.validate()?;
        self.encoder_config(0).validate()?;
        self.train_config(0).validate()?;
        if self.sweep.parameter.is_some() || !self.sweep.values.is_empty() {
            self.sweep.validate()?;
        }
        Ok(())
    }

    pub fn encoder_config(&self, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.benchmark.ambient_dim,
            hidden_dims: self.encoder.hidden_dims.clone(),
            output_dim: self.encoder.output_dim,
            init_seed: seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            train_seed: seed,
            eval_k: self.train.eval_k,
        }
    }

    /// Copy with one swept parameter set to `value`.
    pub fn with_param(&self, param: SweepParam, value: f64) -> ExperimentConfig {
        let mut cfg = self.clone();
        match param {
            SweepParam::PKeep => cfg.translation.p_keep = Some(value),
            SweepParam::EditStrength => cfg.translation.edit_strength = Some(value),
            SweepParam::OverlapFrac => cfg.split.overlap_frac = value,
            SweepParam::LambdaCdm => cfg.losses.lambda_cdm = value,
            SweepParam::TauPpp => cfg.losses.tau_ppp = value,
        }
        cfg
    }
}

fn flatten_into(out: &mut String, prefix: &str, table: &toml::Table) {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            toml::Value::Table(t) => flatten_into(out, &path, t),
            v => out.push_str(&format!("{path} = {v}\n")),
        }
    }
}
