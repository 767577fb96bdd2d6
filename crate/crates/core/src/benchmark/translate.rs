//! Oracle translator standing in for learned cross-domain image generators.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::normalized;
use crate::error::{Error, Result};
use crate::rng::{mix, stream, Rng};

use super::{Domain, DomainSample, World};

/// Synthetic samples get `SYNTHETIC_ID_OFFSET + source id` as instance id.
pub const SYNTHETIC_ID_OFFSET: u64 = 1 << 40;

const TRANSLATION_TAG: u64 = 0x7472_616e_736c;

/// Dials of the oracle translator.
///
/// `p_keep = 1, edit_strength = 1, noise = 0` is the ideal translator: the
/// output is exactly the target-domain rendering of the source latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationConfig {
    /// Probability that the translation keeps the source's class.
    pub p_keep: f64,
    /// Blend weight towards the target rendering; 0 leaves the source as is.
    pub edit_strength: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationPreset::Ideal.config(0)
    }
}

impl TranslationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_keep) {
            return Err(Error::Config("translation p_keep must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.edit_strength) {
            return Err(Error::Config("translation edit_strength must lie in [0, 1]".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("translation noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Named dial settings, loosely analogous to families of real translators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslationPreset {
    Ideal,
    HighFidelity,
    /// Small edits that stay close to the source.
    LowEdit,
    /// Full edits with frequent label corruption.
    Noisy,
}

impl TranslationPreset {
    pub fn config(self, seed: u64) -> TranslationConfig {
        let (p_keep, edit_strength) = match self {
            TranslationPreset::Ideal => (1.0, 1.0),
            TranslationPreset::HighFidelity => (0.9, 0.9),
            TranslationPreset::LowEdit => (0.95, 0.3),
            TranslationPreset::Noisy => (0.6, 1.0),
        };
        TranslationConfig {
            p_keep,
            edit_strength,
            noise: 0.0,
            seed,
        }
    }
}

impl fmt::Display for TranslationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TranslationPreset::Ideal => "ideal",
            TranslationPreset::HighFidelity => "high-fidelity",
            TranslationPreset::LowEdit => "low-edit",
            TranslationPreset::Noisy => "noisy",
        })
    }
}

impl FromStr for TranslationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(TranslationPreset::Ideal),
            "high-fidelity" => Ok(TranslationPreset::HighFidelity),
            "low-edit" => Ok(TranslationPreset::LowEdit),
            "noisy" => Ok(TranslationPreset::Noisy),
            other => Err(Error::Config(format!("unknown translation preset `{other}`"))),
        }
    }
}

/// Translates a real sample into `target`.
///
/// The stream is consumed identically whatever the dial values, so varying
/// one dial with a fixed stream changes nothing else.
pub fn translate(
    sample: &DomainSample,
    target: Domain,
    cfg: &TranslationConfig,
    world: &World,
    rng: &mut Rng,
) -> Result<DomainSample> {
    if sample.is_synthetic {
        return Err(Error::Contract(format!(
            "sample {} is already synthetic",
            sample.instance_id
        )));
    }
    if target == sample.domain {
        return Err(Error::Contract(format!(
            "sample {} already lives in domain {target}",
            sample.instance_id
        )));
    }
    let latent = sample.latent.as_ref().ok_or_else(|| {
        Error::Contract(format!("sample {} has no latent", sample.instance_id))
    })?;

    let c = world.num_classes() as u32;
    let keep = rng.random::<f64>() < cfg.p_keep;
    let offset = rng.random_range(1..c);
    let corrupted_class = (sample.class_id + offset) % c;
    let corrupted_latent = world.sample_latent(corrupted_class, rng);
    let noise: Vec<f64> = (0..sample.vec.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    let (class_id, content) = if keep {
        (sample.class_id, latent.clone())
    } else {
        (corrupted_class, corrupted_latent)
    };
    let rendered = world.render(target, &content)?;
    let alpha = cfg.edit_strength;
    let blended: Vec<f64> = sample
        .vec
        .iter()
        .zip(&rendered)
        .zip(&noise)
        .map(|((s, r), e)| (1.0 - alpha) * s + alpha * r + cfg.noise * e)
        .collect();
    let vec = if alpha == 0.0 && cfg.noise == 0.0 {
        sample.vec.clone()
    } else if alpha == 1.0 && cfg.noise == 0.0 {
        rendered
    } else {
        normalized(&blended).ok_or_else(|| {
            Error::Numeric(format!(
                "translation of sample {} collapsed to zero",
                sample.instance_id
            ))
        })?
    };

    Ok(DomainSample {
        vec,
        domain: target,
        class_id,
        instance_id: SYNTHETIC_ID_OFFSET + sample.instance_id,
        latent: Some(content),
        is_synthetic: true,
        pair_id: Some(sample.instance_id),
        source_class_id: Some(sample.class_id),
    })
}

/// One translation per real sample, each drawn from the stream keyed by
/// `(cfg.seed, instance_id)`.
pub fn generate_synthetic_set(
    real: &[DomainSample],
    target: Domain,
    cfg: &TranslationConfig,
    world: &World,
) -> Result<Vec<DomainSample>> {
    cfg.validate()?;
    let seed = mix(cfg.seed, TRANSLATION_TAG);
    real.iter()
        .map(|s| translate(s, target, cfg, world, &mut stream(seed, s.instance_id)))
        .collect()
}
