//! Procedurally generated two-domain benchmark.
//!
//! Each class owns a prototype on the latent unit sphere. A sample's latent
//! is a noisy, renormalized copy of its prototype, and each domain renders
//! latents into observables through its own affine map followed by `tanh`
//! and normalization. The domain gap interpolates domain B's map between a
//! copy of domain A's map and an independent random map.

mod io;
mod split;
mod translate;

use std::fmt;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::normalized;
use crate::error::{Error, Result};
use crate::rng::stream;

pub use io::{export_dataset, import_manifest, import_samples, import_split, Manifest, SampleRecord, SplitTag, MANIFEST_FILE, SAMPLES_FILE};
pub use split::{category_counts, make_split, split_categories, CategorySplit, DataSplit, SplitSpec};
pub use translate::{
    generate_synthetic_set, translate, TranslationConfig, TranslationPreset, SYNTHETIC_ID_OFFSET,
};

const PROTOTYPE_STREAM: u64 = 1;
const MAP_A_STREAM: u64 = 2;
const MAP_B_STREAM: u64 = 3;
const SAMPLE_STREAM_BASE: u64 = 1 << 20;

/// Standard deviation of the domain-map bias entries.
const BIAS_STD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }

    fn index(self) -> u64 {
        match self {
            Domain::A => 0,
            Domain::B => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

/// Generator settings.
///
/// Defaults: 20 classes, 50 samples per class per domain, latent dim 8,
/// ambient dim 32, within-class std 0.15 and domain gap 0.8. With these,
/// nearest-class-mean accuracy of domain-B observables against domain-B
/// class means is above 0.9.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub num_classes: usize,
    pub samples_per_class_per_domain: usize,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub within_class_std: f64,
    pub domain_gap: f64,
    pub master_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            num_classes: 20,
            samples_per_class_per_domain: 50,
            latent_dim: 8,
            ambient_dim: 32,
            within_class_std: 0.15,
            domain_gap: 0.8,
            master_seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.samples_per_class_per_domain == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "samples_per_class_per_domain and latent_dim must be positive".into(),
            ));
        }
        if self.latent_dim > self.ambient_dim {
            return Err(Error::Config(format!(
                "latent_dim {} exceeds ambient_dim {}",
                self.latent_dim, self.ambient_dim
            )));
        }
        if !(self.within_class_std >= 0.0 && self.within_class_std.is_finite()) {
            return Err(Error::Config("within_class_std must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.domain_gap) {
            return Err(Error::Config("domain_gap must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSample {
    /// Unit-norm observable.
    pub vec: Vec<f64>,
    pub domain: Domain,
    /// Class whose content the sample actually carries.
    pub class_id: u32,
    pub instance_id: u64,
    /// Generating latent; oracle-only and absent after a non-oracle import.
    pub latent: Option<Vec<f64>>,
    pub is_synthetic: bool,
    /// Real source of a synthetic sample.
    pub pair_id: Option<u64>,
    /// Class of the real source of a synthetic sample.
    pub source_class_id: Option<u32>,
}

impl DomainSample {
    /// The label the pipeline assigns to this sample: its own class for real
    /// samples, and the source's class for translations (which is what a
    /// label-preserving translator promises).
    pub fn nominal_label(&self) -> u32 {
        self.source_class_id.unwrap_or(self.class_id)
    }
}

/// Affine map `latent -> ambient`, stored row-major as `ambient × latent`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMap {
    weight: Vec<f64>,
    bias: Vec<f64>,
    latent_dim: usize,
}

impl DomainMap {
    fn random(rng: &mut crate::rng::Rng, latent_dim: usize, ambient_dim: usize) -> Self {
        let weight = (0..ambient_dim * latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias = (0..ambient_dim)
            .map(|_| BIAS_STD * rng.sample::<f64, _>(StandardNormal))
            .collect();
        DomainMap {
            weight,
            bias,
            latent_dim,
        }
    }

    fn blend(a: &DomainMap, b: &DomainMap, gap: f64) -> Self {
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(u, v)| (1.0 - gap) * u + gap * v).collect()
        };
        DomainMap {
            weight: mix(&a.weight, &b.weight),
            bias: mix(&a.bias, &b.bias),
            latent_dim: a.latent_dim,
        }
    }

    /// `normalize(tanh(W z + b))`.
    pub fn render(&self, latent: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(latent.len(), self.latent_dim);
        let pre: Vec<f64> = self
            .weight
            .chunks_exact(self.latent_dim)
            .zip(&self.bias)
            .map(|(w, b)| (crate::autodiff::dot(w, latent) + b).tanh())
            .collect();
        normalized(&pre).ok_or_else(|| Error::Numeric("rendering produced a zero vector".into()))
    }
}

/// The hidden generative process: class prototypes and domain maps.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub prototypes: Vec<Vec<f64>>,
    map_a: DomainMap,
    map_b: DomainMap,
    within_class_std: f64,
}

impl World {
    pub fn new(config: &BenchmarkConfig) -> Result<Self> {
        config.validate()?;
        let (l, d) = (config.latent_dim, config.ambient_dim);
        let mut rng = stream(config.master_seed, PROTOTYPE_STREAM);
        let mut prototypes = Vec::with_capacity(config.num_classes);
        while prototypes.len() < config.num_classes {
            let g: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
            if let Some(p) = normalized(&g) {
                prototypes.push(p);
            }
        }
        let map_a = DomainMap::random(&mut stream(config.master_seed, MAP_A_STREAM), l, d);
        let indep = DomainMap::random(&mut stream(config.master_seed, MAP_B_STREAM), l, d);
        let map_b = if config.domain_gap == 0.0 {
            map_a.clone()
        } else {
            DomainMap::blend(&map_a, &indep, config.domain_gap)
        };
        Ok(World {
            prototypes,
            map_a,
            map_b,
            within_class_std: config.within_class_std,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn map(&self, domain: Domain) -> &DomainMap {
        match domain {
            Domain::A => &self.map_a,
            Domain::B => &self.map_b,
        }
    }

    pub fn render(&self, domain: Domain, latent: &[f64]) -> Result<Vec<f64>> {
        self.map(domain).render(latent)
    }

    /// Draws `normalize(μ_c + σ_w ε)`.
    pub fn sample_latent(&self, class: u32, rng: &mut crate::rng::Rng) -> Vec<f64> {
        let proto = &self.prototypes[class as usize];
        let noisy: Vec<f64> = proto
            .iter()
            .map(|m| m + self.within_class_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalized(&noisy).unwrap_or_else(|| proto.clone())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: BenchmarkConfig,
    pub world: World,
    /// Domain A samples first, then domain B; within a domain ordered by
    /// class and then index.
    pub samples: Vec<DomainSample>,
}

impl Dataset {
    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &DomainSample> {
        self.samples.iter().filter(move |s| s.domain == domain)
    }
}

pub fn instance_id(config: &BenchmarkConfig, domain: Domain, class: u32, index: usize) -> u64 {
    let n = config.samples_per_class_per_domain as u64;
    (domain.index() * config.num_classes as u64 + class as u64) * n + index as u64
}

/// Builds the full two-domain dataset. Each sample draws from its own
/// stream keyed by its instance id, so the result is independent of
/// generation order.
pub fn generate_benchmark(config: &BenchmarkConfig) -> Result<Dataset> {
    let world = World::new(config)?;
    let n = config.samples_per_class_per_domain;
    let mut samples = Vec::with_capacity(2 * config.num_classes * n);
    for domain in [Domain::A, Domain::B] {
        for class in 0..config.num_classes as u32 {
            for j in 0..n {
                let id = instance_id(config, domain, class, j);
                let mut rng = stream(config.master_seed, SAMPLE_STREAM_BASE + id);
                let latent = world.sample_latent(class, &mut rng);
                let vec = world.render(domain, &latent)?;
                samples.push(DomainSample {
                    vec,
                    domain,
                    class_id: class,
                    instance_id: id,
                    latent: Some(latent),
                    is_synthetic: false,
                    pair_id: None,
                    source_class_id: None,
                });
            }
        }
    }
    Ok(Dataset {
        config: config.clone(),
        world,
        samples,
    })
}
