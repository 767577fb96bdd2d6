//! Dataset export: a JSON manifest plus one JSON record per sample.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BenchmarkConfig, CategorySplit, DataSplit, Domain, DomainSample, SplitSpec, TranslationConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    /// Training partition of a class outside the domain's categories.
    Unused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub instance_id: u64,
    pub domain: Domain,
    pub class_id: u32,
    pub split: SplitTag,
    pub is_synthetic: bool,
    pub pair_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_class_id: Option<u32>,
    pub vec: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

impl SampleRecord {
    fn from_sample(s: &DomainSample, split: SplitTag, with_oracle: bool) -> Self {
        SampleRecord {
            instance_id: s.instance_id,
            domain: s.domain,
            class_id: s.class_id,
            split,
            is_synthetic: s.is_synthetic,
            pair_id: s.pair_id,
            source_class_id: s.source_class_id,
            vec: s.vec.clone(),
            latent: if with_oracle { s.latent.clone() } else { None },
        }
    }

    pub fn into_sample(self) -> DomainSample {
        DomainSample {
            vec: self.vec,
            domain: self.domain,
            class_id: self.class_id,
            instance_id: self.instance_id,
            latent: self.latent,
            is_synthetic: self.is_synthetic,
            pair_id: self.pair_id,
            source_class_id: self.source_class_id,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub benchmark: BenchmarkConfig,
    pub split: SplitSpec,
    pub translation: Option<TranslationConfig>,
    pub classes_a: Vec<u32>,
    pub classes_b: Vec<u32>,
    pub shared_classes: Vec<u32>,
    pub counts: Counts,
    pub with_oracle: bool,
    pub samples_file: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Counts {
    pub train_a: usize,
    pub train_b: usize,
    pub val_a: usize,
    pub val_b: usize,
    pub test_a: usize,
    pub test_b: usize,
    pub unused: usize,
    pub synthetic_a: usize,
    pub synthetic_b: usize,
}

/// Writes `manifest.json` and `samples.jsonl` into `dir`.
///
/// Synthetic sets are tagged as training samples. Latents are written only
/// when `with_oracle` is set.
#[allow(clippy::too_many_arguments)]
pub fn export_dataset(
    dir: &Path,
    benchmark: &BenchmarkConfig,
    spec: &SplitSpec,
    split: &DataSplit,
    translation: Option<&TranslationConfig>,
    synthetic: &[&[DomainSample]],
    with_oracle: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let syn_count = |d: Domain| {
        synthetic
            .iter()
            .flat_map(|s| s.iter())
            .filter(|s| s.domain == d)
            .count()
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        benchmark: benchmark.clone(),
        split: spec.clone(),
        translation: translation.cloned(),
        classes_a: split.categories.classes_a.clone(),
        classes_b: split.categories.classes_b.clone(),
        shared_classes: split.categories.shared(),
        counts: Counts {
            train_a: split.train_a.len(),
            train_b: split.train_b.len(),
            val_a: split.val_a.len(),
            val_b: split.val_b.len(),
            test_a: split.test_a.len(),
            test_b: split.test_b.len(),
            unused: split.unused.len(),
            synthetic_a: syn_count(Domain::A),
            synthetic_b: syn_count(Domain::B),
        },
        with_oracle,
        samples_file: SAMPLES_FILE.to_string(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(SAMPLES_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let groups: [(&[DomainSample], SplitTag); 7] = [
        (&split.train_a, SplitTag::Train),
        (&split.train_b, SplitTag::Train),
        (&split.val_a, SplitTag::Val),
        (&split.val_b, SplitTag::Val),
        (&split.test_a, SplitTag::Test),
        (&split.test_b, SplitTag::Test),
        (&split.unused, SplitTag::Unused),
    ];
    let synthetic_groups = synthetic.iter().map(|s| (*s, SplitTag::Train));
    for (samples, tag) in groups.into_iter().chain(synthetic_groups) {
        for s in samples {
            let rec = SampleRecord::from_sample(s, tag, with_oracle);
            serde_json::to_writer(&mut w, &rec).expect("record serializes");
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads back every record of a `samples.jsonl` file.
pub fn import_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn import_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            &path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    Ok(manifest)
}

/// Rebuilds the real-data split of an exported dataset. Synthetic records
/// are skipped; with `swap` the two category sets trade places, exactly as
/// [`make_split`](super::make_split) would do.
pub fn import_split(dir: &Path, swap: bool) -> Result<(Manifest, DataSplit)> {
    let manifest = import_manifest(dir)?;
    let records = import_samples(&dir.join(&manifest.samples_file))?;
    let mut categories = CategorySplit {
        classes_a: manifest.classes_a.clone(),
        classes_b: manifest.classes_b.clone(),
    };
    if swap {
        std::mem::swap(&mut categories.classes_a, &mut categories.classes_b);
    }
    let mut split = DataSplit {
        categories,
        train_a: vec![],
        train_b: vec![],
        val_a: vec![],
        val_b: vec![],
        test_a: vec![],
        test_b: vec![],
        unused: vec![],
    };
    for rec in records.into_iter().filter(|r| !r.is_synthetic) {
        let tag = rec.split;
        let sample = rec.into_sample();
        let d = sample.domain;
        let target = match tag {
            SplitTag::Val if d == Domain::A => &mut split.val_a,
            SplitTag::Val => &mut split.val_b,
            SplitTag::Test if d == Domain::A => &mut split.test_a,
            SplitTag::Test => &mut split.test_b,
            SplitTag::Train | SplitTag::Unused => {
                if !split.categories.for_domain(d).contains(&sample.class_id) {
                    &mut split.unused
                } else if d == Domain::A {
                    &mut split.train_a
                } else {
                    &mut split.train_b
                }
            }
        };
        target.push(sample);
    }
    for part in [
        &mut split.train_a,
        &mut split.train_b,
        &mut split.val_a,
        &mut split.val_b,
        &mut split.test_a,
        &mut split.test_b,
    ] {
        part.sort_by_key(|s| s.instance_id);
    }
    split.unused.sort_by_key(|s| (s.domain, s.instance_id));
    Ok((manifest, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{generate_benchmark, generate_synthetic_set, make_split};

    #[test]
    fn export_import_round_trip_is_exact() {
        let cfg = BenchmarkConfig {
            samples_per_class_per_domain: 6,
            num_classes: 4,
            ..Default::default()
        };
        let ds = generate_benchmark(&cfg).unwrap();
        let spec = SplitSpec::default();
        let split = make_split(&ds, &spec).unwrap();
        let tcfg = TranslationConfig::default();
        let syn_b = generate_synthetic_set(&split.train_a, Domain::B, &tcfg, &ds.world).unwrap();

        let dir = tempfile::tempdir().unwrap();
        export_dataset(dir.path(), &cfg, &spec, &split, Some(&tcfg), &[&syn_b], true).unwrap();
        let recs = import_samples(&dir.path().join(SAMPLES_FILE)).unwrap();
        let total = split.train_a.len()
            + split.train_b.len()
            + split.val_a.len()
            + split.val_b.len()
            + split.test_a.len()
            + split.test_b.len()
            + split.unused.len()
            + syn_b.len();
        assert_eq!(recs.len(), total);
        let back: Vec<DomainSample> = recs
            .into_iter()
            .filter(|r| r.is_synthetic)
            .map(SampleRecord::into_sample)
            .collect();
        assert_eq!(back, syn_b);
    }

    #[test]
    fn latents_only_with_oracle_flag() {
        let cfg = BenchmarkConfig {
            samples_per_class_per_domain: 4,
            num_classes: 2,
            ..Default::default()
        };
        let ds = generate_benchmark(&cfg).unwrap();
        let spec = SplitSpec::default();
        let split = make_split(&ds, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(dir.path(), &cfg, &spec, &split, None, &[], false).unwrap();
        let text = fs::read_to_string(dir.path().join(SAMPLES_FILE)).unwrap();
        assert!(!text.contains("latent"));
    }

    #[test]
    fn malformed_line_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.jsonl");
        fs::write(&path, "{not json}\n").unwrap();
        let err = import_samples(&path).unwrap_err().to_string();
        assert!(err.contains("broken.jsonl"), "{err}");
    }
}
