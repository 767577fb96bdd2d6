//! Retrieval evaluation and synthetic-data analysis metrics.
//!
//! All similarities are cosine similarities of unit-norm rows. Ranking ties
//! are broken by ascending gallery index and nearest-class-mean ties by the
//! smaller class id, so every metric is deterministic.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, normalized, Tensor};
use crate::benchmark::{Domain, DomainSample};
use crate::encoder::Encoder;
use crate::error::{Error, Result};

/// Unit-norm feature rows with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatureSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub domain: Domain,
    pub instance_ids: Vec<u64>,
    pub pair_ids: Vec<Option<u64>>,
}

impl LabeledFeatureSet {
    /// Pairs encoder (or featurizer) output rows with the samples they came
    /// from. Labels are the samples' nominal labels.
    pub fn from_samples(samples: &[DomainSample], features: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() != features.len() {
            return Err(Error::Alignment(format!(
                "{} samples for {} feature rows",
                samples.len(),
                features.len()
            )));
        }
        let domain = samples.first().map(|s| s.domain).unwrap_or(Domain::A);
        Ok(LabeledFeatureSet {
            features,
            labels: samples.iter().map(DomainSample::nominal_label).collect(),
            domain,
            instance_ids: samples.iter().map(|s| s.instance_id).collect(),
            pair_ids: samples.iter().map(|s| s.pair_id).collect(),
        })
    }

    pub fn from_tensor(samples: &[DomainSample], features: &Tensor) -> Result<Self> {
        Self::from_samples(samples, features.iter_rows().map(<[f64]>::to_vec).collect())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Gallery indices ordered by descending similarity to `query`, ties by
/// ascending index.
pub fn rank_gallery(query: &[f64], gallery: &[Vec<f64>]) -> Vec<usize> {
    // adding 0.0 folds -0.0 into 0.0, which total_cmp would otherwise split
    let sims: Vec<f64> = gallery.iter().map(|g| dot(query, g) + 0.0).collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order
}

/// Mean over queries of the fraction of the top `k` gallery items sharing
/// the query's label.
pub fn prec_at_k(queries: &LabeledFeatureSet, gallery: &LabeledFeatureSet, k: usize) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::Contract("prec_at_k: empty gallery".into()));
    }
    if queries.is_empty() {
        return Err(Error::Contract("prec_at_k: no queries".into()));
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::Contract(format!(
            "prec_at_k: K = {k} invalid for a gallery of {}",
            gallery.len()
        )));
    }
    let mut total = 0.0;
    for (q, &label) in queries.features.iter().zip(&queries.labels) {
        let order = rank_gallery(q, &gallery.features);
        let hits = order[..k].iter().filter(|&&j| gallery.labels[j] == label).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub ks: Vec<usize>,
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
    /// Average of the two directions, per K.
    pub mean: Vec<f64>,
}

impl RetrievalReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean[i])
    }
}

/// Prec@K in both directions from precomputed features.
pub fn bidirectional_prec(
    a: &LabeledFeatureSet,
    b: &LabeledFeatureSet,
    ks: &[usize],
) -> Result<RetrievalReport> {
    let mut a_to_b = Vec::with_capacity(ks.len());
    let mut b_to_a = Vec::with_capacity(ks.len());
    for &k in ks {
        a_to_b.push(prec_at_k(a, b, k)?);
        b_to_a.push(prec_at_k(b, a, k)?);
    }
    let mean = a_to_b.iter().zip(&b_to_a).map(|(x, y)| 0.5 * (x + y)).collect();
    Ok(RetrievalReport {
        ks: ks.to_vec(),
        a_to_b,
        b_to_a,
        mean,
    })
}

/// Encodes both test sets and evaluates retrieval in both directions.
pub fn bidirectional_eval(
    test_a: &[DomainSample],
    test_b: &[DomainSample],
    encoder: &Encoder,
    ks: &[usize],
) -> Result<RetrievalReport> {
    if test_a.is_empty() || test_b.is_empty() {
        return Err(Error::Contract("bidirectional_eval: empty test set".into()));
    }
    let fa = LabeledFeatureSet::from_tensor(test_a, &encoder.encode_samples(test_a)?)?;
    let fb = LabeledFeatureSet::from_tensor(test_b, &encoder.encode_samples(test_b)?)?;
    bidirectional_prec(&fa, &fb, ks)
}

/// Fixed featurizers used for analysing data rather than trained models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Featurizer {
    /// Normalized observables.
    Identity,
    /// Normalized hidden latents.
    Semantic,
}

pub fn oracle_featurize(samples: &[DomainSample], mode: Featurizer) -> Result<LabeledFeatureSet> {
    let features = samples
        .iter()
        .map(|s| {
            let raw = match mode {
                Featurizer::Identity => &s.vec,
                Featurizer::Semantic => s.latent.as_ref().ok_or_else(|| {
                    Error::Contract(format!(
                        "semantic featurizer needs latents; sample {} has none",
                        s.instance_id
                    ))
                })?,
            };
            normalized(raw).ok_or_else(|| {
                Error::Numeric(format!("sample {} has a zero feature", s.instance_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledFeatureSet::from_samples(samples, features)
}

/// Mean of `1 − cos(source, synthetic)` over synthetic samples, with each
/// source found through its pair id in `sources`.
pub fn distance_to_source(synthetic: &LabeledFeatureSet, sources: &LabeledFeatureSet) -> Result<f64> {
    if synthetic.is_empty() {
        return Err(Error::Contract("distance_to_source: empty synthetic set".into()));
    }
    let lookup: HashMap<u64, usize> = sources
        .instance_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut total = 0.0;
    for (f, pair) in synthetic.features.iter().zip(&synthetic.pair_ids) {
        let pair = pair.ok_or_else(|| Error::Lookup("synthetic sample without pair id".into()))?;
        let &src = lookup
            .get(&pair)
            .ok_or_else(|| Error::Lookup(format!("pair id {pair} has no source")))?;
        // rounding can push the cosine of identical rows just past 1
        total += (1.0 - dot(f, &sources.features[src])).clamp(0.0, 2.0);
    }
    Ok(total / synthetic.len() as f64)
}

/// Renormalized per-class means of `reference`, keyed by label.
pub fn class_means(reference: &LabeledFeatureSet) -> Result<BTreeMap<u32, Vec<f64>>> {
    let mut sums: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (f, &label) in reference.features.iter().zip(&reference.labels) {
        let acc = sums.entry(label).or_insert_with(|| vec![0.0; f.len()]);
        acc.iter_mut().zip(f).for_each(|(a, v)| *a += v);
    }
    sums.into_iter()
        .map(|(label, s)| {
            normalized(&s)
                .map(|m| (label, m))
                .ok_or_else(|| Error::Numeric(format!("class {label} has a zero mean feature")))
        })
        .collect()
}

fn require_classes(what: &str, set: &LabeledFeatureSet, means: &BTreeMap<u32, Vec<f64>>) -> Result<()> {
    if let Some(missing) = set.labels.iter().find(|l| !means.contains_key(l)) {
        return Err(Error::Contract(format!(
            "{what}: class {missing} is missing from the reference set"
        )));
    }
    Ok(())
}

/// Nearest-class-mean accuracy of `samples` against class means of
/// `reference`.
pub fn ncm_accuracy(samples: &LabeledFeatureSet, reference: &LabeledFeatureSet) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("ncm_accuracy: no samples".into()));
    }
    let means = class_means(reference)?;
    require_classes("ncm_accuracy", samples, &means)?;
    let mut correct = 0usize;
    for (f, &label) in samples.features.iter().zip(&samples.labels) {
        let mut best: Option<(u32, f64)> = None;
        for (&class, mean) in &means {
            let s = dot(f, mean);
            // strict comparison keeps the smaller class id on ties
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((class, s));
            }
        }
        correct += usize::from(best.map(|(c, _)| c) == Some(label));
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean cosine between each sample and the renormalized mean of the
/// reference rows sharing its label.
pub fn similarity_to_real_target(samples: &LabeledFeatureSet, reference: &LabeledFeatureSet) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("similarity_to_real_target: no samples".into()));
    }
    let means = class_means(reference)?;
    require_classes("similarity_to_real_target", samples, &means)?;
    let total: f64 = samples
        .features
        .iter()
        .zip(&samples.labels)
        .map(|(f, l)| dot(f, &means[l]))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Synthetic-data quality, each averaged over the two translation
/// directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAnalysis {
    pub distance_to_source: f64,
    pub ncm_accuracy: f64,
    pub similarity_to_real_target: f64,
}

/// `real_a`/`real_b` are the full real pools of each domain (all classes);
/// `syn_a` holds translations into A of domain-B samples and vice versa.
pub fn analyze_synthetic(
    real_a: &[DomainSample],
    real_b: &[DomainSample],
    syn_a: &[DomainSample],
    syn_b: &[DomainSample],
    featurizer: Featurizer,
) -> Result<SyntheticAnalysis> {
    let ra = oracle_featurize(real_a, featurizer)?;
    let rb = oracle_featurize(real_b, featurizer)?;
    let sa = oracle_featurize(syn_a, featurizer)?;
    let sb = oracle_featurize(syn_b, featurizer)?;
    Ok(SyntheticAnalysis {
        distance_to_source: 0.5 * (distance_to_source(&sb, &ra)? + distance_to_source(&sa, &rb)?),
        ncm_accuracy: 0.5 * (ncm_accuracy(&sb, &rb)? + ncm_accuracy(&sa, &ra)?),
        similarity_to_real_target: 0.5
            * (similarity_to_real_target(&sb, &rb)? + similarity_to_real_target(&sa, &ra)?),
    })
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for a single
/// value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, n }
    }
}

/// `sqrt(mean of variances)` across scenarios.
pub fn pooled_std(stds: &[f64]) -> f64 {
    if stds.is_empty() {
        return f64::NAN;
    }
    (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt()
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    instance_id: u64,
    domain: Domain,
    class_id: u32,
    features: &'a [f64],
}

/// One JSON line per sample: id, domain, class and feature values.
pub fn write_features_jsonl(path: &Path, samples: &[DomainSample], features: &Tensor) -> Result<()> {
    if samples.len() != features.rows() {
        return Err(Error::Alignment(format!(
            "{} samples for {} feature rows",
            samples.len(),
            features.rows()
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (s, f) in samples.iter().zip(features.iter_rows()) {
        let line = FeatureLine {
            instance_id: s.instance_id,
            domain: s.domain,
            class_id: s.class_id,
            features: f,
        };
        serde_json::to_writer(&mut w, &line).expect("feature line serializes");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn set(features: Vec<Vec<f64>>, labels: Vec<u32>, domain: Domain) -> LabeledFeatureSet {
        let n = features.len();
        LabeledFeatureSet {
            features,
            labels,
            domain,
            instance_ids: (0..n as u64).collect(),
            pair_ids: vec![None; n],
        }
    }

    fn one_hot(c: u32, dim: usize) -> Vec<f64> {
        (0..dim).map(|i| if i == c as usize { 1.0 } else { 0.0 }).collect()
    }

    fn random_unit(rng: &mut crate::rng::Rng, dim: usize) -> Vec<f64> {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        normalized(&g).unwrap()
    }

    #[test]
    fn perfect_embedding_gives_full_precision() {
        let labels_a = vec![0, 1, 2, 0, 1, 2];
        let labels_b = vec![2, 2, 1, 0, 1, 0];
        let a = set(labels_a.iter().map(|&c| one_hot(c, 3)).collect(), labels_a, Domain::A);
        let b = set(labels_b.iter().map(|&c| one_hot(c, 3)).collect(), labels_b, Domain::B);
        for k in 1..=2 {
            assert_eq!(prec_at_k(&a, &b, k).unwrap(), 1.0);
            assert_eq!(prec_at_k(&b, &a, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn random_features_sit_at_chance() {
        let mut rng = stream(1, 1);
        let n = 2000;
        let qa: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 8)).collect();
        let gb: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 8)).collect();
        let la: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let lb: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let p = prec_at_k(&set(qa, la, Domain::A), &set(gb, lb, Domain::B), 1).unwrap();
        assert!((p - 0.5).abs() < 0.05, "{p}");
    }

    #[test]
    fn signed_zero_similarities_tie() {
        // the query scores -0.0 against row 0 and +0.0 against row 1
        let q = [-1.0, 0.0];
        let g = vec![vec![0.0, -1.0], vec![0.0, 1.0]];
        assert_eq!(dot(&q, &g[0]).to_bits(), (-0.0f64).to_bits());
        assert_eq!(rank_gallery(&q, &g), vec![0, 1]);
    }

    #[test]
    fn prec_errors() {
        let a = set(vec![one_hot(0, 2)], vec![0], Domain::A);
        let empty = set(vec![], vec![], Domain::B);
        assert!(matches!(prec_at_k(&a, &empty, 1), Err(Error::Contract(_))));
        assert!(matches!(prec_at_k(&a, &a, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let g = vec![one_hot(0, 2), one_hot(0, 2), one_hot(1, 2)];
        assert_eq!(rank_gallery(&one_hot(0, 2), &g), vec![0, 1, 2]);
        let q = set(vec![one_hot(0, 2)], vec![7], Domain::A);
        let gal = set(g, vec![3, 7, 7], Domain::B);
        assert_eq!(prec_at_k(&q, &gal, 1).unwrap(), 0.0);
    }

    #[test]
    fn distance_to_source_cases() {
        let src = set(vec![one_hot(0, 2), one_hot(1, 2)], vec![0, 1], Domain::A);
        let mut syn = set(vec![vec![-1.0, 0.0], one_hot(1, 2)], vec![0, 1], Domain::B);
        syn.pair_ids = vec![Some(0), Some(1)];
        assert_eq!(distance_to_source(&syn, &src).unwrap(), 1.0);
        syn.pair_ids = vec![Some(0), Some(0)];
        // antipodal twice and orthogonal once would be (2 + 1) / 2
        assert_eq!(distance_to_source(&syn, &src).unwrap(), 1.5);
        syn.pair_ids = vec![Some(5), Some(0)];
        assert!(matches!(distance_to_source(&syn, &src), Err(Error::Lookup(_))));
    }

    #[test]
    fn ncm_and_similarity_hand_cases() {
        let reference = set(
            vec![one_hot(0, 2), vec![0.6, 0.8], one_hot(1, 2)],
            vec![0, 0, 1],
            Domain::B,
        );
        let means = class_means(&reference).unwrap();
        let exact = set(vec![means[&0].clone(), means[&1].clone()], vec![0, 1], Domain::B);
        assert_eq!(ncm_accuracy(&exact, &reference).unwrap(), 1.0);
        let sim = similarity_to_real_target(&exact, &reference).unwrap();
        assert!((sim - 1.0).abs() < 1e-15);

        let orth = set(vec![vec![-0.8, 0.6]], vec![0], Domain::B);
        // class-0 mean is normalize(1.6, 0.8) so (−0.8, 0.6) is not orthogonal;
        // use the exact perpendicular instead
        let m0 = &means[&0];
        let perp = set(vec![vec![-m0[1], m0[0]]], vec![0], Domain::B);
        assert!(similarity_to_real_target(&perp, &reference).unwrap().abs() < 1e-15);
        assert!(similarity_to_real_target(&orth, &reference).is_ok());

        let missing = set(vec![one_hot(0, 2)], vec![9], Domain::B);
        assert!(matches!(ncm_accuracy(&missing, &reference), Err(Error::Contract(_))));
        assert!(matches!(similarity_to_real_target(&missing, &reference), Err(Error::Contract(_))));
    }

    #[test]
    fn ncm_ties_go_to_smaller_class() {
        let reference = set(vec![one_hot(0, 2), one_hot(1, 2)], vec![4, 2], Domain::B);
        let h = 0.5f64.sqrt();
        let q = set(vec![vec![h, h]], vec![2], Domain::B);
        assert_eq!(ncm_accuracy(&q, &reference).unwrap(), 1.0);
    }

    #[test]
    fn summary_and_pooled_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Summary::of(&[5.0]).std, 0.0);
        assert!((pooled_std(&[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-15);
    }
}
