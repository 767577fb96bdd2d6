use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, stream};

use super::{Dataset, Domain, DomainSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Fraction of each domain's training categories shared with the other.
    pub overlap_frac: f64,
    /// Seed for the category assignment.
    pub category_seed: u64,
    /// Seed for the per-class train/val/test partition.
    pub split_seed: u64,
    /// Exchange the two category sets.
    pub swap: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.5,
            val_frac: 0.2,
            test_frac: 0.3,
            overlap_frac: 0.0,
            category_seed: 0,
            split_seed: 0,
            swap: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_frac) {
            return Err(Error::Config("overlap_frac must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Training category sets for the two domains, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySplit {
    pub classes_a: Vec<u32>,
    pub classes_b: Vec<u32>,
}

impl CategorySplit {
    pub fn shared(&self) -> Vec<u32> {
        let b: BTreeSet<_> = self.classes_b.iter().collect();
        self.classes_a.iter().copied().filter(|c| b.contains(c)).collect()
    }

    pub fn for_domain(&self, domain: Domain) -> &[u32] {
        match domain {
            Domain::A => &self.classes_a,
            Domain::B => &self.classes_b,
        }
    }
}

/// Per-domain count `k` and shared count `s` for `C` classes at overlap
/// `rho`, satisfying `2k − s = C`.
pub fn category_counts(num_classes: usize, overlap: f64) -> (usize, usize) {
    let c = num_classes as f64;
    let k_min = num_classes.div_ceil(2);
    let k = ((c / (2.0 - overlap)).round() as usize).clamp(k_min, num_classes);
    (k, 2 * k - num_classes)
}

pub fn split_categories(num_classes: usize, overlap: f64, seed: u64) -> Result<CategorySplit> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap {overlap} outside [0, 1]")));
    }
    let (k, s) = category_counts(num_classes, overlap);
    let mut perm: Vec<u32> = (0..num_classes as u32).collect();
    perm.shuffle(&mut stream(seed, 0));
    let mut classes_a = perm[..k].to_vec();
    let mut classes_b = perm[k - s..2 * k - s].to_vec();
    classes_a.sort_unstable();
    classes_b.sort_unstable();
    Ok(CategorySplit {
        classes_a,
        classes_b,
    })
}

#[derive(Clone, Debug)]
pub struct DataSplit {
    pub categories: CategorySplit,
    pub train_a: Vec<DomainSample>,
    pub train_b: Vec<DomainSample>,
    pub val_a: Vec<DomainSample>,
    pub val_b: Vec<DomainSample>,
    pub test_a: Vec<DomainSample>,
    pub test_b: Vec<DomainSample>,
    /// Train-partition samples whose class is outside their domain's
    /// training categories.
    pub unused: Vec<DomainSample>,
}

impl DataSplit {
    pub fn train(&self, domain: Domain) -> &[DomainSample] {
        match domain {
            Domain::A => &self.train_a,
            Domain::B => &self.train_b,
        }
    }

    pub fn val(&self, domain: Domain) -> &[DomainSample] {
        match domain {
            Domain::A => &self.val_a,
            Domain::B => &self.val_b,
        }
    }

    pub fn test(&self, domain: Domain) -> &[DomainSample] {
        match domain {
            Domain::A => &self.test_a,
            Domain::B => &self.test_b,
        }
    }
}

/// Per-class sizes of the train/val/test partition for `n` samples.
pub fn partition_sizes(n: usize, spec: &SplitSpec) -> Result<(usize, usize, usize)> {
    if n < 4 {
        return Err(Error::Config(format!(
            "cannot stratify a class with {n} samples per domain (need at least 4)"
        )));
    }
    let val = ((n as f64 * spec.val_frac).round() as usize).max(1);
    let train = ((n as f64 * spec.train_frac).round() as usize).clamp(1, n - val - 1);
    Ok((train, val, n - train - val))
}

/// Stratified per-class partition within each domain, then category
/// filtering of the training partitions.
pub fn make_split(dataset: &Dataset, spec: &SplitSpec) -> Result<DataSplit> {
    spec.validate()?;
    let cfg = &dataset.config;
    let mut categories = split_categories(cfg.num_classes, spec.overlap_frac, spec.category_seed)?;
    if spec.swap {
        std::mem::swap(&mut categories.classes_a, &mut categories.classes_b);
    }

    let mut out = DataSplit {
        categories,
        train_a: vec![],
        train_b: vec![],
        val_a: vec![],
        val_b: vec![],
        test_a: vec![],
        test_b: vec![],
        unused: vec![],
    };

    for domain in [Domain::A, Domain::B] {
        let allowed: BTreeSet<u32> = out.categories.for_domain(domain).iter().copied().collect();
        for class in 0..cfg.num_classes as u32 {
            let mut members: Vec<&DomainSample> = dataset
                .domain(domain)
                .filter(|s| s.class_id == class && !s.is_synthetic)
                .collect();
            let (n_train, n_val, _) = partition_sizes(members.len(), spec)?;
            let stream_id = mix(domain.index(), class as u64);
            members.shuffle(&mut stream(spec.split_seed, stream_id));
            // keep partitions in generation order
            let (train, rest) = members.split_at_mut(n_train);
            let (val, test) = rest.split_at_mut(n_val);
            for part in [&mut *train, &mut *val, &mut *test] {
                part.sort_by_key(|s| s.instance_id);
            }
            let (tr, va, te) = match domain {
                Domain::A => (&mut out.train_a, &mut out.val_a, &mut out.test_a),
                Domain::B => (&mut out.train_b, &mut out.val_b, &mut out.test_b),
            };
            if allowed.contains(&class) {
                tr.extend(train.iter().map(|s| (*s).clone()));
            } else {
                out.unused.extend(train.iter().map(|s| (*s).clone()));
            }
            va.extend(val.iter().map(|s| (*s).clone()));
            te.extend(test.iter().map(|s| (*s).clone()));
        }
    }
    Ok(out)
}
