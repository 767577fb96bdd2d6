//! Brute-force reference implementations and random instances shared by
//! the integration tests and the acceptance harness.
#![allow(dead_code)]

use cdr_core::benchmark::Domain;
use cdr_core::metrics::{distance_to_source, ncm_accuracy, prec_at_k, similarity_to_real_target, LabeledFeatureSet};
use cdr_core::rng::{stream, Rng};
use rand::Rng as _;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = dot(v, v).sqrt();
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

/// Unit rows on a coarse integer grid, so exact similarity ties are common.
pub fn grid_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1i32..=2) as f64).collect();
            if let Some(u) = unit(&raw) {
                break u;
            }
        })
        .collect()
}

/// Unit rows with continuous random directions.
pub fn unit_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Some(u) = unit(&raw).filter(|_| dot(&raw, &raw) > 1e-6) {
                break u;
            }
        })
        .collect()
}

/// A random labeled set; every class below `classes` appears at least once
/// when `n >= classes`.
pub fn random_set(rng: &mut Rng, n: usize, d: usize, classes: u32, id_base: u64) -> LabeledFeatureSet {
    let labels = (0..n)
        .map(|i| if (i as u32) < classes { i as u32 } else { rng.random_range(0..classes) })
        .collect();
    LabeledFeatureSet {
        features: grid_rows(rng, n, d),
        labels,
        domain: Domain::A,
        instance_ids: (0..n as u64).map(|i| id_base + i).collect(),
        pair_ids: vec![None; n],
    }
}

/// Prec@K by counting, for each gallery item, how many items outrank it.
pub fn brute_prec(q: &LabeledFeatureSet, g: &LabeledFeatureSet, k: usize) -> f64 {
    let mut total = 0.0;
    for (qf, ql) in q.features.iter().zip(&q.labels) {
        let sims: Vec<f64> = g.features.iter().map(|gf| dot(qf, gf)).collect();
        let mut hits = 0usize;
        for j in 0..sims.len() {
            let ahead = (0..sims.len())
                .filter(|&i| sims[i] > sims[j] || (sims[i] == sims[j] && i < j))
                .count();
            if ahead < k && g.labels[j] == *ql {
                hits += 1;
            }
        }
        total += hits as f64 / k as f64;
    }
    total / q.features.len() as f64
}

/// Renormalized class means in ascending class order; `None` if one of them
/// vanishes.
pub fn brute_means(r: &LabeledFeatureSet) -> Option<Vec<(u32, Vec<f64>)>> {
    let mut classes: Vec<u32> = r.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let d = r.features[0].len();
            let mut sum = vec![0.0; d];
            for (f, _) in r.features.iter().zip(&r.labels).filter(|(_, l)| **l == c) {
                for i in 0..d {
                    sum[i] += f[i];
                }
            }
            unit(&sum).map(|m| (c, m))
        })
        .collect()
}

pub fn brute_ncm(s: &LabeledFeatureSet, r: &LabeledFeatureSet) -> Option<f64> {
    let means = brute_means(r)?;
    let mut correct = 0;
    for (f, l) in s.features.iter().zip(&s.labels) {
        let sims: Vec<f64> = means.iter().map(|(_, m)| dot(f, m)).collect();
        let best = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // first (smallest) class attaining the maximum
        let winner = means[sims.iter().position(|&x| x == best).unwrap()].0;
        if winner == *l {
            correct += 1;
        }
    }
    Some(correct as f64 / s.features.len() as f64)
}

pub fn brute_similarity(s: &LabeledFeatureSet, r: &LabeledFeatureSet) -> Option<f64> {
    let means = brute_means(r)?;
    let mut total = 0.0;
    for (f, l) in s.features.iter().zip(&s.labels) {
        let m = &means.iter().find(|(c, _)| c == l)?.1;
        total += dot(f, m);
    }
    Some(total / s.features.len() as f64)
}

pub fn brute_distance(syn: &LabeledFeatureSet, src: &LabeledFeatureSet) -> f64 {
    let mut total = 0.0;
    for (f, pair) in syn.features.iter().zip(&syn.pair_ids) {
        let j = src.instance_ids.iter().position(|id| Some(*id) == *pair).unwrap();
        total += (1.0 - dot(f, &src.features[j])).clamp(0.0, 2.0);
    }
    total / syn.features.len() as f64
}

/// Runs every metric against its brute-force twin on `count` random
/// instances with at most 50 rows per set. Returns descriptions of all
/// disagreements (exact comparison).
pub fn metric_oracle_mismatches(seed: u64, count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for case in 0..count {
        let mut rng = stream(seed, case);
        let d = rng.random_range(2..=6);
        let classes = rng.random_range(1..=5u32);
        let nq = rng.random_range(1..=50);
        let ng = rng.random_range(classes as usize..=50);
        let q = random_set(&mut rng, nq, d, classes, 0);
        let g = random_set(&mut rng, ng, d, classes, 1000);
        let k = rng.random_range(1..=ng);

        let got = prec_at_k(&q, &g, k).unwrap();
        let want = brute_prec(&q, &g, k);
        if got != want {
            bad.push(format!("case {case}: prec@{k} {got} vs {want}"));
        }

        match (ncm_accuracy(&q, &g), brute_ncm(&q, &g)) {
            (Ok(a), Some(b)) if a == b => {}
            (Err(_), None) => {}
            (a, b) => bad.push(format!("case {case}: ncm {a:?} vs {b:?}")),
        }
        match (similarity_to_real_target(&q, &g), brute_similarity(&q, &g)) {
            (Ok(a), Some(b)) if a == b => {}
            (Err(_), None) => {}
            (a, b) => bad.push(format!("case {case}: similarity {a:?} vs {b:?}")),
        }

        // synthetic rows paired with random sources from the gallery
        let mut syn = random_set(&mut rng, nq, d, classes, 5000);
        syn.pair_ids = (0..nq).map(|_| Some(g.instance_ids[rng.random_range(0..ng)])).collect();
        let got = distance_to_source(&syn, &g).unwrap();
        let want = brute_distance(&syn, &g);
        if got != want {
            bad.push(format!("case {case}: distance {got} vs {want}"));
        }
    }
    bad
}
