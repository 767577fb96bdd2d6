//! Minibatch SGD with per-epoch validation and early stopping.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{normalized, Graph, Tensor, Var};
use crate::benchmark::DomainSample;
use crate::encoder::{forward, observables, Encoder};
use crate::error::{Error, Result};
use crate::losses::{distill_loss, total_loss, BankBatch, LossWeights, MemoryBank, PairBatch};
use crate::metrics::bidirectional_eval;
use crate::rng::{mix, stream, Rng};

const SCHEDULE_TAG: u64 = 0x5343_4845_4455_4c45;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the batch order.
    pub train_seed: u64,
    /// K of the validation Prec@K used for checkpoint selection.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            momentum: 0.9,
            batch_size: 32,
            epochs: 15,
            train_seed: 0,
            eval_k: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::Config("eval_k must be positive".into()));
        }
        Ok(())
    }
}

/// What the encoder is trained to minimise.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Instance discrimination, cross-domain entropy and (when synthetic
    /// data is present and enabled) pseudo-positive pairs.
    Contrastive(LossWeights),
    /// Match the similarity structure of normalized latents.
    Distill,
}

/// Training and validation pools. `syn_a` holds translations into A of
/// `train_b` and `syn_b` translations into B of `train_a`; both or neither
/// must be given.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train_a: &'a [DomainSample],
    pub train_b: &'a [DomainSample],
    pub syn_a: Option<&'a [DomainSample]>,
    pub syn_b: Option<&'a [DomainSample]>,
    pub val_a: &'a [DomainSample],
    pub val_b: &'a [DomainSample],
}

/// One optimisation step. `syn_b[i]` is the translation of `real_a[i]` and
/// `syn_a[i]` of `real_b[i]`; the synthetic lists are empty when training
/// without synthetic data. All entries index into the corresponding pools.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchStep {
    pub real_a: Vec<usize>,
    pub real_b: Vec<usize>,
    pub syn_a: Vec<usize>,
    pub syn_b: Vec<usize>,
}

/// Position of each real sample's translation in `synthetic`.
pub fn pair_index(real: &[DomainSample], synthetic: &[DomainSample]) -> Result<Vec<usize>> {
    if real.len() != synthetic.len() {
        return Err(Error::Alignment(format!(
            "{} real samples but {} translations",
            real.len(),
            synthetic.len()
        )));
    }
    let mut by_source = HashMap::with_capacity(synthetic.len());
    for (j, s) in synthetic.iter().enumerate() {
        let pair = s.pair_id.filter(|_| s.is_synthetic).ok_or_else(|| {
            Error::Alignment(format!("sample {} is not a paired translation", s.instance_id))
        })?;
        if by_source.insert(pair, j).is_some() {
            return Err(Error::Alignment(format!("two translations of instance {pair}")));
        }
    }
    real.iter()
        .map(|r| {
            let j = *by_source.get(&r.instance_id).ok_or_else(|| {
                Error::Alignment(format!("instance {} has no translation", r.instance_id))
            })?;
            if synthetic[j].domain == r.domain {
                return Err(Error::Alignment(format!(
                    "translation of instance {} stays in domain {}",
                    r.instance_id, r.domain
                )));
            }
            Ok(j)
        })
        .collect()
}

/// Hands out shuffled indices of one pool, reshuffling when exhausted and
/// never repeating an index inside a batch.
struct PoolCursor {
    order: Vec<usize>,
    pos: usize,
    deferred: Vec<usize>,
    rng: Rng,
}

impl PoolCursor {
    fn new(n: usize, rng: Rng) -> Self {
        let mut cursor = PoolCursor {
            order: (0..n).collect(),
            pos: 0,
            deferred: Vec::new(),
            rng,
        };
        cursor.order.shuffle(&mut cursor.rng);
        cursor
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        debug_assert!(k <= self.order.len());
        let mut batch = Vec::with_capacity(k);
        let mut still_deferred = Vec::new();
        for i in std::mem::take(&mut self.deferred) {
            if batch.len() < k {
                batch.push(i);
            } else {
                still_deferred.push(i);
            }
        }
        while batch.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let i = self.order[self.pos];
            self.pos += 1;
            if batch.contains(&i) {
                still_deferred.push(i);
            } else {
                batch.push(i);
            }
        }
        self.deferred = still_deferred;
        batch
    }
}

/// Batch schedule for one epoch: `⌈max(|train_a|, |train_b|) / m⌉` steps.
/// The larger pool is visited exactly once; the smaller one wraps around
/// with a fresh shuffle.
pub fn build_batches(
    train_a: &[DomainSample],
    train_b: &[DomainSample],
    syn_a: Option<&[DomainSample]>,
    syn_b: Option<&[DomainSample]>,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<BatchStep>> {
    if train_a.is_empty() || train_b.is_empty() {
        return Err(Error::Contract("build_batches: empty training pool".into()));
    }
    if batch_size == 0 || batch_size > train_a.len().min(train_b.len()) {
        return Err(Error::Config(format!(
            "batch size {batch_size} must lie in 1..={}",
            train_a.len().min(train_b.len())
        )));
    }
    let pairs = match (syn_a, syn_b) {
        (Some(sa), Some(sb)) => Some((pair_index(train_b, sa)?, pair_index(train_a, sb)?)),
        (None, None) => None,
        _ => {
            return Err(Error::Alignment(
                "synthetic data must be given for both domains or neither".into(),
            ))
        }
    };

    let largest = train_a.len().max(train_b.len());
    let mut cursor_a = PoolCursor::new(train_a.len(), stream(epoch_seed, 0));
    let mut cursor_b = PoolCursor::new(train_b.len(), stream(epoch_seed, 1));
    let mut steps = Vec::with_capacity(largest.div_ceil(batch_size));
    let mut start = 0;
    while start < largest {
        let k = batch_size.min(largest - start);
        let real_a = cursor_a.take(k);
        let real_b = cursor_b.take(k);
        let (syn_a, syn_b) = match &pairs {
            Some((to_a, to_b)) => (
                real_b.iter().map(|&i| to_a[i]).collect(),
                real_a.iter().map(|&i| to_b[i]).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        steps.push(BatchStep {
            real_a,
            real_b,
            syn_a,
            syn_b,
        });
        start += k;
    }
    Ok(steps)
}

fn divergence(detail: String) -> Error {
    Error::Divergence {
        epoch: 0,
        step: 0,
        detail,
    }
}

/// Classical momentum: `v ← μ·v + g`, `p ← p − lr·v`.
///
/// A non-finite gradient or an update that overflows yields
/// [`Error::Divergence`] with epoch and step zero and leaves the state
/// untouched; [`train`] fills in its own position.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Contract(format!(
            "sgd_step: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Dimension {
                op: "sgd_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.all_finite() {
            return Err(divergence(format!("non-finite gradient in parameter {i}")));
        }
    }
    let mut next_p = params.to_vec();
    let mut next_v = velocity.to_vec();
    for (i, ((p, g), v)) in next_p.iter_mut().zip(grads).zip(next_v.iter_mut()).enumerate() {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= learning_rate * *vv;
        }
        if !p.all_finite() || !v.all_finite() {
            return Err(divergence(format!("parameter {i} overflowed")));
        }
    }
    params.clone_from_slice(&next_p);
    velocity.clone_from_slice(&next_v);
    Ok(())
}

/// Per-epoch means of the loss terms plus validation precision. Terms that
/// are switched off are recorded as zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub id_a: f64,
    pub id_b: f64,
    pub cross_a: f64,
    pub cross_b: f64,
    pub ppp_a: f64,
    pub ppp_b: f64,
    /// KL terms in order A→B, A→A, B→A, B→B.
    pub kl: [f64; 4],
    pub total: f64,
    pub val_prec: f64,
}

impl EpochRecord {
    fn values(&self) -> [f64; 12] {
        [
            self.id_a,
            self.id_b,
            self.cross_a,
            self.cross_b,
            self.ppp_a,
            self.ppp_b,
            self.kl[0],
            self.kl[1],
            self.kl[2],
            self.kl[3],
            self.total,
            self.val_prec,
        ]
    }
}

pub const HISTORY_HEADER: &str =
    "epoch,id_a,id_b,cross_a,cross_b,ppp_a,ppp_b,kl_ab,kl_aa,kl_ba,kl_bb,total,val_prec";

/// Renders a history as CSV (header plus one row per epoch).
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        write!(out, "{}", r.epoch).unwrap();
        for v in r.values() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation precision (the initial encoder
    /// when no epoch was run).
    pub encoder: Encoder,
    /// 1-based epoch of `encoder`, 0 for the initial encoder.
    pub best_epoch: usize,
    pub best_val_prec: f64,
    /// Validation precision of the initial encoder.
    pub initial_val_prec: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Default)]
struct StepTerms {
    id: [f64; 2],
    cross: [f64; 2],
    ppp: [f64; 2],
    kl: [f64; 4],
    total: f64,
}

/// Normalized latents of `samples` as a matrix.
pub fn latent_matrix(samples: &[DomainSample]) -> Result<Tensor> {
    let rows = samples
        .iter()
        .map(|s| {
            let z = s.latent.as_ref().ok_or_else(|| {
                Error::Contract(format!("sample {} carries no latent", s.instance_id))
            })?;
            normalized(z).ok_or_else(|| Error::Numeric(format!("sample {} has a zero latent", s.instance_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

fn pick<'a>(pool: &'a [DomainSample], idx: &[usize]) -> Vec<&'a DomainSample> {
    idx.iter().map(|&i| &pool[i]).collect()
}

fn stacked(groups: &[&[&DomainSample]]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = groups.iter().flat_map(|g| g.iter().map(|s| s.vec.as_slice())).collect();
    Tensor::from_rows(&rows)
}

struct Banks {
    a: MemoryBank,
    b: MemoryBank,
}

fn init_banks(encoder: &Encoder, data: &TrainData, weights: &LossWeights) -> Result<Banks> {
    let make = |real: &[DomainSample], syn: Option<&[DomainSample]>| -> Result<MemoryBank> {
        let mut pool: Vec<DomainSample> = real.to_vec();
        if let Some(s) = syn {
            pool.extend_from_slice(s);
        }
        let feats = encoder.encode(&observables(&pool)?)?;
        MemoryBank::new(
            pool.iter().map(|s| s.instance_id).collect(),
            feats,
            weights.bank_momentum,
            weights.bank_temperature,
        )
    };
    Ok(Banks {
        a: make(data.train_a, data.syn_a)?,
        b: make(data.train_b, data.syn_b)?,
    })
}

fn contrastive_step(
    g: &mut Graph,
    params: &[Var],
    data: &TrainData,
    step: &BatchStep,
    banks: &Banks,
    weights: &LossWeights,
) -> Result<(Var, StepTerms, [BankBatch; 2])> {
    let ra = pick(data.train_a, &step.real_a);
    let rb = pick(data.train_b, &step.real_b);
    let sa = data.syn_a.map(|s| pick(s, &step.syn_a)).unwrap_or_default();
    let sb = data.syn_b.map(|s| pick(s, &step.syn_b)).unwrap_or_default();
    let x = g.constant(stacked(&[&ra, &sa, &rb, &sb])?);
    let f = forward(g, params, x)?;

    let (na, nsa, nb) = (ra.len(), sa.len(), rb.len());
    let split_a = na + nsa;
    let fa = g.slice_rows(f, 0, split_a)?;
    let fb = g.slice_rows(f, split_a, g.shape(f).0)?;
    let ids = |parts: [&[&DomainSample]; 2]| -> Vec<u64> {
        parts.iter().flat_map(|p| p.iter().map(|s| s.instance_id)).collect()
    };
    let batch_a = BankBatch {
        features: fa,
        ids: ids([&ra, &sa]),
    };
    let batch_b = BankBatch {
        features: fb,
        ids: ids([&rb, &sb]),
    };
    let (pairs_a, pairs_b) = if weights.ppp && nsa > 0 {
        let real_a = g.slice_rows(f, 0, na)?;
        let syn_a = g.slice_rows(f, na, split_a)?;
        let real_b = g.slice_rows(f, split_a, split_a + nb)?;
        let syn_b = g.slice_rows(f, split_a + nb, g.shape(f).0)?;
        (
            Some(PairBatch {
                real: real_a,
                synthetic: syn_b,
            }),
            Some(PairBatch {
                real: real_b,
                synthetic: syn_a,
            }),
        )
    } else {
        (None, None)
    };
    let terms = total_loss(g, &batch_a, &batch_b, pairs_a, pairs_b, &banks.a, &banks.b, weights)?;

    let item = |v: Var| g.value(v).item();
    let cross_on = weights.lambda_cdm != 0.0;
    let recorded = StepTerms {
        id: [item(terms.cds.id_a), item(terms.cds.id_b)],
        cross: if cross_on {
            [item(terms.cds.entropy_a), item(terms.cds.entropy_b)]
        } else {
            [0.0; 2]
        },
        ppp: [
            terms.ppp_a.map_or(0.0, item),
            terms.ppp_b.map_or(0.0, item),
        ],
        kl: [0.0; 4],
        total: item(terms.total),
    };
    Ok((terms.total, recorded, [batch_a, batch_b]))
}

fn distill_step(g: &mut Graph, params: &[Var], data: &TrainData, step: &BatchStep) -> Result<(Var, StepTerms)> {
    let ra = pick(data.train_a, &step.real_a);
    let rb = pick(data.train_b, &step.real_b);
    let owned = |v: &[&DomainSample]| -> Vec<DomainSample> { v.iter().map(|s| (*s).clone()).collect() };
    let ta = g.constant(latent_matrix(&owned(&ra))?);
    let tb = g.constant(latent_matrix(&owned(&rb))?);
    let x = g.constant(stacked(&[&ra, &rb])?);
    let f = forward(g, params, x)?;
    let sa = g.slice_rows(f, 0, ra.len())?;
    let sb = g.slice_rows(f, ra.len(), g.shape(f).0)?;
    let terms = distill_loss(g, sa, sb, ta, tb)?;
    let mut recorded = StepTerms {
        total: g.value(terms.total).item(),
        ..Default::default()
    };
    for (slot, v) in recorded.kl.iter_mut().zip(terms.terms) {
        *slot = g.value(v).item();
    }
    Ok((terms.total, recorded))
}

fn with_position(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { epoch, step, detail },
        Error::Numeric(detail) => Error::Divergence { epoch, step, detail },
        Error::DegenerateInput { op, row, norm } => Error::Divergence {
            epoch,
            step,
            detail: format!("degenerate {op} row {row} (norm {norm:e})"),
        },
        other => other,
    }
}

fn validate_data(data: &TrainData, objective: &Objective, batch_size: usize) -> Result<()> {
    if data.val_a.is_empty() || data.val_b.is_empty() {
        return Err(Error::Contract("validation sets must not be empty".into()));
    }
    let smallest = data.train_a.len().min(data.train_b.len());
    if batch_size > smallest {
        return Err(Error::Config(format!(
            "batch size {batch_size} exceeds the smallest training pool ({smallest})"
        )));
    }
    if let Objective::Contrastive(w) = objective {
        w.validate()?;
    }
    Ok(())
}

/// Trains `encoder` and returns the checkpoint with the best validation
/// Prec@K over the trained epochs (earliest on ties).
pub fn train(
    encoder: Encoder,
    data: &TrainData,
    objective: &Objective,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    validate_data(data, objective, config.batch_size)?;
    let ks = [config.eval_k];
    let val = |e: &Encoder| -> Result<f64> { Ok(bidirectional_eval(data.val_a, data.val_b, e, &ks)?.mean[0]) };

    let initial_val_prec = val(&encoder)?;
    let mut outcome = TrainOutcome {
        encoder: encoder.clone(),
        best_epoch: 0,
        best_val_prec: initial_val_prec,
        initial_val_prec,
        history: Vec::with_capacity(config.epochs),
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }

    let mut current = encoder;
    let mut velocity: Vec<Tensor> = current.params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    let mut banks = match objective {
        Objective::Contrastive(w) => Some(init_banks(&current, data, w)?),
        Objective::Distill => None,
    };
    let schedule_seed = mix(config.train_seed, SCHEDULE_TAG);

    for epoch in 1..=config.epochs {
        let (syn_a, syn_b) = match objective {
            Objective::Contrastive(_) => (data.syn_a, data.syn_b),
            Objective::Distill => (None, None),
        };
        let steps = build_batches(
            data.train_a,
            data.train_b,
            syn_a,
            syn_b,
            config.batch_size,
            mix(schedule_seed, epoch as u64),
        )?;
        let mut sums = StepTerms::default();
        for (s, step) in steps.iter().enumerate() {
            let t = run_step(&mut current, &mut velocity, banks.as_mut(), data, objective, step, config)
                .map_err(|e| with_position(e, epoch, s + 1))?;
            accumulate(&mut sums, &t);
        }
        let n = steps.len() as f64;
        let val_prec = val(&current).map_err(|e| with_position(e, epoch, steps.len()))?;
        outcome.history.push(EpochRecord {
            epoch,
            id_a: sums.id[0] / n,
            id_b: sums.id[1] / n,
            cross_a: sums.cross[0] / n,
            cross_b: sums.cross[1] / n,
            ppp_a: sums.ppp[0] / n,
            ppp_b: sums.ppp[1] / n,
            kl: sums.kl.map(|v| v / n),
            total: sums.total / n,
            val_prec,
        });
        if epoch == 1 || val_prec > outcome.best_val_prec {
            outcome.best_val_prec = val_prec;
            outcome.best_epoch = epoch;
            outcome.encoder = current.clone();
        }
    }
    Ok(outcome)
}

fn run_step(
    encoder: &mut Encoder,
    velocity: &mut [Tensor],
    banks: Option<&mut Banks>,
    data: &TrainData,
    objective: &Objective,
    step: &BatchStep,
    config: &TrainConfig,
) -> Result<StepTerms> {
    let mut g = Graph::new();
    let params = encoder.bind(&mut g);
    let (loss, terms, bank_batches) = match (objective, &banks) {
        (Objective::Contrastive(w), Some(banks)) => {
            let (loss, terms, batches) = contrastive_step(&mut g, &params, data, step, banks, w)?;
            (loss, terms, Some(batches))
        }
        _ => {
            let (loss, terms) = distill_step(&mut g, &params, data, step)?;
            (loss, terms, None)
        }
    };
    check_finite(&terms)?;
    g.backward(loss)?;
    apply(encoder, velocity, &g, &params, config)?;
    if let (Some(banks), Some([a, b])) = (banks, bank_batches) {
        banks.a.update(&a.ids, g.value(a.features))?;
        banks.b.update(&b.ids, g.value(b.features))?;
    }
    Ok(terms)
}

fn check_finite(t: &StepTerms) -> Result<()> {
    let all = t.id.iter().chain(&t.cross).chain(&t.ppp).chain(&t.kl).chain([&t.total]);
    if all.clone().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(divergence("non-finite loss".into()))
    }
}

fn apply(encoder: &mut Encoder, velocity: &mut [Tensor], g: &Graph, params: &[Var], config: &TrainConfig) -> Result<()> {
    let grads: Vec<Tensor> = params
        .iter()
        .zip(&encoder.params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();
    sgd_step(&mut encoder.params, &grads, velocity, config.learning_rate, config.momentum)
}

fn accumulate(sums: &mut StepTerms, t: &StepTerms) {
    for i in 0..2 {
        sums.id[i] += t.id[i];
        sums.cross[i] += t.cross[i];
        sums.ppp[i] += t.ppp[i];
    }
    for i in 0..4 {
        sums.kl[i] += t.kl[i];
    }
    sums.total += t.total;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{
        generate_benchmark, generate_synthetic_set, make_split, BenchmarkConfig, DataSplit, Domain, SplitSpec,
        TranslationConfig,
    };
    use crate::encoder::EncoderConfig;
    use crate::losses::LossWeights;
    use rand::Rng as _;

    fn small_split() -> (crate::benchmark::Dataset, DataSplit) {
        let cfg = BenchmarkConfig {
            num_classes: 6,
            samples_per_class_per_domain: 20,
            ..Default::default()
        };
        let ds = generate_benchmark(&cfg).unwrap();
        let split = make_split(&ds, &SplitSpec::default()).unwrap();
        (ds, split)
    }

    fn synthetic(ds: &crate::benchmark::Dataset, split: &DataSplit) -> (Vec<DomainSample>, Vec<DomainSample>) {
        let t = TranslationConfig::default();
        (
            generate_synthetic_set(&split.train_b, Domain::A, &t, &ds.world).unwrap(),
            generate_synthetic_set(&split.train_a, Domain::B, &t, &ds.world).unwrap(),
        )
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut v = vec![Tensor::scalar(0.0)];
        // gradient of ½x² at x = 1
        sgd_step(&mut p, &[Tensor::scalar(1.0)], &mut v, 0.1, 0.0).unwrap();
        assert!((p[0].item() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut v = vec![Tensor::scalar(0.0)];
        sgd_step(&mut p, &[Tensor::scalar(0.0)], &mut v, 0.1, 0.9).unwrap();
        assert_eq!((p[0].item(), v[0].item()), (2.0, 0.0));

        let mut v = vec![Tensor::scalar(1.0)];
        sgd_step(&mut p, &[Tensor::scalar(0.0)], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(v[0].item(), 0.9);
        assert!((p[0].item() - (2.0 - 0.1 * 0.9)).abs() < 1e-15);
    }

    #[test]
    fn momentum_converges_on_quadratic() {
        let mut rng = stream(3, 0);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut p = vec![Tensor::new(1, 5, x).unwrap()];
        let mut v = vec![Tensor::zeros(1, 5)];
        for _ in 0..100 {
            let mut g = Graph::new();
            let xv = g.param(p[0].clone());
            let sq = g.matmul_t(xv, xv).unwrap();
            let loss = g.scale(sq, 0.5);
            g.backward(loss).unwrap();
            let grad = g.grad(xv).unwrap().clone();
            sgd_step(&mut p, &[grad], &mut v, 0.5, 0.5).unwrap();
        }
        let n: f64 = p[0].data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n < 1e-6, "{n}");
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut v = vec![Tensor::scalar(0.0)];
        let r = sgd_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut v, 0.1, 0.9);
        assert!(matches!(r, Err(Error::Divergence { .. })));
        assert_eq!(p[0].item(), 1.0);

        let r = sgd_step(&mut p, &[Tensor::scalar(1e300)], &mut v, 1e300, 0.9);
        assert!(matches!(r, Err(Error::Divergence { .. })));
        assert_eq!((p[0].item(), v[0].item()), (1.0, 0.0));
    }

    fn pool(n: usize, domain: Domain) -> Vec<DomainSample> {
        (0..n as u64)
            .map(|i| DomainSample {
                vec: vec![1.0],
                domain,
                class_id: 0,
                instance_id: i + if domain == Domain::A { 0 } else { 1000 },
                latent: None,
                is_synthetic: false,
                pair_id: None,
                source_class_id: None,
            })
            .collect()
    }

    fn translations(real: &[DomainSample]) -> Vec<DomainSample> {
        real.iter()
            .rev()
            .map(|r| DomainSample {
                domain: r.domain.other(),
                instance_id: r.instance_id + (1 << 40),
                is_synthetic: true,
                pair_id: Some(r.instance_id),
                ..r.clone()
            })
            .collect()
    }

    #[test]
    fn schedule_shape_and_pairing() {
        let (a, b) = (pool(64, Domain::A), pool(40, Domain::B));
        let (sa, sb) = (translations(&b), translations(&a));
        let steps = build_batches(&a, &b, Some(&sa), Some(&sb), 32, 7).unwrap();
        assert_eq!(steps.len(), 2);
        for st in &steps {
            assert_eq!(st.real_a.len(), 32);
            for (&r, &s) in st.real_a.iter().zip(&st.syn_b) {
                assert_eq!(sb[s].pair_id, Some(a[r].instance_id));
            }
            for (&r, &s) in st.real_b.iter().zip(&st.syn_a) {
                assert_eq!(sa[s].pair_id, Some(b[r].instance_id));
            }
            let mut seen = st.real_b.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), st.real_b.len());
        }
    }

    #[test]
    fn epochs_reorder_the_same_multiset() {
        let (a, b) = (pool(70, Domain::A), pool(70, Domain::B));
        let e1 = build_batches(&a, &b, None, None, 32, 1).unwrap();
        let e2 = build_batches(&a, &b, None, None, 32, 2).unwrap();
        assert_eq!(e1.len(), 3);
        let flat = |e: &[BatchStep]| -> Vec<usize> { e.iter().flat_map(|s| s.real_a.clone()).collect() };
        let (f1, f2) = (flat(&e1), flat(&e2));
        assert_ne!(f1, f2);
        let (mut s1, mut s2) = (f1.clone(), f2.clone());
        s1.sort_unstable();
        s2.sort_unstable();
        assert_eq!(s1, (0..70).collect::<Vec<_>>());
        assert_eq!(s1, s2);
    }

    #[test]
    fn broken_pairing_is_rejected() {
        let (a, b) = (pool(40, Domain::A), pool(40, Domain::B));
        let sa = translations(&b);
        let mut sb = translations(&a);
        sb[3].pair_id = Some(999_999);
        assert!(matches!(
            build_batches(&a, &b, Some(&sa), Some(&sb), 32, 0),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            build_batches(&a, &b, Some(&sa), None, 32, 0),
            Err(Error::Alignment(_))
        ));
    }

    fn encoder() -> Encoder {
        Encoder::init(&EncoderConfig::default()).unwrap()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_encoder() {
        let (_, split) = small_split();
        let data = TrainData {
            train_a: &split.train_a,
            train_b: &split.train_b,
            syn_a: None,
            syn_b: None,
            val_a: &split.val_a,
            val_b: &split.val_b,
        };
        let init = encoder();
        let out = train(init.clone(), &data, &Objective::Contrastive(LossWeights::default()), &config(0)).unwrap();
        assert_eq!(out.encoder, init);
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn training_is_bit_reproducible_and_keeps_the_best_epoch() {
        let (ds, split) = small_split();
        let (sa, sb) = synthetic(&ds, &split);
        let data = TrainData {
            train_a: &split.train_a,
            train_b: &split.train_b,
            syn_a: Some(&sa),
            syn_b: Some(&sb),
            val_a: &split.val_a,
            val_b: &split.val_b,
        };
        let obj = Objective::Contrastive(LossWeights::default());
        let r1 = train(encoder(), &data, &obj, &config(4)).unwrap();
        let r2 = train(encoder(), &data, &obj, &config(4)).unwrap();
        assert_eq!(r1.history, r2.history);
        assert_eq!(r1.encoder, r2.encoder);
        let best = r1.history.iter().map(|h| h.val_prec).fold(f64::MIN, f64::max);
        assert!((r1.best_val_prec - best).abs() < 1e-12);
        let first_best = r1.history.iter().find(|h| h.val_prec == best).unwrap().epoch;
        assert_eq!(r1.best_epoch, first_best);
        for h in &r1.history {
            assert!(h.values().iter().all(|v| v.is_finite()));
            assert!(h.ppp_a > 0.0 && h.cross_a > 0.0);
        }
        let csv = history_csv(&r1.history);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(HISTORY_HEADER));
    }

    #[test]
    fn id_only_logs_no_cross_or_pair_terms() {
        let (_, split) = small_split();
        let data = TrainData {
            train_a: &split.train_a,
            train_b: &split.train_b,
            syn_a: None,
            syn_b: None,
            val_a: &split.val_a,
            val_b: &split.val_b,
        };
        let w = LossWeights {
            lambda_cdm: 0.0,
            ppp: false,
            ..Default::default()
        };
        let out = train(encoder(), &data, &Objective::Contrastive(w), &config(2)).unwrap();
        for h in &out.history {
            assert_eq!((h.cross_a, h.cross_b, h.ppp_a, h.ppp_b), (0.0, 0.0, 0.0, 0.0));
            assert!((h.total - h.id_a - h.id_b).abs() < 1e-12);
        }
    }

    #[test]
    fn distill_needs_latents_and_logs_nonnegative_kl() {
        let (_, split) = small_split();
        let data = TrainData {
            train_a: &split.train_a,
            train_b: &split.train_b,
            syn_a: None,
            syn_b: None,
            val_a: &split.val_a,
            val_b: &split.val_b,
        };
        let out = train(encoder(), &data, &Objective::Distill, &config(2)).unwrap();
        for h in &out.history {
            assert!(h.kl.iter().all(|&v| v >= 0.0));
        }
        let stripped: Vec<DomainSample> = split
            .train_a
            .iter()
            .map(|s| DomainSample {
                latent: None,
                ..s.clone()
            })
            .collect();
        let data = TrainData {
            train_a: &stripped,
            ..data
        };
        assert!(matches!(
            train(encoder(), &data, &Objective::Distill, &config(1)),
            Err(Error::Contract(_))
        ));
    }
}
