//! Training objectives.
//!
//! All losses are built on a [`Graph`] from feature matrices whose rows lie
//! on the unit sphere. Memory banks and teacher features enter as constants,
//! so no gradient ever reaches them.
//!
//! * [`ppp_loss`]: symmetric contrastive loss over aligned real/translated
//!   pairs.
//! * [`id_loss`]: in-domain instance discrimination against a memory bank.
//! * [`cross_domain_entropy`]: entropy of each feature's similarity
//!   distribution over the opposite domain's bank.
//! * [`cds_loss`] / [`total_loss`]: the combinations used for training.
//! * [`distill_loss`]: KL matching of student and teacher similarity
//!   distributions within and across domains.

mod bank;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

pub use bank::MemoryBank;
pub(crate) use bank::check_unit_rows;

const UNIT_TOL: f64 = 1e-6;

/// Loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the cross-domain entropy terms.
    pub lambda_cdm: f64,
    /// Temperature of the pseudo-positive-pair softmax; 1 leaves it bare.
    pub tau_ppp: f64,
    pub bank_temperature: f64,
    pub bank_momentum: f64,
    /// Whether the pseudo-positive-pair terms enter the objective (with
    /// coefficient ½ each).
    pub ppp: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cdm: 1.0,
            tau_ppp: 1.0,
            bank_temperature: 0.05,
            bank_momentum: 0.5,
            ppp: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cdm >= 0.0 && self.lambda_cdm.is_finite()) {
            return Err(Error::Config("lambda_cdm must be >= 0".into()));
        }
        if !(self.tau_ppp > 0.0 && self.tau_ppp.is_finite()) {
            return Err(Error::Config("tau_ppp must be > 0".into()));
        }
        if !(self.bank_temperature > 0.0 && self.bank_temperature.is_finite()) {
            return Err(Error::Config("bank_temperature must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.bank_momentum) {
            return Err(Error::Config("bank_momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn require_unit(g: &Graph, what: &str, v: Var) -> Result<()> {
    check_unit_rows(what, g.value(v), UNIT_TOL)
}

fn require_same_rows(g: &Graph, what: &str, a: Var, b: Var) -> Result<()> {
    let (ra, rb) = (g.shape(a).0, g.shape(b).0);
    if ra != rb {
        return Err(Error::Alignment(format!("{what}: {ra} rows vs {rb} rows")));
    }
    Ok(())
}

/// Pseudo-positive-pair loss for aligned rows: row `i` of `synthetic` is
/// the translation of row `i` of `real`.
///
/// `mean_i −log softmax(real·syntheticᵀ/τ)[i,i] + mean_i −log softmax(synthetic·realᵀ/τ)[i,i]`
pub fn ppp_loss(g: &mut Graph, real: Var, synthetic: Var, tau: f64) -> Result<Var> {
    require_same_rows(g, "ppp_loss", real, synthetic)?;
    require_unit(g, "ppp_loss real features", real)?;
    require_unit(g, "ppp_loss synthetic features", synthetic)?;
    let sim = g.matmul_t(real, synthetic)?;
    let logits = g.scale(sim, 1.0 / tau);
    let forward = g.log_softmax_rows(logits)?;
    let forward = g.diag(forward)?;
    let forward = g.mean(forward);
    let logits_t = g.transpose(logits);
    let backward = g.log_softmax_rows(logits_t)?;
    let backward = g.diag(backward)?;
    let backward = g.mean(backward);
    let both = g.add(forward, backward)?;
    Ok(g.scale(both, -1.0))
}

/// Instance discrimination: each feature should pick out its own bank row.
pub fn id_loss(g: &mut Graph, features: Var, ids: &[u64], bank: &MemoryBank) -> Result<Var> {
    if ids.len() != g.shape(features).0 {
        return Err(Error::Alignment(format!(
            "id_loss: {} ids for {} feature rows",
            ids.len(),
            g.shape(features).0
        )));
    }
    require_unit(g, "id_loss features", features)?;
    let own = bank.positions(ids)?;
    let table = g.constant(bank.features().clone());
    let sim = g.matmul_t(features, table)?;
    let logits = g.scale(sim, 1.0 / bank.temperature());
    let log_probs = g.log_softmax_rows(logits)?;
    let picked = g.pick_per_row(log_probs, &own)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// Mean entropy of `softmax(features·bankᵀ/τ)` over the rows of `features`.
pub fn cross_domain_entropy(g: &mut Graph, features: Var, other: &MemoryBank) -> Result<Var> {
    if other.is_empty() {
        return Err(Error::Contract("cross_domain_entropy: empty bank".into()));
    }
    require_unit(g, "cross_domain_entropy features", features)?;
    let table = g.constant(other.features().clone());
    let sim = g.matmul_t(features, table)?;
    let logits = g.scale(sim, 1.0 / other.temperature());
    let p = g.softmax_rows(logits)?;
    let h = g.entropy_rows(p)?;
    Ok(g.mean(h))
}

/// Features of one domain's batch together with their bank ids.
#[derive(Clone, Debug)]
pub struct BankBatch {
    pub features: Var,
    pub ids: Vec<u64>,
}

#[derive(Clone, Copy, Debug)]
pub struct CdsTerms {
    pub id_a: Var,
    pub id_b: Var,
    pub entropy_a: Var,
    pub entropy_b: Var,
    pub total: Var,
}

/// `id(A) + id(B) + λ·(H(A → bank_B) + H(B → bank_A))`.
pub fn cds_loss(
    g: &mut Graph,
    batch_a: &BankBatch,
    batch_b: &BankBatch,
    bank_a: &MemoryBank,
    bank_b: &MemoryBank,
    weights: &LossWeights,
) -> Result<CdsTerms> {
    let id_a = id_loss(g, batch_a.features, &batch_a.ids, bank_a)?;
    let id_b = id_loss(g, batch_b.features, &batch_b.ids, bank_b)?;
    let entropy_a = cross_domain_entropy(g, batch_a.features, bank_b)?;
    let entropy_b = cross_domain_entropy(g, batch_b.features, bank_a)?;
    let ids = g.add(id_a, id_b)?;
    let ent = g.add(entropy_a, entropy_b)?;
    let ent = g.scale(ent, weights.lambda_cdm);
    let total = g.add(ids, ent)?;
    Ok(CdsTerms {
        id_a,
        id_b,
        entropy_a,
        entropy_b,
        total,
    })
}

/// Aligned real/synthetic feature pair for [`ppp_loss`].
#[derive(Clone, Copy, Debug)]
pub struct PairBatch {
    pub real: Var,
    pub synthetic: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct TotalTerms {
    pub cds: CdsTerms,
    /// `ppp(real A, synthetic B)`, when pairs were supplied.
    pub ppp_a: Option<Var>,
    /// `ppp(real B, synthetic A)`, when pairs were supplied.
    pub ppp_b: Option<Var>,
    pub total: Var,
}

/// `cds + ½·(ppp(A, synB) + ppp(B, synA))`. The pair terms are computed
/// whenever pairs are given but only enter the total if `weights.ppp`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    batch_a: &BankBatch,
    batch_b: &BankBatch,
    pairs_a: Option<PairBatch>,
    pairs_b: Option<PairBatch>,
    bank_a: &MemoryBank,
    bank_b: &MemoryBank,
    weights: &LossWeights,
) -> Result<TotalTerms> {
    let cds = cds_loss(g, batch_a, batch_b, bank_a, bank_b, weights)?;
    let ppp_a = pairs_a
        .map(|p| ppp_loss(g, p.real, p.synthetic, weights.tau_ppp))
        .transpose()?;
    let ppp_b = pairs_b
        .map(|p| ppp_loss(g, p.real, p.synthetic, weights.tau_ppp))
        .transpose()?;
    let mut total = cds.total;
    if weights.ppp {
        for term in [ppp_a, ppp_b].into_iter().flatten() {
            let half = g.scale(term, 0.5);
            total = g.add(total, half)?;
        }
    }
    Ok(TotalTerms {
        cds,
        ppp_a,
        ppp_b,
        total,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DistillTerms {
    /// Terms in order: (A→B, A→A, B→A, B→B).
    pub terms: [Var; 4],
    pub total: Var,
}

/// Similarity distillation: for queries from each domain and candidate sets
/// from each domain, the mean row KL between the student distribution
/// `softmax(f(x)ᵀ f(X))` and the teacher's `softmax(g(x)ᵀ g(X))`.
pub fn distill_loss(
    g: &mut Graph,
    student_a: Var,
    student_b: Var,
    teacher_a: Var,
    teacher_b: Var,
) -> Result<DistillTerms> {
    require_same_rows(g, "distill_loss domain A", student_a, teacher_a)?;
    require_same_rows(g, "distill_loss domain B", student_b, teacher_b)?;
    for (what, v) in [
        ("student A", student_a),
        ("student B", student_b),
        ("teacher A", teacher_a),
        ("teacher B", teacher_b),
    ] {
        require_unit(g, what, v)?;
    }
    let teacher_a = g.detach(teacher_a);
    let teacher_b = g.detach(teacher_b);

    let term = |g: &mut Graph, sq: Var, sc: Var, tq: Var, tc: Var| -> Result<Var> {
        let s = g.matmul_t(sq, sc)?;
        let p = g.softmax_rows(s)?;
        let t = g.matmul_t(tq, tc)?;
        let q = g.softmax_rows(t)?;
        let kl = g.kl_rows(p, q)?;
        Ok(g.mean(kl))
    };
    let ab = term(g, student_a, student_b, teacher_a, teacher_b)?;
    let aa = term(g, student_a, student_a, teacher_a, teacher_a)?;
    let ba = term(g, student_b, student_a, teacher_b, teacher_a)?;
    let bb = term(g, student_b, student_b, teacher_b, teacher_b)?;
    let s1 = g.add(ab, aa)?;
    let s2 = g.add(ba, bb)?;
    let total = g.add(s1, s2)?;
    Ok(DistillTerms {
        terms: [ab, aa, ba, bb],
        total,
    })
}
