//! Node-level and augmentation-level contrastive losses.
//!
//! Node level: for a pair of augmentations `(a, b)`,
//! `q(j | i) = softmax_j(cos(z_i^a, z_j^b) / tau_node)` against the point-mass
//! reference `p(j | i) = [i == j]`, so
//! `node_loss = -(1/|V|) sum_i log q(i | i)`.
//!
//! Augmentation level: `p(b | a) = softmax_b(<Y^a, Y^b>_F / tau_aug)` from
//! teacher embeddings and `q(b | a)` likewise from the knocked-down patient
//! embeddings; `aug_loss = (1/|K|) sum_a KL(p(.|a) || q(.|a))`.
//!
//! The joint loss over `(node, augmentation)` pairs, with the reference
//! factorising into the node and augmentation parts, splits into
//! `E_{a ~ U, b ~ p(.|a)}[node_loss(a, b)] + aug_loss`; that split is what
//! [`supgcl_loss_exact`] evaluates.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::EmbeddingMatrix;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau_node: f64,
    pub tau_aug: f64,
    /// Divide Frobenius similarities by the matrix norms (ablation only).
    pub normalize_frobenius: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_node: 0.25,
            tau_aug: 0.25,
            normalize_frobenius: false,
        }
    }
}

impl LossConfig {
    pub fn new(tau_node: f64, tau_aug: f64) -> Self {
        Self {
            tau_node,
            tau_aug,
            normalize_frobenius: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau_node > 0.0 && self.tau_node.is_finite(),
            Config,
            "tau_node must be positive and finite"
        );
        ensure!(self.tau_aug > 0.0, Config, "tau_aug must be positive");
        Ok(())
    }
}

/// `-(1/|V|) sum_i log q(i | i)` with cosine logits at temperature `tau_node`.
pub fn node_loss(tape: &mut Tape, za: Var, zb: Var, tau_node: f64) -> Result<Var> {
    ensure!(
        tape.shape(za) == tape.shape(zb),
        Contract,
        "node_loss: embedding shapes {:?} and {:?} differ",
        tape.shape(za),
        tape.shape(zb)
    );
    let (n, _) = tape.value(za).dims2()?;
    ensure!(n > 0, Contract, "node_loss over an empty node set");
    let za_n = tape.row_normalize(za)?;
    let zb_n = tape.row_normalize(zb)?;
    let zb_t = tape.transpose(zb_n)?;
    let sims = tape.matmul(za_n, zb_t)?;
    let log_q = tape.log_softmax_rows(sims, tau_node)?;
    let eye = tape.constant(Tensor::identity(n));
    let diag = tape.mul(log_q, eye)?;
    let total = tape.sum(diag)?;
    tape.scale(total, -1.0 / n as f64)
}

/// Node-level baseline loss; identical to [`node_loss`].
pub fn grace_style_loss(tape: &mut Tape, za: Var, zb: Var, tau_node: f64) -> Result<Var> {
    node_loss(tape, za, zb, tau_node)
}

/// `[K, K]` Frobenius-similarity logits (not yet divided by temperature).
pub fn frobenius_logits(tape: &mut Tape, embs: &[Var], normalize: bool) -> Result<Var> {
    ensure!(!embs.is_empty(), Contract, "no embeddings for augmentation distribution");
    let shape = tape.shape(embs[0]).to_vec();
    let flat_len: usize = shape.iter().product();
    let mut rows = Vec::with_capacity(embs.len());
    for &e in embs {
        ensure!(
            tape.shape(e) == shape.as_slice(),
            Contract,
            "embedding shapes differ across augmentations: {:?} vs {:?}",
            tape.shape(e),
            shape
        );
        rows.push(tape.reshape(e, &[1, flat_len])?);
    }
    let mut stacked = tape.concat_rows(&rows)?;
    if normalize {
        stacked = tape.row_normalize(stacked)?;
    }
    let t = tape.transpose(stacked)?;
    tape.matmul(stacked, t)
}

/// Row-wise `log softmax_b(<E^a, E^b>_F / tau_aug)`.
pub fn aug_log_probs(tape: &mut Tape, embs: &[Var], tau_aug: f64, normalize: bool) -> Result<Var> {
    let logits = frobenius_logits(tape, embs, normalize)?;
    tape.log_softmax_rows(logits, tau_aug)
}

/// `(1/K) sum_a sum_b p(b|a) (log p(b|a) - log q(b|a))` from log-probabilities.
pub fn aug_loss_from_logs(tape: &mut Tape, log_p: Var, log_q: Var) -> Result<Var> {
    let (k, _) = tape.value(log_p).dims2()?;
    let p = tape.exp(log_p)?;
    let diff = tape.sub(log_p, log_q)?;
    let kl = tape.frobenius_inner(p, diff)?;
    tape.scale(kl, 1.0 / k as f64)
}

/// Plain-value augmentation distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct AugDistributions {
    /// Teacher-side `p(b | a)`, `[K, K]`, rows stochastic.
    pub p: Tensor,
    /// Patient-side `q(b | a)`, `[K, K]`, rows stochastic.
    pub q: Tensor,
}

fn embeddings_on(tape: &mut Tape, embs: &[EmbeddingMatrix]) -> Vec<Var> {
    embs.iter().map(|e| tape.constant(e.values.clone())).collect()
}

pub fn aug_distributions(
    teacher: &[EmbeddingMatrix],
    patient: &[EmbeddingMatrix],
    cfg: &LossConfig,
) -> Result<AugDistributions> {
    ensure!(
        teacher.len() == patient.len(),
        Contract,
        "{} teacher and {} patient embeddings",
        teacher.len(),
        patient.len()
    );
    let mut tape = Tape::new();
    let y = embeddings_on(&mut tape, teacher);
    let z = embeddings_on(&mut tape, patient);
    ensure!(
        y.first().map(|&v| tape.shape(v).to_vec()) == z.first().map(|&v| tape.shape(v).to_vec()),
        Contract,
        "teacher and patient embedding shapes differ"
    );
    let log_p = aug_log_probs(&mut tape, &y, cfg.tau_aug, cfg.normalize_frobenius)?;
    let log_q = aug_log_probs(&mut tape, &z, cfg.tau_aug, cfg.normalize_frobenius)?;
    Ok(AugDistributions {
        p: tape.value(log_p).map(f64::exp),
        q: tape.value(log_q).map(f64::exp),
    })
}

/// `(1/K) sum_a KL(p(.|a) || q(.|a))`.
pub fn aug_loss(d: &AugDistributions) -> Result<f64> {
    ensure!(d.p.shape() == d.q.shape(), Contract, "p and q shapes differ");
    let (k, _) = d.p.dims2()?;
    let mut total = 0.0;
    for (pr, qr) in d.p.rows().zip(d.q.rows()) {
        for (&p, &q) in pr.iter().zip(qr) {
            if p > 0.0 {
                total += p * (p.ln() - q.ln());
            }
        }
    }
    Ok(total / k as f64)
}

/// Tape handles of a loss and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub node: Var,
    pub aug: Var,
}

fn check_views(tape: &Tape, teacher: &[Var], patient: &[Var]) -> Result<()> {
    ensure!(!patient.is_empty(), Contract, "augmentation set is empty");
    ensure!(
        teacher.len() == patient.len(),
        Contract,
        "need a teacher embedding for every augmentation: {} teachers for {} augmentations",
        teacher.len(),
        patient.len()
    );
    let shape = tape.shape(patient[0]);
    ensure!(
        teacher.iter().chain(patient).all(|&v| tape.shape(v) == shape),
        Contract,
        "embedding shapes differ across views"
    );
    Ok(())
}

/// Full enumeration over `(a, b)`:
/// `(1/K) sum_a sum_b p(b|a) node_loss(Z^a, Z^b) + aug_loss`.
///
/// `teacher[i]` and `patient[i]` must describe the same augmentation.
pub fn supgcl_loss_exact(
    tape: &mut Tape,
    teacher: &[Var],
    patient: &[Var],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    check_views(tape, teacher, patient)?;
    let k = patient.len();
    let log_p = aug_log_probs(tape, teacher, cfg.tau_aug, cfg.normalize_frobenius)?;
    let log_q = aug_log_probs(tape, patient, cfg.tau_aug, cfg.normalize_frobenius)?;
    let mut rows = Vec::with_capacity(k);
    for &za in patient {
        let mut row = Vec::with_capacity(k);
        for &zb in patient {
            let l = node_loss(tape, za, zb, cfg.tau_node)?;
            row.push(tape.reshape(l, &[1, 1])?);
        }
        rows.push(tape.concat_cols(&row)?);
    }
    let node_matrix = tape.concat_rows(&rows)?;
    let p = tape.exp(log_p)?;
    let expected = tape.frobenius_inner(p, node_matrix)?;
    let node = tape.scale(expected, 1.0 / k as f64)?;
    let aug = aug_loss_from_logs(tape, log_p, log_q)?;
    let total = tape.add(node, aug)?;
    Ok(LossTerms { total, node, aug })
}

/// One importance-sampled draw for a uniformly drawn pair `(a, b)` of
/// positions in the augmentation list.
#[derive(Debug, Clone, Copy)]
pub struct SampledLoss {
    pub terms: LossTerms,
    /// `K * p(b | a)`.
    pub weight: f64,
}

/// `K p(b|a) node_loss(Z^a, Z^b) + K p(b|a) (log p(b|a) - log q(b|a))`.
///
/// Averaged over all `K^2` pairs this equals [`supgcl_loss_exact`].
pub fn supgcl_loss_sampled(
    tape: &mut Tape,
    teacher: &[Var],
    patient: &[Var],
    a: usize,
    b: usize,
    cfg: &LossConfig,
) -> Result<SampledLoss> {
    check_views(tape, teacher, patient)?;
    let k = patient.len();
    ensure!(a < k && b < k, Contract, "augmentation pair ({a}, {b}) out of range for {k}");
    let log_p = aug_log_probs(tape, teacher, cfg.tau_aug, cfg.normalize_frobenius)?;
    let log_q = aug_log_probs(tape, patient, cfg.tau_aug, cfg.normalize_frobenius)?;
    let flat = a * k + b;
    let log_p_ab = tape.index(log_p, flat)?;
    let log_q_ab = tape.index(log_q, flat)?;
    let p_ab = tape.exp(log_p_ab)?;
    let weight = tape.scale(p_ab, k as f64)?;
    let weight_value = tape.item(weight)?;

    let l_node = node_loss(tape, patient[a], patient[b], cfg.tau_node)?;
    let node = tape.mul(weight, l_node)?;
    let log_ratio = tape.sub(log_p_ab, log_q_ab)?;
    let aug = tape.mul(weight, log_ratio)?;
    let total = tape.add(node, aug)?;
    Ok(SampledLoss {
        terms: LossTerms { total, node, aug },
        weight: weight_value,
    })
}

/// `(1/K^2) sum_{a,b} node_loss(Z^a, Z^b)`: the node loss under uniform pairs.
pub fn uniform_node_loss(tape: &mut Tape, patient: &[Var], tau_node: f64) -> Result<Var> {
    ensure!(!patient.is_empty(), Contract, "augmentation set is empty");
    let k = patient.len();
    let mut terms = Vec::with_capacity(k * k);
    for &za in patient {
        for &zb in patient {
            let l = node_loss(tape, za, zb, tau_node)?;
            terms.push(tape.reshape(l, &[1, 1])?);
        }
    }
    let all = tape.concat_rows(&terms)?;
    tape.mean(all)
}

/// Value-level evaluation helpers over fixed embeddings.
pub mod values {
    use super::*;

    fn load(teacher: &[EmbeddingMatrix], patient: &[EmbeddingMatrix]) -> (Tape, Vec<Var>, Vec<Var>) {
        let mut tape = Tape::new();
        let y = embeddings_on(&mut tape, teacher);
        let z = embeddings_on(&mut tape, patient);
        (tape, y, z)
    }

    pub fn node_loss(za: &EmbeddingMatrix, zb: &EmbeddingMatrix, tau_node: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let a = tape.constant(za.values.clone());
        let b = tape.constant(zb.values.clone());
        let l = super::node_loss(&mut tape, a, b, tau_node)?;
        tape.item(l)
    }

    /// `(total, node term, aug term)` of the exact loss.
    pub fn supgcl_exact(
        teacher: &[EmbeddingMatrix],
        patient: &[EmbeddingMatrix],
        cfg: &LossConfig,
    ) -> Result<(f64, f64, f64)> {
        let (mut tape, y, z) = load(teacher, patient);
        let t = super::supgcl_loss_exact(&mut tape, &y, &z, cfg)?;
        Ok((tape.item(t.total)?, tape.item(t.node)?, tape.item(t.aug)?))
    }

    /// Estimator value for every `(a, b)`, row-major `[K * K]`.
    pub fn supgcl_sampled_all(
        teacher: &[EmbeddingMatrix],
        patient: &[EmbeddingMatrix],
        cfg: &LossConfig,
    ) -> Result<Vec<f64>> {
        let k = patient.len();
        let (mut tape, y, z) = load(teacher, patient);
        let mut out = Vec::with_capacity(k * k);
        for a in 0..k {
            for b in 0..k {
                let s = super::supgcl_loss_sampled(&mut tape, &y, &z, a, b, cfg)?;
                out.push(tape.item(s.terms.total)?);
            }
        }
        Ok(out)
    }

    pub fn uniform_node_loss(patient: &[EmbeddingMatrix], tau_node: f64) -> Result<f64> {
        let (mut tape, _, z) = load(&[], patient);
        let l = super::uniform_node_loss(&mut tape, &z, tau_node)?;
        tape.item(l)
    }
}
