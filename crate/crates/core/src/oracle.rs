//! Slow reference implementations written directly from the definitions,
//! sharing no code with the production paths. Used by the `verify`
//! command and by tests.

#![allow(clippy::needless_range_loop)]

use crate::downstream::SurvivalRecord;

/// Row-major `rows x cols` matrix as nested vectors.
pub type Mat = Vec<Vec<f64>>;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn frobenius(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

/// `softmax(logits / t)` over one row.
fn softmax(logits: &[f64], t: f64) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / t));
    let e: Vec<f64> = logits.iter().map(|&x| (x / t - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `p[a][b]`: augmentation distribution from whole-matrix inner products.
pub fn aug_distribution(embs: &[Mat], tau_aug: f64) -> Mat {
    embs.iter()
        .map(|ya| {
            let logits: Vec<f64> = embs.iter().map(|yb| frobenius(ya, yb)).collect();
            softmax(&logits, tau_aug)
        })
        .collect()
}

/// `q^{a,b}[i][j]`: node distribution of view `b` given node `i` of view `a`.
pub fn node_distribution(za: &Mat, zb: &Mat, tau_node: f64) -> Mat {
    za.iter()
        .map(|zi| {
            let logits: Vec<f64> = zb.iter().map(|zj| cosine(zi, zj)).collect();
            softmax(&logits, tau_node)
        })
        .collect()
}

/// Averaged joint KL over `(i, a)` between `p(j, b | i, a) = [i = j] p(b|a)`
/// and `q(j, b | i, a) = q^{a,b}(j|i) q(b|a)`, by enumeration over
/// `(i, a, j, b)`.
pub fn joint_kl(teacher: &[Mat], patient: &[Mat], tau_node: f64, tau_aug: f64) -> f64 {
    let k = patient.len();
    let n = patient[0].len();
    let p = aug_distribution(teacher, tau_aug);
    let q = aug_distribution(patient, tau_aug);
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            let qn = node_distribution(&patient[a], &patient[b], tau_node);
            for i in 0..n {
                for j in 0..n {
                    let pj = if i == j { p[a][b] } else { 0.0 };
                    if pj > 0.0 {
                        let qj = qn[i][j] * q[a][b];
                        total += pj * (pj / qj).ln();
                    }
                }
            }
        }
    }
    total / (n * k) as f64
}

/// `-(1/|V|) sum_i log q(i|i)` for two views.
pub fn node_loss(za: &Mat, zb: &Mat, tau_node: f64) -> f64 {
    let q = node_distribution(za, zb, tau_node);
    -(0..za.len()).map(|i| q[i][i].ln()).sum::<f64>() / za.len() as f64
}

/// Node loss averaged over all ordered view pairs.
pub fn uniform_node_loss(patient: &[Mat], tau_node: f64) -> f64 {
    let k = patient.len();
    let mut s = 0.0;
    for za in patient {
        for zb in patient {
            s += node_loss(za, zb, tau_node);
        }
    }
    s / (k * k) as f64
}

/// Brute-force Harrell concordance; `None` without comparable pairs.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if records[i].event && records[i].time < records[j].time {
                den += 1.0;
                if risks[i] > risks[j] {
                    num += 1.0;
                } else if risks[i] == risks[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Negative log partial likelihood with Breslow ties, no stabilisation.
pub fn cox_npll(risks: &[f64], records: &[SurvivalRecord]) -> f64 {
    let mut total = 0.0;
    for i in 0..risks.len() {
        if !records[i].event {
            continue;
        }
        let denom: f64 = (0..risks.len())
            .filter(|&j| records[j].time >= records[i].time)
            .map(|j| risks[j].exp())
            .sum();
        total += denom.ln() - risks[i];
    }
    total
}

pub fn subset_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let mut hits = 0;
    for s in 0..truth.len() {
        if (0..truth[s].len()).all(|c| pred[s][c] == truth[s][c]) {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

/// Per-column precision/recall F1, zero when undefined, averaged.
pub fn macro_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let k = truth[0].len();
    let mut sum = 0.0;
    for c in 0..k {
        let tp = (0..truth.len()).filter(|&s| pred[s][c] && truth[s][c]).count() as f64;
        let pp = (0..truth.len()).filter(|&s| pred[s][c]).count() as f64;
        let ap = (0..truth.len()).filter(|&s| truth[s][c]).count() as f64;
        if pp + ap > 0.0 {
            sum += 2.0 * tp / (pp + ap);
        }
    }
    sum / k as f64
}

pub fn jaccard_index(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let mut sum = 0.0;
    for s in 0..truth.len() {
        let mut inter = 0.0;
        let mut union = 0.0;
        for c in 0..truth[s].len() {
            if pred[s][c] || truth[s][c] {
                union += 1.0;
            }
            if pred[s][c] && truth[s][c] {
                inter += 1.0;
            }
        }
        sum += if union == 0.0 { 1.0 } else { inter / union };
    }
    sum / truth.len() as f64
}
