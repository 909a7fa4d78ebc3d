//! Self-checks of the loss identities, metrics and graph operations against
//! the reference implementations in [`crate::oracle`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{check_gradients, Tensor};
use crate::downstream::{self, SurvivalRecord};
use crate::encoder::{EmbeddingMatrix, Encoder, EncoderConfig};
use crate::error::Result;
use crate::estimate::BsplineBasis;
use crate::grn::{AugmentationOp, GeneVocabulary, Grn};
use crate::loss::{self, values, LossConfig};
use crate::oracle;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation (or score) for the check.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            passed: measured < tolerance,
            measured,
            tolerance,
            detail,
        }
    }
}

pub fn random_embeddings(rng: &mut impl Rng, k: usize, n: usize, d: usize) -> Vec<EmbeddingMatrix> {
    (0..k)
        .map(|_| {
            let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            EmbeddingMatrix::new(Tensor::new(vec![n, d], data).expect("sized"), "random").expect("finite")
        })
        .collect()
}

pub fn to_mats(embs: &[EmbeddingMatrix]) -> Vec<oracle::Mat> {
    embs.iter()
        .map(|e| e.values.rows().map(<[f64]>::to_vec).collect())
        .collect()
}

/// Joint-KL form against expected node loss plus augmentation loss.
pub fn loss_identity(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let y = random_embeddings(&mut rng, 5, 12, 8);
        let z = random_embeddings(&mut rng, 5, 12, 8);
        let tau_n = rng.random_range(0.2..1.0);
        let tau_a = rng.random_range(0.5..4.0);
        let cfg = LossConfig::new(tau_n, tau_a);
        let (total, _, _) = values::supgcl_exact(&y, &z, &cfg)?;
        let brute = oracle::joint_kl(&to_mats(&y), &to_mats(&z), tau_n, tau_a);
        worst = worst.max((total - brute).abs());
    }
    Ok(CheckResult::below(
        "loss_identity",
        worst,
        1e-6,
        format!("{instances} instances, |V|=12, |K|=5, d=8"),
    ))
}

/// Rescales each matrix to unit Frobenius norm.
pub fn unit_frobenius(embs: Vec<EmbeddingMatrix>) -> Vec<EmbeddingMatrix> {
    embs.into_iter()
        .map(|mut e| {
            let norm = e.values.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            e.values.data_mut().iter_mut().for_each(|v| *v /= norm);
            e
        })
        .collect()
}

/// Relative gaps `|loss - uniform node loss| / uniform` at each `tau_aug`
/// and the largest deviation of `p` from uniform at the last one.
///
/// The deviation of `p` shrinks like `max |<Y_a, Y_b>| / tau_aug`, so the
/// embeddings are scaled to unit Frobenius norm when `unit_norm` is set.
pub fn temperature_gaps(seed: u64, taus: &[f64], unit_norm: bool) -> Result<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = random_embeddings(&mut rng, 5, 12, 8);
    let mut z = random_embeddings(&mut rng, 5, 12, 8);
    if unit_norm {
        y = unit_frobenius(y);
        z = unit_frobenius(z);
    }
    let tau_n = 0.5;
    let uniform = values::uniform_node_loss(&z, tau_n)?;
    let mut gaps = Vec::with_capacity(taus.len());
    let mut deviation = 0.0;
    for &t in taus {
        let cfg = LossConfig::new(tau_n, t);
        let (total, _, _) = values::supgcl_exact(&y, &z, &cfg)?;
        gaps.push((total - uniform).abs() / uniform.abs());
        let d = loss::aug_distributions(&y, &z, &cfg)?;
        let k = d.p.shape()[0] as f64;
        deviation = d.p.data().iter().map(|p| (p - 1.0 / k).abs()).fold(0.0, f64::max);
    }
    Ok((gaps, deviation))
}

pub fn temperature_limit(seed: u64) -> Result<CheckResult> {
    let taus = [1.0, 10.0, 1e3, 1e6];
    let (gaps, deviation) = temperature_gaps(seed, &taus, true)?;
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = gaps[gaps.len() - 1];
    Ok(CheckResult {
        name: "temperature_limit".into(),
        passed: last < 1e-4 && deviation < 1e-6 && monotone,
        measured: last,
        tolerance: 1e-4,
        detail: format!(
            "unit-norm embeddings; gaps {gaps:?}, max |p - 1/K| {deviation:e}, monotone {monotone}"
        ),
    })
}

/// Enumeration and Monte Carlo checks of the sampled estimator.
pub fn sampling_unbiased(seed: u64, draws: usize) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = random_embeddings(&mut rng, 5, 12, 8);
    let z = random_embeddings(&mut rng, 5, 12, 8);
    let cfg = LossConfig::new(0.5, 1.0);
    let (exact, _, _) = values::supgcl_exact(&y, &z, &cfg)?;
    let table = values::supgcl_sampled_all(&y, &z, &cfg)?;
    let enumerated = table.iter().sum::<f64>() / table.len() as f64;
    let samples: Vec<f64> = (0..draws).map(|_| table[rng.random_range(0..table.len())]).collect();
    let mean = samples.iter().sum::<f64>() / draws as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    Ok(((enumerated - exact).abs(), (mean - exact).abs(), se))
}

pub fn sampling_check(seed: u64) -> Result<CheckResult> {
    let (enum_gap, mc_gap, se) = sampling_unbiased(seed, 10_000)?;
    Ok(CheckResult {
        name: "sampling_unbiased".into(),
        passed: enum_gap < 1e-10 && mc_gap < 3.0 * se,
        measured: enum_gap,
        tolerance: 1e-10,
        detail: format!("Monte Carlo |mean - exact| = {mc_gap:e}, 3 SE = {:e}", 3.0 * se),
    })
}

pub fn random_survival(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<SurvivalRecord>) {
    // Small integer grids so ties in both time and risk occur often.
    let risks = (0..n).map(|_| f64::from(rng.random_range(0..6u8)) * 0.5).collect();
    let mut records: Vec<SurvivalRecord> = (0..n)
        .map(|_| SurvivalRecord {
            time: f64::from(rng.random_range(1..12u8)),
            event: rng.random_bool(0.6),
        })
        .collect();
    records[0].event = true;
    (risks, records)
}

pub fn random_labels(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Vec<bool>> {
    (0..n).map(|_| (0..k).map(|_| rng.random_bool(0.4)).collect()).collect()
}

/// Production metrics against brute force on random instances; returns
/// the number of mismatching instances.
pub fn metric_oracles(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..instances {
        let n = rng.random_range(2..=200);
        let (risks, records) = random_survival(&mut rng, n);
        let fast = downstream::c_index(&risks, &records).ok();
        if fast != oracle::c_index(&risks, &records) {
            mismatches += 1;
        }
        let k = rng.random_range(1..=5);
        let pred = random_labels(&mut rng, n, k);
        let truth = random_labels(&mut rng, n, k);
        mismatches += usize::from(downstream::subset_accuracy(&pred, &truth)? != oracle::subset_accuracy(&pred, &truth));
        mismatches += usize::from(downstream::macro_f1(&pred, &truth)? != oracle::macro_f1(&pred, &truth));
        mismatches += usize::from(downstream::jaccard_index(&pred, &truth)? != oracle::jaccard_index(&pred, &truth));
    }
    Ok(CheckResult::below(
        "metric_oracles",
        mismatches as f64,
        0.5,
        format!("{instances} random instances per metric, n <= 200"),
    ))
}

pub fn cox_shift(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..50);
        let (mut risks, records) = random_survival(&mut rng, n);
        for r in &mut risks {
            *r += rng.random_range(-1.0..1.0);
        }
        let base = downstream::cox_npll(&risks, &records)?;
        for c in [-5.0, 0.3, 100.0] {
            let shifted: Vec<f64> = risks.iter().map(|r| r + c).collect();
            worst = worst.max((downstream::cox_npll(&shifted, &records)? - base).abs());
        }
    }
    Ok(CheckResult::below("cox_shift", worst, 1e-9, "shifts -5, 0.3, 100".into()))
}

pub fn random_grn(rng: &mut impl Rng, n: usize, density: f64) -> Grn {
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(density) {
                edges.push((s, d));
            }
        }
    }
    let nf = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ef = (0..edges.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    Grn::new(Arc::new(GeneVocabulary::numbered(n)), edges, nf, ef).expect("valid graph")
}

/// Whether knocking down `a` in `g` gives `k` under the masking rules.
pub fn knockdown_holds(g: &Grn, a: usize, k: &Grn) -> bool {
    let topology = k.edges() == g.edges();
    let nodes = (0..g.num_nodes()).all(|i| {
        let want = if i == a { 0.0 } else { g.node_features()[i] };
        k.node_features()[i] == want
    });
    let edges = g.edges().iter().enumerate().all(|(e, &(s, d))| {
        let want = if s == a || d == a { 0.0 } else { g.edge_features()[e] };
        k.edge_features()[e] == want
    });
    topology && nodes && edges
}

pub fn knockdown_masking(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    for _ in 0..cases {
        let n = rng.random_range(1..20);
        let density = rng.random_range(0.0..0.5);
        let g = random_grn(&mut rng, n, density);
        let a = rng.random_range(0..n);
        let op = AugmentationOp::new(a);
        let k = g.apply_knockdown(op)?;
        let kk = k.apply_knockdown(op)?;
        if kk != k || !knockdown_holds(&g, a, &k) {
            failures += 1;
        }
    }
    Ok(CheckResult::below(
        "knockdown_masking",
        failures as f64,
        0.5,
        format!("{cases} random (graph, gene) cases"),
    ))
}

pub fn spline_partition(points: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
    let basis = BsplineBasis::quantile(&values, 10, 3)?;
    let (lo, hi) = basis.domain();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = rng.random_range(lo..hi);
        let b = basis.evaluate(x);
        worst = worst.max((b.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(CheckResult::below(
        "spline_partition",
        worst,
        1e-12,
        format!("{points} interior points, 10 cubic bases"),
    ))
}

/// Finite-difference check of the exact loss through a small encoder.
pub fn encoder_gradients(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig {
        layers: 1,
        hidden_dim: 4,
        heads: 2,
        reverse_edges: true,
        seed,
    };
    let enc = Encoder::new(cfg, 5)?;
    let g = random_grn(&mut rng, 5, 0.4);
    let teachers: Vec<Grn> = (0..3).map(|_| random_grn(&mut rng, 5, 0.4)).collect();
    let lc = LossConfig::new(0.5, 1.0);
    let report = check_gradients(enc.params(), 1e-5, |tape, bound| {
        let mut y = Vec::new();
        let mut z = Vec::new();
        for (a, t) in teachers.iter().enumerate() {
            y.push(enc.forward(tape, bound, t)?);
            z.push(enc.forward(tape, bound, &g.apply_knockdown(AugmentationOp::new(a))?)?);
        }
        Ok(loss::supgcl_loss_exact(tape, &y, &z, &lc)?.total)
    })?;
    Ok(CheckResult::below(
        "encoder_gradients",
        report.max_rel_error,
        1e-4,
        format!("{} parameters", report.checked),
    ))
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        loss_identity(20, seed)?,
        temperature_limit(seed)?,
        sampling_check(seed)?,
        metric_oracles(100, seed)?,
        cox_shift(seed)?,
        knockdown_masking(1000, seed)?,
        spline_partition(10_000, seed)?,
        encoder_gradients(seed)?,
    ])
}
