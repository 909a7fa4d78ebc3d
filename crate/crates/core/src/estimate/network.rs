use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bspline::{BsplineBasis, BsplineCurve};
use super::expression::ExpressionMatrix;
use crate::error::{ensure, Error, Result};
use crate::grn::{GeneVocabulary, Grn};

/// Smallest residual variance used in the likelihood.
pub const NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Basis functions per curve.
    pub n_basis: usize,
    pub degree: usize,
    /// Ridge penalty on spline weights.
    pub ridge: f64,
    /// Multiplier on the `log(n)/2` complexity penalty.
    pub kappa: f64,
    pub max_parents: usize,
    pub max_iters: usize,
    pub runs: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            n_basis: 10,
            degree: 3,
            ridge: 1e-3,
            kappa: 1.0,
            max_parents: 5,
            max_iters: 1000,
            runs: 1000,
            threshold: 0.05,
            seed: 0,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_basis > self.degree, Config, "n_basis must exceed degree");
        ensure!(self.ridge > 0.0, Config, "ridge must be positive");
        ensure!(self.kappa >= 0.0, Config, "kappa must be non-negative");
        ensure!(self.max_parents >= 1, Config, "max_parents must be positive");
        ensure!(self.runs >= 1, Config, "runs must be positive");
        ensure!(
            self.threshold > 0.0 && self.threshold <= 1.0,
            Config,
            "threshold must lie in (0, 1]"
        );
        Ok(())
    }
}

/// Additive spline regression of one child on its parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// One curve per parent, in the order given.
    pub curves: Vec<BsplineCurve>,
    /// Constant prediction; used only when there are no parents.
    pub offset: f64,
    pub noise_var: f64,
    pub num_params: usize,
}

impl RegressionFit {
    pub fn predict(&self, parent_values: &[f64]) -> f64 {
        if self.curves.is_empty() {
            return self.offset;
        }
        self.curves.iter().zip(parent_values).map(|(c, &x)| c.eval_quiet(x).0).sum()
    }
}

/// Fits `child ~ sum_j m_j(parent_j)` by ridge-penalised least squares.
///
/// The penalty makes the normal equations positive definite, so the solve
/// cannot fail on rank-deficient designs (constant or duplicated parents).
/// With no parents the fit is the sample mean.
pub fn fit_regression(child: &[f64], parents: &[&[f64]], cfg: &EstimateConfig) -> Result<RegressionFit> {
    let n = child.len();
    ensure!(n > 0, Validation, "no samples");
    ensure!(
        parents.iter().all(|p| p.len() == n),
        Contract,
        "parent columns must have {n} samples"
    );
    ensure!(child.iter().all(|v| v.is_finite()), Validation, "child values must be finite");
    if parents.is_empty() {
        let mean = child.iter().sum::<f64>() / n as f64;
        let rss: f64 = child.iter().map(|v| (v - mean).powi(2)).sum();
        return Ok(RegressionFit {
            curves: Vec::new(),
            offset: mean,
            noise_var: (rss / n as f64).max(NOISE_FLOOR),
            num_params: 2,
        });
    }
    ensure!(
        n >= cfg.n_basis,
        Validation,
        "{n} samples is fewer than {} basis functions",
        cfg.n_basis
    );
    let m = cfg.n_basis;
    let cols = m * parents.len();
    let bases: Vec<BsplineBasis> = parents
        .iter()
        .map(|p| BsplineBasis::quantile(p, m, cfg.degree))
        .collect::<Result<_>>()?;

    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    let mut rhs = DVector::<f64>::zeros(cols);
    let mut row = vec![0.0; cols];
    let mut nz: Vec<usize> = Vec::with_capacity(parents.len() * (cfg.degree + 1));
    let mut design = Vec::with_capacity(n);
    for s in 0..n {
        nz.clear();
        for (j, (basis, p)) in bases.iter().zip(parents).enumerate() {
            let block = &mut row[j * m..(j + 1) * m];
            basis.evaluate_into(p[s], block);
            nz.extend((0..m).filter(|&c| block[c] != 0.0).map(|c| j * m + c));
        }
        for &a in &nz {
            rhs[a] += row[a] * child[s];
            for &b in &nz {
                gram[(a, b)] += row[a] * row[b];
            }
        }
        design.push(nz.iter().map(|&c| (c, row[c])).collect::<Vec<_>>());
    }
    for c in 0..cols {
        gram[(c, c)] += cfg.ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("penalised normal equations are not positive definite".into()))?;
    let w = chol.solve(&rhs);
    let rss: f64 = design
        .iter()
        .zip(child)
        .map(|(terms, y)| {
            let pred: f64 = terms.iter().map(|&(c, b)| b * w[c]).sum();
            (y - pred).powi(2)
        })
        .sum();
    let curves = bases
        .into_iter()
        .enumerate()
        .map(|(j, basis)| BsplineCurve::new(basis, w.as_slice()[j * m..(j + 1) * m].to_vec()))
        .collect::<Result<_>>()?;
    Ok(RegressionFit {
        curves,
        offset: 0.0,
        noise_var: (rss / n as f64).max(NOISE_FLOOR),
        num_params: cols + 1,
    })
}

/// Gaussian log-likelihood at the fitted variance minus
/// `kappa * num_params * log(n) / 2`.
pub fn local_score(fit: &RegressionFit, n: usize, kappa: f64) -> f64 {
    let n = n as f64;
    let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * fit.noise_var).ln() + 1.0);
    loglik - kappa * fit.num_params as f64 * n.ln() / 2.0
}

fn local_score_of(data: &ExpressionMatrix, node: usize, parents: &[usize], cfg: &EstimateConfig) -> Result<f64> {
    let cols: Vec<&[f64]> = parents.iter().map(|&j| data.gene(j)).collect();
    let fit = fit_regression(data.gene(node), &cols, cfg)?;
    Ok(local_score(&fit, data.num_samples(), cfg.kappa))
}

/// Fitted Bayesian network with one spline curve per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BsplineBayesNet {
    genes: Arc<GeneVocabulary>,
    /// Sorted parent list of each node.
    parents: Vec<Vec<usize>>,
    fits: Vec<RegressionFit>,
}

impl BsplineBayesNet {
    /// Fits curves for the given structure on `data`.
    pub fn fit(data: &ExpressionMatrix, parents: Vec<Vec<usize>>, cfg: &EstimateConfig) -> Result<Self> {
        let n = data.num_genes();
        ensure!(parents.len() == n, Contract, "{} parent sets for {n} genes", parents.len());
        let mut parents = parents;
        for (i, pa) in parents.iter_mut().enumerate() {
            pa.sort_unstable();
            pa.dedup();
            ensure!(pa.iter().all(|&j| j < n && j != i), Validation, "invalid parent set for gene {i}");
        }
        ensure!(is_acyclic(&parents), Validation, "structure has a directed cycle");
        let fits = parents
            .par_iter()
            .enumerate()
            .map(|(i, pa)| {
                let cols: Vec<&[f64]> = pa.iter().map(|&j| data.gene(j)).collect();
                fit_regression(data.gene(i), &cols, cfg)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            genes: data.genes().clone(),
            parents,
            fits,
        })
    }

    pub fn genes(&self) -> &Arc<GeneVocabulary> {
        &self.genes
    }

    pub fn parents(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub fn fit_of(&self, node: usize) -> &RegressionFit {
        &self.fits[node]
    }

    /// Edges `(parent, child)`, ordered by child then parent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(i, pa)| pa.iter().map(move |&j| (j, i)))
            .collect()
    }

    /// Curve `m_ij` on edge `j -> i`.
    pub fn curve(&self, j: usize, i: usize) -> Option<&BsplineCurve> {
        let k = self.parents[i].iter().position(|&p| p == j)?;
        Some(&self.fits[i].curves[k])
    }

    pub fn noise_var(&self, node: usize) -> f64 {
        self.fits[node].noise_var
    }
}

/// Structure score of `net` on `data`; parameters are refit, so only the
/// parent sets matter.
pub fn network_score(net: &BsplineBayesNet, data: &ExpressionMatrix, cfg: &EstimateConfig) -> Result<f64> {
    ensure!(
        data.genes() == net.genes(),
        Contract,
        "network and data use different gene vocabularies"
    );
    structure_score(data, net.parents(), cfg)
}

pub fn structure_score(data: &ExpressionMatrix, parents: &[Vec<usize>], cfg: &EstimateConfig) -> Result<f64> {
    let scores: Vec<f64> = parents
        .par_iter()
        .enumerate()
        .map(|(i, pa)| local_score_of(data, i, pa, cfg))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum())
}

fn children_of(parents: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut ch = vec![Vec::new(); parents.len()];
    for (i, pa) in parents.iter().enumerate() {
        for &j in pa {
            ch[j].push(i);
        }
    }
    ch
}

/// Whether a directed path `from -> ... -> to` exists.
fn reaches(children: &[Vec<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; children.len()];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if !std::mem::replace(&mut seen[v], true) {
            stack.extend(&children[v]);
        }
    }
    false
}

pub fn is_acyclic(parents: &[Vec<usize>]) -> bool {
    let n = parents.len();
    let children = children_of(parents);
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut visited = 0;
    while let Some(v) = queue.pop() {
        visited += 1;
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push(c);
            }
        }
    }
    visited == n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

/// Result of one greedy search.
#[derive(Debug, Clone)]
pub struct HillClimbResult {
    pub net: BsplineBayesNet,
    /// Structure score after each accepted move, starting from the empty graph.
    pub scores: Vec<f64>,
}

/// Greedy search from the empty graph over single-edge additions, deletions
/// and reversals. Exact score ties are broken uniformly at random.
pub fn hill_climb<R: Rng + ?Sized>(
    data: &ExpressionMatrix,
    cfg: &EstimateConfig,
    rng: &mut R,
    max_iters: usize,
) -> Result<HillClimbResult> {
    let parents = search_structure(data, cfg, rng, max_iters)?;
    let scores = parents.1;
    let net = BsplineBayesNet::fit(data, parents.0, cfg)?;
    Ok(HillClimbResult { net, scores })
}

fn search_structure<R: Rng + ?Sized>(
    data: &ExpressionMatrix,
    cfg: &EstimateConfig,
    rng: &mut R,
    max_iters: usize,
) -> Result<(Vec<Vec<usize>>, Vec<f64>)> {
    cfg.validate()?;
    let n = data.num_genes();
    let mut cache: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut local = |node: usize, pa: &[usize]| -> Result<f64> {
        let key = (node, pa.to_vec());
        if let Some(&s) = cache.get(&key) {
            return Ok(s);
        }
        let s = local_score_of(data, node, pa, cfg)?;
        cache.insert(key, s);
        Ok(s)
    };
    let with = |pa: &[usize], j: usize| -> Vec<usize> {
        let mut v = pa.to_vec();
        v.push(j);
        v.sort_unstable();
        v
    };
    let without = |pa: &[usize], j: usize| -> Vec<usize> { pa.iter().copied().filter(|&p| p != j).collect() };

    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut current: Vec<f64> = (0..n).map(|i| local(i, &[])).collect::<Result<_>>()?;
    let mut scores = vec![current.iter().sum::<f64>()];

    for _ in 0..max_iters {
        let children = children_of(&parents);
        let mut best_gain = 0.0;
        let mut best: Vec<Move> = Vec::new();
        let mut consider = |gain: f64, mv: Move, best: &mut Vec<Move>| {
            if gain > best_gain {
                best_gain = gain;
                best.clear();
                best.push(mv);
            } else if gain == best_gain && !best.is_empty() {
                best.push(mv);
            }
        };
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if parents[i].contains(&j) {
                    let del = local(i, &without(&parents[i], j))? - current[i];
                    consider(del, Move::Delete(j, i), &mut best);
                    if parents[j].len() < cfg.max_parents {
                        let mut trial = parents.clone();
                        trial[i].retain(|&p| p != j);
                        if !reaches(&children_of(&trial), j, i) {
                            let gain = local(i, &trial[i])? - current[i] + local(j, &with(&parents[j], i))?
                                - current[j];
                            consider(gain, Move::Reverse(j, i), &mut best);
                        }
                    }
                } else if parents[i].len() < cfg.max_parents && !reaches(&children, i, j) {
                    let gain = local(i, &with(&parents[i], j))? - current[i];
                    consider(gain, Move::Add(j, i), &mut best);
                }
            }
        }
        let Some(&mv) = best.choose(rng) else { break };
        match mv {
            Move::Add(j, i) => parents[i] = with(&parents[i], j),
            Move::Delete(j, i) => parents[i] = without(&parents[i], j),
            Move::Reverse(j, i) => {
                parents[i] = without(&parents[i], j);
                parents[j] = with(&parents[j], i);
            }
        }
        ensure!(is_acyclic(&parents), Numeric, "accepted move {mv:?} created a cycle");
        for node in 0..n {
            current[node] = local(node, &parents[node])?;
        }
        scores.push(current.iter().sum());
    }
    Ok((parents, scores))
}

/// Output of [`bootstrap_structure`].
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Kept edges refit on the full data.
    pub net: BsplineBayesNet,
    /// Fraction of runs containing each directed edge `(parent, child)`.
    pub frequencies: BTreeMap<(usize, usize), f64>,
    /// Edges above threshold removed to keep the result acyclic.
    pub dropped: Vec<(usize, usize)>,
}

/// Parent sets found by bootstrap run `run` with per-run seed `seed`.
pub fn bootstrap_run(data: &ExpressionMatrix, cfg: &EstimateConfig, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.num_samples();
    let columns: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let resampled = data.select_samples(&columns);
    Ok(search_structure(&resampled, cfg, &mut rng, cfg.max_iters)?.0)
}

/// Edge frequencies over `runs` bootstrap searches, thresholded, made
/// acyclic by adding edges in order of decreasing frequency and skipping
/// any that would close a cycle, then refit on all of `data`.
pub fn bootstrap_structure<R: Rng + ?Sized>(
    data: &ExpressionMatrix,
    runs: usize,
    threshold: f64,
    cfg: &EstimateConfig,
    rng: &mut R,
) -> Result<BootstrapResult> {
    ensure!(runs >= 1, Validation, "runs must be positive");
    ensure!(threshold > 0.0 && threshold <= 1.0, Validation, "threshold must lie in (0, 1]");
    let seeds: Vec<u64> = (0..runs).map(|_| rng.random()).collect();
    let structures: Vec<Vec<Vec<usize>>> = seeds
        .par_iter()
        .map(|&s| bootstrap_run(data, cfg, s))
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for pa in &structures {
        for (i, list) in pa.iter().enumerate() {
            for &j in list {
                *counts.entry((j, i)).or_default() += 1;
            }
        }
    }
    let frequencies: BTreeMap<(usize, usize), f64> =
        counts.iter().map(|(&e, &c)| (e, c as f64 / runs as f64)).collect();

    let mut kept: Vec<((usize, usize), usize)> = counts
        .iter()
        .filter(|&(_, &c)| c as f64 / runs as f64 >= threshold)
        .map(|(&e, &c)| (e, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut parents = vec![Vec::new(); data.num_genes()];
    let mut dropped = Vec::new();
    for ((j, i), _) in kept {
        if reaches(&children_of(&parents), i, j) {
            dropped.push((j, i));
        } else {
            parents[i].push(j);
        }
    }
    let net = BsplineBayesNet::fit(data, parents, cfg)?;
    Ok(BootstrapResult {
        net,
        frequencies,
        dropped,
    })
}

/// One GRN per sample: the network's topology, that sample's expression as
/// node features and `m_ij(x_j)` as the feature of edge `j -> i`.
pub fn derive_sample_grns(net: &BsplineBayesNet, data: &ExpressionMatrix) -> Result<Vec<Grn>> {
    ensure!(
        data.genes() == net.genes(),
        Contract,
        "network and data use different gene vocabularies"
    );
    let edges = net.edges();
    let results: Vec<(Grn, usize)> = (0..data.num_samples())
        .into_par_iter()
        .map(|s| {
            let mut clamped = 0;
            let feats = edges
                .iter()
                .map(|&(j, i)| {
                    let (v, c) = net.curve(j, i).expect("edge has a curve").eval_quiet(data.value(j, s));
                    clamped += usize::from(c);
                    v
                })
                .collect();
            Grn::new(data.genes().clone(), edges.clone(), data.sample(s), feats).map(|g| (g, clamped))
        })
        .collect::<Result<_>>()?;
    let clamped: usize = results.iter().map(|r| r.1).sum();
    if clamped > 0 {
        log::warn!("{clamped} edge evaluations fell outside their spline domain and were clamped");
    }
    Ok(results.into_iter().map(|r| r.0).collect())
}

/// Frequencies keyed by gene names, for the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFrequency {
    pub from: String,
    pub to: String,
    pub frequency: f64,
}

pub fn frequency_records(genes: &GeneVocabulary, freq: &BTreeMap<(usize, usize), f64>) -> Vec<EdgeFrequency> {
    freq.iter()
        .map(|(&(j, i), &f)| EdgeFrequency {
            from: genes.name(j).to_owned(),
            to: genes.name(i).to_owned(),
            frequency: f,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn matrix(columns: Vec<Vec<f64>>) -> ExpressionMatrix {
        let n = columns[0].len();
        let genes = Arc::new(GeneVocabulary::numbered(columns.len()));
        let samples = (0..n).map(|s| format!("s{s}")).collect();
        ExpressionMatrix::new(genes, samples, columns.concat()).unwrap()
    }

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    #[test]
    fn identity_fit_reproduces_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normals(&mut rng, 300);
        let fit = fit_regression(&x, &[&x], &EstimateConfig::default()).unwrap();
        assert!(fit.noise_var < 1e-6, "{}", fit.noise_var);
        for &v in &[-1.0, 0.0, 0.5, 1.2] {
            assert!((fit.curves[0].eval(v) - v).abs() < 1e-3);
        }
    }

    #[test]
    fn independent_child_gives_flat_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = normals(&mut rng, 2000);
        let y = normals(&mut rng, 2000);
        let fit = fit_regression(&y, &[&x], &EstimateConfig::default()).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        assert!((fit.noise_var - var).abs() / var < 0.02);
        for &v in &[-1.0, 0.0, 1.0] {
            assert!((fit.curves[0].eval(v) - mean).abs() < 0.2);
        }
    }

    #[test]
    fn constant_parent_gives_constant_prediction() {
        let y: Vec<f64> = (0..40).map(|s| s as f64 / 10.0).collect();
        let x = vec![3.0; 40];
        let fit = fit_regression(&y, &[&x], &EstimateConfig::default()).unwrap();
        assert!(fit.noise_var.is_finite());
        let mean = y.iter().sum::<f64>() / 40.0;
        assert!((fit.predict(&[3.0]) - mean).abs() < 1e-3);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let x = [1.0, 2.0, 3.0];
        assert!(fit_regression(&x, &[&x], &EstimateConfig::default()).is_err());
    }

    #[test]
    fn true_chain_beats_empty_and_duplicate_parent_is_penalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = normals(&mut rng, 400);
        let e = normals(&mut rng, 400);
        let x1: Vec<f64> = x0.iter().zip(&e).map(|(a, b)| 0.8 * a + 0.5 * b).collect();
        let dup = x0.clone();
        let data = matrix(vec![x0, x1, dup]);
        let cfg = EstimateConfig::default();
        let empty = structure_score(&data, &[vec![], vec![], vec![]], &cfg).unwrap();
        let chain = structure_score(&data, &[vec![], vec![0], vec![]], &cfg).unwrap();
        assert!(chain > empty);
        let local1 = local_score_of(&data, 1, &[0], &cfg).unwrap();
        let local2 = local_score_of(&data, 1, &[0, 2], &cfg).unwrap();
        assert!(local2 < local1);
    }

    #[test]
    fn two_variable_dependence_yields_one_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normals(&mut rng, 300);
        let e = normals(&mut rng, 300);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + 0.3 * b).collect();
        let data = matrix(vec![x, y]);
        let res = hill_climb(&data, &EstimateConfig::default(), &mut rng, 100).unwrap();
        let edges = res.net.edges();
        assert_eq!(edges.len(), 1, "{edges:?}");
        assert!(res.scores.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn independent_columns_yield_empty_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols = (0..4).map(|_| normals(&mut rng, 300)).collect();
        let data = matrix(cols);
        let res = hill_climb(&data, &EstimateConfig::default(), &mut rng, 100).unwrap();
        assert!(res.net.edges().is_empty(), "{:?}", res.net.edges());
    }

    #[test]
    fn acyclicity_check() {
        assert!(is_acyclic(&[vec![], vec![0], vec![1]]));
        assert!(!is_acyclic(&[vec![2], vec![0], vec![1]]));
        assert!(BsplineBayesNet::fit(
            &matrix(vec![vec![0.0; 20], vec![1.0; 20]]),
            vec![vec![1], vec![0]],
            &EstimateConfig::default()
        )
        .is_err());
    }

    #[test]
    fn derived_edge_feature_follows_identity_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = normals(&mut rng, 200);
        x[0] = 2.0;
        x[1] = 2.0;
        let data = matrix(vec![x.clone(), x]);
        let net = BsplineBayesNet::fit(&data, vec![vec![], vec![0]], &EstimateConfig::default()).unwrap();
        let grns = derive_sample_grns(&net, &data).unwrap();
        assert_eq!(grns.len(), 200);
        assert!((grns[0].edge_features()[0] - 2.0).abs() < 1e-3);
        assert_eq!(grns[0], grns[1]);
        assert!(grns.iter().all(|g| g.edges() == grns[0].edges()));
    }

    #[test]
    fn single_run_bootstrap_matches_one_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = normals(&mut rng, 100);
        let e = normals(&mut rng, 100);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + 0.3 * b).collect();
        let data = matrix(vec![x, y]);
        let cfg = EstimateConfig::default();
        let mut master = ChaCha8Rng::seed_from_u64(99);
        let res = bootstrap_structure(&data, 1, 0.05, &cfg, &mut master).unwrap();
        let seed: u64 = ChaCha8Rng::seed_from_u64(99).random();
        let single = bootstrap_run(&data, &cfg, seed).unwrap();
        assert_eq!(res.net.parents(), single.as_slice());
        assert!(res.frequencies.values().all(|&f| f == 1.0));
    }
}
