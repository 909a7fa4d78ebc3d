//! Synthetic linear-Gaussian benchmark: ground-truth DAG, patient
//! expression and GRNs, knockdown teachers and downstream labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::downstream::{GraphLabels, LabelSet, NodeLabels, SurvivalRecord};
use crate::error::{ensure, Error, Result};
use crate::estimate::ExpressionMatrix;
use crate::grn::{save_grn, GeneVocabulary, Grn, TeacherBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_genes: usize,
    pub n_patients: usize,
    pub n_teachers_per_gene: usize,
    /// Genes with knockdown teachers.
    pub n_knockdown_genes: usize,
    /// Probability of each forward edge in the random topological order.
    pub density: f64,
    /// Standard deviation of the SEM noise.
    pub noise: f64,
    /// Edge weights are drawn from `±[weight_min, weight_max]`.
    pub weight_min: f64,
    pub weight_max: f64,
    /// Expression a knocked-down gene is clamped to.
    pub knockdown_level: f64,
    /// Rate of the exponential censoring distribution.
    pub censoring_rate: f64,
    pub n_subtypes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_genes: 30,
            n_patients: 200,
            n_teachers_per_gene: 3,
            n_knockdown_genes: 8,
            density: 0.1,
            noise: 1.0,
            weight_min: 0.3,
            weight_max: 0.9,
            knockdown_level: 0.0,
            censoring_rate: 0.3,
            n_subtypes: 5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_genes >= 2, Config, "n_genes must be at least 2");
        ensure!(self.n_patients >= 1, Config, "n_patients must be positive");
        ensure!(self.n_teachers_per_gene >= 1, Config, "n_teachers_per_gene must be positive");
        ensure!(
            (1..=self.n_genes).contains(&self.n_knockdown_genes),
            Config,
            "n_knockdown_genes must lie in 1..=n_genes"
        );
        ensure!(
            (0.0..1.0).contains(&self.density),
            Config,
            "density must lie in [0, 1)"
        );
        ensure!(self.noise > 0.0, Config, "noise must be positive");
        ensure!(
            0.0 <= self.weight_min && self.weight_min <= self.weight_max,
            Config,
            "need 0 <= weight_min <= weight_max"
        );
        ensure!(self.censoring_rate >= 0.0, Config, "censoring_rate must be non-negative");
        ensure!(self.n_subtypes >= 2, Config, "n_subtypes must be at least 2");
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Ground-truth linear SEM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub n_genes: usize,
    /// Topological order of the genes.
    pub order: Vec<usize>,
    pub edges: Vec<WeightedEdge>,
}

impl Truth {
    pub fn parents(&self) -> Vec<Vec<(usize, f64)>> {
        let mut pa = vec![Vec::new(); self.n_genes];
        for e in &self.edges {
            pa[e.to].push((e.from, e.weight));
        }
        pa
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n_genes];
        for e in &self.edges {
            ch[e.from].push(e.to);
        }
        ch
    }

    /// Strict descendants of every gene.
    pub fn descendants(&self) -> Vec<Vec<bool>> {
        let ch = self.children();
        (0..self.n_genes)
            .map(|a| {
                let mut seen = vec![false; self.n_genes];
                let mut stack = ch[a].clone();
                while let Some(v) = stack.pop() {
                    if !std::mem::replace(&mut seen[v], true) {
                        stack.extend(&ch[v]);
                    }
                }
                seen
            })
            .collect()
    }

    fn topology(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }
}

/// Random DAG: genes are shuffled into a topological order and each forward
/// pair becomes an edge with probability `density`.
pub fn generate_truth(spec: &SynthSpec) -> Result<Truth> {
    spec.validate()?;
    let mut rng = spec.rng(1);
    let n = spec.n_genes;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < spec.density {
                let mag = if spec.weight_max > spec.weight_min {
                    rng.random_range(spec.weight_min..spec.weight_max)
                } else {
                    spec.weight_min
                };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                edges.push(WeightedEdge {
                    from: order[a],
                    to: order[b],
                    weight: sign * mag,
                });
            }
        }
    }
    edges.sort_by_key(|e| (e.to, e.from));
    Ok(Truth { n_genes: n, order, edges })
}

fn ancestral<R: Rng + ?Sized>(truth: &Truth, noise: f64, clamp: Option<(usize, f64)>, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, noise).expect("noise is positive");
    let parents = truth.parents();
    let mut x = vec![0.0; truth.n_genes];
    for &i in &truth.order {
        let eps = normal.sample(rng);
        x[i] = match clamp {
            Some((a, level)) if a == i => level,
            _ => parents[i].iter().map(|&(j, w)| w * x[j]).sum::<f64>() + eps,
        };
    }
    x
}

/// `n` samples of `x_i = sum_j w_ij x_j + eps`, `eps ~ N(0, noise^2)`.
pub fn sample_expression<R: Rng + ?Sized>(truth: &Truth, n: usize, noise: f64, rng: &mut R) -> Result<ExpressionMatrix> {
    ensure!(noise > 0.0, Validation, "noise must be positive");
    let columns: Vec<Vec<f64>> = (0..n).map(|_| ancestral(truth, noise, None, rng)).collect();
    let mut values = Vec::with_capacity(n * truth.n_genes);
    for g in 0..truth.n_genes {
        values.extend(columns.iter().map(|c| c[g]));
    }
    ExpressionMatrix::new(
        Arc::new(GeneVocabulary::numbered(truth.n_genes)),
        (0..n).map(patient_id).collect(),
        values,
    )
}

fn patient_id(i: usize) -> String {
    format!("P{i:04}")
}

/// GRN over the true topology with `x` as node features and `w_ij x_j` as
/// the feature of edge `j -> i`.
pub fn sem_grn(truth: &Truth, vocab: &Arc<GeneVocabulary>, x: &[f64]) -> Result<Grn> {
    let feats = truth.edges.iter().map(|e| e.weight * x[e.from]).collect();
    Grn::new(vocab.clone(), truth.topology(), x.to_vec(), feats)
}

/// Teacher GRNs for knocking down gene `a`: SEM samples with `x_a` held at
/// `level`, so the suppression propagates to descendants.
pub fn simulate_knockdown<R: Rng + ?Sized>(
    truth: &Truth,
    vocab: &Arc<GeneVocabulary>,
    a: usize,
    n: usize,
    noise: f64,
    level: f64,
    rng: &mut R,
) -> Result<Vec<Grn>> {
    ensure!(a < truth.n_genes, Validation, "knockdown gene {a} out of range");
    (0..n)
        .map(|_| sem_grn(truth, vocab, &ancestral(truth, noise, Some((a, level)), rng)))
        .collect()
}

/// Structural gene labels and expression-driven patient labels.
///
/// * `bp`: [no children, no parents, at least two children]
/// * `cc`: descendant of each of four anchor genes
/// * `rel`: at least two descendants
/// * survival: exponential times with log-hazard linear in expression,
///   independently censored
/// * subtype: argmax of noisy linear scores
pub fn make_labels(truth: &Truth, expression: &ExpressionMatrix, spec: &SynthSpec) -> Result<LabelSet> {
    let mut rng = spec.rng(4);
    let n = truth.n_genes;
    let pa = truth.parents();
    let ch = truth.children();
    let desc = truth.descendants();
    let with_children: Vec<usize> = (0..n).filter(|&i| !ch[i].is_empty()).collect();
    let pool = if with_children.len() >= 4 { with_children } else { (0..n).collect() };
    let anchors: Vec<usize> = pool.choose_multiple(&mut rng, 4.min(pool.len())).copied().collect();
    let genes = expression.genes().names().to_vec();
    let node = NodeLabels {
        bp: (0..n)
            .map(|i| Some(vec![ch[i].is_empty(), pa[i].is_empty(), ch[i].len() >= 2]))
            .collect(),
        cc: (0..n)
            .map(|i| Some((0..4).map(|c| anchors.get(c).is_some_and(|&a| desc[a][i])).collect()))
            .collect(),
        rel: (0..n)
            .map(|i| Some(desc[i].iter().filter(|&&d| d).count() >= 2))
            .collect(),
        genes,
    };

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = 1.0 / (n as f64).sqrt();
    let beta: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng) * scale).collect();
    let w: Vec<Vec<f64>> = (0..spec.n_subtypes)
        .map(|_| (0..n).map(|_| std_normal.sample(&mut rng) * scale).collect())
        .collect();
    let gumbel = Gumbel::new(0.0, 0.5).expect("valid gumbel");
    let censor = (spec.censoring_rate > 0.0).then(|| Exp::new(spec.censoring_rate).expect("positive rate"));
    let mut survival = Vec::with_capacity(expression.num_samples());
    let mut subtype = Vec::with_capacity(expression.num_samples());
    for s in 0..expression.num_samples() {
        let x = expression.sample(s);
        let risk: f64 = beta.iter().zip(&x).map(|(b, v)| b * v).sum();
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let t = -u.ln() / risk.clamp(-20.0, 20.0).exp();
        let c = censor.map_or(f64::INFINITY, |d| d.sample(&mut rng));
        let time = t.min(c).max(1e-9);
        survival.push(SurvivalRecord::new(time, t <= c)?);
        let scores: Vec<f64> = w
            .iter()
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + gumbel.sample(&mut rng))
            .collect();
        let best = (0..scores.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .expect("at least two subtypes");
        subtype.push(best);
    }
    Ok(LabelSet {
        node,
        graph: GraphLabels {
            patients: expression.samples().to_vec(),
            survival,
            subtype,
        },
    })
}

/// A complete generated dataset.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub truth: Truth,
    pub expression: ExpressionMatrix,
    pub patients: Vec<(String, Grn)>,
    pub bank: TeacherBank,
    pub labels: LabelSet,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let truth = generate_truth(spec)?;
    let expression = sample_expression(&truth, spec.n_patients, spec.noise, &mut spec.rng(2))?;
    let vocab = expression.genes().clone();
    let patients = (0..spec.n_patients)
        .map(|s| Ok((patient_id(s), sem_grn(&truth, &vocab, &expression.sample(s))?)))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = spec.rng(3);
    let mut genes: Vec<usize> = (0..spec.n_genes).collect();
    genes.shuffle(&mut rng);
    let mut knockdown = genes[..spec.n_knockdown_genes].to_vec();
    knockdown.sort_unstable();
    let mut entries = BTreeMap::new();
    for a in knockdown {
        let list = simulate_knockdown(
            &truth,
            &vocab,
            a,
            spec.n_teachers_per_gene,
            spec.noise,
            spec.knockdown_level,
            &mut rng,
        )?;
        entries.insert(a, list);
    }
    let bank = TeacherBank::new(entries)?;
    let labels = make_labels(&truth, &expression, spec)?;
    Ok(SynthData {
        spec: spec.clone(),
        truth,
        expression,
        patients,
        bank,
        labels,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl SynthData {
    /// Layout: `spec.json`, `truth.json`, `expression.tsv`, `patients/`,
    /// `teachers/`, `teachers.json` (manifest), `node_labels.tsv`,
    /// `graph_labels.tsv`. Returns the written file paths, relative to `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        create_dir(dir)?;
        create_dir(&dir.join("patients"))?;
        create_dir(&dir.join("teachers"))?;
        let mut written = Vec::new();
        write_json(&dir.join("spec.json"), &self.spec)?;
        written.push("spec.json".to_owned());
        write_json(&dir.join("truth.json"), &self.truth)?;
        written.push("truth.json".to_owned());
        self.expression.save_tsv(&dir.join("expression.tsv"))?;
        written.push("expression.tsv".to_owned());
        for (id, g) in &self.patients {
            let rel = format!("patients/{id}.json");
            save_grn(g, &dir.join(&rel))?;
            written.push(rel);
        }
        let vocab = self.expression.genes();
        let mut manifest: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for op in self.bank.keys() {
            let name = vocab.name(op.gene_index).to_owned();
            for (k, g) in self.bank.teachers(op)?.iter().enumerate() {
                let rel = format!("teachers/{name}_{k}.json");
                save_grn(g, &dir.join(&rel))?;
                manifest.entry(name.clone()).or_default().push(rel.clone());
                written.push(rel);
            }
        }
        write_json(&dir.join("teachers.json"), &manifest)?;
        written.push("teachers.json".to_owned());
        self.labels.save(dir)?;
        written.push("node_labels.tsv".to_owned());
        written.push("graph_labels.tsv".to_owned());
        Ok(written)
    }
}
