use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::{
    binary_head_loss, multiclass_head_loss, multilabel_head_loss, Head, HeadKind, Reduction,
};
use super::labels::LabelSet;
use super::metrics::{accuracy, jaccard_index, macro_f1, macro_f1_classes, subset_accuracy};
use super::survival::{c_index, cox_npll_tape, SurvivalRecord};
use crate::autodiff::{AdamW, Tape, Tensor, Var};
use crate::encoder::Encoder;
use crate::error::{ensure, Error, Result};
use crate::grn::Grn;

/// Downstream tasks: three on genes, two on patients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Multi-label gene classification from the `bp` column.
    Bp,
    /// Multi-label gene classification from the `cc` column.
    Cc,
    /// Binary gene classification from the `rel` column.
    Rel,
    /// Patient survival, scored by concordance.
    Hazard,
    /// Patient subtype, multi-class.
    Subtype,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Bp, Task::Cc, Task::Rel, Task::Hazard, Task::Subtype];

    pub fn is_node_task(self) -> bool {
        matches!(self, Task::Bp | Task::Cc | Task::Rel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Bp => "bp",
            Task::Cc => "cc",
            Task::Rel => "rel",
            Task::Hazard => "hazard",
            Task::Subtype => "subtype",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub head: HeadKind,
    pub hidden: usize,
    /// Train the head only.
    pub freeze_encoder: bool,
    pub folds: usize,
    /// Patients averaged per step for gene representations when the
    /// encoder is being tuned.
    pub node_patients: usize,
    pub reduction: Reduction,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            head: HeadKind::Mlp,
            hidden: 64,
            freeze_encoder: false,
            folds: 10,
            node_patients: 8,
            reduction: Reduction::Sum,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be positive");
        ensure!(self.batch_size >= 1, Config, "batch_size must be positive");
        ensure!(self.folds >= 2, Config, "folds must be at least 2");
        ensure!(self.node_patients >= 1, Config, "node_patients must be positive");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            Config,
            "learning_rate must be finite and non-negative"
        );
        Ok(())
    }
}

/// Patients with ids and their labels.
pub struct Dataset<'a> {
    pub patients: &'a [(String, Grn)],
    pub labels: &'a LabelSet,
}

#[derive(Debug, Clone, PartialEq)]
enum Targets {
    MultiLabel(Vec<Vec<bool>>),
    Binary(Vec<bool>),
    Survival(Vec<SurvivalRecord>),
    Class(Vec<usize>, usize),
}

impl Targets {
    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::MultiLabel(v) => Targets::MultiLabel(idx.iter().map(|&i| v[i].clone()).collect()),
            Targets::Binary(v) => Targets::Binary(idx.iter().map(|&i| v[i]).collect()),
            Targets::Survival(v) => Targets::Survival(idx.iter().map(|&i| v[i]).collect()),
            Targets::Class(v, c) => Targets::Class(idx.iter().map(|&i| v[i]).collect(), *c),
        }
    }

    fn out_dim(&self) -> usize {
        match self {
            Targets::MultiLabel(v) => v[0].len(),
            Targets::Binary(_) | Targets::Survival(_) => 1,
            Targets::Class(_, c) => *c,
        }
    }
}

/// Labelled items of one task: gene or patient positions plus targets.
struct TaskData {
    items: Vec<usize>,
    targets: Targets,
    excluded: Vec<String>,
}

fn task_data(task: Task, data: &Dataset) -> Result<TaskData> {
    ensure!(!data.patients.is_empty(), Validation, "no patients");
    let vocab = data.patients[0].1.vocab().clone();
    if task.is_node_task() {
        let node = &data.labels.node;
        let mut items = Vec::new();
        let mut excluded = Vec::new();
        let mut multi = Vec::new();
        let mut binary = Vec::new();
        for (k, gene) in node.genes.iter().enumerate() {
            let pos = vocab
                .position(gene)
                .ok_or_else(|| Error::Validation(format!("labelled gene {gene:?} not in vocabulary")))?;
            let label = match task {
                Task::Bp => node.bp[k].clone().map(Ok),
                Task::Cc => node.cc[k].clone().map(Ok),
                _ => node.rel[k].map(Err),
            };
            match label {
                Some(Ok(bits)) => multi.push(bits),
                Some(Err(b)) => binary.push(b),
                None => {
                    excluded.push(gene.clone());
                    continue;
                }
            }
            items.push(pos);
        }
        ensure!(!items.is_empty(), Validation, "no labelled genes for task {}", task.name());
        let targets = if task == Task::Rel {
            Targets::Binary(binary)
        } else {
            Targets::MultiLabel(multi)
        };
        return Ok(TaskData {
            items,
            targets,
            excluded,
        });
    }
    let graph = &data.labels.graph;
    graph.validate()?;
    let index: BTreeMap<&str, usize> = data
        .patients
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let mut items = Vec::with_capacity(graph.patients.len());
    for id in &graph.patients {
        items.push(
            *index
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("labelled patient {id:?} has no GRN")))?,
        );
    }
    let targets = match task {
        Task::Hazard => Targets::Survival(graph.survival.clone()),
        _ => {
            let classes = graph.subtype.iter().max().map_or(0, |m| m + 1);
            Targets::Class(graph.subtype.clone(), classes)
        }
    };
    Ok(TaskData {
        items,
        targets,
        excluded: Vec::new(),
    })
}

/// Gene representation: node embeddings averaged over patients, `[|V|, d]`.
pub fn gene_representations(encoder: &Encoder, patients: &[(String, Grn)]) -> Result<Tensor> {
    ensure!(!patients.is_empty(), Validation, "no patients");
    let embs: Vec<Tensor> = patients
        .par_iter()
        .map(|(_, g)| encoder.encode(g).map(|z| z.values))
        .collect::<Result<_>>()?;
    let mut acc = Tensor::zeros(embs[0].shape());
    for e in &embs {
        for (a, v) in acc.data_mut().iter_mut().zip(e.data()) {
            *a += v;
        }
    }
    let n = patients.len() as f64;
    acc.data_mut().iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mean-pooled patient embeddings, `[N, d]`.
pub fn patient_representations(encoder: &Encoder, patients: &[(String, Grn)]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = patients
        .par_iter()
        .map(|(_, g)| encoder.encode(g).and_then(|z| crate::encoder::mean_pool(&z)))
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

fn representations(task: Task, encoder: &Encoder, patients: &[(String, Grn)]) -> Result<Tensor> {
    if task.is_node_task() {
        gene_representations(encoder, patients)
    } else {
        patient_representations(encoder, patients)
    }
}

fn select_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows)
}

fn head_loss(tape: &mut Tape, out: Var, targets: &Targets, reduction: Reduction) -> Result<Option<Var>> {
    Ok(Some(match targets {
        Targets::MultiLabel(y) => multilabel_head_loss(tape, out, y, reduction)?,
        Targets::Binary(y) => binary_head_loss(tape, out, y)?,
        Targets::Class(y, _) => multiclass_head_loss(tape, out, y)?,
        Targets::Survival(r) => {
            if !r.iter().any(|x| x.event) {
                return Ok(None);
            }
            cox_npll_tape(tape, out, r)?
        }
    }))
}

/// Fine-tunes a copy of `encoder` and a fresh head on `train` items, then
/// returns raw head outputs for `test` items.
#[allow(clippy::too_many_arguments)]
fn fit_fold(
    task: Task,
    data: &Dataset,
    encoder: &Encoder,
    frozen_reps: Option<&Tensor>,
    td: &TaskData,
    train: &[usize],
    test: &[usize],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = encoder.config().hidden_dim;
    let mut head = Head::new(cfg.head, d, cfg.hidden, td.targets.out_dim(), seed)?;
    let mut enc = encoder.clone();
    let mut head_opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut enc_opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut order = train.to_vec();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let targets = td.targets.select(batch);
            let items: Vec<usize> = batch.iter().map(|&k| td.items[k]).collect();
            let mut tape = Tape::new();
            let head_bound = head.params().bind(&mut tape);
            let enc_bound = (!cfg.freeze_encoder).then(|| enc.params().bind(&mut tape));
            let x = match (&enc_bound, frozen_reps) {
                (None, Some(reps)) => tape.constant(select_rows(reps, &items)?),
                (None, None) => unreachable!("frozen training needs precomputed representations"),
                (Some(bound), _) if task.is_node_task() => {
                    let picks: Vec<&(String, Grn)> =
                        data.patients.choose_multiple(&mut rng, cfg.node_patients).collect();
                    let mut sum = None;
                    for (_, g) in picks.iter() {
                        let z = enc.forward(&mut tape, bound, g)?;
                        sum = Some(match sum {
                            None => z,
                            Some(s) => tape.add(s, z)?,
                        });
                    }
                    let mean = tape.scale(sum.expect("at least one patient"), 1.0 / picks.len() as f64)?;
                    tape.gather_rows(mean, Arc::from(items.as_slice()))?
                }
                (Some(bound), _) => {
                    let mut rows = Vec::with_capacity(items.len());
                    for &p in &items {
                        let z = enc.forward(&mut tape, bound, &data.patients[p].1)?;
                        let pooled = tape.mean_rows(z)?;
                        rows.push(tape.reshape(pooled, &[1, d])?);
                    }
                    tape.concat_rows(&rows)?
                }
            };
            let out = head.forward(&mut tape, &head_bound, x)?;
            let Some(loss) = head_loss(&mut tape, out, &targets, cfg.reduction)? else {
                continue;
            };
            let value = tape.item(loss)?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite fine-tuning loss {value}")));
            }
            let grads = tape.backward(loss)?;
            let hg = head.params().collect_grads(&head_bound, &grads);
            head_opt.step(head.params_mut(), &hg)?;
            if let Some(bound) = &enc_bound {
                let eg = enc.params().collect_grads(bound, &grads);
                enc_opt.step(enc.params_mut(), &eg)?;
            }
        }
    }

    let test_items: Vec<usize> = test.iter().map(|&k| td.items[k]).collect();
    let reps = match frozen_reps {
        Some(r) if cfg.freeze_encoder => select_rows(r, &test_items)?,
        _ => select_rows(&representations(task, &enc, data.patients)?, &test_items)?,
    };
    head.predict(&reps)
}

fn score(targets: &Targets, out: &Tensor) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    match targets {
        Targets::MultiLabel(y) => {
            let pred: Vec<Vec<bool>> = out.rows().map(|r| r.iter().map(|&x| x > 0.0).collect()).collect();
            m.insert("subset_accuracy".into(), subset_accuracy(&pred, y)?);
            m.insert("macro_f1".into(), macro_f1(&pred, y)?);
            m.insert("jaccard".into(), jaccard_index(&pred, y)?);
        }
        Targets::Binary(y) => {
            let pred: Vec<usize> = out.data().iter().map(|&x| usize::from(x > 0.0)).collect();
            let truth: Vec<usize> = y.iter().map(|&b| usize::from(b)).collect();
            m.insert("accuracy".into(), accuracy(&pred, &truth)?);
            m.insert("macro_f1".into(), macro_f1_classes(&pred, &truth, 2)?);
        }
        Targets::Class(y, c) => {
            let pred: Vec<usize> = out
                .rows()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0
                })
                .collect();
            m.insert("accuracy".into(), accuracy(&pred, y)?);
            m.insert("macro_f1".into(), macro_f1_classes(&pred, y, *c)?);
        }
        Targets::Survival(r) => {
            m.insert("c_index".into(), c_index(out.data(), r)?);
        }
    }
    Ok(m)
}

/// Test-fold index sets partitioning `0..n`.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    ensure!(k >= 2 && n >= k, Validation, "cannot split {n} items into {k} folds");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Like [`kfold`], dealing each stratum round-robin so every fold receives
/// a near-equal share of `true` flags.
pub fn stratified_kfold(flags: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = flags.len();
    ensure!(k >= 2 && n >= k, Validation, "cannot split {n} items into {k} folds");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for want in [true, false] {
        let mut stratum: Vec<usize> = (0..n).filter(|&i| flags[i] == want).collect();
        stratum.shuffle(&mut rng);
        for i in stratum {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Balanced subset with an 8:2 train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedSplit {
    /// Every selected index, ascending.
    pub selected: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Keeps every positive and an equal number of negatives drawn without
/// replacement (all negatives if there are fewer), then splits 8:2.
pub fn undersample_binary(labels: &[bool], seed: u64) -> Result<BalancedSplit> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    ensure!(!pos.is_empty() && !neg.is_empty(), Validation, "both classes must be present");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = pos.len().min(neg.len());
    let mut selected: Vec<usize> = pos.clone();
    selected.extend(neg.choose_multiple(&mut rng, take).copied());
    selected.sort_unstable();
    let mut shuffled = selected.clone();
    shuffled.shuffle(&mut rng);
    let n_test = ((shuffled.len() as f64) * 0.2).round() as usize;
    let mut test = shuffled[..n_test].to_vec();
    let mut train = shuffled[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(BalancedSplit { selected, train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub protocol: String,
    /// Genes dropped because they carry no label for the task.
    pub excluded: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub summary: BTreeMap<String, MeanStd>,
}

fn summarize(folds: &[FoldResult]) -> BTreeMap<String, MeanStd> {
    let mut out = BTreeMap::new();
    let Some(first) = folds.first() else { return out };
    for name in first.metrics.keys() {
        let v: Vec<f64> = folds.iter().map(|f| f.metrics[name]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        out.insert(name.clone(), MeanStd { mean, std: var.sqrt() });
    }
    out
}

fn run_splits(
    task: Task,
    data: &Dataset,
    encoder: &Encoder,
    td: &TaskData,
    splits: &[(Vec<usize>, Vec<usize>)],
    cfg: &FinetuneConfig,
) -> Result<Vec<FoldResult>> {
    let frozen = if cfg.freeze_encoder {
        Some(representations(task, encoder, data.patients)?)
    } else {
        None
    };
    splits
        .par_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(f as u64);
            let out = fit_fold(task, data, encoder, frozen.as_ref(), td, train, test, cfg, seed)?;
            Ok(FoldResult {
                fold: f,
                train_size: train.len(),
                test_size: test.len(),
                metrics: score(&td.targets.select(test), &out)?,
            })
        })
        .collect()
}

/// K-fold cross-validation of `task` starting from `encoder`.
pub fn cross_validate(task: Task, data: &Dataset, encoder: &Encoder, cfg: &FinetuneConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let td = task_data(task, data)?;
    let n = td.items.len();
    let mut folds = kfold(n, cfg.folds, cfg.seed)?;
    if let Targets::Survival(r) = &td.targets {
        let events: Vec<bool> = r.iter().map(|x| x.event).collect();
        if folds.iter().any(|f| !f.iter().any(|&i| events[i])) {
            folds = stratified_kfold(&events, cfg.folds, cfg.seed)?;
        }
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = folds
        .iter()
        .map(|test| {
            let train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
            (train, test.clone())
        })
        .collect();
    let results = run_splits(task, data, encoder, &td, &splits, cfg)?;
    Ok(EvalReport {
        task,
        protocol: format!("{}-fold cross-validation", cfg.folds),
        excluded: td.excluded,
        summary: summarize(&results),
        folds: results,
    })
}

/// Balanced 8:2 holdout of the binary gene task, one split per seed.
pub fn undersample_evaluate(data: &Dataset, encoder: &Encoder, cfg: &FinetuneConfig, seeds: &[u64]) -> Result<EvalReport> {
    cfg.validate()?;
    ensure!(!seeds.is_empty(), Validation, "no seeds");
    let td = task_data(Task::Rel, data)?;
    let Targets::Binary(labels) = &td.targets else { unreachable!("rel is binary") };
    let splits: Vec<(Vec<usize>, Vec<usize>)> = seeds
        .iter()
        .map(|&s| undersample_binary(labels, s).map(|b| (b.train, b.test)))
        .collect::<Result<_>>()?;
    let results = run_splits(Task::Rel, data, encoder, &td, &splits, cfg)?;
    Ok(EvalReport {
        task: Task::Rel,
        protocol: format!("undersampled 8:2 holdout over {} seeds", seeds.len()),
        excluded: td.excluded,
        summary: summarize(&results),
        folds: results,
    })
}
