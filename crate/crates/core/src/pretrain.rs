//! Contrastive pretraining loop and embedding export.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, BoundParams, ParamSet, Tape, Var};
use crate::encoder::{mean_pool, Encoder, EncoderConfig};
use crate::error::{ensure, Error, Result};
use crate::grn::{AugmentationOp, Grn, TeacherBank};
use crate::loss::{self, LossConfig};

/// Which contrastive objective to optimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Teacher-supervised loss with importance-sampled `(a, b)`.
    Supgcl,
    /// Node-level loss only, `(a, b)` uniform; the `tau_aug -> inf` limit.
    Grace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub objective: Objective,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            learning_rate: 2.37e-4,
            weight_decay: 0.01,
            patience: 50,
            val_fraction: 0.2,
            seed: 0,
            objective: Objective::Supgcl,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be positive");
        ensure!(self.batch_size >= 1, Config, "batch_size must be positive");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            Config,
            "learning_rate must be finite and non-negative"
        );
        ensure!(self.weight_decay >= 0.0, Config, "weight_decay must be non-negative");
        ensure!(self.patience >= 1, Config, "patience must be positive");
        ensure!(
            self.val_fraction > 0.0 && self.val_fraction < 1.0,
            Config,
            "val_fraction must lie in (0, 1)"
        );
        self.loss.validate()?;
        self.encoder.validate()
    }
}

/// One optimisation step, enough to replay it from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Knockdown gene indices of the sampled pair.
    pub a: usize,
    pub b: usize,
    /// `K * p(b | a)`; 1 for the node-only objective.
    pub weight: f64,
    pub node_term: f64,
    pub aug_term: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Full-enumeration objective on the training split before any update.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Full-enumeration objective on the training split for the returned parameters.
    pub final_train_loss: f64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initial parameters).
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl History {
    /// JSON lines: one `{"kind":"step",...}` per step, then one
    /// `{"kind":"epoch",...}` per epoch, in order of occurrence.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch <= e.epoch) {
                out.push_str(&tagged("step", s));
            }
            out.push_str(&tagged("epoch", e));
        }
        for s in steps {
            out.push_str(&tagged("step", s));
        }
        out
    }
}

fn tagged<T: Serialize>(kind: &str, value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("records serialize");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("kind".into(), kind.into());
    }
    let mut line = v.to_string();
    line.push('\n');
    line
}

pub struct TrainOutcome {
    pub encoder: Encoder,
    pub history: History,
}

fn split_indices(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if n == 1 {
        return (idx.clone(), idx);
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Frozen state shared by the step and evaluation code.
struct Setup<'a> {
    patients: &'a [Grn],
    bank: &'a TeacherBank,
    keys: Vec<AugmentationOp>,
    cfg: &'a TrainConfig,
}

impl Setup<'_> {
    fn knocked(&self, g: &Grn, c: usize) -> Result<Grn> {
        g.apply_knockdown(self.keys[c])
    }

    fn patient_views(
        &self,
        enc: &Encoder,
        tape: &mut Tape,
        bound: &BoundParams,
        g: &Grn,
        which: &[usize],
    ) -> Result<Vec<Var>> {
        which
            .iter()
            .map(|&c| enc.forward(tape, bound, &self.knocked(g, c)?))
            .collect()
    }

    /// Exact objective for one graph given teacher views on the same tape.
    fn exact_loss(
        &self,
        enc: &Encoder,
        tape: &mut Tape,
        bound: &BoundParams,
        g: &Grn,
        teachers: &[Var],
    ) -> Result<Var> {
        let all: Vec<usize> = (0..self.keys.len()).collect();
        let z = self.patient_views(enc, tape, bound, g, &all)?;
        match self.cfg.objective {
            Objective::Supgcl => Ok(loss::supgcl_loss_exact(tape, teachers, &z, &self.cfg.loss)?.total),
            Objective::Grace => loss::uniform_node_loss(tape, &z, self.cfg.loss.tau_node),
        }
    }

    /// Mean exact objective over `indices` with fixed teacher choices.
    fn evaluate(&self, enc: &Encoder, indices: &[usize], teacher_pick: &[usize]) -> Result<f64> {
        let per_graph: Vec<f64> = indices
            .par_iter()
            .map(|&i| {
                let mut tape = Tape::new();
                let bound = enc.params().bind_frozen(&mut tape);
                let teachers = self.teacher_views(enc, &mut tape, &bound, teacher_pick)?;
                let l = self.exact_loss(enc, &mut tape, &bound, &self.patients[i], &teachers)?;
                tape.item(l)
            })
            .collect::<Result<_>>()?;
        Ok(per_graph.iter().sum::<f64>() / per_graph.len() as f64)
    }

    fn teacher_views(
        &self,
        enc: &Encoder,
        tape: &mut Tape,
        bound: &BoundParams,
        pick: &[usize],
    ) -> Result<Vec<Var>> {
        if self.cfg.objective == Objective::Grace {
            return Ok(Vec::new());
        }
        self.keys
            .iter()
            .zip(pick)
            .map(|(&op, &t)| enc.forward(tape, bound, &self.bank.teachers(op)?[t]))
            .collect()
    }

    fn draw_teachers(&self, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        self.keys
            .iter()
            .map(|&op| Ok(rng.random_range(0..self.bank.teachers(op)?.len())))
            .collect()
    }
}

/// Trains a fresh encoder and returns the best-validation parameters.
pub fn pretrain(patients: &[Grn], bank: &TeacherBank, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let encoder = Encoder::new(cfg.encoder.clone(), bank.num_nodes())?;
    pretrain_from(encoder, patients, bank, cfg)
}

/// Trains starting from `encoder`.
pub fn pretrain_from(
    mut encoder: Encoder,
    patients: &[Grn],
    bank: &TeacherBank,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!patients.is_empty(), Validation, "no patient GRNs to train on");
    let vocab = patients[0].vocab().clone();
    for g in patients {
        ensure!(g.vocab() == &vocab, Validation, "patient GRNs use different vocabularies");
    }
    bank.check_vocab(&vocab)?;

    let setup = Setup {
        patients,
        bank,
        keys: bank.keys(),
        cfg,
    };
    let k = setup.keys.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(patients.len(), cfg.val_fraction, &mut rng);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7661_6c69_6461_7465);
    let eval_pick = setup.draw_teachers(&mut eval_rng)?;

    let mut history = History {
        train_indices: train_idx.clone(),
        val_indices: val_idx.clone(),
        ..History::default()
    };
    history.initial_train_loss = setup.evaluate(&encoder, &train_idx, &eval_pick)?;
    history.initial_val_loss = setup.evaluate(&encoder, &val_idx, &eval_pick)?;
    history.best_val_loss = history.initial_val_loss;
    let mut best_params: ParamSet = encoder.params().clone();

    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut order = train_idx.clone();
    let mut step = 0usize;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let a = rng.random_range(0..k);
            let b = rng.random_range(0..k);
            let pick = setup.draw_teachers(&mut rng)?;

            let mut tape = Tape::new();
            let bound = encoder.params().bind(&mut tape);
            let teachers = setup.teacher_views(&encoder, &mut tape, &bound, &pick)?;
            let mut totals = Vec::with_capacity(batch.len());
            let mut node_sum = 0.0;
            let mut aug_sum = 0.0;
            let mut weight = 1.0;
            for &i in batch {
                let g = &patients[i];
                let total = match cfg.objective {
                    Objective::Supgcl => {
                        let all: Vec<usize> = (0..k).collect();
                        let z = setup.patient_views(&encoder, &mut tape, &bound, g, &all)?;
                        let s = loss::supgcl_loss_sampled(&mut tape, &teachers, &z, a, b, &cfg.loss)?;
                        weight = s.weight;
                        node_sum += tape.item(s.terms.node)?;
                        aug_sum += tape.item(s.terms.aug)?;
                        s.terms.total
                    }
                    Objective::Grace => {
                        let z = setup.patient_views(&encoder, &mut tape, &bound, g, &[a, b])?;
                        let l = loss::grace_style_loss(&mut tape, z[0], z[1], cfg.loss.tau_node)?;
                        node_sum += tape.item(l)?;
                        l
                    }
                };
                totals.push(tape.reshape(total, &[1, 1])?);
            }
            let stacked = tape.concat_rows(&totals)?;
            let batch_loss = tape.mean(stacked)?;
            let value = tape.item(batch_loss)?;
            let n = batch.len() as f64;
            let record = StepRecord {
                step,
                epoch,
                a: setup.keys[a].gene_index,
                b: setup.keys[b].gene_index,
                weight,
                node_term: node_sum / n,
                aug_term: aug_sum / n,
                loss: value,
            };
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at {}",
                    serde_json::to_string(&record).unwrap_or_default()
                )));
            }
            let grads = tape.backward(batch_loss)?;
            let grads = encoder.params().collect_grads(&bound, &grads);
            opt.step(encoder.params_mut(), &grads)?;
            history.steps.push(record);
            epoch_loss += value;
            batches += 1;
            step += 1;
        }

        let val_loss = setup.evaluate(&encoder, &val_idx, &eval_pick)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best_params = encoder.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    encoder.set_params(best_params)?;
    history.final_train_loss = setup.evaluate(&encoder, &train_idx, &eval_pick)?;
    Ok(TrainOutcome { encoder, history })
}

/// Node embeddings and pooled vector for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub nodes: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

pub fn embed_dataset(patients: &[(String, Grn)], encoder: &Encoder) -> Result<Vec<EmbeddingRecord>> {
    patients
        .par_iter()
        .map(|(id, g)| {
            let z = encoder.encode(g)?;
            let pooled = mean_pool(&z)?;
            Ok(EmbeddingRecord {
                id: id.clone(),
                nodes: z.values.rows().map(<[f64]>::to_vec).collect(),
                pooled,
            })
        })
        .collect()
}

/// Writes `{"genes": [...], "records": [...]}` as JSON.
pub fn write_embeddings(path: &Path, genes: &[String], records: &[EmbeddingRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        genes: &'a [String],
        records: &'a [EmbeddingRecord],
    }
    let text = serde_json::to_string(&File { genes, records })
        .map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
