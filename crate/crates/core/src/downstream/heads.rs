use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Affine, tanh, affine.
    Mlp,
    /// Single affine map.
    Linear,
}

/// Task head mapping `[n, in_dim]` representations to `[n, out_dim]` outputs.
#[derive(Debug, Clone)]
pub struct Head {
    kind: HeadKind,
    in_dim: usize,
    out_dim: usize,
    params: ParamSet,
}

impl Head {
    pub fn new(kind: HeadKind, in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Result<Self> {
        ensure!(in_dim > 0 && out_dim > 0, Config, "head dimensions must be positive");
        ensure!(kind == HeadKind::Linear || hidden > 0, Config, "hidden width must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut uniform = |name: &str, shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(name, Tensor::new(shape.to_vec(), data).expect("sized"));
        };
        match kind {
            HeadKind::Mlp => {
                uniform("head.fc1.weight", &[in_dim, hidden], in_dim);
                uniform("head.fc1.bias", &[hidden], in_dim);
                uniform("head.fc2.weight", &[hidden, out_dim], hidden);
                uniform("head.fc2.bias", &[out_dim], hidden);
            }
            HeadKind::Linear => {
                uniform("head.fc.weight", &[in_dim, out_dim], in_dim);
                uniform("head.fc.bias", &[out_dim], in_dim);
            }
        }
        Ok(Self {
            kind,
            in_dim,
            out_dim,
            params,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        ensure!(
            shape.len() == 2 && shape[1] == self.in_dim,
            Contract,
            "head expects [n, {}] input, got {shape:?}",
            self.in_dim
        );
        let v = bound.vars();
        match self.kind {
            HeadKind::Mlp => {
                let h = tape.matmul(x, v[0])?;
                let h = tape.add_row(h, v[1])?;
                let h = tape.tanh(h)?;
                let o = tape.matmul(h, v[2])?;
                tape.add_row(o, v[3])
            }
            HeadKind::Linear => {
                let o = tape.matmul(x, v[0])?;
                tape.add_row(o, v[1])
            }
        }
    }

    /// Outputs for plain input rows.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(x.clone());
        let o = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(o).clone())
    }
}

/// How binary cross-entropy is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum over labels, mean over samples.
    Sum,
    /// Mean over all entries.
    Mean,
}

/// Elementwise `softplus(x) - x*y` on `[n, k]` logits.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &Tensor, reduction: Reduction) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    ensure!(
        shape == labels.shape(),
        Contract,
        "logits {shape:?} and labels {:?} differ in shape",
        labels.shape()
    );
    ensure!(shape.len() == 2, Contract, "logits must be [n, k], got {shape:?}");
    let (n, k) = (shape[0], shape[1]);
    let total = n * k;
    ensure!(total > 0, Contract, "empty logits");
    // log_softmax of [0, x] has -softplus(x) in its first column.
    let flat = tape.reshape(logits, &[total, 1])?;
    let zeros = tape.constant(Tensor::zeros(&[total, 1]));
    let pair = tape.concat_cols(&[zeros, flat])?;
    let ls = tape.log_softmax_rows(pair, 1.0)?;
    let first = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 0.0])?);
    let neg_softplus = tape.matmul(ls, first)?;
    let y = tape.constant(labels.clone().reshaped(vec![total, 1])?);
    let xy = tape.mul(flat, y)?;
    let per = tape.add(neg_softplus, xy)?;
    let s = tape.sum(per)?;
    let denom = match reduction {
        Reduction::Sum => n,
        Reduction::Mean => total,
    };
    tape.scale(s, -1.0 / denom as f64)
}

pub fn multilabel_head_loss(tape: &mut Tape, logits: Var, labels: &[Vec<bool>], reduction: Reduction) -> Result<Var> {
    let k = labels.first().map_or(0, Vec::len);
    ensure!(labels.iter().all(|r| r.len() == k), Contract, "ragged label matrix");
    let data = labels.iter().flatten().map(|&b| f64::from(u8::from(b))).collect();
    bce_with_logits(tape, logits, &Tensor::new(vec![labels.len(), k], data)?, reduction)
}

/// `[n, 1]` logits against binary labels, mean over samples.
pub fn binary_head_loss(tape: &mut Tape, logits: Var, labels: &[bool]) -> Result<Var> {
    let data = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    bce_with_logits(tape, logits, &Tensor::new(vec![labels.len(), 1], data)?, Reduction::Mean)
}

/// Softmax cross-entropy of `[n, c]` logits, mean over samples.
pub fn multiclass_head_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    ensure!(
        shape.len() == 2 && shape[0] == labels.len() && shape[0] > 0,
        Contract,
        "logits {shape:?} do not match {} labels",
        labels.len()
    );
    let c = shape[1];
    ensure!(labels.iter().all(|&y| y < c), Contract, "class label out of range for {c} classes");
    let mut one_hot = Tensor::zeros(&[labels.len(), c]);
    for (i, &y) in labels.iter().enumerate() {
        one_hot.data_mut()[i * c + y] = 1.0;
    }
    let ls = tape.log_softmax_rows(logits, 1.0)?;
    let mask = tape.constant(one_hot);
    let picked = tape.mul(ls, mask)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl FnOnce(&mut Tape, Var) -> Result<Var>, logits: Tensor) -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(logits);
        let l = f(&mut tape, x).unwrap();
        tape.item(l).unwrap()
    }

    #[test]
    fn zero_logits_give_log_two_per_label() {
        let labels = vec![vec![true, false, true]; 4];
        let sum = eval(|t, x| multilabel_head_loss(t, x, &labels, Reduction::Sum), Tensor::zeros(&[4, 3]));
        assert!((sum - 3.0 * 2f64.ln()).abs() < 1e-12);
        let mean = eval(|t, x| multilabel_head_loss(t, x, &labels, Reduction::Mean), Tensor::zeros(&[4, 3]));
        assert!((mean - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_near_zero() {
        let labels = [true, false];
        let v = eval(
            |t, x| binary_head_loss(t, x, &labels),
            Tensor::new(vec![2, 1], vec![50.0, -50.0]).unwrap(),
        );
        assert!(v < 1e-20, "{v}");
        let large = eval(
            |t, x| binary_head_loss(t, x, &labels),
            Tensor::new(vec![2, 1], vec![-800.0, 800.0]).unwrap(),
        );
        assert!((large - 800.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_five_class_is_log_five() {
        let v = eval(|t, x| multiclass_head_loss(t, x, &[0, 3, 4]), Tensor::zeros(&[3, 5]));
        assert!((v - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            binary_head_loss(&mut tape, x, &[true, false]),
            Err(crate::Error::Contract(_))
        ));
        assert!(matches!(
            multiclass_head_loss(&mut tape, x, &[0, 1, 1]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn head_is_deterministic_under_seed() {
        let a = Head::new(HeadKind::Mlp, 4, 8, 3, 11).unwrap();
        let b = Head::new(HeadKind::Mlp, 4, 8, 3, 11).unwrap();
        assert_eq!(a.params().flatten(), b.params().flatten());
        let out = a.predict(&Tensor::zeros(&[5, 4])).unwrap();
        assert_eq!(out.shape(), &[5, 3]);
    }
}
