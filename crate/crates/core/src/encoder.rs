//! Shared graph encoder and mean-pool readout.
//!
//! Each layer is edge-aware attention message passing:
//!
//! ```text
//! logit_k   = <Q h_dst, K h_src> / sqrt(d_head) + c * e_k      (per head)
//! alpha     = softmax of logit over the incoming edges of dst
//! message_k = alpha_k * e_k * V h_src
//! h'        = h + tanh(W h + b + sum of messages [+ reverse-direction messages])
//! ```
//!
//! Messages are scaled by the scalar edge feature `e_k`, so an edge whose
//! feature was masked to zero carries nothing.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::grn::Grn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    /// Also aggregate messages against edge direction.
    pub reverse_edges: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            hidden_dim: 64,
            heads: 4,
            reverse_edges: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.layers >= 1, Config, "encoder.layers must be at least 1");
        ensure!(self.hidden_dim >= 1, Config, "encoder.hidden_dim must be at least 1");
        ensure!(self.heads >= 1, Config, "encoder.heads must be at least 1");
        ensure!(
            self.hidden_dim.is_multiple_of(self.heads),
            Config,
            "encoder.hidden_dim {} is not divisible by heads {}",
            self.hidden_dim,
            self.heads
        );
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Per-node embeddings of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Tensor,
    /// Free-form tag of the graph/augmentation that produced the matrix.
    pub provenance: String,
}

impl EmbeddingMatrix {
    pub fn new(values: Tensor, provenance: impl Into<String>) -> Result<Self> {
        values.dims2()?;
        ensure!(values.is_finite(), Numeric, "embedding contains non-finite values");
        Ok(Self {
            values,
            provenance: provenance.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Column means of `z`.
pub fn mean_pool(z: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let (n, d) = z.values.dims2()?;
    ensure!(n >= 1, Contract, "mean_pool of an empty embedding matrix");
    let mut out = vec![0.0; d];
    for row in z.values.rows() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n as f64;
    }
    Ok(out)
}

struct LayerIndex {
    self_weight: usize,
    bias: usize,
    heads: Vec<HeadIndex>,
}

struct HeadIndex {
    query: usize,
    key: usize,
    value: usize,
    edge_gain: usize,
    reverse: Option<(usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderCheckpoint {
    format: String,
    config: EncoderConfig,
    num_nodes: usize,
    params: ParamSet,
}

const ENCODER_FORMAT: &str = "supgcl-encoder/1";

/// The shared GNN. Parameters do not depend on graph size, but an encoder is
/// tied to the gene count of the vocabulary it was built for.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    num_nodes: usize,
    params: ParamSet,
}

impl Encoder {
    pub fn new(config: EncoderConfig, num_nodes: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_dim;
        let dh = config.head_dim();
        let mut params = ParamSet::new();
        let mut uniform = |name: String, shape: &[usize], fan_in: usize, params: &mut ParamSet| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(name, Tensor::new(shape.to_vec(), data).expect("sized"));
        };
        uniform("input.weight".into(), &[1, d], 1, &mut params);
        uniform("input.bias".into(), &[d], 1, &mut params);
        for l in 0..config.layers {
            uniform(format!("layer{l}.self"), &[d, d], d, &mut params);
            uniform(format!("layer{l}.bias"), &[d], d, &mut params);
            for h in 0..config.heads {
                uniform(format!("layer{l}.head{h}.query"), &[d, dh], d, &mut params);
                uniform(format!("layer{l}.head{h}.key"), &[d, dh], d, &mut params);
                uniform(format!("layer{l}.head{h}.value"), &[d, dh], d, &mut params);
                uniform(format!("layer{l}.head{h}.edge_gain"), &[1], 1, &mut params);
                if config.reverse_edges {
                    uniform(format!("layer{l}.head{h}.value_rev"), &[d, dh], d, &mut params);
                    uniform(format!("layer{l}.head{h}.edge_gain_rev"), &[1], 1, &mut params);
                }
            }
        }
        Ok(Self {
            config,
            num_nodes,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        ensure!(
            params.len() == self.params.len()
                && (0..params.len()).all(|i| params.shape(i) == self.params.shape(i)),
            Contract,
            "parameter layout does not match the encoder configuration"
        );
        self.params = params;
        Ok(())
    }

    fn layout(&self) -> (usize, usize, Vec<LayerIndex>) {
        let mut next = 0;
        let mut take = || {
            next += 1;
            next - 1
        };
        let input_w = take();
        let input_b = take();
        let layers = (0..self.config.layers)
            .map(|_| {
                let self_weight = take();
                let bias = take();
                let heads = (0..self.config.heads)
                    .map(|_| {
                        let query = take();
                        let key = take();
                        let value = take();
                        let edge_gain = take();
                        let reverse = self.config.reverse_edges.then(|| (take(), take()));
                        HeadIndex {
                            query,
                            key,
                            value,
                            edge_gain,
                            reverse,
                        }
                    })
                    .collect();
                LayerIndex {
                    self_weight,
                    bias,
                    heads,
                }
            })
            .collect();
        (input_w, input_b, layers)
    }

    /// Records the forward pass of `g` on `tape`; returns the `[|V|, d]` output.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, g: &Grn) -> Result<Var> {
        ensure!(
            g.num_nodes() == self.num_nodes,
            Contract,
            "graph has {} genes, encoder was built for {}",
            g.num_nodes(),
            self.num_nodes
        );
        ensure!(
            bound.vars().len() == self.params.len(),
            Contract,
            "bound parameters do not belong to this encoder"
        );
        let n = g.num_nodes();
        let dh = self.config.head_dim();
        let src: Arc<[usize]> = g.edges().iter().map(|e| e.0).collect();
        let dst: Arc<[usize]> = g.edges().iter().map(|e| e.1).collect();
        let x = tape.constant(Tensor::new(vec![n, 1], g.node_features().to_vec())?);
        let e = tape.constant(Tensor::vector(g.edge_features().to_vec()));
        let scale = 1.0 / (dh as f64).sqrt();

        let (input_w, input_b, layers) = self.layout();
        let lifted = tape.matmul(x, bound.get(input_w))?;
        let mut h = tape.add_row(lifted, bound.get(input_b))?;

        for layer in &layers {
            let own = tape.matmul(h, bound.get(layer.self_weight))?;
            let mut pre = tape.add_row(own, bound.get(layer.bias))?;
            if g.num_edges() > 0 {
                let mut head_out = Vec::with_capacity(layer.heads.len());
                for head in &layer.heads {
                    let q = tape.matmul(h, bound.get(head.query))?;
                    let k = tape.matmul(h, bound.get(head.key))?;
                    let v = tape.matmul(h, bound.get(head.value))?;
                    let gain = bound.get(head.edge_gain);
                    let mut agg = self.directed_messages(
                        tape, q, k, v, gain, e, &src, &dst, n, scale,
                    )?;
                    if let Some((value_rev, gain_rev)) = head.reverse {
                        let vr = tape.matmul(h, bound.get(value_rev))?;
                        let rev = self.directed_messages(
                            tape,
                            q,
                            k,
                            vr,
                            bound.get(gain_rev),
                            e,
                            &dst,
                            &src,
                            n,
                            scale,
                        )?;
                        agg = tape.add(agg, rev)?;
                    }
                    head_out.push(agg);
                }
                let messages = if head_out.len() == 1 {
                    head_out[0]
                } else {
                    tape.concat_cols(&head_out)?
                };
                pre = tape.add(pre, messages)?;
            }
            let act = tape.tanh(pre)?;
            h = tape.add(h, act)?;
        }
        Ok(h)
    }

    /// Attention-weighted messages from `from[k]` to `to[k]`, summed per receiver.
    #[allow(clippy::too_many_arguments)]
    fn directed_messages(
        &self,
        tape: &mut Tape,
        q: Var,
        k: Var,
        v: Var,
        gain: Var,
        e: Var,
        from: &Arc<[usize]>,
        to: &Arc<[usize]>,
        n: usize,
        scale: f64,
    ) -> Result<Var> {
        let q_to = tape.gather_rows(q, to.clone())?;
        let k_from = tape.gather_rows(k, from.clone())?;
        let qk = tape.mul(q_to, k_from)?;
        let dots = tape.sum_cols(qk)?;
        let dots = tape.scale(dots, scale)?;
        // c * e_k, as [E] = [E,1] x [1] reshaped
        let e_col = tape.reshape(e, &[from.len(), 1])?;
        let gain_row = tape.reshape(gain, &[1, 1])?;
        let edge_term = tape.matmul(e_col, gain_row)?;
        let edge_term = tape.reshape(edge_term, &[from.len()])?;
        let logits = tape.add(dots, edge_term)?;
        let alpha = tape.segment_softmax(logits, to.clone(), n)?;
        let weight = tape.mul(alpha, e)?;
        let v_from = tape.gather_rows(v, from.clone())?;
        let msgs = tape.mul_col(v_from, weight)?;
        tape.scatter_add_rows(msgs, to.clone(), n)
    }

    /// Embeds `g` without recording gradients for later use.
    pub fn encode(&self, g: &Grn) -> Result<EmbeddingMatrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let z = self.forward(&mut tape, &bound, g)?;
        EmbeddingMatrix::new(tape.value(z).clone(), "")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = EncoderCheckpoint {
            format: ENCODER_FORMAT.to_string(),
            config: self.config.clone(),
            num_nodes: self.num_nodes,
            params: self.params.clone(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| Error::Validation(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: EncoderCheckpoint = serde_json::from_str(&text).map_err(|e| {
            Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        if ckpt.format != ENCODER_FORMAT {
            return Err(Error::parse(
                path,
                "format",
                format!("expected {ENCODER_FORMAT}, found {}", ckpt.format),
            ));
        }
        let mut enc = Encoder::new(ckpt.config, ckpt.num_nodes)
            .map_err(|e| Error::parse(path, "config", e.to_string()))?;
        enc.set_params(ckpt.params)
            .map_err(|e| Error::parse(path, "params", e.to_string()))?;
        Ok(enc)
    }
}
