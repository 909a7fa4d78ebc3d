use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Tape handles for every tensor of a [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// On-disk layout of a parameter checkpoint.
///
/// ```json
/// { "format": "supgcl-params/1",
///   "params": [ { "name": "...", "shape": [r, c], "data": [...] }, ... ] }
/// ```
///
/// `data` is row-major; floats are written in shortest round-trip form so a
/// save/load cycle is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    params: Vec<ParamEntry>,
}

const CHECKPOINT_FORMAT: &str = "supgcl-params/1";

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its position.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let shape = tensor.shape().to_vec();
        self.entries.push(ParamEntry {
            name: name.into(),
            shape,
            data: tensor.into_data(),
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.entries[i].shape
    }

    pub fn data(&self, i: usize) -> &[f64] {
        &self.entries[i].data
    }

    pub fn data_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i].data
    }

    pub fn tensor(&self, i: usize) -> Tensor {
        let e = &self.entries[i];
        Tensor::new(e.shape.clone(), e.data.clone()).expect("shape checked on insert")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Records every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Records every tensor as a constant leaf (frozen).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = (0..self.entries.len())
            .map(|i| tape.leaf(self.tensor(i), trainable))
            .collect();
        BoundParams { vars }
    }

    /// Gradients for every tensor in order; zeros where none reached.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &Gradients) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.entries)
            .map(|(&v, e)| grads.get_or_zeros(v, &e.shape))
            .collect()
    }

    /// All scalars concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        ensure!(
            values.len() == self.num_scalars(),
            Contract,
            "set_flat: {} values for {} parameters",
            values.len(),
            self.num_scalars()
        );
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.data.len();
            e.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Appends all entries of `other`, prefixing their names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) {
        for e in &other.entries {
            self.entries.push(ParamEntry {
                name: format!("{prefix}{}", e.name),
                shape: e.shape.clone(),
                data: e.data.clone(),
            });
        }
    }

    /// Entries `range` as a separate set (names unchanged).
    pub fn slice(&self, range: std::ops::Range<usize>) -> ParamSet {
        ParamSet {
            entries: self.entries[range].to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            params: self.entries.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| {
            Error::parse(origin, format!("line {}", e.line()), e.to_string())
        })?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                origin,
                "format",
                format!("expected {CHECKPOINT_FORMAT}, found {}", file.format),
            ));
        }
        for e in &file.params {
            let expected: usize = e.shape.iter().product();
            if expected != e.data.len() {
                return Err(Error::parse(
                    origin,
                    format!("param {}", e.name),
                    format!("shape {:?} needs {} values, got {}", e.shape, expected, e.data.len()),
                ));
            }
            if e.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(origin, format!("param {}", e.name), "non-finite value"));
            }
        }
        Ok(Self {
            entries: file.params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
