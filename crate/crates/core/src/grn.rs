//! Gene regulatory networks, knockdown masking and teacher banks.
//!
//! GRN file layout (UTF-8 JSON):
//!
//! ```json
//! { "vocab": ["TP53", "MYC", ...],
//!   "edges": [[0, 1], [1, 2]],
//!   "node_features": [0.3, -1.2, ...],
//!   "edge_features": [0.8, 0.1] }
//! ```
//!
//! A teacher-bank manifest is a JSON object mapping a gene name to a list of
//! GRN file paths, resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Ordered, duplicate-free list of gene identifiers.
#[derive(Debug, Clone)]
pub struct GeneVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for GeneVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl GeneVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate gene name {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// `G000, G001, ...` for synthetic data.
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("G{i:03}")).collect()).expect("names are distinct")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Directed graph over a gene vocabulary with one scalar per node and per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Grn {
    vocab: Arc<GeneVocabulary>,
    edges: Vec<(usize, usize)>,
    node_features: Vec<f64>,
    edge_features: Vec<f64>,
}

/// Knock down (mask) gene `gene_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub gene_index: usize,
}

impl AugmentationOp {
    pub fn new(gene_index: usize) -> Self {
        Self { gene_index }
    }
}

impl Grn {
    pub fn new(
        vocab: Arc<GeneVocabulary>,
        edges: Vec<(usize, usize)>,
        node_features: Vec<f64>,
        edge_features: Vec<f64>,
    ) -> Result<Self> {
        let n = vocab.len();
        ensure!(
            node_features.len() == n,
            Validation,
            "{} node features for {} genes",
            node_features.len(),
            n
        );
        ensure!(
            edge_features.len() == edges.len(),
            Validation,
            "{} edge features for {} edges",
            edge_features.len(),
            edges.len()
        );
        let mut seen = HashSet::with_capacity(edges.len());
        for (k, &(s, d)) in edges.iter().enumerate() {
            ensure!(s < n && d < n, Validation, "edge {k} ({s}->{d}) out of range for {n} genes");
            ensure!(s != d, Validation, "edge {k} is a self-loop on {s}");
            ensure!(seen.insert((s, d)), Validation, "edge {k} ({s}->{d}) is duplicated");
        }
        if let Some(i) = node_features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("node feature {i} is not finite")));
        }
        if let Some(k) = edge_features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("edge feature {k} is not finite")));
        }
        Ok(Self {
            vocab,
            edges,
            node_features,
            edge_features,
        })
    }

    pub fn vocab(&self) -> &Arc<GeneVocabulary> {
        &self.vocab
    }

    pub fn num_nodes(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &[f64] {
        &self.node_features
    }

    pub fn edge_features(&self) -> &[f64] {
        &self.edge_features
    }

    /// Same topology and vocabulary, new features.
    pub fn with_features(&self, node_features: Vec<f64>, edge_features: Vec<f64>) -> Result<Self> {
        Self::new(self.vocab.clone(), self.edges.clone(), node_features, edge_features)
    }

    /// Zeroes gene `a` and every edge feature on an edge into or out of `a`.
    pub fn apply_knockdown(&self, op: AugmentationOp) -> Result<Grn> {
        let a = op.gene_index;
        ensure!(
            a < self.num_nodes(),
            Validation,
            "knockdown gene {a} out of range for {} genes",
            self.num_nodes()
        );
        let mut out = self.clone();
        out.node_features[a] = 0.0;
        for (f, &(s, d)) in out.edge_features.iter_mut().zip(&self.edges) {
            if s == a || d == a {
                *f = 0.0;
            }
        }
        Ok(out)
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Grn> {
        let n = self.num_nodes();
        ensure!(perm.len() == n, Validation, "permutation length {} for {n} nodes", perm.len());
        let mut names = vec![String::new(); n];
        let mut x = vec![0.0; n];
        for (i, &p) in perm.iter().enumerate() {
            ensure!(p < n, Validation, "permutation entry {p} out of range");
            names[p] = self.vocab.name(i).to_string();
            x[p] = self.node_features[i];
        }
        let vocab = Arc::new(GeneVocabulary::new(names)?);
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        Grn::new(vocab, edges, x, self.edge_features.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GrnFile {
            vocab: self.vocab.names.clone(),
            edges: self.edges.iter().map(|&(s, d)| [s, d]).collect(),
            node_features: self.node_features.clone(),
            edge_features: self.edge_features.clone(),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Grn> {
        let file: GrnFile = serde_json::from_str(text).map_err(|e| {
            Error::parse(origin, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let vocab = GeneVocabulary::new(file.vocab)
            .map_err(|e| Error::parse(origin, "field `vocab`", e.to_string()))?;
        let edges = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Grn::new(Arc::new(vocab), edges, file.node_features, file.edge_features).map_err(|e| {
            let message = match e {
                Error::Validation(m) => m,
                other => other.to_string(),
            };
            Error::parse(origin, "graph invariants", message)
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrnFile {
    vocab: Vec<String>,
    edges: Vec<[usize; 2]>,
    node_features: Vec<f64>,
    edge_features: Vec<f64>,
}

pub fn save_grn(g: &Grn, path: &Path) -> Result<()> {
    fs::write(path, g.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_grn(path: &Path) -> Result<Grn> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Grn::from_json(&text, path)
}

/// Loads a GRN and checks that it uses exactly `vocab`; the returned graph
/// shares the given vocabulary handle.
pub fn load_grn_with_vocab(path: &Path, vocab: &Arc<GeneVocabulary>) -> Result<Grn> {
    let g = load_grn(path)?;
    if g.vocab.as_ref() != vocab.as_ref() {
        return Err(Error::parse(
            path,
            "field `vocab`",
            "gene vocabulary differs from the reference vocabulary",
        ));
    }
    Ok(Grn {
        vocab: vocab.clone(),
        ..g
    })
}

/// Loads every `*.json` file of `dir` in file-name order.
pub fn load_grn_dir(dir: &Path) -> Result<Vec<(String, Grn)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), Validation, "no GRN files in {}", dir.display());
    let first = load_grn(&paths[0])?;
    let vocab = first.vocab.clone();
    let mut out = Vec::with_capacity(paths.len());
    for p in &paths {
        let g = load_grn_with_vocab(p, &vocab)?;
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((id, g));
    }
    Ok(out)
}

/// Teacher GRNs per knockdown gene.
#[derive(Debug, Clone)]
pub struct TeacherBank {
    entries: BTreeMap<usize, Vec<Grn>>,
    num_nodes: usize,
}

impl TeacherBank {
    pub fn new(entries: BTreeMap<usize, Vec<Grn>>) -> Result<Self> {
        ensure!(!entries.is_empty(), Validation, "teacher bank has no knockdown genes");
        let mut num_nodes = None;
        for (&a, list) in &entries {
            ensure!(!list.is_empty(), Validation, "teacher list for gene {a} is empty");
            for g in list {
                let n = *num_nodes.get_or_insert(g.num_nodes());
                ensure!(
                    g.num_nodes() == n,
                    Validation,
                    "teacher for gene {a} has {} nodes, expected {n}",
                    g.num_nodes()
                );
                ensure!(a < n, Validation, "knockdown gene {a} out of range for {n} genes");
            }
        }
        Ok(Self {
            entries,
            num_nodes: num_nodes.expect("non-empty"),
        })
    }

    /// The augmentation set, in ascending gene order. Position in this list
    /// is the row/column index of the augmentation-level distributions.
    pub fn keys(&self) -> Vec<AugmentationOp> {
        self.entries.keys().map(|&a| AugmentationOp::new(a)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn teachers(&self, op: AugmentationOp) -> Result<&[Grn]> {
        self.entries
            .get(&op.gene_index)
            .map(Vec::as_slice)
            .ok_or(Error::MissingTeacher(op.gene_index))
    }

    /// One teacher for `op`, uniformly at random.
    pub fn sample_teacher<R: Rng + ?Sized>(&self, op: AugmentationOp, rng: &mut R) -> Result<&Grn> {
        let list = self.teachers(op)?;
        let i = rng.random_range(0..list.len());
        Ok(&list[i])
    }

    /// Checks every teacher against the patients' vocabulary.
    pub fn check_vocab(&self, vocab: &GeneVocabulary) -> Result<()> {
        for list in self.entries.values() {
            for g in list {
                ensure!(
                    g.vocab().as_ref() == vocab,
                    Validation,
                    "teacher GRN vocabulary differs from patient vocabulary"
                );
            }
        }
        Ok(())
    }

    /// Reads a manifest mapping gene names to GRN paths.
    pub fn load_manifest(path: &Path, vocab: &Arc<GeneVocabulary>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: BTreeMap<String, Vec<PathBuf>> = serde_json::from_str(&text).map_err(|e| {
            Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = BTreeMap::new();
        for (gene, files) in manifest {
            let a = vocab.position(&gene).ok_or_else(|| {
                Error::parse(path, format!("key {gene:?}"), "gene not in vocabulary")
            })?;
            let mut list = Vec::with_capacity(files.len());
            for f in files {
                list.push(load_grn_with_vocab(&base.join(f), vocab)?);
            }
            entries.insert(a, list);
        }
        Self::new(entries).map_err(|e| Error::parse(path, "manifest", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn chain() -> Grn {
        Grn::new(
            Arc::new(GeneVocabulary::numbered(3)),
            vec![(0, 1), (1, 2)],
            vec![1.0, 2.0, 3.0],
            vec![0.5, 0.7],
        )
        .unwrap()
    }

    #[test]
    fn knockdown_zeroes_node_and_incident_edges() {
        let g = chain().apply_knockdown(AugmentationOp::new(1)).unwrap();
        assert_eq!(g.node_features(), &[1.0, 0.0, 3.0]);
        assert_eq!(g.edge_features(), &[0.0, 0.0]);
    }

    #[test]
    fn knockdown_of_isolated_node_leaves_edges() {
        let g = Grn::new(
            Arc::new(GeneVocabulary::numbered(4)),
            vec![(0, 1), (1, 2)],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.5, 0.7],
        )
        .unwrap();
        let k = g.apply_knockdown(AugmentationOp::new(3)).unwrap();
        assert_eq!(k.node_features(), &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(k.edge_features(), g.edge_features());
    }

    #[test]
    fn knockdown_is_idempotent_and_leaves_input_alone() {
        let g = chain();
        let once = g.apply_knockdown(AugmentationOp::new(0)).unwrap();
        let twice = once.apply_knockdown(AugmentationOp::new(0)).unwrap();
        assert_eq!(once, twice);
        assert_eq!(g, chain());
    }

    #[test]
    fn knockdown_out_of_range_fails() {
        assert!(matches!(
            chain().apply_knockdown(AugmentationOp::new(3)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        let v = Arc::new(GeneVocabulary::numbered(3));
        assert!(Grn::new(v.clone(), vec![(0, 0)], vec![0.0; 3], vec![1.0]).is_err());
        assert!(Grn::new(v.clone(), vec![(0, 1), (0, 1)], vec![0.0; 3], vec![1.0, 1.0]).is_err());
        assert!(Grn::new(v.clone(), vec![(0, 3)], vec![0.0; 3], vec![1.0]).is_err());
        assert!(Grn::new(v.clone(), vec![], vec![0.0; 2], vec![]).is_err());
        assert!(Grn::new(v, vec![], vec![0.0, f64::NAN, 1.0], vec![]).is_err());
        assert!(GeneVocabulary::new(vec!["A".into(), "A".into()]).is_err());
    }

    fn bank(lists: &[(usize, usize)]) -> TeacherBank {
        let mut entries = BTreeMap::new();
        for &(a, count) in lists {
            let list = (0..count)
                .map(|i| chain().with_features(vec![i as f64; 3], vec![0.0, 0.0]).unwrap())
                .collect();
            entries.insert(a, list);
        }
        TeacherBank::new(entries).unwrap()
    }

    #[test]
    fn singleton_teacher_is_returned() {
        let b = bank(&[(1, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = b.sample_teacher(AugmentationOp::new(1), &mut rng).unwrap();
        assert_eq!(t.node_features(), &[0.0; 3]);
    }

    #[test]
    fn teacher_sampling_is_seed_deterministic() {
        let b = bank(&[(0, 3), (2, 3)]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| b.sample_teacher(AugmentationOp::new(2), &mut rng).unwrap().node_features()[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        let seen: HashSet<u64> = draw(7).iter().map(|v| v.to_bits()).collect();
        assert!(seen.len() > 1);
    }

    #[test]
    fn missing_teacher_is_an_error() {
        let b = bank(&[(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample_teacher(AugmentationOp::new(2), &mut rng),
            Err(Error::MissingTeacher(2))
        ));
    }

    #[test]
    fn empty_bank_or_list_is_rejected() {
        assert!(TeacherBank::new(BTreeMap::new()).is_err());
        let mut e = BTreeMap::new();
        e.insert(0, Vec::new());
        assert!(TeacherBank::new(e).is_err());
    }

    #[test]
    fn duplicate_edge_in_file_is_a_parse_error() {
        let text = r#"{"vocab":["a","b"],"edges":[[0,1],[0,1]],"node_features":[1,2],"edge_features":[1,1]}"#;
        let err = Grn::from_json(text, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(err.to_string().contains("duplicated"));
    }

    #[test]
    fn feature_length_mismatch_in_file_is_a_parse_error() {
        let text = r#"{"vocab":["a","b"],"edges":[],"node_features":[1],"edge_features":[]}"#;
        assert!(matches!(
            Grn::from_json(text, Path::new("x.json")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\n\"vocab\": [\"a\"],\n\"edges\": [[0,\n";
        let err = Grn::from_json(text, Path::new("bad.json")).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}
