use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use supgcl::downstream::{cross_validate, undersample_evaluate, Dataset, FinetuneConfig, HeadKind, LabelSet, Task};
use supgcl::encoder::{Encoder, EncoderConfig};
use supgcl::estimate::{bootstrap_structure, derive_sample_grns, is_acyclic, EstimateConfig, ExpressionMatrix};
use supgcl::grn::{load_grn_dir, TeacherBank};
use supgcl::synth::{generate, SynthSpec};

fn spec() -> SynthSpec {
    SynthSpec { n_genes: 12, n_patients: 30, n_knockdown_genes: 3, density: 0.3, seed: 2, ..SynthSpec::default() }
}

#[test]
fn written_dataset_loads_back_identically() {
    let data = generate(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();

    let patients = load_grn_dir(&dir.path().join("patients")).unwrap();
    assert_eq!(patients, data.patients);
    let vocab = patients[0].1.vocab().clone();
    let bank = TeacherBank::load_manifest(&dir.path().join("teachers.json"), &vocab).unwrap();
    assert_eq!(bank.keys(), data.bank.keys());
    for op in bank.keys() {
        assert_eq!(bank.teachers(op).unwrap(), data.bank.teachers(op).unwrap());
    }
    assert_eq!(LabelSet::load(dir.path()).unwrap(), data.labels);
    let expr = ExpressionMatrix::load_tsv(&dir.path().join("expression.tsv")).unwrap();
    assert_eq!(expr, data.expression);
}

#[test]
fn estimated_network_yields_one_grn_per_sample() {
    let data = generate(&spec()).unwrap();
    let cfg = EstimateConfig { n_basis: 6, max_iters: 100, ..EstimateConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = bootstrap_structure(&data.expression, 4, 0.25, &cfg, &mut rng).unwrap();
    assert!(is_acyclic(r.net.parents()));
    let grns = derive_sample_grns(&r.net, &data.expression).unwrap();
    assert_eq!(grns.len(), 30);
    let edges: Vec<(usize, usize)> = r.net.edges();
    for (s, g) in grns.iter().enumerate() {
        assert_eq!(g.edges().len(), edges.len());
        assert_eq!(g.node_features(), data.expression.sample(s).as_slice());
        assert!(g.edge_features().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn every_task_fine_tunes_with_the_encoder_unfrozen() {
    let data = generate(&spec()).unwrap();
    let enc = Encoder::new(EncoderConfig { layers: 1, hidden_dim: 8, heads: 2, ..EncoderConfig::default() }, 12).unwrap();
    let ds = Dataset { patients: &data.patients, labels: &data.labels };
    let cfg = FinetuneConfig { epochs: 3, folds: 3, hidden: 8, node_patients: 3, ..FinetuneConfig::default() };
    for task in Task::ALL {
        let r = cross_validate(task, &ds, &enc, &cfg).unwrap();
        assert_eq!(r.folds.len(), 3, "{task:?}");
        for (name, ms) in &r.summary {
            assert!(ms.mean.is_finite() && ms.std >= 0.0, "{task:?} {name}");
            assert!((0.0..=1.0).contains(&ms.mean), "{task:?} {name} {}", ms.mean);
        }
    }
    let frozen = FinetuneConfig { freeze_encoder: true, head: HeadKind::Linear, ..cfg };
    let r = undersample_evaluate(&ds, &enc, &frozen, &[0, 1, 2]).unwrap();
    assert_eq!(r.folds.len(), 3);
    assert!(r.summary.contains_key("accuracy"));
}
