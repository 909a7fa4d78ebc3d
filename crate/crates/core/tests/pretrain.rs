use supgcl::encoder::{mean_pool, EncoderConfig};
use supgcl::grn::Grn;
use supgcl::pretrain::{embed_dataset, pretrain, write_embeddings, Objective, TrainConfig};
use supgcl::synth::{generate, SynthData, SynthSpec};

fn data() -> SynthData {
    generate(&SynthSpec {
        n_genes: 10,
        n_patients: 20,
        n_knockdown_genes: 3,
        n_teachers_per_gene: 2,
        density: 0.3,
        seed: 8,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 5e-3,
        seed: 1,
        encoder: EncoderConfig { layers: 1, hidden_dim: 8, heads: 2, seed: 1, ..EncoderConfig::default() },
        ..TrainConfig::default()
    }
}

fn grns(d: &SynthData) -> Vec<Grn> {
    d.patients.iter().map(|(_, g)| g.clone()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let d = data();
    let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, ..config(2) };
    let out = pretrain(&grns(&d), &d.bank, &cfg).unwrap();
    let fresh = supgcl::encoder::Encoder::new(cfg.encoder.clone(), 10).unwrap();
    assert_eq!(out.encoder.params().flatten(), fresh.params().flatten());
}

#[test]
fn training_reduces_the_training_loss() {
    let d = data();
    let out = pretrain(&grns(&d), &d.bank, &config(15)).unwrap();
    let h = &out.history;
    assert!(h.final_train_loss < h.initial_train_loss, "{} -> {}", h.initial_train_loss, h.final_train_loss);
    assert!(h.best_val_loss <= h.initial_val_loss);
}

#[test]
fn split_is_disjoint_and_history_is_consistent() {
    let d = data();
    let cfg = config(3);
    let out = pretrain(&grns(&d), &d.bank, &cfg).unwrap();
    let h = &out.history;
    let mut all: Vec<usize> = h.train_indices.iter().chain(&h.val_indices).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
    assert_eq!(h.val_indices.len(), 4);
    assert_eq!(h.epochs.len(), 3);
    let best = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best, h.best_val_loss);
    assert_eq!(h.epochs[h.best_epoch - 1].val_loss, best);
    let knockdown: Vec<usize> = d.bank.keys().iter().map(|op| op.gene_index).collect();
    for s in &h.steps {
        assert!(knockdown.contains(&s.a) && knockdown.contains(&s.b), "{s:?}");
        assert!(s.weight >= 0.0 && s.loss.is_finite());
        assert!((s.loss - (s.node_term + s.aug_term)).abs() <= 1e-12 * s.loss.abs().max(1e-300), "{s:?}");
    }
    let lines = h.to_json_lines();
    assert_eq!(lines.lines().count(), h.steps.len() + h.epochs.len());
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["kind"] == "step" || v["kind"] == "epoch");
    }
}

#[test]
fn same_seed_gives_identical_runs_and_other_seeds_differ() {
    let d = data();
    let a = pretrain(&grns(&d), &d.bank, &config(2)).unwrap();
    let b = pretrain(&grns(&d), &d.bank, &config(2)).unwrap();
    assert_eq!(a.history.to_json_lines(), b.history.to_json_lines());
    assert_eq!(a.encoder.params().flatten(), b.encoder.params().flatten());
    let c = pretrain(&grns(&d), &d.bank, &TrainConfig { seed: 2, ..config(2) }).unwrap();
    assert_ne!(a.history.to_json_lines(), c.history.to_json_lines());
}

#[test]
fn grace_objective_trains_and_ignores_teachers() {
    let d = data();
    let out = pretrain(&grns(&d), &d.bank, &TrainConfig { objective: Objective::Grace, ..config(3) }).unwrap();
    assert!(out.history.steps.iter().all(|s| s.aug_term == 0.0));
    assert!(out.history.final_train_loss.is_finite());
}

#[test]
fn early_stopping_respects_patience() {
    let d = data();
    let cfg = TrainConfig { patience: 1, learning_rate: 0.5, ..config(30) };
    let out = pretrain(&grns(&d), &d.bank, &cfg).unwrap();
    let h = &out.history;
    assert!(h.epochs.len() <= 30);
    if h.epochs.len() < 30 {
        assert!(h.epochs.len() - h.best_epoch >= 1);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let d = data();
    for cfg in [
        TrainConfig { epochs: 0, ..config(1) },
        TrainConfig { batch_size: 0, ..config(1) },
        TrainConfig { val_fraction: 1.0, ..config(1) },
        TrainConfig { learning_rate: f64::NAN, ..config(1) },
    ] {
        assert!(pretrain(&grns(&d), &d.bank, &cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn embeddings_have_expected_shapes_and_pooling() {
    let d = data();
    let enc = supgcl::encoder::Encoder::new(config(1).encoder, 10).unwrap();
    let records = embed_dataset(&d.patients, &enc).unwrap();
    assert_eq!(records.len(), 20);
    for (r, (id, g)) in records.iter().zip(&d.patients) {
        assert_eq!(&r.id, id);
        assert_eq!(r.nodes.len(), 10);
        assert!(r.nodes.iter().all(|row| row.len() == 8));
        assert_eq!(r.pooled, mean_pool(&enc.encode(g).unwrap()).unwrap());
        for c in 0..8 {
            let mean = r.nodes.iter().map(|row| row[c]).sum::<f64>() / 10.0;
            assert!((mean - r.pooled[c]).abs() < 1e-12);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.json");
    write_embeddings(&path, d.expression.genes().names(), &records).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["genes"].as_array().unwrap().len(), 10);
    assert_eq!(v["records"].as_array().unwrap().len(), 20);
}
