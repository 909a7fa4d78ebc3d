use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use supgcl::downstream::{cross_validate, undersample_evaluate, Dataset, EvalReport, LabelSet, MeanStd, Task};
use supgcl::encoder::Encoder;
use supgcl::estimate::{bootstrap_structure, derive_sample_grns, frequency_records, EdgeFrequency, ExpressionMatrix};
use supgcl::grn::{load_grn_dir, save_grn, Grn, TeacherBank};
use supgcl::pretrain::{embed_dataset, pretrain, write_embeddings, TrainConfig};
use supgcl::synth::generate;
use supgcl::verify;

use crate::config::RunConfig;
use crate::manifest::{hash_outputs, hash_tree, timestamp, Artifact, RunManifest};
use crate::{Cli, CliError, Command, DataArgs};

struct Run {
    command: &'static str,
    config_path: Option<PathBuf>,
    config: RunConfig,
    seed: Option<u64>,
    started: u64,
    inputs: Vec<Artifact>,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.extend(hash_tree(path)?);
        Ok(())
    }

    fn finish(self, out: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_path: self.config_path.map(|p| p.display().to_string()),
            config: serde_json::to_value(&self.config).map_err(|e| CliError::Other(e.to_string()))?,
            seed: self.seed,
            inputs: self.inputs,
            outputs: hash_outputs(out)?,
            started_unix: self.started,
            finished_unix: timestamp()?,
        };
        manifest.write(out)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Estimate { .. } => "estimate",
        Command::Pretrain { .. } => "pretrain",
        Command::Embed { .. } => "embed",
        Command::Finetune { .. } => "finetune",
        Command::Evaluate { .. } => "evaluate",
        Command::Verify => "verify",
        Command::Sweep { .. } => "sweep",
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let started = timestamp()?;
    let config = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    config.validate()?;
    let mut run = Run {
        command: command_name(&cli.command),
        config_path: cli.config.clone(),
        config,
        seed: cli.seed,
        started,
        inputs: Vec::new(),
    };
    if let Some(p) = &cli.config {
        run.input(p)?;
    }
    let out = cli.out.clone();
    let require_out = || out.clone().ok_or_else(|| CliError::Config("--out is required".into()));
    match cli.command {
        Command::Synth => synth(run, &require_out()?),
        Command::Estimate { expression } => estimate(run, &expression, &require_out()?),
        Command::Pretrain { data, teachers, objective } => {
            if let Some(o) = objective {
                run.config.pretrain.objective = o;
            }
            pretrain_cmd(run, &data, teachers, &require_out()?)
        }
        Command::Embed { data, checkpoint } => embed(run, &data, &checkpoint, &require_out()?),
        Command::Finetune { data, checkpoint, task } => {
            finetune(run, &data, checkpoint.as_deref(), task, &require_out()?)
        }
        Command::Evaluate { data, checkpoint } => evaluate(run, &data, checkpoint.as_deref(), &require_out()?),
        Command::Verify => verify_cmd(run, out.as_deref()),
        Command::Sweep { data, teachers } => sweep(run, &data, teachers, &require_out()?),
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::from_io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::from_io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::from_io(path, e))
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!("{what} not found: {}", path.display())))
    }
}

fn load_patients(run: &mut Run, data: &DataArgs) -> Result<Vec<(String, Grn)>, CliError> {
    let dir = data.data.join("patients");
    require_exists(&dir, "patient GRN directory")?;
    run.input(&dir)?;
    Ok(load_grn_dir(&dir)?)
}

fn load_labels(run: &mut Run, data: &DataArgs) -> Result<LabelSet, CliError> {
    for f in ["node_labels.tsv", "graph_labels.tsv"] {
        let p = data.data.join(f);
        require_exists(&p, "label file")?;
        run.input(&p)?;
    }
    Ok(LabelSet::load(&data.data)?)
}

fn load_encoder(run: &mut Run, checkpoint: Option<&Path>, num_nodes: usize) -> Result<Encoder, CliError> {
    match checkpoint {
        Some(p) => {
            require_exists(p, "checkpoint")?;
            run.input(p)?;
            let enc = Encoder::load(p)?;
            if enc.num_nodes() != num_nodes {
                return Err(CliError::Other(format!(
                    "checkpoint was trained on {} genes, dataset has {num_nodes}",
                    enc.num_nodes()
                )));
            }
            Ok(enc)
        }
        None => Ok(Encoder::new(run.config.pretrain.encoder.clone(), num_nodes)?),
    }
}

/// Loads patients and teachers, checking every input before any work.
fn load_pretrain_inputs(
    run: &mut Run,
    data: &DataArgs,
    teachers: Option<PathBuf>,
) -> Result<(Vec<(String, Grn)>, TeacherBank), CliError> {
    let manifest = teachers.unwrap_or_else(|| data.data.join("teachers.json"));
    require_exists(&manifest, "teacher manifest")?;
    let patients = load_patients(run, data)?;
    let vocab = patients[0].1.vocab().clone();
    let bank = TeacherBank::load_manifest(&manifest, &vocab)?;
    run.input(&manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest).map_err(|e| CliError::from_io(&manifest, e))?;
    let listed: std::collections::BTreeMap<String, Vec<PathBuf>> =
        serde_json::from_str(&text).map_err(|e| CliError::Other(e.to_string()))?;
    for f in listed.values().flatten() {
        run.input(&base.join(f))?;
    }
    Ok((patients, bank))
}

fn synth(run: Run, out: &Path) -> Result<(), CliError> {
    let data = generate(&run.config.synth)?;
    data.write(out)?;
    run.finish(out)
}

#[derive(Serialize)]
struct NetworkFile<'a> {
    genes: &'a [String],
    edges: Vec<EdgeFrequency>,
    dropped: Vec<[&'a str; 2]>,
    frequencies: Vec<EdgeFrequency>,
}

fn estimate(mut run: Run, expression: &Path, out: &Path) -> Result<(), CliError> {
    require_exists(expression, "expression matrix")?;
    run.input(expression)?;
    let data = ExpressionMatrix::load_tsv(expression)?;
    let cfg = &run.config.estimate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = bootstrap_structure(&data, cfg.runs, cfg.threshold, cfg, &mut rng)?;
    let grns = derive_sample_grns(&result.net, &data)?;
    let genes = data.genes();
    let name = |i: usize| genes.name(i);
    let all = frequency_records(genes, &result.frequencies);
    let kept: Vec<EdgeFrequency> = result
        .net
        .edges()
        .into_iter()
        .map(|(j, i)| EdgeFrequency {
            from: name(j).to_owned(),
            to: name(i).to_owned(),
            frequency: result.frequencies.get(&(j, i)).copied().unwrap_or(0.0),
        })
        .collect();
    let file = NetworkFile {
        genes: genes.names(),
        edges: kept,
        dropped: result.dropped.iter().map(|&(j, i)| [name(j), name(i)]).collect(),
        frequencies: all,
    };
    create_dir(&out.join("patients"))?;
    write_json(&out.join("network.json"), &file)?;
    for (id, g) in data.samples().iter().zip(&grns) {
        save_grn(g, &out.join("patients").join(format!("{id}.json")))?;
    }
    run.finish(out)
}

fn pretrain_cmd(mut run: Run, data: &DataArgs, teachers: Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let (patients, bank) = load_pretrain_inputs(&mut run, data, teachers)?;
    let grns: Vec<Grn> = patients.into_iter().map(|(_, g)| g).collect();
    let outcome = pretrain(&grns, &bank, &run.config.pretrain)?;
    create_dir(out)?;
    let tmp = out.join("encoder.json.partial");
    outcome.encoder.save(&tmp)?;
    let ckpt = out.join("encoder.json");
    fs::rename(&tmp, &ckpt).map_err(|e| CliError::from_io(&ckpt, e))?;
    write_text(&out.join("train_log.jsonl"), &outcome.history.to_json_lines())?;
    run.finish(out)
}

fn embed(mut run: Run, data: &DataArgs, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let patients = load_patients(&mut run, data)?;
    let encoder = load_encoder(&mut run, Some(checkpoint), patients[0].1.num_nodes())?;
    let records = embed_dataset(&patients, &encoder)?;
    create_dir(out)?;
    write_embeddings(&out.join("embeddings.json"), patients[0].1.vocab().names(), &records)?;
    run.finish(out)
}

fn run_task(
    task: Task,
    ds: &Dataset,
    encoder: &Encoder,
    cfg: &RunConfig,
    undersample: bool,
) -> Result<EvalReport, CliError> {
    if undersample && task == Task::Rel {
        let seeds: Vec<u64> = (0..cfg.evaluate.undersample_seeds)
            .map(|k| cfg.finetune.seed.wrapping_add(k))
            .collect();
        Ok(undersample_evaluate(ds, encoder, &cfg.finetune, &seeds)?)
    } else {
        Ok(cross_validate(task, ds, encoder, &cfg.finetune)?)
    }
}

fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("task,metric,mean,std\n");
    for r in reports {
        for (name, MeanStd { mean, std }) in &r.summary {
            s.push_str(&format!("{},{name},{mean},{std}\n", r.task.name()));
        }
    }
    s
}

fn finetune(mut run: Run, data: &DataArgs, checkpoint: Option<&Path>, task: Task, out: &Path) -> Result<(), CliError> {
    let patients = load_patients(&mut run, data)?;
    let labels = load_labels(&mut run, data)?;
    let encoder = load_encoder(&mut run, checkpoint, patients[0].1.num_nodes())?;
    let ds = Dataset { patients: &patients, labels: &labels };
    let report = run_task(task, &ds, &encoder, &run.config, false)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("summary.csv"), &summary_csv(std::slice::from_ref(&report)))?;
    run.finish(out)
}

fn evaluate(mut run: Run, data: &DataArgs, checkpoint: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let patients = load_patients(&mut run, data)?;
    let labels = load_labels(&mut run, data)?;
    let encoder = load_encoder(&mut run, checkpoint, patients[0].1.num_nodes())?;
    let ds = Dataset { patients: &patients, labels: &labels };
    let reports = run
        .config
        .evaluate
        .tasks
        .iter()
        .map(|&t| run_task(t, &ds, &encoder, &run.config, true))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(out)?;
    write_json(&out.join("metrics.json"), &reports)?;
    write_text(&out.join("summary.csv"), &summary_csv(&reports))?;
    run.finish(out)
}

fn verify_cmd(run: Run, out: Option<&Path>) -> Result<(), CliError> {
    let results = verify::run_all(run.seed.unwrap_or(0))?;
    for c in &results {
        println!(
            "{} {} measured={:e} tolerance={:e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_json(&out.join("verify.json"), &results)?;
        run.finish(out)?;
    }
    let failed: Vec<&str> = results.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

/// Metric that ranks a task's results.
fn primary_metric(task: Task) -> &'static str {
    match task {
        Task::Bp | Task::Cc => "subset_accuracy",
        Task::Rel | Task::Subtype => "accuracy",
        Task::Hazard => "c_index",
    }
}

#[derive(Serialize)]
struct SweepPoint {
    learning_rate: f64,
    batch_size: usize,
    tau: f64,
    best_val_loss: f64,
    metric: String,
    mean: f64,
    std: f64,
}

fn sweep(mut run: Run, data: &DataArgs, teachers: Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let (patients, bank) = load_pretrain_inputs(&mut run, data, teachers)?;
    let labels = load_labels(&mut run, data)?;
    let grns: Vec<Grn> = patients.iter().map(|(_, g)| g.clone()).collect();
    let ds = Dataset { patients: &patients, labels: &labels };
    let sw = run.config.sweep.clone();
    let metric = primary_metric(sw.task);
    let mut points = Vec::new();
    let mut best: Option<(f64, Encoder)> = None;
    for &learning_rate in &sw.learning_rates {
        for &batch_size in &sw.batch_sizes {
            for &tau in &sw.taus {
                let mut cfg: TrainConfig = run.config.pretrain.clone();
                cfg.learning_rate = learning_rate;
                cfg.batch_size = batch_size;
                cfg.loss.tau_node = tau;
                cfg.loss.tau_aug = tau;
                log::info!("sweep point lr={learning_rate} batch={batch_size} tau={tau}");
                let outcome = pretrain(&grns, &bank, &cfg)?;
                let report = cross_validate(sw.task, &ds, &outcome.encoder, &run.config.finetune)?;
                let s = report.summary.get(metric).copied().unwrap_or(MeanStd { mean: f64::NAN, std: f64::NAN });
                if best.as_ref().is_none_or(|(m, _)| s.mean > *m) {
                    best = Some((s.mean, outcome.encoder));
                }
                points.push(SweepPoint {
                    learning_rate,
                    batch_size,
                    tau,
                    best_val_loss: outcome.history.best_val_loss,
                    metric: metric.to_owned(),
                    mean: s.mean,
                    std: s.std,
                });
            }
        }
    }
    create_dir(out)?;
    let mut csv = String::from("learning_rate,batch_size,tau,best_val_loss,metric,mean,std\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.learning_rate, p.batch_size, p.tau, p.best_val_loss, p.metric, p.mean, p.std
        ));
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    write_json(&out.join("sweep.json"), &points)?;
    if let Some((_, enc)) = best {
        enc.save(&out.join("best_encoder.json"))?;
    }
    run.finish(out)
}
