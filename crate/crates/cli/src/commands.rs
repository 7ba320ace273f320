use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relcull::analysis::{
    conditional_distribution, eval_recall, fit_freq_baseline, gen_synthetic, label_distribution,
    synthetic_embeddings, write_histogram_csv, PrecomputedScores, PredicateScorer, RecallResult,
};
use relcull::curate::{
    accuracy_grid, curate, predictability_curve, write_curve_csv, CurationReport, CURVE_FILE,
};
use relcull::embed::{load_embeddings, EmbeddingTable};
use relcull::labelspace::{apply_mapping, cluster_predicates};
use relcull::sgdata::{
    dataset_stats, ingest_vg_files, load_dataset, save_dataset, split_dataset, Dataset, Vocab,
};
use relcull::vdnet::{
    build_samples, evaluate, init_vdnet, load_checkpoint, save_checkpoint, train,
    write_loss_history, AccuracyReport, PredicateAccuracy, VdNetPredictor,
};
use serde_json::json;

use crate::args::{Cli, Command, Which};
use crate::config::{apply_cluster, apply_recall, apply_vdnet, set, EvalConfig, FileConfig};
use crate::manifest::Manifest;

/// Bad invocation detected after parsing; exits like a flag error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest(_) => "ingest",
        Command::Stats(_) => "stats",
        Command::Cluster(_) => "cluster",
        Command::TrainVdnet(_) => "train-vdnet",
        Command::EvalVdnet(_) => "eval-vdnet",
        Command::Curate(_) => "curate",
        Command::Baseline(_) => "baseline",
        Command::Eval(_) => "eval",
        Command::Report(_) => "report",
        Command::Synth(_) => "synth",
    }
}

/// Output location plus the manifest that lists what was written.
struct Out<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl Out<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.output(name);
        self.dir.join(name)
    }

    fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("output serializes");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> anyhow::Result<()> {
        let path = self.path(name);
        let file =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn read_dataset(out: &mut Out, role: &str, path: &Path) -> anyhow::Result<Dataset> {
    out.manifest.dataset_input(role, path)?;
    Ok(load_dataset(path)?)
}

fn read_embeddings(out: &mut Out, path: &Path) -> anyhow::Result<EmbeddingTable> {
    out.manifest.input("embeddings", path)?;
    Ok(load_embeddings(path, None)?)
}

fn labelled_accuracy(report: &AccuracyReport, vocab: &Vocab) -> serde_json::Value {
    let per: BTreeMap<&str, &PredicateAccuracy> = report
        .per_predicate
        .iter()
        .map(|(&p, a)| (vocab.label(p).unwrap_or("?"), a))
        .collect();
    json!({ "overall_accuracy": report.overall_accuracy, "per_predicate": per })
}

fn recall_json(result: &RecallResult, cfg: &EvalConfig) -> serde_json::Value {
    json!({
        "mode": cfg.mode,
        "aggregation": cfg.aggregation,
        "recall": result.to_json(),
        "n_gold": result.n_gold,
        "n_images": result.n_images,
    })
}

fn run_recall(
    scorer: &dyn PredicateScorer,
    data: &Dataset,
    cfg: &EvalConfig,
) -> anyhow::Result<RecallResult> {
    let result = eval_recall(scorer, data, &cfg.k, cfg.mode, cfg.aggregation)?;
    for (k, r) in &result.recall {
        println!("R@{k} = {r:.4}");
    }
    Ok(result)
}

pub fn dispatch(cli: &Cli, mut file: FileConfig, argv: Vec<String>) -> anyhow::Result<()> {
    file.apply_seed(cli.seed);
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let mut out = Out {
        dir: &cli.out_dir,
        manifest: Manifest::new(command_name(&cli.command), argv),
    };
    out.manifest.seed = file.seed;

    match &cli.command {
        Command::Ingest(a) => {
            out.manifest.set_config(&json!({}));
            out.manifest.input("objects", &a.objects)?;
            out.manifest.input("relationships", &a.relationships)?;
            if let Some(p) = &a.attributes {
                out.manifest.input("attributes", p)?;
            }
            out.manifest.input("image_meta", &a.image_meta)?;
            let (data, report) = ingest_vg_files(
                &a.objects,
                &a.relationships,
                a.attributes.as_deref(),
                &a.image_meta,
            )?;
            let path = out.path("dataset.jsonl");
            save_dataset(&data, &path)?;
            out.manifest.output("dataset.jsonl.vocab.json");
            out.write_json("ingest_report.json", &report)?;
            println!(
                "ingested {} images, {} instances, {} triplets",
                report.images, report.instances, report.triplets
            );
        }
        Command::Stats(a) => {
            out.manifest.set_config(&json!({}));
            let data = read_dataset(&mut out, "dataset", &a.dataset)?;
            let stats = dataset_stats(&data);
            out.write_json("stats.json", &stats)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
        }
        Command::Cluster(a) => {
            let mut cfg = file.curate;
            apply_cluster(&mut cfg, &a.cluster);
            out.manifest.set_config(&json!({
                "linkage": cfg.linkage,
                "cluster_threshold": cfg.cluster_threshold,
            }));
            cfg.validate()?;
            let data = read_dataset(&mut out, "dataset", &a.dataset)?;
            let table = read_embeddings(&mut out, &a.embeddings)?;
            let mapping = cluster_predicates(
                &data.predicate_vocab,
                &table,
                cfg.linkage,
                cfg.cluster_threshold,
            )?;
            let merged = apply_mapping(&data, &mapping)?;
            out.write_json(
                "cluster_mapping.json",
                &mapping.to_audit_json(&data.predicate_vocab),
            )?;
            let path = out.path("clustered.jsonl");
            save_dataset(&merged, &path)?;
            out.manifest.output("clustered.jsonl.vocab.json");
            println!(
                "{} predicates -> {} clusters",
                data.predicate_vocab.len(),
                mapping.n_clusters()
            );
        }
        Command::TrainVdnet(a) => {
            let mut cfg = file.curate;
            apply_vdnet(&mut cfg, &a.vdnet);
            set(&mut cfg.train_fraction, a.train_fraction);
            out.manifest.set_config(&json!({
                "train_fraction": cfg.train_fraction,
                "split_seed": cfg.split_seed,
                "vdnet": cfg.vdnet,
            }));
            cfg.validate()?;
            let data = read_dataset(&mut out, "dataset", &a.dataset)?;
            let table = read_embeddings(&mut out, &a.embeddings)?;
            let dim = table.dim().context("embedding table is empty")?;
            let (train_d, test_d) = split_dataset(&data, cfg.train_fraction, cfg.split_seed)?;
            let (train_s, report) = build_samples(&train_d, &table)?;
            if !report.oov_object_labels.is_empty() {
                log::warn!(
                    "object labels without embedding: {:?}",
                    report.oov_object_labels
                );
            }
            let params = init_vdnet(&cfg.vdnet, dim, data.predicate_vocab.len())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.vdnet.seed);
            let (params, history) = train(params, &train_s, &cfg.vdnet, &mut rng)?;
            let path = out.path("vdnet.json");
            save_checkpoint(&params, data.predicate_vocab.labels(), &path)?;
            out.write_with("loss_history.csv", |w| write_loss_history(&history, w))?;
            let (test_s, _) = build_samples(&test_d, &table)?;
            if test_s.is_empty() {
                log::warn!("no held-out samples; accuracy report skipped");
            } else {
                let acc = evaluate(&params, &test_s)?;
                println!("held-out accuracy {:.4}", acc.overall_accuracy);
                out.write_json(
                    "accuracy_report.json",
                    &labelled_accuracy(&acc, &data.predicate_vocab),
                )?;
            }
        }
        Command::EvalVdnet(a) => {
            let mut cfg = file.eval;
            apply_recall(&mut cfg, &a.recall);
            out.manifest.set_config(&cfg);
            let data = read_dataset(&mut out, "dataset", &a.dataset)?;
            let table = read_embeddings(&mut out, &a.embeddings)?;
            out.manifest.input("checkpoint", &a.checkpoint)?;
            let (params, labels) = load_checkpoint(&a.checkpoint)?;
            if labels.as_slice() != data.predicate_vocab.labels() {
                anyhow::bail!(
                    "checkpoint predicates do not match the dataset's predicate vocabulary"
                );
            }
            let (samples, _) = build_samples(&data, &table)?;
            let acc = if samples.is_empty() {
                None
            } else {
                Some(evaluate(&params, &samples)?)
            };
            let predictor = VdNetPredictor::new(params, &data.object_vocab, &table)?;
            let result = run_recall(&predictor, &data, &cfg)?;
            out.write_json(
                "vdnet_eval.json",
                &json!({
                    "accuracy": acc.map(|a| labelled_accuracy(&a, &data.predicate_vocab)),
                    "recall": recall_json(&result, &cfg),
                }),
            )?;
        }
        Command::Curate(a) => {
            let mut cfg = file.curate;
            set(&mut cfg.alpha, a.alpha);
            set(&mut cfg.n_objects, a.n_objects);
            set(&mut cfg.n_predicates, a.n_predicates);
            set(&mut cfg.min_support, a.min_support);
            set(&mut cfg.train_fraction, a.train_fraction);
            apply_cluster(&mut cfg, &a.cluster);
            apply_vdnet(&mut cfg, &a.vdnet);
            out.manifest.set_config(&cfg);
            cfg.validate()?;
            let data = read_dataset(&mut out, "dataset", &a.dataset)?;
            let table = read_embeddings(&mut out, &a.embeddings)?;
            let result = curate(&data, &table, &cfg)?;
            result.write_outputs(out.dir)?;
            for name in [
                relcull::curate::REPORT_FILE,
                CURVE_FILE,
                "vrr.jsonl",
                "vrr.jsonl.vocab.json",
                "rvg.jsonl",
                "rvg.jsonl.vocab.json",
                "cluster_mapping.json",
            ] {
                out.manifest.output(name);
            }
            let summary = result.summary();
            println!(
                "kept {} predicates, dropped {}: {:?}",
                summary.kept.len(),
                summary.dropped.len(),
                summary.dropped
            );
        }
        Command::Baseline(a) => {
            let mut cfg = file.eval;
            apply_recall(&mut cfg, &a.recall);
            set(&mut cfg.smoothing, a.smoothing);
            out.manifest.set_config(&cfg);
            let train_d = read_dataset(&mut out, "train", &a.train)?;
            let test_d = read_dataset(&mut out, "test", &a.test)?;
            if train_d.predicate_vocab.labels() != test_d.predicate_vocab.labels()
                || train_d.object_vocab.labels() != test_d.object_vocab.labels()
            {
                anyhow::bail!("train and test datasets use different vocabularies");
            }
            let model = fit_freq_baseline(&train_d, cfg.smoothing)?;
            let result = run_recall(&model, &test_d, &cfg)?;
            out.write_json("baseline_recall.json", &recall_json(&result, &cfg))?;
        }
        Command::Eval(a) => {
            let mut cfg = file.eval;
            apply_recall(&mut cfg, &a.recall);
            out.manifest.set_config(&cfg);
            let data = read_dataset(&mut out, "dataset", &a.dataset)?;
            out.manifest.input("predictions", &a.predictions)?;
            let text = fs::read_to_string(&a.predictions)
                .with_context(|| format!("reading {}", a.predictions.display()))?;
            let source = a.predictions.display().to_string();
            let scores = PrecomputedScores::from_jsonl(&text, &source, data.predicate_vocab.len())?;
            let result = run_recall(&scores, &data, &cfg)?;
            out.write_json("recall.json", &recall_json(&result, &cfg))?;
        }
        Command::Report(a) => report(&mut out, a)?,
        Command::Synth(a) => {
            let mut cfg = file.synth;
            set(&mut cfg.spec.n_images, a.n_images);
            set(&mut cfg.spec.instances_per_image, a.instances_per_image);
            set(&mut cfg.spec.n_classes, a.n_classes);
            set(&mut cfg.embed_dim, a.embed_dim);
            out.manifest.set_config(&cfg);
            let data = gen_synthetic(&cfg.spec)?;
            let labels = data
                .object_vocab
                .labels()
                .iter()
                .chain(data.predicate_vocab.labels());
            let table =
                synthetic_embeddings(labels.map(String::as_str), cfg.embed_dim, cfg.spec.seed)?;
            let path = out.path("dataset.jsonl");
            save_dataset(&data, &path)?;
            out.manifest.output("dataset.jsonl.vocab.json");
            out.write_with("embeddings.txt", |w| table.write_text(w))?;
            out.write_json(
                "synth_spec.json",
                &json!({ "spec": cfg.spec, "geometric_predicates": cfg.spec.geometric_labels() }),
            )?;
            println!(
                "generated {} images, {} triplets; geometric predicates {:?}",
                data.n_images(),
                data.n_triplets(),
                cfg.spec.geometric_labels()
            );
        }
    }
    out.manifest.write(out.dir)
}

fn report(out: &mut Out, a: &crate::args::ReportArgs) -> anyhow::Result<()> {
    let grid = a.grid.unwrap_or(101);
    out.manifest.set_config(&json!({
        "which": format!("{:?}", a.which).to_lowercase(),
        "subject": a.subject,
        "object": a.object,
        "grid": grid,
    }));
    match a.which {
        Which::Dist | Which::Cond => {
            let path = a
                .dataset
                .as_ref()
                .ok_or_else(|| usage("report --which dist|cond needs --dataset"))?;
            let data = read_dataset(out, "dataset", path)?;
            let (name, hist) = if a.which == Which::Dist {
                ("label_distribution.csv", label_distribution(&data))
            } else {
                let (Some(s), Some(o)) = (&a.subject, &a.object) else {
                    return Err(usage("report --which cond needs --subject and --object"));
                };
                let id = |label: &str| {
                    data.object_vocab
                        .id(label)
                        .ok_or_else(|| anyhow::anyhow!("object class {label:?} not in the dataset"))
                };
                (
                    "conditional_distribution.csv",
                    conditional_distribution(&data, id(s)?, id(o)?),
                )
            };
            out.write_with(name, |w| write_histogram_csv(&hist, w))?;
            for e in hist.iter().take(10) {
                println!("{:>8} {:.4} {}", e.count, e.share, e.label);
            }
        }
        Which::Curve => {
            let path = a
                .report
                .as_ref()
                .ok_or_else(|| usage("report --which curve needs --report"))?;
            out.manifest.input("report", path)?;
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let report: CurationReport = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let acc = accuracy_from_report(&report);
            let curve = predictability_curve(&acc, &accuracy_grid(grid))?;
            out.write_with(CURVE_FILE, |w| write_curve_csv(&curve, w))?;
            if let Some((_, f)) = curve.iter().find(|(t, _)| *t == 0.5) {
                println!("fraction of predicates with accuracy >= 0.5: {f:.4}");
            }
        }
    }
    Ok(())
}

/// Rebuilds the per-predicate accuracies stored in a curation report.
fn accuracy_from_report(report: &CurationReport) -> AccuracyReport {
    let per_predicate = report
        .predicates
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            p.accuracy.map(|accuracy| {
                let acc = PredicateAccuracy {
                    accuracy,
                    correct: (accuracy * p.support as f64).round() as usize,
                    support: p.support,
                };
                (i as u32, acc)
            })
        })
        .collect();
    AccuracyReport {
        per_predicate,
        overall_accuracy: report.overall_accuracy,
    }
}
