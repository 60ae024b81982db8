//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use relmetric::checkpoint::{load_checkpoint, save_checkpoint};
use relmetric::corpus::{attach_parses, parse_corpus, CorpusFormat, OnRecordError, SentenceExample};
use relmetric::eval::{evaluate as score, PartitionScheme, ScoreReport, SentenceAnnotation};
use relmetric::inspect::{layer_heatmaps, write_csv, write_pgm};
use relmetric::train::{
    self, confidence_interval, gold_annotation, k_fold, score_on, TrainConfig, TrainOutcome,
};
use relmetric::{Error, Result};

use crate::config::{effective_config, write_effective};
use crate::records::{read_predictions, PredRecord};
use crate::ConfigArgs;

fn on_error(skip: bool) -> OnRecordError {
    if skip {
        OnRecordError::SkipAndLog
    } else {
        OnRecordError::Abort
    }
}

fn load_corpus(
    path: &Path,
    format: &str,
    parses: Option<&PathBuf>,
    skip: bool,
) -> Result<Vec<SentenceExample>> {
    let format = CorpusFormat::from_str(format)?;
    let mut examples = parse_corpus(path, format, on_error(skip))?;
    if let Some(parse_path) = parses {
        let sidecar = std::fs::read_to_string(parse_path).map_err(|e| {
            Error::ingest(format!("cannot read parses {}: {}", parse_path.display(), e))
        })?;
        attach_parses(&mut examples, &sidecar, on_error(skip))?;
    }
    Ok(examples)
}

pub struct TrainArgs {
    pub corpus: PathBuf,
    pub format: String,
    pub dev: Option<PathBuf>,
    pub dev_format: String,
    pub parses: Option<PathBuf>,
    pub dev_parses: Option<PathBuf>,
    pub out: PathBuf,
    pub skip_bad_records: bool,
    pub seeds: Option<String>,
    pub config: ConfigArgs,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = effective_config(&args.config)?;
    let train_set = load_corpus(
        &args.corpus,
        &args.format,
        args.parses.as_ref(),
        args.skip_bad_records,
    )?;
    let dev_set = match &args.dev {
        Some(path) => load_corpus(
            path,
            &args.dev_format,
            args.dev_parses.as_ref(),
            args.skip_bad_records,
        )?,
        None => Vec::new(),
    };
    log::info!(
        "loaded {} training and {} dev sentences",
        train_set.len(),
        dev_set.len()
    );

    match &args.seeds {
        None => {
            run_single(&cfg, &train_set, &dev_set, &args.out)?;
        }
        Some(list) => {
            let seeds: Vec<u64> = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::config(format!("bad seed '{}'", s)))
                })
                .collect::<Result<_>>()?;
            if seeds.is_empty() {
                return Err(Error::config("empty seed list"));
            }
            let mut dev_f1s = Vec::new();
            for seed in &seeds {
                let mut cfg = cfg.clone();
                cfg.seed = *seed;
                let dir = args.out.join(format!("seed-{}", seed));
                let summary = run_single(&cfg, &train_set, &dev_set, &dir)?;
                if let Some(f1) = summary.dev_re_f1 {
                    dev_f1s.push(f1);
                }
            }
            if !dev_f1s.is_empty() {
                let (mean, half) = confidence_interval(&dev_f1s);
                let agg = serde_json::json!({
                    "runs": seeds.len(),
                    "dev_re_f1_mean": mean,
                    "dev_re_f1_ci95_half_width": half,
                    "per_run_dev_re_f1": dev_f1s,
                });
                std::fs::create_dir_all(&args.out)?;
                std::fs::write(
                    args.out.join("summary.json"),
                    serde_json::to_string_pretty(&agg).expect("serializable"),
                )?;
                println!(
                    "multi-seed: dev RE F1 {:.4} ± {:.4} over {} runs",
                    mean,
                    half,
                    seeds.len()
                );
            }
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct TrainSummary {
    best_epoch: usize,
    train_report: ScoreReport,
    dev_report: Option<ScoreReport>,
    #[serde(skip)]
    dev_re_f1: Option<f64>,
}

fn run_single(
    cfg: &TrainConfig,
    train_set: &[SentenceExample],
    dev_set: &[SentenceExample],
    out: &Path,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out)?;
    write_effective(cfg, &out.join("config.toml"))?;
    let outcome: TrainOutcome = train::train(cfg.clone(), train_set, dev_set, None)?;

    let mut log_text = String::new();
    for rec in &outcome.log {
        log_text.push_str(&serde_json::to_string(rec).expect("serializable record"));
        log_text.push('\n');
    }
    std::fs::write(out.join("metrics.jsonl"), log_text)?;
    save_checkpoint(&out.join("model.ckpt"), &outcome.best)?;

    let mut bundle = outcome.best.bundle.clone();
    let train_report = score_on(&mut bundle, train_set)?;
    let dev_report = if dev_set.is_empty() {
        None
    } else {
        Some(score_on(&mut bundle, dev_set)?)
    };
    let dev_re_f1 = dev_report.as_ref().map(|r| r.re.f1());

    println!("best epoch: {}", outcome.best_epoch);
    println!("train: {}", train_report.summary());
    if let Some(report) = &dev_report {
        println!("dev:   {}", report.summary());
    }
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        train_report,
        dev_report,
        dev_re_f1,
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    Ok(summary)
}

pub fn predict(
    checkpoint: PathBuf,
    corpus: PathBuf,
    format: String,
    parses: Option<PathBuf>,
    out: PathBuf,
    skip_bad_records: bool,
) -> Result<()> {
    let state = load_checkpoint(&checkpoint)?;
    let mut bundle = state.bundle;
    let examples = load_corpus(&corpus, &format, parses.as_ref(), skip_bad_records)?;

    // Any annotated types must exist in the model's label space.
    let known_e: BTreeSet<&String> = bundle.labels.entity_types().iter().collect();
    let known_r: BTreeSet<&String> = bundle.labels.relation_types().iter().collect();
    let mut seen_e = BTreeSet::new();
    let mut seen_r = BTreeSet::new();
    for ex in &examples {
        for e in &ex.entities {
            seen_e.insert(&e.etype);
        }
        for r in &ex.relations {
            seen_r.insert(&r.predicate);
        }
    }
    if !seen_e.is_subset(&known_e) || !seen_r.is_subset(&known_r) {
        return Err(Error::contract(format!(
            "label spaces do not match: corpus has entity types {:?} / relation types {:?}, checkpoint has {:?} / {:?}",
            seen_e, seen_r, known_e, known_r
        )));
    }

    std::fs::create_dir_all(&out)?;
    let t0 = Instant::now();
    let mut lines = String::new();
    for ex in &examples {
        let (pred, _) = bundle.predict(ex)?;
        let rec = PredRecord::from_prediction(&bundle, ex, &pred);
        lines.push_str(&serde_json::to_string(&rec).expect("serializable record"));
        lines.push('\n');
    }
    let wall = t0.elapsed().as_secs_f64();
    std::fs::write(out.join("predictions.jsonl"), lines)?;
    let summary = serde_json::json!({
        "sentences": examples.len(),
        "wall_clock_seconds": wall,
        "sentences_per_second": examples.len() as f64 / wall.max(1e-9),
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    println!(
        "predicted {} sentences in {:.3}s ({:.1}/s)",
        examples.len(),
        wall,
        examples.len() as f64 / wall.max(1e-9)
    );
    Ok(())
}

pub fn evaluate(
    gold: PathBuf,
    format: String,
    pred: PathBuf,
    report_path: Option<PathBuf>,
    partition: Option<String>,
    bins: Option<String>,
) -> Result<()> {
    let gold_examples = load_corpus(&gold, &format, None, false)?;
    let records = read_predictions(&pred)?;
    let pred_annotations: Vec<SentenceAnnotation> = records
        .iter()
        .map(|r| r.to_annotation())
        .collect::<Result<_>>()?;
    let gold_annotations: Vec<SentenceAnnotation> =
        gold_examples.iter().map(gold_annotation).collect();

    let report = score(&pred_annotations, &gold_annotations)?;
    println!("{}", report.summary());
    println!(
        "NER counts: tp {} fp {} fn {} | RE counts: tp {} fp {} fn {}",
        report.ner.tp, report.ner.fp, report.ner.fn_, report.re.tp, report.re.fp, report.re.fn_
    );

    let mut partitions = None;
    if let Some(scheme_name) = partition {
        let parse_bins = || -> Result<Vec<usize>> {
            bins.as_deref()
                .unwrap_or("0,20,40,60,80,100")
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::config(format!("bad bin edge '{}'", s)))
                })
                .collect()
        };
        let scheme = match scheme_name.as_str() {
            "length" => PartitionScheme::Length {
                thresholds: parse_bins()?,
            },
            "entity-distance" => PartitionScheme::EntityDistance {
                edges: parse_bins()?,
            },
            "relation-type" => PartitionScheme::RelationType,
            other => {
                return Err(Error::config(format!(
                    "unknown partition scheme '{}' (expected length, entity-distance, or relation-type)",
                    other
                )))
            }
        };
        let lengths: Vec<usize> = gold_examples.iter().map(|e| e.len()).collect();
        let parts =
            relmetric::eval::partition_analysis(&pred_annotations, &gold_annotations, &lengths, &scheme)?;
        for p in &parts {
            println!(
                "{:<16} examples {:<5} RE P {:.4} R {:.4} F1 {:.4}",
                p.label,
                p.examples,
                p.report.re.precision(),
                p.report.re.recall(),
                p.report.re.f1()
            );
        }
        partitions = Some(parts);
    }

    if let Some(path) = report_path {
        let payload = serde_json::json!({
            "report": report,
            "partitions": partitions,
        });
        std::fs::write(path, serde_json::to_string_pretty(&payload).expect("serializable"))?;
    }
    Ok(())
}

pub fn inspect(
    checkpoint: PathBuf,
    sentence: String,
    parse: Option<PathBuf>,
    out: PathBuf,
    render: bool,
) -> Result<()> {
    if sentence.trim().is_empty() {
        return Err(Error::contract("inspect: empty sentence"));
    }
    let state = load_checkpoint(&checkpoint)?;
    let mut bundle = state.bundle;
    let tokens = relmetric::corpus::tokenize(&sentence)?;
    let mut example = SentenceExample {
        id: "inspect".to_string(),
        text: sentence,
        tokens,
        entities: Vec::new(),
        relations: Vec::new(),
        dep_edges: Vec::new(),
    };
    if let Some(parse_path) = parse {
        let sidecar = std::fs::read_to_string(&parse_path).map_err(|e| {
            Error::ingest(format!("cannot read parse {}: {}", parse_path.display(), e))
        })?;
        let mut slice = vec![example];
        attach_parses(&mut slice, &sidecar, OnRecordError::Abort)?;
        example = slice.pop().expect("one example in, one out");
    }

    std::fs::create_dir_all(&out)?;
    let grids = layer_heatmaps(&mut bundle, &example)?;
    for grid in &grids {
        write_csv(grid, &out.join(format!("{}.csv", grid.label)))?;
        if render {
            write_pgm(grid, &out.join(format!("{}.pgm", grid.label)))?;
        }
    }
    println!(
        "wrote {} grids ({} pooling layers + prediction) to {}",
        grids.len(),
        grids.len() - 1,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn folds(
    corpus: PathBuf,
    format: String,
    parses: Option<PathBuf>,
    k: usize,
    out: PathBuf,
    skip_bad_records: bool,
    config: ConfigArgs,
) -> Result<()> {
    let cfg = effective_config(&config)?;
    let examples = load_corpus(&corpus, &format, parses.as_ref(), skip_bad_records)?;
    std::fs::create_dir_all(&out)?;
    write_effective(&cfg, &out.join("config.toml"))?;

    let reports = k_fold(&cfg, &examples, k)?;
    let mut re_f1s = Vec::new();
    for (fold, report) in &reports {
        println!("fold {:>2}: {}", fold, report.summary());
        re_f1s.push(report.re.f1());
    }
    let (mean, half) = confidence_interval(&re_f1s);
    println!("mean RE F1 over {} folds: {:.4} ± {:.4}", reports.len(), mean, half);
    let payload = serde_json::json!({
        "folds": reports.iter().map(|(f, r)| serde_json::json!({
            "fold": f,
            "report": r,
        })).collect::<Vec<_>>(),
        "re_f1_mean": mean,
        "re_f1_ci95_half_width": half,
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&payload).expect("serializable"),
    )?;
    Ok(())
}
