//! Training harness: hyperparameter configuration, the exponential
//! learning-rate schedule, the epoch loop with RMSProp updates, metrics
//! logging, and k-fold cross-validation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SentenceExample;
use crate::codec::LabelSpace;
use crate::error::{Error, Result};
use crate::eval::{self, EvalEntity, EvalRelation, ScoreReport, SentenceAnnotation};
use crate::model::{self, ModelBundle, Prediction};
use crate::tensor::optim::RmsProp;
use crate::tensor::{Phase, Tape};

/// Hyperparameters. The defaults are the tuned configuration: learning
/// rate 0.005 halving every 10 epochs, dropout 0.5, 100 epochs, 15
/// channels, 8 layers, char embeddings 25 -> 50 feature maps, position 25,
/// dependency 10, word 200, context 200, batch size 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    /// Metric/conv channel count (kappa).
    pub channels: usize,
    /// Pooling depth (lambda), at least 2.
    pub layers: usize,
    /// Character embedding size (pi).
    pub char_emb_size: usize,
    /// Character feature maps (eta).
    pub char_repr_size: usize,
    /// Position embedding size (gamma).
    pub pos_emb_size: usize,
    /// Dependency embedding size (beta).
    pub dep_emb_size: usize,
    /// Word embedding size (delta).
    pub word_emb_size: usize,
    /// Context vector size (rho); the Bi-LSTM uses rho/2 per direction.
    pub context_size: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Odd window for the table convolutions (hidden layers).
    pub conv_window: usize,
    /// Character convolution window.
    pub char_window: usize,
    /// Gradient multiplier for the word-embedding table (1.0 = fully
    /// trainable, 0.1 = downscaled).
    pub word_grad_scale: f64,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Epochs per halving of the learning rate.
    pub lr_half_life: f64,
    /// Pretrained word-embedding text file.
    pub embeddings: Option<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            dropout: 0.5,
            epochs: 100,
            channels: 15,
            layers: 8,
            char_emb_size: 25,
            char_repr_size: 50,
            pos_emb_size: 25,
            dep_emb_size: 10,
            word_emb_size: 200,
            context_size: 200,
            batch_size: 1,
            seed: 1,
            conv_window: 3,
            char_window: 3,
            word_grad_scale: 1.0,
            batch_norm: true,
            bn_momentum: 0.9,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            lr_half_life: 10.0,
            embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epochs", self.epochs as f64),
            ("channels", self.channels as f64),
            ("char_emb_size", self.char_emb_size as f64),
            ("char_repr_size", self.char_repr_size as f64),
            ("pos_emb_size", self.pos_emb_size as f64),
            ("dep_emb_size", self.dep_emb_size as f64),
            ("word_emb_size", self.word_emb_size as f64),
            ("context_size", self.context_size as f64),
            ("batch_size", self.batch_size as f64),
            ("lr_half_life", self.lr_half_life),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::config(format!("{} must be positive, got {}", name, v)));
            }
        }
        if self.layers < 2 {
            return Err(Error::config(format!(
                "layers must be at least 2 (base + output), got {}",
                self.layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.context_size % 2 != 0 {
            return Err(Error::config("context_size must be even"));
        }
        if self.conv_window % 2 == 0 {
            return Err(Error::config("conv_window must be odd"));
        }
        Ok(())
    }
}

/// Learning rate at epoch k: the base halved every `half_life` epochs,
/// exact at multiples of the half-life.
pub fn lr_schedule(epoch: usize, base: f64, half_life: f64) -> f64 {
    let steps = (epoch as f64 / half_life).floor() as i32;
    let rem = epoch as f64 - steps as f64 * half_life;
    base * 0.5f64.powi(steps) * (-rem / half_life).exp2()
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_ner_f1: Option<f64>,
    pub dev_re_f1: Option<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Everything that evolves during training; checkpoints serialize exactly
/// this.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub optimizer: RmsProp,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(bundle: ModelBundle) -> Self {
        let sizes: Vec<usize> = bundle.params.tensors().iter().map(|t| t.data.len()).collect();
        let optimizer = RmsProp::new(
            &sizes,
            bundle.config.rmsprop_decay,
            bundle.config.rmsprop_eps,
        );
        let rng = ChaCha8Rng::seed_from_u64(bundle.config.seed);
        TrainState {
            bundle,
            optimizer,
            rng,
            epoch: 0,
        }
    }

    /// One full epoch: shuffled batches, forward/backward, RMSProp with the
    /// scheduled rate. Returns the mean per-batch loss.
    pub fn run_epoch(&mut self, train: &[SentenceExample]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::contract("cannot train on an empty corpus"));
        }
        let lr = lr_schedule(
            self.epoch,
            self.bundle.config.learning_rate,
            self.bundle.config.lr_half_life,
        );
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let batch_size = self.bundle.config.batch_size.max(1);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch_no, chunk) in order.chunks(batch_size).enumerate() {
            let loss = self.run_batch(train, chunk, lr, batch_no)?;
            total += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }

    fn run_batch(
        &mut self,
        train: &[SentenceExample],
        chunk: &[usize],
        lr: f64,
        batch_no: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = model::bind(&mut tape, &self.bundle.params, true);
        let mut losses = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let ex = &train[idx];
            let gold = self.bundle.gold_table(ex)?;
            let acts = self
                .bundle
                .forward(&mut tape, &bound, ex, Phase::Train, &mut self.rng)?;
            losses.push(crate::net::table_loss(&mut tape, acts.q, &gold)?);
        }
        let loss = if losses.len() == 1 {
            losses[0]
        } else {
            tape.mean_scalars(&losses)?
        };
        let loss_value = tape.value(loss)[0];
        if !loss_value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {} at epoch {}, batch {}",
                loss_value, self.epoch, batch_no
            )));
        }
        tape.backward(loss)?;

        let step = self.epoch * 1_000_000 + batch_no;
        let word_scale = self.bundle.config.word_grad_scale;
        let tensors = self.bundle.params.tensors_mut();
        for (i, t) in tensors.into_iter().enumerate() {
            let node = bound.ordered[i];
            let Some(grad) = tape.grad(node) else {
                continue;
            };
            if i == 0 && word_scale != 1.0 {
                let scaled: Vec<f64> = grad.iter().map(|g| g * word_scale).collect();
                self.optimizer
                    .step(i, &t.name, step, &mut t.data, &scaled, lr)?;
            } else {
                self.optimizer.step(i, &t.name, step, &mut t.data, grad, lr)?;
            }
        }
        Ok(loss_value)
    }
}

/// Result of a full training run.
pub struct TrainOutcome {
    /// State snapshot at the best epoch (model-selection rule: highest dev
    /// RE F1; lowest train loss when no dev set is given).
    pub best: TrainState,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Trains for the configured number of epochs, logging one record per
/// epoch and keeping the best snapshot.
pub fn train(
    cfg: TrainConfig,
    train_set: &[SentenceExample],
    dev_set: &[SentenceExample],
    labels_override: Option<LabelSpace>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x517E_D0C5));
    let pretrained = match &cfg.embeddings {
        Some(path) => {
            let vocab = crate::encoder::Vocabulary::from_examples(train_set);
            Some(crate::encoder::load_embeddings(
                path,
                &vocab,
                cfg.word_emb_size,
                &mut init_rng,
            )?)
        }
        None => None,
    };
    let mut bundle = ModelBundle::init(cfg, train_set, pretrained.clone(), &mut init_rng)?;
    if let Some(labels) = labels_override {
        // Rebuild the parameters whose shapes depend on |Z|; the word
        // table keeps any pretrained rows.
        let cfg = bundle.config.clone();
        bundle.labels = labels;
        bundle.params = crate::model::ModelParams::init(
            &cfg,
            &bundle.vocab,
            &bundle.dep_vocab,
            &bundle.labels,
            bundle.n_max,
            pretrained,
            &mut init_rng,
        )?;
    }
    let mut state = TrainState::new(bundle);

    let mut best: Option<(f64, TrainState, usize)> = None;
    let mut log = Vec::with_capacity(state.bundle.config.epochs);
    let epochs = state.bundle.config.epochs;
    for _ in 0..epochs {
        let epoch = state.epoch;
        let lr = lr_schedule(
            epoch,
            state.bundle.config.learning_rate,
            state.bundle.config.lr_half_life,
        );
        let t0 = Instant::now();
        let train_loss = state.run_epoch(train_set)?;
        let train_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let (dev_ner_f1, dev_re_f1) = if dev_set.is_empty() {
            (None, None)
        } else {
            let report = score_on(&mut state.bundle, dev_set)?;
            (Some(report.ner.f1()), Some(report.re.f1()))
        };
        let eval_seconds = t1.elapsed().as_secs_f64();

        // Selection score: dev RE F1 when available, negative loss otherwise.
        let score = dev_re_f1.unwrap_or(-train_loss);
        let improved = best.as_ref().map(|(s, _, _)| score > *s).unwrap_or(true);
        if improved {
            best = Some((score, state.clone(), epoch));
        }

        log.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            dev_ner_f1,
            dev_re_f1,
            train_seconds,
            eval_seconds,
        });
        log::info!(
            "epoch {} lr {:.6} loss {:.5} dev RE F1 {}",
            epoch,
            lr,
            train_loss,
            dev_re_f1
                .map(|f| format!("{:.4}", f))
                .unwrap_or_else(|| "-".into())
        );
    }
    let (_, best_state, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_state,
        best_epoch,
        log,
    })
}

/// Gold annotation of an example, in scorer form (string types, char spans).
pub fn gold_annotation(ex: &SentenceExample) -> SentenceAnnotation {
    let entities: Vec<EvalEntity> = ex
        .entities
        .iter()
        .map(|e| EvalEntity {
            etype: e.etype.clone(),
            char_start: e.char_start,
            char_end: e.char_end,
        })
        .collect();
    let relations = ex
        .relations
        .iter()
        .map(|r| EvalRelation {
            subject: entities[r.subject].clone(),
            object: entities[r.object].clone(),
            predicate: r.predicate.clone(),
        })
        .collect();
    SentenceAnnotation {
        id: ex.id.clone(),
        entities,
        relations,
    }
}

/// Converts a decoded prediction into scorer form using the sentence's
/// token offsets and the bundle's label names.
pub fn prediction_annotation(
    bundle: &ModelBundle,
    ex: &SentenceExample,
    pred: &Prediction,
) -> SentenceAnnotation {
    let to_eval = |e: &crate::codec::Entity| EvalEntity {
        etype: bundle.labels.entity_types()[e.etype].clone(),
        char_start: ex.tokens[e.start].start,
        char_end: ex.tokens[e.end].end,
    };
    SentenceAnnotation {
        id: ex.id.clone(),
        entities: pred.entities.iter().map(to_eval).collect(),
        relations: pred
            .relations
            .iter()
            .map(|r| EvalRelation {
                subject: to_eval(&r.subject),
                object: to_eval(&r.object),
                predicate: bundle.labels.relation_types()[r.predicate].clone(),
            })
            .collect(),
    }
}

/// Predicts over a corpus and scores against its gold annotations.
pub fn score_on(bundle: &mut ModelBundle, examples: &[SentenceExample]) -> Result<ScoreReport> {
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for ex in examples {
        let (pred, _) = bundle.predict(ex)?;
        preds.push(prediction_annotation(bundle, ex, &pred));
        golds.push(gold_annotation(ex));
    }
    eval::evaluate(&preds, &golds)
}

/// K-fold cross-validation: trains one model per fold (label space fixed
/// to the whole corpus) and scores it on the held-out fold.
pub fn k_fold(
    cfg: &TrainConfig,
    examples: &[SentenceExample],
    k: usize,
) -> Result<Vec<(usize, ScoreReport)>> {
    if k < 2 {
        return Err(Error::config("k-fold needs k >= 2"));
    }
    let labels = model::label_space_of(examples)?;
    let folds = crate::corpus::assign_folds(examples, cfg.seed, k);
    let mut out = Vec::with_capacity(k);
    for fold in 0..k {
        let train_set: Vec<SentenceExample> = examples
            .iter()
            .zip(&folds)
            .filter(|(_, &f)| f != fold)
            .map(|(e, _)| e.clone())
            .collect();
        let test_set: Vec<SentenceExample> = examples
            .iter()
            .zip(&folds)
            .filter(|(_, &f)| f == fold)
            .map(|(e, _)| e.clone())
            .collect();
        if train_set.is_empty() || test_set.is_empty() {
            log::warn!("fold {}: empty partition, skipping", fold);
            continue;
        }
        let outcome = train(cfg.clone(), &train_set, &[], Some(labels.clone()))?;
        let mut bundle = outcome.best.bundle;
        let report = score_on(&mut bundle, &test_set)?;
        log::info!("fold {}: {}", fold, report.summary());
        out.push((fold, report));
    }
    Ok(out)
}

/// Mean and 95% half-width (1.96·sd/sqrt(n)) over per-run scores.
pub fn confidence_interval(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_half_life() {
        let base = 0.005;
        assert_eq!(lr_schedule(0, base, 10.0), base);
        assert_eq!(lr_schedule(10, base, 10.0), base / 2.0);
        assert_eq!(lr_schedule(20, base, 10.0), base / 4.0);
        assert_eq!(lr_schedule(30, base, 10.0), base / 8.0);
    }

    #[test]
    fn schedule_is_monotone_non_increasing() {
        let base = 0.01;
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let r = lr_schedule(k, base, 10.0);
            assert!(r <= prev, "epoch {}: {} > {}", k, r, prev);
            assert!(r > 0.0);
            prev = r;
        }
        // Exactly halves across any 10-epoch gap.
        for k in 0..50 {
            let a = lr_schedule(k, base, 10.0);
            let b = lr_schedule(k + 10, base, 10.0);
            assert!((b - a / 2.0).abs() < 1e-18, "k={}: {} vs {}", k, b, a / 2.0);
        }
    }

    #[test]
    fn defaults_match_tuned_configuration() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 0.005);
        assert_eq!(cfg.dropout, 0.5);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.channels, 15);
        assert_eq!(cfg.layers, 8);
        assert_eq!(cfg.char_emb_size, 25);
        assert_eq!(cfg.char_repr_size, 50);
        assert_eq!(cfg.pos_emb_size, 25);
        assert_eq!(cfg.dep_emb_size, 10);
        assert_eq!(cfg.word_emb_size, 200);
        assert_eq!(cfg.context_size, 200);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.layers = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.context_size = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn first_epoch_beats_uniform_baseline() {
        // After one epoch of updates the mean training loss must drop
        // below the uniform-prediction loss n·log|Z| averaged over the
        // corpus.
        let line = |id: usize| {
            format!(
                r#"{{"id":"t{}","text":"ada met bob","entities":[{{"type":"P","char_start":0,"char_end":3}},{{"type":"P","char_start":8,"char_end":11}}],"relations":[{{"subject":0,"object":1,"predicate":"Met"}}]}}"#,
                id
            )
        };
        let content: String = (0..6).map(line).collect::<Vec<_>>().join("\n");
        let corpus = crate::corpus::parse_corpus_str(
            &content,
            crate::corpus::CorpusFormat::Canonical,
            crate::corpus::OnRecordError::Abort,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            channels: 3,
            layers: 2,
            char_emb_size: 3,
            char_repr_size: 4,
            pos_emb_size: 3,
            dep_emb_size: 3,
            word_emb_size: 6,
            context_size: 8,
            seed: 2,
            ..Default::default()
        };
        let outcome = train(cfg, &corpus, &[], None).unwrap();
        let labels = crate::model::label_space_of(&corpus).unwrap();
        let baseline: f64 = corpus
            .iter()
            .map(|e| e.len() as f64 * (labels.size() as f64).ln())
            .sum::<f64>()
            / corpus.len() as f64;
        assert!(
            outcome.log[0].train_loss < baseline,
            "epoch-1 mean loss {} not below uniform baseline {}",
            outcome.log[0].train_loss,
            baseline
        );
    }

    #[test]
    fn single_token_sentences_train() {
        // n = 1: a 1×1 table, one-cell normalization statistics, and a
        // one-step LSTM all have to hold together.
        let line = r#"{"id":"one","text":"ada","entities":[{"type":"P","char_start":0,"char_end":3}],"relations":[]}"#;
        let corpus = crate::corpus::parse_corpus_str(
            line,
            crate::corpus::CorpusFormat::Canonical,
            crate::corpus::OnRecordError::Abort,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            channels: 2,
            layers: 2,
            char_emb_size: 3,
            char_repr_size: 4,
            pos_emb_size: 3,
            dep_emb_size: 3,
            word_emb_size: 6,
            context_size: 8,
            ..Default::default()
        };
        let outcome = train(cfg, &corpus, &[], None).unwrap();
        assert!(outcome.log.iter().all(|r| r.train_loss.is_finite()));
        let mut bundle = outcome.best.bundle;
        let (pred, q) = bundle.predict(&corpus[0]).unwrap();
        assert_eq!(q.len(), bundle.labels.size());
        assert!(pred.entities.len() <= 1);
    }

    #[test]
    fn label_override_keeps_pretrained_rows() {
        use std::io::Write;
        let line = r#"{"id":"t","text":"ada met bob","entities":[{"type":"P","char_start":0,"char_end":3}],"relations":[]}"#;
        let corpus = crate::corpus::parse_corpus_str(
            line,
            crate::corpus::CorpusFormat::Canonical,
            crate::corpus::OnRecordError::Abort,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "ada 1 2 3 4 5 6").unwrap();
        drop(f);
        let cfg = TrainConfig {
            epochs: 1,
            channels: 2,
            layers: 2,
            char_emb_size: 3,
            char_repr_size: 4,
            pos_emb_size: 3,
            dep_emb_size: 3,
            word_emb_size: 6,
            context_size: 8,
            embeddings: Some(path),
            ..Default::default()
        };
        let labels = crate::codec::LabelSpace::new(
            vec!["P".into(), "Q".into()],
            vec!["Met".into()],
        )
        .unwrap();
        let outcome = train(cfg, &corpus, &[], Some(labels.clone())).unwrap();
        let bundle = &outcome.best.bundle;
        assert_eq!(bundle.labels, labels);
        // The pretrained row survives the label-space rebuild, modulo one
        // training step's worth of drift.
        let row = bundle.vocab.word_id("ada");
        let got = &bundle.params.word_emb.data[row * 6..(row + 1) * 6];
        for (g, want) in got.iter().zip([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) {
            assert!((g - want).abs() < 0.1, "{} vs {}", g, want);
        }
    }

    #[test]
    fn confidence_interval_formula() {
        let (mean, hw) = confidence_interval(&[1.0, 2.0, 3.0]);
        assert!((mean - 2.0).abs() < 1e-12);
        // sd = 1, n = 3.
        assert!((hw - 1.96 / 3.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(confidence_interval(&[5.0]), (5.0, 0.0));
    }
}
