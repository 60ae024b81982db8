//! Ties the pieces into one trainable model: the parameter set, tape
//! binding, the full sentence forward pass, and the decode path from Q to
//! entities and relation triples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, Entity, LabelSpace, RelationTriple, TagTable};
use crate::corpus::SentenceExample;
use crate::encoder::{self, EncoderNodes, SentenceIds, Vocabulary};
use crate::error::{Error, Result};
use crate::net::{self, DepVocab, LayerNodes, NormNodes};
use crate::tensor::{BatchNormState, NodeId, Phase, Tape};
use crate::train::TrainConfig;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        ParamTensor {
            name: name.to_string(),
            shape,
            data,
        }
    }
}

/// Every trainable tensor of the network, in canonical order (the order of
/// `tensors()`/`tensors_mut()`, which the optimizer and checkpoints share).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub word_emb: ParamTensor,
    pub char_emb: ParamTensor,
    pub char_filters: ParamTensor,
    pub char_bias: ParamTensor,
    pub lstm_fwd_w: ParamTensor,
    pub lstm_fwd_b: ParamTensor,
    pub lstm_bwd_w: ParamTensor,
    pub lstm_bwd_b: ParamTensor,
    pub metric: ParamTensor,
    pub dep_emb: ParamTensor,
    pub dep_null: ParamTensor,
    pub pos_emb: ParamTensor,
    pub conv_w: Vec<ParamTensor>,
    pub conv_b: Vec<ParamTensor>,
    pub bn_gamma: Vec<ParamTensor>,
    pub bn_beta: Vec<ParamTensor>,
}

impl ModelParams {
    /// Fresh parameters: everything Normal(0, 0.1) except forget-gate
    /// biases (1.0) and batch-norm scale/shift (1.0/0.0). A pretrained
    /// word table, when given, replaces the random word rows wholesale.
    pub fn init<R: Rng>(
        cfg: &TrainConfig,
        vocab: &Vocabulary,
        dep_vocab: &DepVocab,
        labels: &LabelSpace,
        n_max: usize,
        pretrained_words: Option<Vec<f64>>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let hidden = cfg.context_size / 2;
        let d_in = cfg.word_emb_size + cfg.char_repr_size;
        let z = labels.size();
        let in_ch = cfg.channels + cfg.dep_emb_size + cfg.pos_emb_size;
        let t = cfg.conv_window;

        let mut normal = |shape: Vec<usize>| -> Vec<f64> {
            encoder::init_normal(shape.iter().product(), rng)
        };

        let word_data = match pretrained_words {
            Some(table) => {
                if table.len() != vocab.word_count() * cfg.word_emb_size {
                    return Err(Error::shape(format!(
                        "pretrained table has {} values, expected {}",
                        table.len(),
                        vocab.word_count() * cfg.word_emb_size
                    )));
                }
                table
            }
            None => normal(vec![vocab.word_count(), cfg.word_emb_size]),
        };

        let lstm_bias = || {
            let mut b = vec![0.0; 4 * hidden];
            // Forget gate opens at the start of training.
            for v in b[hidden..2 * hidden].iter_mut() {
                *v = 1.0;
            }
            b
        };
        let lstm_fwd_b = lstm_bias();
        let lstm_bwd_b = lstm_bias();

        let mut conv_w = Vec::with_capacity(cfg.layers);
        let mut conv_b = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let last = i + 1 == cfg.layers;
            let (out_ch, window) = if last { (z, 1) } else { (cfg.channels, t) };
            conv_w.push(ParamTensor::new(
                &format!("conv.{}.weight", i),
                vec![out_ch, window, window, in_ch],
                normal(vec![out_ch, window, window, in_ch]),
            ));
            conv_b.push(ParamTensor::new(
                &format!("conv.{}.bias", i),
                vec![out_ch],
                normal(vec![out_ch]),
            ));
        }

        let mut bn_gamma = Vec::with_capacity(cfg.layers);
        let mut bn_beta = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            bn_gamma.push(ParamTensor::new(
                &format!("norm.{}.scale", i),
                vec![cfg.channels],
                vec![1.0; cfg.channels],
            ));
            bn_beta.push(ParamTensor::new(
                &format!("norm.{}.shift", i),
                vec![cfg.channels],
                vec![0.0; cfg.channels],
            ));
        }

        Ok(ModelParams {
            word_emb: ParamTensor::new(
                "word_emb",
                vec![vocab.word_count(), cfg.word_emb_size],
                word_data,
            ),
            char_emb: ParamTensor::new(
                "char_emb",
                vec![vocab.char_count(), cfg.char_emb_size],
                normal(vec![vocab.char_count(), cfg.char_emb_size]),
            ),
            char_filters: ParamTensor::new(
                "char_filters",
                vec![cfg.char_repr_size, cfg.char_window * cfg.char_emb_size],
                normal(vec![cfg.char_repr_size, cfg.char_window * cfg.char_emb_size]),
            ),
            char_bias: ParamTensor::new(
                "char_bias",
                vec![cfg.char_repr_size],
                normal(vec![cfg.char_repr_size]),
            ),
            lstm_fwd_w: ParamTensor::new(
                "lstm_fwd.weight",
                vec![4 * hidden, d_in + hidden],
                normal(vec![4 * hidden, d_in + hidden]),
            ),
            lstm_fwd_b: ParamTensor::new("lstm_fwd.bias", vec![4 * hidden], lstm_fwd_b),
            lstm_bwd_w: ParamTensor::new(
                "lstm_bwd.weight",
                vec![4 * hidden, d_in + hidden],
                normal(vec![4 * hidden, d_in + hidden]),
            ),
            lstm_bwd_b: ParamTensor::new("lstm_bwd.bias", vec![4 * hidden], lstm_bwd_b),
            metric: ParamTensor::new(
                "metric",
                vec![cfg.channels, cfg.context_size, cfg.context_size],
                normal(vec![cfg.channels, cfg.context_size, cfg.context_size]),
            ),
            dep_emb: ParamTensor::new(
                "dep_emb",
                vec![dep_vocab.len(), cfg.dep_emb_size],
                normal(vec![dep_vocab.len(), cfg.dep_emb_size]),
            ),
            dep_null: ParamTensor::new(
                "dep_null",
                vec![cfg.dep_emb_size],
                normal(vec![cfg.dep_emb_size]),
            ),
            pos_emb: ParamTensor::new(
                "pos_emb",
                vec![2 * n_max + 1, cfg.pos_emb_size],
                normal(vec![2 * n_max + 1, cfg.pos_emb_size]),
            ),
            conv_w,
            conv_b,
            bn_gamma,
            bn_beta,
        })
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = vec![
            &self.word_emb,
            &self.char_emb,
            &self.char_filters,
            &self.char_bias,
            &self.lstm_fwd_w,
            &self.lstm_fwd_b,
            &self.lstm_bwd_w,
            &self.lstm_bwd_b,
            &self.metric,
            &self.dep_emb,
            &self.dep_null,
            &self.pos_emb,
        ];
        v.extend(self.conv_w.iter());
        v.extend(self.conv_b.iter());
        v.extend(self.bn_gamma.iter());
        v.extend(self.bn_beta.iter());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let ModelParams {
            word_emb,
            char_emb,
            char_filters,
            char_bias,
            lstm_fwd_w,
            lstm_fwd_b,
            lstm_bwd_w,
            lstm_bwd_b,
            metric,
            dep_emb,
            dep_null,
            pos_emb,
            conv_w,
            conv_b,
            bn_gamma,
            bn_beta,
        } = self;
        let mut v: Vec<&mut ParamTensor> = vec![
            word_emb,
            char_emb,
            char_filters,
            char_bias,
            lstm_fwd_w,
            lstm_fwd_b,
            lstm_bwd_w,
            lstm_bwd_b,
            metric,
            dep_emb,
            dep_null,
            pos_emb,
        ];
        v.extend(conv_w.iter_mut());
        v.extend(conv_b.iter_mut());
        v.extend(bn_gamma.iter_mut());
        v.extend(bn_beta.iter_mut());
        v
    }
}

/// Tape handles for one bound pass, aligned with `ModelParams::tensors()`.
pub struct BoundModel {
    pub ordered: Vec<NodeId>,
    pub encoder: EncoderNodes,
    pub metric: NodeId,
    pub dep_emb: NodeId,
    pub dep_null: NodeId,
    pub pos_emb: NodeId,
    pub layers: Vec<LayerNodes>,
    pub bn_gamma: Vec<NodeId>,
    pub bn_beta: Vec<NodeId>,
}

/// Places every parameter on the tape as a leaf; `trainable` controls
/// whether gradients will be recorded.
pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: bool) -> BoundModel {
    let tensors = params.tensors();
    let ordered: Vec<NodeId> = tensors
        .iter()
        .map(|t| tape.param(&t.shape, &t.data, trainable))
        .collect();
    let lambda = params.conv_w.len();
    let base = 12;
    let layers = (0..lambda)
        .map(|i| LayerNodes {
            weight: ordered[base + i],
            bias: ordered[base + lambda + i],
        })
        .collect();
    let bn_gamma = (0..lambda).map(|i| ordered[base + 2 * lambda + i]).collect();
    let bn_beta = (0..lambda).map(|i| ordered[base + 3 * lambda + i]).collect();
    BoundModel {
        encoder: EncoderNodes {
            word_emb: ordered[0],
            char_emb: ordered[1],
            char_filters: ordered[2],
            char_bias: ordered[3],
            lstm_fwd_w: ordered[4],
            lstm_fwd_b: ordered[5],
            lstm_bwd_w: ordered[6],
            lstm_bwd_b: ordered[7],
        },
        metric: ordered[8],
        dep_emb: ordered[9],
        dep_null: ordered[10],
        pos_emb: ordered[11],
        layers,
        bn_gamma,
        bn_beta,
        ordered,
    }
}

/// Node handles of interest after a forward pass.
pub struct Activations {
    pub h: NodeId,
    /// L^1..L^lambda.
    pub layers: Vec<NodeId>,
    pub q: NodeId,
}

/// Model plus everything needed to run it on raw sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub dep_vocab: DepVocab,
    pub labels: LabelSpace,
    pub n_max: usize,
    pub params: ModelParams,
    pub norm_states: Vec<BatchNormState>,
}

impl ModelBundle {
    /// Builds the label space, vocabularies, and fresh parameters from a
    /// training corpus.
    pub fn init<R: Rng>(
        cfg: TrainConfig,
        train: &[SentenceExample],
        pretrained_words: Option<Vec<f64>>,
        rng: &mut R,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::contract("cannot initialize a model on an empty corpus"));
        }
        let labels = label_space_of(train)?;
        let vocab = Vocabulary::from_examples(train);
        let dep_vocab = DepVocab::from_examples(train);
        let n_max = train.iter().map(|e| e.len()).max().unwrap_or(1).max(1);
        // Offsets span {−n_max, …, n_max}; training sentences only reach
        // ±(n_max−1), so the two extreme rows stay unused until an
        // overlong test sentence clamps onto them.
        log::debug!(
            "position table covers offsets ±{} ({} rows, extremes unused in training)",
            n_max,
            2 * n_max + 1
        );
        let params = ModelParams::init(
            &cfg,
            &vocab,
            &dep_vocab,
            &labels,
            n_max,
            pretrained_words,
            rng,
        )?;
        let norm_states = (0..cfg.layers)
            .map(|_| BatchNormState::new(cfg.channels, cfg.bn_momentum))
            .collect();
        Ok(ModelBundle {
            config: cfg,
            vocab,
            dep_vocab,
            labels,
            n_max,
            params,
            norm_states,
        })
    }

    /// Full forward pass over one sentence. In train mode, dropout is live
    /// and batch-norm running statistics advance.
    pub fn forward<R: Rng>(
        &mut self,
        tape: &mut Tape,
        bound: &BoundModel,
        ex: &SentenceExample,
        phase: Phase,
        rng: &mut R,
    ) -> Result<Activations> {
        let cfg = &self.config;
        let ids = SentenceIds::from_example(ex, &self.vocab, cfg.char_window);
        let h = encoder::encode_sentence(
            tape,
            &ids,
            &bound.encoder,
            cfg.context_size,
            cfg.char_window,
            cfg.dropout,
            phase,
            rng,
        )?;
        let n = ex.len();
        let g = net::metric_tables(tape, h, bound.metric, cfg.channels, cfg.context_size)?;
        let cells = net::dep_cells(&ex.dep_edges, &self.dep_vocab, n)?;
        let d = net::dependency_table(tape, bound.dep_emb, bound.dep_null, &cells, n)?;
        let p = net::position_table(tape, bound.pos_emb, n, self.n_max)?;
        let norm = if cfg.batch_norm {
            Some(NormNodes {
                gamma: bound.bn_gamma.clone(),
                beta: bound.bn_beta.clone(),
                states: &mut self.norm_states,
            })
        } else {
            None
        };
        let layers = net::pool_forward(tape, g, d, p, &bound.layers, cfg.conv_window, norm, phase)?;
        let q = net::output_distribution(tape, *layers.last().expect("lambda >= 2"))?;
        Ok(Activations { h, layers, q })
    }

    /// Inference pass plus decoding. Returns the decoded annotation and
    /// the dense Q tensor.
    pub fn predict(&mut self, ex: &SentenceExample) -> Result<(Prediction, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params, false);
        // Inference consumes no randomness; any seed works.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let acts = self.forward(&mut tape, &bound, ex, Phase::Infer, &mut rng)?;
        let q = tape.value(acts.q).to_vec();
        let n = ex.len();
        let z = self.labels.size();
        let diag = codec::argmax_tags(&q, n, z);
        let entities = codec::decode_entities(&diag, &self.labels);
        let relations = codec::decode_relations(&q, n, &self.labels, &entities)?;
        Ok((
            Prediction {
                entities,
                relations,
            },
            q,
        ))
    }

    /// Gold annotations of an example in codec form.
    pub fn gold(&self, ex: &SentenceExample) -> Result<(Vec<Entity>, Vec<RelationTriple>)> {
        gold_annotations(ex, &self.labels)
    }

    /// Gold tag table of an example.
    pub fn gold_table(&self, ex: &SentenceExample) -> Result<TagTable> {
        let (ents, rels) = self.gold(ex)?;
        codec::encode_table(&ents, &rels, ex.len(), &self.labels)
    }
}

/// Decoded annotation of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub entities: Vec<Entity>,
    pub relations: Vec<RelationTriple>,
}

/// Label space from the type inventory of a corpus, lexicographically
/// ordered for determinism.
pub fn label_space_of(examples: &[SentenceExample]) -> Result<LabelSpace> {
    let mut etypes: Vec<String> = Vec::new();
    let mut rtypes: Vec<String> = Vec::new();
    for ex in examples {
        for e in &ex.entities {
            if !etypes.contains(&e.etype) {
                etypes.push(e.etype.clone());
            }
        }
        for r in &ex.relations {
            if !rtypes.contains(&r.predicate) {
                rtypes.push(r.predicate.clone());
            }
        }
    }
    etypes.sort();
    rtypes.sort();
    LabelSpace::new(etypes, rtypes)
}

/// Converts a sentence's string-typed annotations into codec entities and
/// triples under a label space; unknown type names are an error.
pub fn gold_annotations(
    ex: &SentenceExample,
    labels: &LabelSpace,
) -> Result<(Vec<Entity>, Vec<RelationTriple>)> {
    let mut ents = Vec::with_capacity(ex.entities.len());
    for e in &ex.entities {
        let etype = labels.entity_type_id(&e.etype).ok_or_else(|| {
            Error::contract(format!(
                "sentence {}: entity type '{}' is not in the label space ({:?})",
                ex.id,
                e.etype,
                labels.entity_types()
            ))
        })?;
        ents.push(Entity::new(etype, e.tok_start, e.tok_end));
    }
    let mut rels = Vec::with_capacity(ex.relations.len());
    for r in &ex.relations {
        let predicate = labels.relation_type_id(&r.predicate).ok_or_else(|| {
            Error::contract(format!(
                "sentence {}: relation type '{}' is not in the label space ({:?})",
                ex.id,
                r.predicate,
                labels.relation_types()
            ))
        })?;
        if r.subject >= ents.len() || r.object >= ents.len() {
            return Err(Error::contract(format!(
                "sentence {}: relation references entity {} of {}",
                ex.id,
                r.subject.max(r.object),
                ents.len()
            )));
        }
        rels.push(RelationTriple {
            subject: ents[r.subject],
            object: ents[r.object],
            predicate,
        });
    }
    Ok((ents, rels))
}

/// Places the one-hot ground truth for a table on a buffer (used by tests
/// and the inspection tooling).
pub fn one_hot(table: &TagTable, z: usize) -> Vec<f64> {
    let n = table.n;
    let mut y = vec![0.0; n * n * z];
    for (cell, &t) in table.cells().iter().enumerate() {
        y[cell * z + t] = 1.0;
    }
    y
}
