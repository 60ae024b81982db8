//! Strict-match scoring: an entity counts only on exact character span and
//! type; a relation only when subject entity, object entity, and predicate
//! all match exactly. Micro-averaged precision/recall/F1 plus class-based
//! partition analyses.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entity in evaluation form: type name plus character span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvalEntity {
    pub etype: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// Relation in evaluation form; entities carried by value so a triple is
/// self-contained.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvalRelation {
    pub subject: EvalEntity,
    pub object: EvalEntity,
    pub predicate: String,
}

impl EvalRelation {
    /// Characters separating the two entities: from the end of the earlier
    /// one to the start of the later one.
    pub fn entity_distance(&self) -> usize {
        let (first, second) = if self.subject.char_start <= self.object.char_start {
            (&self.subject, &self.object)
        } else {
            (&self.object, &self.subject)
        };
        second.char_start.saturating_sub(first.char_end)
    }
}

/// One sentence's gold or predicted annotation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SentenceAnnotation {
    pub id: String,
    pub entities: Vec<EvalEntity>,
    pub relations: Vec<EvalRelation>,
}

/// True/false positive and false negative tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrCounts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// F1 = 2PR/(P+R), defined as 0 when P+R = 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: PrCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Micro-averaged scores plus per-type breakdowns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub ner: PrCounts,
    pub re: PrCounts,
    pub per_entity_type: BTreeMap<String, PrCounts>,
    pub per_relation_type: BTreeMap<String, PrCounts>,
}

impl ScoreReport {
    pub fn summary(&self) -> String {
        format!(
            "NER P {:.4} R {:.4} F1 {:.4} | RE P {:.4} R {:.4} F1 {:.4}",
            self.ner.precision(),
            self.ner.recall(),
            self.ner.f1(),
            self.re.precision(),
            self.re.recall(),
            self.re.f1()
        )
    }
}

fn dedup<T: Ord + Clone>(items: &[T]) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Set-match of two multisets (after dedup): returns (tp, fp, fn).
fn match_sets<T: Ord + Clone>(pred: &[T], gold: &[T]) -> PrCounts {
    let pred = dedup(pred);
    let gold = dedup(gold);
    let mut tp = 0;
    for p in &pred {
        if gold.binary_search(p).is_ok() {
            tp += 1;
        }
    }
    PrCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Scores predictions against gold, aligned by sentence id. Every id must
/// appear on both sides exactly once.
pub fn evaluate(pred: &[SentenceAnnotation], gold: &[SentenceAnnotation]) -> Result<ScoreReport> {
    if pred.len() != gold.len() {
        return Err(Error::contract(format!(
            "prediction/gold sentence counts differ: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut by_id: HashMap<&str, &SentenceAnnotation> = HashMap::new();
    for p in pred {
        if by_id.insert(&p.id, p).is_some() {
            return Err(Error::contract(format!("duplicate prediction id {}", p.id)));
        }
    }
    let mut report = ScoreReport::default();
    for g in gold {
        let Some(p) = by_id.remove(g.id.as_str()) else {
            return Err(Error::contract(format!(
                "no prediction for sentence id {}",
                g.id
            )));
        };
        report.ner.add(match_sets(&p.entities, &g.entities));
        report.re.add(match_sets(&p.relations, &g.relations));

        let mut etypes: Vec<&String> = p
            .entities
            .iter()
            .chain(g.entities.iter())
            .map(|e| &e.etype)
            .collect();
        etypes.sort();
        etypes.dedup();
        for t in etypes {
            let pe: Vec<&EvalEntity> = p.entities.iter().filter(|e| &e.etype == t).collect();
            let ge: Vec<&EvalEntity> = g.entities.iter().filter(|e| &e.etype == t).collect();
            report
                .per_entity_type
                .entry(t.clone())
                .or_default()
                .add(match_sets(&pe, &ge));
        }
        let mut rtypes: Vec<&String> = p
            .relations
            .iter()
            .chain(g.relations.iter())
            .map(|r| &r.predicate)
            .collect();
        rtypes.sort();
        rtypes.dedup();
        for t in rtypes {
            let pr: Vec<&EvalRelation> = p.relations.iter().filter(|r| &r.predicate == t).collect();
            let gr: Vec<&EvalRelation> = g.relations.iter().filter(|r| &r.predicate == t).collect();
            report
                .per_relation_type
                .entry(t.clone())
                .or_default()
                .add(match_sets(&pr, &gr));
        }
    }
    if !by_id.is_empty() {
        return Err(Error::contract(format!(
            "predictions for unknown sentence ids: {:?}",
            by_id.keys().collect::<Vec<_>>()
        )));
    }
    Ok(report)
}

/// Class-based partition schemes for error analysis.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionScheme {
    /// Cumulative: one evaluation per threshold over sentences with
    /// length ≤ threshold (token count).
    Length { thresholds: Vec<usize> },
    /// Disjoint bins over the character distance between a relation's
    /// entities; edges must ascend, bin i is [edge_i, edge_{i+1}).
    EntityDistance { edges: Vec<usize> },
    /// One group per relation predicate.
    RelationType,
}

/// One partition's label and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub label: String,
    pub examples: usize,
    pub report: ScoreReport,
}

/// Runs a partitioned evaluation. Sentence lengths (token counts, aligned
/// with `gold`) are required for the length scheme.
pub fn partition_analysis(
    pred: &[SentenceAnnotation],
    gold: &[SentenceAnnotation],
    lengths: &[usize],
    scheme: &PartitionScheme,
) -> Result<Vec<PartitionReport>> {
    match scheme {
        PartitionScheme::Length { thresholds } => {
            if lengths.len() != gold.len() {
                return Err(Error::contract(
                    "length scheme needs one token count per gold sentence",
                ));
            }
            let mut sorted = thresholds.clone();
            sorted.sort_unstable();
            if &sorted != thresholds {
                return Err(Error::contract("length thresholds must ascend"));
            }
            let by_id: HashMap<&str, &SentenceAnnotation> =
                pred.iter().map(|p| (p.id.as_str(), p)).collect();
            let mut out = Vec::new();
            for &t in thresholds {
                let keep: Vec<usize> = (0..gold.len()).filter(|&i| lengths[i] <= t).collect();
                let g: Vec<SentenceAnnotation> =
                    keep.iter().map(|&i| gold[i].clone()).collect();
                let p: Vec<SentenceAnnotation> = keep
                    .iter()
                    .map(|&i| {
                        by_id
                            .get(gold[i].id.as_str())
                            .map(|&x| x.clone())
                            .ok_or_else(|| {
                                Error::contract(format!("no prediction for {}", gold[i].id))
                            })
                    })
                    .collect::<Result<_>>()?;
                out.push(PartitionReport {
                    label: format!("len<={}", t),
                    examples: g.len(),
                    report: evaluate(&p, &g)?,
                });
            }
            Ok(out)
        }
        PartitionScheme::EntityDistance { edges } => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::contract("distance bin edges must strictly ascend"));
            }
            let bin_of = |d: usize| -> Option<usize> {
                (0..edges.len() - 1).find(|&b| d >= edges[b] && d < edges[b + 1])
            };
            let mut out: Vec<PartitionReport> = edges
                .windows(2)
                .map(|w| PartitionReport {
                    label: format!("{}-{}", w[0], w[1]),
                    examples: 0,
                    report: ScoreReport::default(),
                })
                .collect();
            let by_id: HashMap<&str, &SentenceAnnotation> =
                pred.iter().map(|p| (p.id.as_str(), p)).collect();
            for g in gold {
                let p = by_id
                    .get(g.id.as_str())
                    .ok_or_else(|| Error::contract(format!("no prediction for {}", g.id)))?;
                for b in 0..out.len() {
                    let gr: Vec<EvalRelation> = g
                        .relations
                        .iter()
                        .filter(|r| bin_of(r.entity_distance()) == Some(b))
                        .cloned()
                        .collect();
                    let pr: Vec<EvalRelation> = p
                        .relations
                        .iter()
                        .filter(|r| bin_of(r.entity_distance()) == Some(b))
                        .cloned()
                        .collect();
                    out[b].examples += gr.len();
                    out[b].report.re.add(match_sets(&pr, &gr));
                }
            }
            Ok(out)
        }
        PartitionScheme::RelationType => {
            let mut types: Vec<String> = gold
                .iter()
                .flat_map(|g| g.relations.iter().map(|r| r.predicate.clone()))
                .chain(
                    pred.iter()
                        .flat_map(|p| p.relations.iter().map(|r| r.predicate.clone())),
                )
                .collect();
            types.sort();
            types.dedup();
            let by_id: HashMap<&str, &SentenceAnnotation> =
                pred.iter().map(|p| (p.id.as_str(), p)).collect();
            let mut out = Vec::new();
            for t in types {
                let mut rep = PartitionReport {
                    label: t.clone(),
                    examples: 0,
                    report: ScoreReport::default(),
                };
                for g in gold {
                    let p = by_id
                        .get(g.id.as_str())
                        .ok_or_else(|| Error::contract(format!("no prediction for {}", g.id)))?;
                    let gr: Vec<EvalRelation> = g
                        .relations
                        .iter()
                        .filter(|r| r.predicate == t)
                        .cloned()
                        .collect();
                    let pr: Vec<EvalRelation> = p
                        .relations
                        .iter()
                        .filter(|r| r.predicate == t)
                        .cloned()
                        .collect();
                    rep.examples += gr.len();
                    rep.report.re.add(match_sets(&pr, &gr));
                }
                out.push(rep);
            }
            Ok(out)
        }
    }
}
