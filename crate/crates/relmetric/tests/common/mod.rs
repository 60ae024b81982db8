//! Shared helpers for the integration suites: synthetic corpora, random
//! annotation generators, and independent brute-force oracles.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use relmetric::codec::{Entity, LabelSpace, RelationTriple, Tag};
use relmetric::corpus::{RelationAnn, SentenceExample, SpanEntity, Token};
use relmetric::eval::{EvalEntity, EvalRelation, PrCounts, SentenceAnnotation};

/// Deterministic synthetic corpus: two entity types, two relation types,
/// short sentences with one or two entities and a relation when both are
/// present.
pub fn synthetic_corpus(rng: &mut ChaCha8Rng, sentences: usize) -> Vec<SentenceExample> {
    let fillers = ["the", "report", "said", "that", "near", "old", "from"];
    let a_words = ["alpha", "arc", "axel", "aria"];
    let b_words = ["beta", "bolt", "brim", "bay"];
    let mut out = Vec::with_capacity(sentences);
    for s in 0..sentences {
        let two_entities = s % 5 != 4; // 80% carry a relation
        let mut words: Vec<(String, Option<usize>)> = Vec::new(); // (surface, entity-slot)
        let lead = rng.gen_range(1..3);
        for _ in 0..lead {
            words.push((fillers[rng.gen_range(0..fillers.len())].to_string(), None));
        }
        let a_len = rng.gen_range(1..3);
        for k in 0..a_len {
            let w = format!("{}{}", a_words[rng.gen_range(0..a_words.len())], k);
            words.push((w, Some(0)));
        }
        let mid = rng.gen_range(1..3);
        for _ in 0..mid {
            words.push((fillers[rng.gen_range(0..fillers.len())].to_string(), None));
        }
        if two_entities {
            let b_len = rng.gen_range(1..3);
            for k in 0..b_len {
                let w = format!("{}{}", b_words[rng.gen_range(0..b_words.len())], k);
                words.push((w, Some(1)));
            }
            if rng.gen_bool(0.5) {
                words.push((fillers[rng.gen_range(0..fillers.len())].to_string(), None));
            }
        }

        let mut text = String::new();
        let mut tokens = Vec::new();
        let mut cursor = 0usize;
        for (surface, _) in &words {
            if !text.is_empty() {
                text.push(' ');
                cursor += 1;
            }
            let start = cursor;
            text.push_str(surface);
            cursor += surface.chars().count();
            tokens.push(Token {
                text: surface.clone(),
                start,
                end: cursor,
            });
        }

        let slot_span = |slot: usize| -> Option<(usize, usize)> {
            let idxs: Vec<usize> = words
                .iter()
                .enumerate()
                .filter(|(_, (_, s))| *s == Some(slot))
                .map(|(i, _)| i)
                .collect();
            idxs.first().map(|&a| (a, *idxs.last().unwrap()))
        };
        let mut entities = Vec::new();
        let mut relations = Vec::new();
        if let Some((a0, a1)) = slot_span(0) {
            entities.push(SpanEntity {
                etype: "TypeA".to_string(),
                char_start: tokens[a0].start,
                char_end: tokens[a1].end,
                tok_start: a0,
                tok_end: a1,
            });
        }
        if let Some((b0, b1)) = slot_span(1) {
            entities.push(SpanEntity {
                etype: "TypeB".to_string(),
                char_start: tokens[b0].start,
                char_end: tokens[b1].end,
                tok_start: b0,
                tok_end: b1,
            });
            let predicate = if rng.gen_bool(0.5) { "RelOne" } else { "RelTwo" };
            relations.push(RelationAnn {
                subject: 0,
                object: 1,
                predicate: predicate.to_string(),
            });
        }

        out.push(SentenceExample {
            id: format!("syn-{}", s),
            text,
            tokens,
            entities,
            relations,
            dep_edges: Vec::new(),
        });
    }
    out
}

/// Random valid annotation: non-overlapping entity spans plus at most one
/// relation per ordered entity pair.
pub fn random_annotation(
    rng: &mut ChaCha8Rng,
    n: usize,
    labels: &LabelSpace,
) -> (Vec<Entity>, Vec<RelationTriple>) {
    let n_ent = labels.entity_types().len();
    let n_rel = labels.relation_types().len();
    let mut entities = Vec::new();
    let mut i = 0;
    while i < n {
        if n_ent > 0 && rng.gen_bool(0.4) {
            let len = (rng.gen_range(1..4)).min(n - i);
            entities.push(Entity::new(rng.gen_range(0..n_ent), i, i + len - 1));
            i += len;
        } else {
            i += 1;
        }
    }
    let mut relations = Vec::new();
    if n_rel > 0 {
        for (ai, a) in entities.iter().enumerate() {
            for (bi, b) in entities.iter().enumerate() {
                if ai != bi && rng.gen_bool(0.3) {
                    relations.push(RelationTriple {
                        subject: *a,
                        object: *b,
                        predicate: rng.gen_range(0..n_rel),
                    });
                }
            }
        }
    }
    (entities, relations)
}

/// Independent block-argmax oracle: enumerates tags in the outer loop and
/// sums cell probabilities with explicit index arithmetic.
pub fn oracle_decode_relations(
    q: &[f64],
    n: usize,
    labels: &LabelSpace,
    entities: &[Entity],
) -> Vec<RelationTriple> {
    let z = labels.size();
    let mut out = Vec::new();
    for a in entities {
        for b in entities {
            if a == b {
                continue;
            }
            let mut best_tag = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for k in 0..z {
                let mut score = 0.0;
                for i in a.start..=a.end {
                    for j in b.start..=b.end {
                        score += q[i * n * z + j * z + k];
                    }
                }
                if score > best_score {
                    best_score = score;
                    best_tag = k;
                }
            }
            if let Ok(Tag::Relation { rtype }) = labels.tag(best_tag) {
                out.push(RelationTriple {
                    subject: *a,
                    object: *b,
                    predicate: rtype,
                });
            }
        }
    }
    out
}

/// Independent strict matcher: consumes gold items one by one with a used
/// flag instead of set intersection.
pub fn oracle_match_counts<T: PartialEq>(pred: &[T], gold: &[T]) -> PrCounts {
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in pred {
        if let Some(slot) = gold
            .iter()
            .enumerate()
            .position(|(gi, g)| !used[gi] && g == p)
        {
            used[slot] = true;
            tp += 1;
        }
    }
    PrCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Random unique evaluation annotation for scorer testing.
pub fn random_eval_annotation(rng: &mut ChaCha8Rng, id: &str) -> SentenceAnnotation {
    let types = ["Peop", "Loc", "Org"];
    let preds = ["Live_In", "Work_For"];
    let mut entities: Vec<EvalEntity> = Vec::new();
    let count = rng.gen_range(0..5);
    let mut cursor = 0usize;
    for _ in 0..count {
        cursor += rng.gen_range(1..15);
        let len = rng.gen_range(1..10);
        entities.push(EvalEntity {
            etype: types[rng.gen_range(0..types.len())].to_string(),
            char_start: cursor,
            char_end: cursor + len,
        });
        cursor += len;
    }
    let mut relations: Vec<EvalRelation> = Vec::new();
    for a in &entities {
        for b in &entities {
            if a != b && rng.gen_bool(0.3) {
                let r = EvalRelation {
                    subject: a.clone(),
                    object: b.clone(),
                    predicate: preds[rng.gen_range(0..preds.len())].to_string(),
                };
                if !relations.contains(&r) {
                    relations.push(r);
                }
            }
        }
    }
    SentenceAnnotation {
        id: id.to_string(),
        entities,
        relations,
    }
}

/// Style-alike fixture in the public CoNLL04 layout.
pub const CONLL04_FIXTURE: &str = "\
0 Peop 0 O NNP Anna O O O
0 O 1 O VBZ lives O O O
0 O 2 O IN in O O O
0 Loc 3 O NNP/NNP New/York O O O

0 3 Live_In

1 Org 0 O NNP Acme O O O
1 O 1 O VBD hired O O O
1 Peop 2 O NNP/NNP Bo/Diddley O O O
1 O 3 O , COMMA O O O
1 O 4 O NNP yesterday O O O

2 0 Work_For

2 O 0 O DT The O O O
2 Other 1 O NNP Treaty O O O
2 O 2 O VBD ended O O O

";

/// Style-alike fixture in the public ADE layout.
pub const ADE_FIXTURE: &str = "\
100|Rash developed after taking aspirin daily.|Rash|0|4|aspirin|28|35
100|Rash developed after taking aspirin daily.|Rash|0|4|aspirin|28|35
101|Severe headache was linked to ibuprofen use.|Severe headache|0|15|ibuprofen|30|39
102|Both nausea and dizziness followed cisplatin infusion.|nausea|5|11|cisplatin|35|44
102|Both nausea and dizziness followed cisplatin infusion.|dizziness|16|25|cisplatin|35|44
";
