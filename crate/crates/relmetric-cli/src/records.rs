//! The prediction-file schema: one JSON record per sentence, entities with
//! token and character spans, relations referencing the record's entity
//! list by index.

use serde::{Deserialize, Serialize};

use relmetric::corpus::SentenceExample;
use relmetric::eval::{EvalEntity, EvalRelation, SentenceAnnotation};
use relmetric::model::{ModelBundle, Prediction};
use relmetric::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct PredEntity {
    #[serde(rename = "type")]
    pub etype: String,
    pub tok_start: usize,
    pub tok_end: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredRelation {
    pub subject: usize,
    pub object: usize,
    pub predicate: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredRecord {
    pub id: String,
    pub text: String,
    pub entities: Vec<PredEntity>,
    pub relations: Vec<PredRelation>,
}

impl PredRecord {
    pub fn from_prediction(bundle: &ModelBundle, ex: &SentenceExample, pred: &Prediction) -> Self {
        let chars: Vec<char> = ex.text.chars().collect();
        let entities: Vec<PredEntity> = pred
            .entities
            .iter()
            .map(|e| {
                let char_start = ex.tokens[e.start].start;
                let char_end = ex.tokens[e.end].end;
                PredEntity {
                    etype: bundle.labels.entity_types()[e.etype].clone(),
                    tok_start: e.start,
                    tok_end: e.end,
                    char_start,
                    char_end,
                    text: chars[char_start..char_end].iter().collect(),
                }
            })
            .collect();
        let relations = pred
            .relations
            .iter()
            .map(|r| PredRelation {
                subject: pred
                    .entities
                    .iter()
                    .position(|e| e == &r.subject)
                    .expect("relation subject was decoded"),
                object: pred
                    .entities
                    .iter()
                    .position(|e| e == &r.object)
                    .expect("relation object was decoded"),
                predicate: bundle.labels.relation_types()[r.predicate].clone(),
            })
            .collect();
        PredRecord {
            id: ex.id.clone(),
            text: ex.text.clone(),
            entities,
            relations,
        }
    }

    pub fn to_annotation(&self) -> Result<SentenceAnnotation> {
        let entities: Vec<EvalEntity> = self
            .entities
            .iter()
            .map(|e| EvalEntity {
                etype: e.etype.clone(),
                char_start: e.char_start,
                char_end: e.char_end,
            })
            .collect();
        let mut relations = Vec::with_capacity(self.relations.len());
        for r in &self.relations {
            if r.subject >= entities.len() || r.object >= entities.len() {
                return Err(Error::ingest(format!(
                    "prediction record {}: relation references entity {} of {}",
                    self.id,
                    r.subject.max(r.object),
                    entities.len()
                )));
            }
            relations.push(EvalRelation {
                subject: entities[r.subject].clone(),
                object: entities[r.object].clone(),
                predicate: r.predicate.clone(),
            });
        }
        Ok(SentenceAnnotation {
            id: self.id.clone(),
            entities,
            relations,
        })
    }
}

pub fn read_predictions(path: &std::path::Path) -> Result<Vec<PredRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ingest(format!("cannot read {}: {}", path.display(), e)))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredRecord = serde_json::from_str(line)
            .map_err(|e| Error::ingest(format!("prediction line {}: {}", lineno + 1, e)))?;
        out.push(rec);
    }
    Ok(out)
}
