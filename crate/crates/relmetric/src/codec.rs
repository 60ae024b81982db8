//! Bidirectional mapping between sentence annotations and the n×n tag
//! table: BILOU entity tags on the diagonal, relation tags filling the
//! rectangular blocks where entity spans intersect, O everywhere else.
//! Also the test-time decoder that reads entities off the diagonal and
//! relations out of block-summed probabilities.

use crate::error::{Error, Result};

/// Position of a token inside a BILOU-coded entity span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilouPos {
    Begin,
    Inside,
    Last,
    Unit,
}

const BILOU_ORDER: [BilouPos; 4] = [
    BilouPos::Begin,
    BilouPos::Inside,
    BilouPos::Last,
    BilouPos::Unit,
];

impl BilouPos {
    fn offset(self) -> usize {
        match self {
            BilouPos::Begin => 0,
            BilouPos::Inside => 1,
            BilouPos::Last => 2,
            BilouPos::Unit => 3,
        }
    }

    fn prefix(self) -> char {
        match self {
            BilouPos::Begin => 'B',
            BilouPos::Inside => 'I',
            BilouPos::Last => 'L',
            BilouPos::Unit => 'U',
        }
    }
}

/// One tag from the unified label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Entity { etype: usize, pos: BilouPos },
    Relation { rtype: usize },
}

/// The unified entity+relation label space. Tag index 0 is O, the four
/// BILOU variants of each entity type follow in declaration order, then the
/// relation tags.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelSpace {
    entity_types: Vec<String>,
    relation_types: Vec<String>,
}

impl LabelSpace {
    pub fn new(entity_types: Vec<String>, relation_types: Vec<String>) -> Result<Self> {
        for (name, list) in [("entity", &entity_types), ("relation", &relation_types)] {
            let mut seen = std::collections::HashSet::new();
            for t in list {
                if !seen.insert(t.as_str()) {
                    return Err(Error::config(format!("duplicate {} type name: {}", name, t)));
                }
            }
        }
        Ok(LabelSpace {
            entity_types,
            relation_types,
        })
    }

    /// |Z| = 4·n_ent + n_rel + 1.
    pub fn size(&self) -> usize {
        4 * self.entity_types.len() + self.relation_types.len() + 1
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[String] {
        &self.relation_types
    }

    pub fn entity_type_id(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn relation_type_id(&self, name: &str) -> Option<usize> {
        self.relation_types.iter().position(|t| t == name)
    }

    pub fn index(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Entity { etype, pos } => 1 + etype * 4 + pos.offset(),
            Tag::Relation { rtype } => 1 + 4 * self.entity_types.len() + rtype,
        }
    }

    pub fn tag(&self, index: usize) -> Result<Tag> {
        if index == 0 {
            return Ok(Tag::Outside);
        }
        let e = index - 1;
        if e < 4 * self.entity_types.len() {
            return Ok(Tag::Entity {
                etype: e / 4,
                pos: BILOU_ORDER[e % 4],
            });
        }
        let r = e - 4 * self.entity_types.len();
        if r < self.relation_types.len() {
            return Ok(Tag::Relation { rtype: r });
        }
        Err(Error::contract(format!(
            "tag index {} out of label space of size {}",
            index,
            self.size()
        )))
    }

    pub fn tag_name(&self, index: usize) -> String {
        match self.tag(index) {
            Ok(Tag::Outside) => "O".to_string(),
            Ok(Tag::Entity { etype, pos }) => {
                format!("{}-{}", pos.prefix(), self.entity_types[etype])
            }
            Ok(Tag::Relation { rtype }) => self.relation_types[rtype].clone(),
            Err(_) => format!("<invalid:{}>", index),
        }
    }
}

/// Entity as a typed, inclusive token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entity {
    pub etype: usize,
    pub start: usize,
    pub end: usize,
}

impl Entity {
    pub fn new(etype: usize, start: usize, end: usize) -> Self {
        Entity { etype, start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn overlaps(&self, other: &Entity) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Directed relation between two decoded entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub subject: Entity,
    pub object: Entity,
    pub predicate: usize,
}

/// The n×n table of tag indices into the label space.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    pub n: usize,
    cells: Vec<usize>,
}

impl TagTable {
    pub fn all_outside(n: usize) -> Self {
        TagTable {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.cells[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, tag: usize) {
        self.cells[i * self.n + j] = tag;
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn diagonal(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Debug dump in the token-headed CSV grid layout the CLI uses for
    /// heatmaps, with tag names as cell values.
    pub fn to_csv(&self, labels: &LabelSpace, tokens: &[String]) -> String {
        let mut out = String::new();
        out.push(',');
        out.push_str(&tokens.join(","));
        out.push('\n');
        for i in 0..self.n {
            out.push_str(&tokens[i]);
            for j in 0..self.n {
                out.push(',');
                out.push_str(&labels.tag_name(self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Encodes gold annotations as a tag table. Entity spans must lie within
/// the sentence and must not overlap; every relation must reference
/// entities from the given set.
pub fn encode_table(
    entities: &[Entity],
    relations: &[RelationTriple],
    n: usize,
    labels: &LabelSpace,
) -> Result<TagTable> {
    for e in entities {
        if e.start > e.end || e.end >= n {
            return Err(Error::contract(format!(
                "entity span {}..{} outside sentence of length {}",
                e.start, e.end, n
            )));
        }
        if e.etype >= labels.entity_types().len() {
            return Err(Error::contract(format!(
                "entity type id {} out of range",
                e.etype
            )));
        }
    }
    let mut sorted: Vec<&Entity> = entities.iter().collect();
    sorted.sort_by_key(|e| e.start);
    for pair in sorted.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(Error::contract(format!(
                "overlapping entity spans {}..{} and {}..{}",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }

    let mut table = TagTable::all_outside(n);
    for e in entities {
        if e.start == e.end {
            table.set(
                e.start,
                e.start,
                labels.index(Tag::Entity {
                    etype: e.etype,
                    pos: BilouPos::Unit,
                }),
            );
        } else {
            table.set(
                e.start,
                e.start,
                labels.index(Tag::Entity {
                    etype: e.etype,
                    pos: BilouPos::Begin,
                }),
            );
            for i in e.start + 1..e.end {
                table.set(
                    i,
                    i,
                    labels.index(Tag::Entity {
                        etype: e.etype,
                        pos: BilouPos::Inside,
                    }),
                );
            }
            table.set(
                e.end,
                e.end,
                labels.index(Tag::Entity {
                    etype: e.etype,
                    pos: BilouPos::Last,
                }),
            );
        }
    }

    for r in relations {
        if !entities.contains(&r.subject) || !entities.contains(&r.object) {
            return Err(Error::contract(
                "relation references an entity outside the entity set".to_string(),
            ));
        }
        if r.subject == r.object {
            return Err(Error::contract(
                "relation subject and object are the same entity".to_string(),
            ));
        }
        if r.predicate >= labels.relation_types().len() {
            return Err(Error::contract(format!(
                "relation type id {} out of range",
                r.predicate
            )));
        }
        let tag = labels.index(Tag::Relation { rtype: r.predicate });
        for i in r.subject.start..=r.subject.end {
            for j in r.object.start..=r.object.end {
                let prev = table.get(i, j);
                if prev != 0 && prev != tag {
                    log::warn!(
                        "relation block overwrite at ({}, {}): {} -> {}",
                        i,
                        j,
                        labels.tag_name(prev),
                        labels.tag_name(tag)
                    );
                }
                table.set(i, j, tag);
            }
        }
    }
    Ok(table)
}

/// Decodes entities from the diagonal tag sequence with the strict
/// B (I)* L / U automaton; fragments that do not complete are dropped.
pub fn decode_entities(diagonal: &[usize], labels: &LabelSpace) -> Vec<Entity> {
    let n = diagonal.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        match labels.tag(diagonal[i]) {
            Ok(Tag::Entity {
                etype,
                pos: BilouPos::Unit,
            }) => {
                out.push(Entity::new(etype, i, i));
                i += 1;
            }
            Ok(Tag::Entity {
                etype,
                pos: BilouPos::Begin,
            }) => {
                let mut j = i + 1;
                while j < n
                    && matches!(
                        labels.tag(diagonal[j]),
                        Ok(Tag::Entity { etype: e, pos: BilouPos::Inside }) if e == etype
                    )
                {
                    j += 1;
                }
                let closes = j < n
                    && matches!(
                        labels.tag(diagonal[j]),
                        Ok(Tag::Entity { etype: e, pos: BilouPos::Last }) if e == etype
                    );
                if closes {
                    out.push(Entity::new(etype, i, j));
                    i = j + 1;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out
}

/// Decodes relations by block-argmax: for every ordered pair of distinct
/// entities, sum Q over the rectangular intersection of their spans and
/// take the best tag; a triple is emitted only when that tag is a relation
/// tag. Ties break toward the lowest tag index.
pub fn decode_relations(
    q: &[f64],
    n: usize,
    labels: &LabelSpace,
    entities: &[Entity],
) -> Result<Vec<RelationTriple>> {
    let z = labels.size();
    if q.len() != n * n * z {
        return Err(Error::shape(format!(
            "probability tensor has {} values, expected {}×{}×{}",
            q.len(),
            n,
            n,
            z
        )));
    }
    for e in entities {
        if e.end >= n || e.start > e.end {
            return Err(Error::contract(format!(
                "entity span {}..{} out of range for n={}",
                e.start, e.end, n
            )));
        }
    }
    let mut out = Vec::new();
    for (ai, a) in entities.iter().enumerate() {
        for (bi, b) in entities.iter().enumerate() {
            if ai == bi {
                continue;
            }
            let mut scores = vec![0.0f64; z];
            for i in a.start..=a.end {
                for j in b.start..=b.end {
                    let cell = &q[(i * n + j) * z..(i * n + j) * z + z];
                    for (s, &p) in scores.iter_mut().zip(cell) {
                        *s += p;
                    }
                }
            }
            let mut best = 0;
            for k in 1..z {
                if scores[k] > scores[best] {
                    best = k;
                }
            }
            if let Ok(Tag::Relation { rtype }) = labels.tag(best) {
                out.push(RelationTriple {
                    subject: *a,
                    object: *b,
                    predicate: rtype,
                });
            }
        }
    }
    Ok(out)
}

/// Per-cell argmax over the tag axis, ties toward the lowest index. Used to
/// read BILOU tags off the diagonal of Q.
pub fn argmax_tags(q: &[f64], n: usize, z: usize) -> Vec<usize> {
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let cell = &q[(i * n + i) * z..(i * n + i) * z + z];
        let mut best = 0;
        for k in 1..z {
            if cell[k] > cell[best] {
                best = k;
            }
        }
        diag.push(best);
    }
    diag
}
