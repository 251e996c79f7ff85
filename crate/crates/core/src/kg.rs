//! Knowledge-graph storage: vocabularies, triples, adjacency, task
//! extraction, and negative-claim generation.
//!
//! Graphs are immutable once built. Every base triple `(h, r, t)` is paired
//! with an inverse triple `(t, r_inv, h)` so paths can traverse edges
//! backward, and a synthetic self-loop relation (always the last relation
//! id) lets a walker stay put for a step. The self-loop never appears in
//! the triple set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Suffix marking a relation as the inverse of its base relation.
pub const INVERSE_SUFFIX: &str = "_inv";
/// Reserved label for the stay-put relation.
pub const SELF_LOOP_LABEL: &str = "SELF_LOOP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// A claim to be verified, together with the ground-truth tail for its
/// (head, relation) pair. `label` is true exactly when the claimed tail is
/// the true tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClaimSample {
    pub claim: Triple,
    pub label: bool,
    pub true_tail: EntityId,
}

impl ClaimSample {
    pub fn positive(claim: Triple) -> Self {
        ClaimSample {
            claim,
            label: true,
            true_tail: claim.tail,
        }
    }
}

/// One reasoning task: claims about one or more query relations, plus the
/// graph with those relations (and their inverses) removed.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub name: String,
    /// One relation for single tasks; several for a combined task.
    pub query_relations: Vec<RelationId>,
    pub train: Vec<ClaimSample>,
    pub test: Vec<ClaimSample>,
    pub pruned_graph: KnowledgeGraph,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_labels: Vec<String>,
    relation_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    /// All stored facts (base + inverse) in deterministic construction order.
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    /// Per entity: relation -> destination entities in insertion order.
    adjacency: Vec<BTreeMap<RelationId, Vec<EntityId>>>,
    self_loop: RelationId,
    inverse_of: Vec<RelationId>,
    is_inverse: Vec<bool>,
    base_fact_count: usize,
}

fn inverse_label(label: &str) -> String {
    match label.strip_suffix(INVERSE_SUFFIX) {
        Some(base) => base.to_string(),
        None => format!("{label}{INVERSE_SUFFIX}"),
    }
}

impl KnowledgeGraph {
    /// Load a UTF-8 triple file: one `head<TAB>relation<TAB>tail` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    /// Parse triple lines from an in-memory string (used by tests and the
    /// Python bindings).
    pub fn from_tsv_str(text: &str) -> Result<Self> {
        Self::parse(text.as_bytes(), Path::new("<memory>"))
    }

    fn parse(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut entity_labels: Vec<String> = Vec::new();
        let mut entity_index: HashMap<String, EntityId> = HashMap::new();
        let mut relation_labels: Vec<String> = Vec::new();
        let mut relation_index: HashMap<String, RelationId> = HashMap::new();

        let intern_entity =
            |labels: &mut Vec<String>, index: &mut HashMap<String, EntityId>, label: &str| {
                if let Some(&id) = index.get(label) {
                    return id;
                }
                let id = EntityId(labels.len() as u32);
                labels.push(label.to_string());
                index.insert(label.to_string(), id);
                id
            };
        fn intern_relation(
            labels: &mut Vec<String>,
            index: &mut HashMap<String, RelationId>,
            label: &str,
        ) -> RelationId {
            if let Some(&id) = index.get(label) {
                return id;
            }
            let id = RelationId(labels.len() as u32);
            labels.push(label.to_string());
            index.insert(label.to_string(), id);
            id
        }

        let mut raw: Vec<Triple> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: "empty field".to_string(),
                });
            }
            let rel_label = fields[1];
            if rel_label == SELF_LOOP_LABEL || rel_label == inverse_label(SELF_LOOP_LABEL) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("relation label {rel_label:?} is reserved"),
                });
            }
            let head = intern_entity(&mut entity_labels, &mut entity_index, fields[0]);
            let relation = intern_relation(&mut relation_labels, &mut relation_index, rel_label);
            let tail = intern_entity(&mut entity_labels, &mut entity_index, fields[2]);
            raw.push(Triple::new(head, relation, tail));
        }

        if raw.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}: no triples found",
                path.display()
            )));
        }

        // Every relation gets an inverse partner; partners missing from the
        // file are appended after the first-appearance vocabulary.
        let mut i = 0;
        while i < relation_labels.len() {
            let partner = inverse_label(&relation_labels[i]);
            intern_relation(&mut relation_labels, &mut relation_index, &partner);
            i += 1;
        }
        let self_loop = intern_relation(&mut relation_labels, &mut relation_index, SELF_LOOP_LABEL);

        let inverse_of: Vec<RelationId> = relation_labels
            .iter()
            .enumerate()
            .map(|(id, label)| {
                if RelationId(id as u32) == self_loop {
                    self_loop
                } else {
                    relation_index[&inverse_label(label)]
                }
            })
            .collect();
        let is_inverse: Vec<bool> = relation_labels
            .iter()
            .map(|l| l.ends_with(INVERSE_SUFFIX))
            .collect();

        // Dedupe in file order, then close under inversion. Synthesized
        // triples are processed too, so chained `_inv` labels still reach a
        // fixpoint where every stored triple has its partner.
        let mut triples: Vec<Triple> = Vec::with_capacity(raw.len() * 2);
        let mut triple_set: HashSet<Triple> = HashSet::with_capacity(raw.len() * 2);
        for t in raw {
            if triple_set.insert(t) {
                triples.push(t);
            }
        }
        let mut i = 0;
        while i < triples.len() {
            let t = triples[i];
            let partner = Triple::new(t.tail, inverse_of[t.relation.idx()], t.head);
            if triple_set.insert(partner) {
                triples.push(partner);
            }
            i += 1;
        }

        let mut adjacency: Vec<BTreeMap<RelationId, Vec<EntityId>>> =
            vec![BTreeMap::new(); entity_labels.len()];
        for t in &triples {
            adjacency[t.head.idx()]
                .entry(t.relation)
                .or_default()
                .push(t.tail);
        }
        let base_fact_count = triples
            .iter()
            .filter(|t| !is_inverse[t.relation.idx()])
            .count();

        Ok(KnowledgeGraph {
            entity_labels,
            relation_labels,
            entity_index,
            relation_index,
            triples,
            triple_set,
            adjacency,
            self_loop,
            inverse_of,
            is_inverse,
            base_fact_count,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_labels.len()
    }

    /// Total relations: base + inverse + self-loop.
    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    /// Relations that are neither inverses nor the self-loop.
    pub fn base_relation_count(&self) -> usize {
        self.relation_labels
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_inverse[*i] && RelationId(*i as u32) != self.self_loop)
            .count()
    }

    /// Stored facts whose relation is not an inverse.
    pub fn base_fact_count(&self) -> usize {
        self.base_fact_count
    }

    pub fn self_loop(&self) -> RelationId {
        self.self_loop
    }

    pub fn inverse_of(&self, r: RelationId) -> RelationId {
        self.inverse_of[r.idx()]
    }

    pub fn is_inverse(&self, r: RelationId) -> bool {
        self.is_inverse[r.idx()]
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.entity_labels[e.idx()]
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.relation_labels[r.idx()]
    }

    /// Relation label with the inverse suffix stripped, for display.
    pub fn relation_base_label(&self, r: RelationId) -> &str {
        let label = self.relation_label(r);
        label.strip_suffix(INVERSE_SUFFIX).unwrap_or(label)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    /// Destinations reachable from `at` via `r`, in insertion order.
    pub fn neighbors(&self, at: EntityId, r: RelationId) -> &[EntityId] {
        self.adjacency[at.idx()]
            .get(&r)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Relations usable at `at` (nonempty adjacency plus the self-loop),
    /// in ascending id order.
    pub fn valid_actions(&self, at: EntityId) -> Vec<RelationId> {
        let mut actions: Vec<RelationId> = self.adjacency[at.idx()].keys().copied().collect();
        actions.push(self.self_loop);
        actions
    }

    pub fn validate_entity(&self, e: EntityId) -> Result<()> {
        if e.idx() < self.entity_count() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "entity id {} out of range (entity count {})",
                e.0,
                self.entity_count()
            )))
        }
    }

    pub fn validate_triple(&self, t: &Triple) -> Result<()> {
        self.validate_entity(t.head)?;
        self.validate_entity(t.tail)?;
        if t.relation.idx() >= self.relation_count() {
            return Err(Error::InvalidInput(format!(
                "relation id {} out of range (relation count {})",
                t.relation.0,
                self.relation_count()
            )));
        }
        Ok(())
    }

    /// Same vocabularies (ids stay stable), with every triple whose relation
    /// is in `removed` dropped. The set is closed under inversion so the
    /// remaining triples keep the inverse-closure property.
    pub fn pruned(&self, removed: &[RelationId]) -> KnowledgeGraph {
        let mut removed: HashSet<RelationId> = removed.iter().copied().collect();
        loop {
            let expand: Vec<RelationId> = (0..self.relation_count() as u32)
                .map(RelationId)
                .filter(|r| !removed.contains(r))
                .filter(|&r| {
                    removed.contains(&self.inverse_of(r))
                        || removed.iter().any(|&d| self.inverse_of(d) == r)
                })
                .collect();
            if expand.is_empty() {
                break;
            }
            removed.extend(expand);
        }
        let triples: Vec<Triple> = self
            .triples
            .iter()
            .filter(|t| !removed.contains(&t.relation))
            .copied()
            .collect();
        let triple_set: HashSet<Triple> = triples.iter().copied().collect();
        let mut adjacency: Vec<BTreeMap<RelationId, Vec<EntityId>>> =
            vec![BTreeMap::new(); self.entity_labels.len()];
        for t in &triples {
            adjacency[t.head.idx()]
                .entry(t.relation)
                .or_default()
                .push(t.tail);
        }
        let base_fact_count = triples
            .iter()
            .filter(|t| !self.is_inverse[t.relation.idx()])
            .count();
        KnowledgeGraph {
            entity_labels: self.entity_labels.clone(),
            relation_labels: self.relation_labels.clone(),
            entity_index: self.entity_index.clone(),
            relation_index: self.relation_index.clone(),
            triples,
            triple_set,
            adjacency,
            self_loop: self.self_loop,
            inverse_of: self.inverse_of.clone(),
            is_inverse: self.is_inverse.clone(),
            base_fact_count,
        }
    }

    /// Resolve an entity label, suggesting near matches on failure.
    pub fn resolve_entity(&self, label: &str) -> Result<EntityId> {
        self.entity_id(label).ok_or_else(|| Error::UnknownLabel {
            kind: "entity",
            label: label.to_string(),
            suggestions: format_suggestions(label, &self.entity_labels),
        })
    }

    /// Resolve a relation label, suggesting near matches on failure.
    pub fn resolve_relation(&self, label: &str) -> Result<RelationId> {
        self.relation_id(label).ok_or_else(|| Error::UnknownLabel {
            kind: "relation",
            label: label.to_string(),
            suggestions: format_suggestions(label, &self.relation_labels),
        })
    }

    /// Write `id<TAB>label` vocabulary dumps into `dir`.
    pub fn write_vocab(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, labels) in [
            ("entities.tsv", &self.entity_labels),
            ("relations.tsv", &self.relation_labels),
        ] {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            for (id, label) in labels.iter().enumerate() {
                writeln!(w, "{id}\t{label}").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Top near-matches by edit distance, formatted for an error message.
fn format_suggestions(label: &str, vocab: &[String]) -> String {
    let mut scored: Vec<(usize, &String)> = vocab
        .iter()
        .map(|candidate| (edit_distance(label, candidate), candidate))
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let nearest: Vec<&str> = scored.iter().take(3).map(|(_, l)| l.as_str()).collect();
    if nearest.is_empty() {
        String::new()
    } else {
        format!(" (nearest: {})", nearest.join(", "))
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Collect all `(h, r_q, t)` positives for one query relation, remove them
/// (and their inverses) from the graph, and split them by `split_ratio`
/// after a seeded shuffle.
pub fn extract_task(
    graph: &KnowledgeGraph,
    query_relation: RelationId,
    split_ratio: f64,
    seed: u64,
) -> Result<TaskDataset> {
    extract_task_named(
        graph,
        graph.relation_label(query_relation).to_string(),
        &[query_relation],
        split_ratio,
        seed,
    )
}

/// Multi-relation variant backing combined tasks: positives are the union
/// over `query_relations`, and all of them (plus inverses) are pruned.
pub fn extract_task_named(
    graph: &KnowledgeGraph,
    name: String,
    query_relations: &[RelationId],
    split_ratio: f64,
    seed: u64,
) -> Result<TaskDataset> {
    if !(0.0 < split_ratio && split_ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split ratio must be in (0, 1), got {split_ratio}"
        )));
    }
    let mut removed = Vec::new();
    for &r in query_relations {
        if r == graph.self_loop() || graph.is_inverse(r) {
            return Err(Error::InvalidInput(format!(
                "relation {:?} is not a base relation",
                graph.relation_label(r)
            )));
        }
        let count = graph.triples().iter().filter(|t| t.relation == r).count();
        if count < 5 {
            return Err(Error::InvalidInput(format!(
                "relation {:?} has only {count} triples (need at least 5)",
                graph.relation_label(r)
            )));
        }
        removed.push(r);
        removed.push(graph.inverse_of(r));
    }

    let mut positives: Vec<ClaimSample> = graph
        .triples()
        .iter()
        .filter(|t| query_relations.contains(&t.relation))
        .map(|t| ClaimSample::positive(*t))
        .collect();
    let pruned_graph = graph.pruned(&removed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    let n_train = (positives.len() as f64 * split_ratio).floor() as usize;
    let test = positives.split_off(n_train);

    Ok(TaskDataset {
        name,
        query_relations: query_relations.to_vec(),
        train: positives,
        test,
        pruned_graph,
    })
}

/// Merge several tasks into one (the combined subset): samples are the
/// union split-by-split and the pruned graph removes every query relation.
pub fn union_tasks(graph: &KnowledgeGraph, name: String, tasks: &[&TaskDataset]) -> TaskDataset {
    let mut query_relations = Vec::new();
    let mut removed = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for task in tasks {
        for &r in &task.query_relations {
            query_relations.push(r);
            removed.push(r);
            removed.push(graph.inverse_of(r));
        }
        train.extend_from_slice(&task.train);
        test.extend_from_slice(&task.test);
    }
    TaskDataset {
        name,
        query_relations,
        train,
        test,
        pruned_graph: graph.pruned(&removed),
    }
}

/// For each positive claim, emit `ratio` false claims with the tail
/// replaced by a seeded draw from the tails observed for the same relation
/// (falling back to all entities), never producing a true triple.
/// Negatives follow their positive into the same split.
pub fn generate_negatives(
    task: &TaskDataset,
    graph: &KnowledgeGraph,
    ratio: u32,
    seed: u64,
) -> Result<TaskDataset> {
    if ratio < 1 {
        return Err(Error::InvalidInput(format!(
            "negative ratio must be >= 1, got {ratio}"
        )));
    }
    if task.train.iter().chain(&task.test).any(|s| !s.label) {
        return Err(Error::InvalidInput(
            "task already contains negative samples".to_string(),
        ));
    }

    // Tails observed per relation, ascending and deduplicated.
    let mut tail_pools: HashMap<RelationId, Vec<EntityId>> = HashMap::new();
    for &r in &task.query_relations {
        let mut tails: Vec<EntityId> = graph
            .triples()
            .iter()
            .filter(|t| t.relation == r)
            .map(|t| t.tail)
            .collect();
        tails.sort_unstable();
        tails.dedup();
        tail_pools.insert(r, tails);
    }
    let all_entities: Vec<EntityId> = (0..graph.entity_count() as u32).map(EntityId).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrupt_split = |positives: &[ClaimSample]| -> Result<Vec<ClaimSample>> {
        let mut out = Vec::with_capacity(positives.len() * (1 + ratio as usize));
        for pos in positives {
            out.push(*pos);
            let head = pos.claim.head;
            let relation = pos.claim.relation;
            let eligible = |e: EntityId| !graph.contains(&Triple::new(head, relation, e));
            let pool: Vec<EntityId> = tail_pools[&relation]
                .iter()
                .copied()
                .filter(|&e| eligible(e))
                .collect();
            let pool = if pool.is_empty() {
                all_entities
                    .iter()
                    .copied()
                    .filter(|&e| eligible(e))
                    .collect()
            } else {
                pool
            };
            if pool.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no corruption candidates for positive ({}, {}, {})",
                    graph.entity_label(head),
                    graph.relation_label(relation),
                    graph.entity_label(pos.claim.tail),
                )));
            }
            for _ in 0..ratio {
                let fake = pool[rng.gen_range(0..pool.len())];
                out.push(ClaimSample {
                    claim: Triple::new(head, relation, fake),
                    label: false,
                    true_tail: pos.claim.tail,
                });
            }
        }
        Ok(out)
    };

    let train = corrupt_split(&task.train)?;
    let test = corrupt_split(&task.test)?;
    Ok(TaskDataset {
        name: task.name.clone(),
        query_relations: task.query_relations.clone(),
        train,
        test,
        pruned_graph: task.pruned_graph.clone(),
    })
}

/// Serialize claims as `head<TAB>relation<TAB>tail<TAB>label(0|1)<TAB>true_tail`.
pub fn write_claims(
    path: impl AsRef<Path>,
    samples: &[ClaimSample],
    graph: &KnowledgeGraph,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for s in samples {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            graph.entity_label(s.claim.head),
            graph.relation_label(s.claim.relation),
            graph.entity_label(s.claim.tail),
            u8::from(s.label),
            graph.entity_label(s.true_tail),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_claims(path: impl AsRef<Path>, graph: &KnowledgeGraph) -> Result<Vec<ClaimSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(format!(
                "expected 5 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let head = graph.resolve_entity(fields[0])?;
        let relation = graph.resolve_relation(fields[1])?;
        let tail = graph.resolve_entity(fields[2])?;
        let label = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("label must be 0 or 1, found {other:?}"))),
        };
        let true_tail = graph.resolve_entity(fields[4])?;
        if label != (tail == true_tail) {
            return Err(parse_err(
                "label inconsistent with tail and true_tail".to_string(),
            ));
        }
        samples.push(ClaimSample {
            claim: Triple::new(head, relation, tail),
            label,
            true_tail,
        });
    }
    Ok(samples)
}
