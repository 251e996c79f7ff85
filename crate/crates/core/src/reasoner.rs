//! Test-time reasoning: beam search over (relation, entity) expansions
//! scored by policy probability plus an exponentiated embedding score,
//! weighted voting over path endpoints, verdicts, and path rendering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::env::{Env, PathState};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::policy::{mask_renormalize, policy_forward, PolicyParams};

/// Score of a single path extension at 1-indexed `step`:
/// the masked action probability plus the destination's claim score raised
/// to the step number (integer exponent, sign-preserving for odd steps).
pub fn beam_heuristic(prob: f64, score: f64, step: usize) -> f64 {
    prob + score.powi(step as i32)
}

/// A partial path kept in the beam, with the heuristic of each executed
/// step and their running sum used for ranking.
#[derive(Debug, Clone)]
pub struct BeamEntry {
    pub state: PathState,
    pub step_heuristics: Vec<f64>,
    pub cumulative: f64,
}

/// A completed path. `weight` is the heuristic of the final step and is
/// what the path contributes to the vote.
#[derive(Debug, Clone)]
pub struct EvidentialPath {
    pub start: EntityId,
    pub hops: Vec<(RelationId, EntityId)>,
    pub final_entity: EntityId,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub claim: Triple,
    pub winner: EntityId,
    pub vote_weights: BTreeMap<EntityId, f64>,
    pub label: bool,
    pub paths: Vec<EvidentialPath>,
}

/// Expand the beam for `max_steps` rounds and return at most `width`
/// completed paths ranked by cumulative heuristic (ties broken by hop
/// sequence). Duplicate hop sequences are merged.
pub fn beam_search(
    claim: Triple,
    params: &PolicyParams,
    env: &Env,
    width: usize,
) -> Result<Vec<EvidentialPath>> {
    if width < 1 {
        return Err(Error::InvalidInput(format!(
            "beam width must be >= 1, got {width}"
        )));
    }
    let graph = env.graph;
    let mut beam = vec![BeamEntry {
        state: env.initial_state(claim)?,
        step_heuristics: Vec::new(),
        cumulative: 0.0,
    }];
    for round in 1..=env.max_steps {
        let mut expansions: Vec<BeamEntry> = Vec::new();
        for entry in &beam {
            let encoded = env.encode_state(&entry.state);
            let probs = policy_forward(params, &encoded)?;
            let legal: Vec<usize> = graph
                .valid_actions(entry.state.current)
                .iter()
                .map(|r| r.idx())
                .collect();
            let masked = mask_renormalize(&probs, &legal);
            for &action in &legal {
                let relation = RelationId(action as u32);
                let destinations: &[EntityId] = if relation == graph.self_loop() {
                    std::slice::from_ref(&entry.state.current)
                } else {
                    graph.neighbors(entry.state.current, relation)
                };
                for &destination in destinations {
                    let score = env.emb.score(claim.head, claim.relation, destination);
                    let heuristic = beam_heuristic(masked[action], score, round);
                    let mut step_heuristics = entry.step_heuristics.clone();
                    step_heuristics.push(heuristic);
                    expansions.push(BeamEntry {
                        state: entry.state.advanced(relation, destination),
                        step_heuristics,
                        cumulative: entry.cumulative + heuristic,
                    });
                }
            }
        }
        expansions.sort_by(|a, b| {
            b.cumulative
                .total_cmp(&a.cumulative)
                .then_with(|| a.state.hops.cmp(&b.state.hops))
        });
        expansions.dedup_by(|a, b| a.state.hops == b.state.hops);
        expansions.truncate(width);
        beam = expansions;
    }
    Ok(beam
        .into_iter()
        .map(|entry| EvidentialPath {
            start: claim.head,
            final_entity: entry.state.current,
            weight: *entry
                .step_heuristics
                .last()
                .expect("max_steps >= 1 guarantees at least one step"),
            hops: entry.state.hops,
        })
        .collect())
}

/// Sum path weights per final entity; the winner is the heaviest entity,
/// ties going to the lowest id.
pub fn vote(paths: &[EvidentialPath]) -> (EntityId, BTreeMap<EntityId, f64>) {
    assert!(!paths.is_empty(), "vote requires at least one path");
    let mut weights: BTreeMap<EntityId, f64> = BTreeMap::new();
    for path in paths {
        *weights.entry(path.final_entity).or_insert(0.0) += path.weight;
    }
    let mut iter = weights.iter();
    let (&first, &first_w) = iter.next().expect("nonempty");
    let mut winner = first;
    let mut winner_weight = first_w;
    for (&entity, &weight) in iter {
        if weight > winner_weight {
            winner = entity;
            winner_weight = weight;
        }
    }
    (winner, weights)
}

/// Full verdict for one claim: search, vote, and compare the winner to the
/// claimed tail.
pub fn check_claim(
    claim: Triple,
    params: &PolicyParams,
    env: &Env,
    width: usize,
) -> Result<Verdict> {
    let paths = beam_search(claim, params, env, width)?;
    let (winner, vote_weights) = vote(&paths);
    Ok(Verdict {
        claim,
        winner,
        label: winner == claim.tail,
        vote_weights,
        paths,
    })
}

/// Render a path as arrow-joined hops. Self-loop hops are omitted; inverse
/// relations point backward with the suffix stripped; a path that never
/// leaves its start renders as `start → start`.
pub fn render_path(path: &EvidentialPath, graph: &KnowledgeGraph) -> String {
    let mut out = graph.entity_label(path.start).to_string();
    let mut moved = false;
    for &(relation, entity) in &path.hops {
        if relation == graph.self_loop() {
            continue;
        }
        moved = true;
        let label = graph.relation_base_label(relation);
        if graph.is_inverse(relation) {
            out.push_str(&format!(" ←{label}– {}", graph.entity_label(entity)));
        } else {
            out.push_str(&format!(" –{label}→ {}", graph.entity_label(entity)));
        }
    }
    if !moved {
        let start = graph.entity_label(path.start);
        return format!("{start} → {start}");
    }
    out
}

/// Line-delimited export record for one verdict.
#[derive(Debug, Serialize)]
pub struct VerdictRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub verdict: bool,
    pub winner: String,
    pub paths: Vec<PathRecord>,
}

#[derive(Debug, Serialize)]
pub struct PathRecord {
    pub rendered: String,
    pub final_entity: String,
    pub weight: f64,
}

pub fn verdict_record(verdict: &Verdict, graph: &KnowledgeGraph) -> VerdictRecord {
    VerdictRecord {
        head: graph.entity_label(verdict.claim.head).to_string(),
        relation: graph.relation_label(verdict.claim.relation).to_string(),
        tail: graph.entity_label(verdict.claim.tail).to_string(),
        verdict: verdict.label,
        winner: graph.entity_label(verdict.winner).to_string(),
        paths: verdict
            .paths
            .iter()
            .map(|p| PathRecord {
                rendered: render_path(p, graph),
                final_entity: graph.entity_label(p.final_entity).to_string(),
                weight: p.weight,
            })
            .collect(),
    }
}

/// Write one JSON record per line.
pub fn write_verdicts(path: impl AsRef<Path>, records: &[VerdictRecord]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::InvalidInput(format!("serialize verdict: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Exhaustive enumeration of every `max_steps`-hop path from the claim
/// head, scored by the same heuristic, ranked like the beam. Used as a
/// test oracle: if `width` is at least the number of distinct hop
/// sequences, `beam_search` must return exactly this list.
pub fn enumerate_paths(
    claim: Triple,
    params: &PolicyParams,
    env: &Env,
) -> Result<Vec<EvidentialPath>> {
    fn recurse(
        env: &Env,
        params: &PolicyParams,
        claim: &Triple,
        state: &PathState,
        heuristics: &[f64],
        out: &mut Vec<(PathState, Vec<f64>)>,
    ) -> Result<()> {
        if state.step == env.max_steps {
            out.push((state.clone(), heuristics.to_vec()));
            return Ok(());
        }
        let encoded = env.encode_state(state);
        let probs = policy_forward(params, &encoded)?;
        let legal: Vec<usize> = env
            .graph
            .valid_actions(state.current)
            .iter()
            .map(|r| r.idx())
            .collect();
        let masked = mask_renormalize(&probs, &legal);
        for &action in &legal {
            let relation = RelationId(action as u32);
            let destinations: Vec<EntityId> = if relation == env.graph.self_loop() {
                vec![state.current]
            } else {
                env.graph.neighbors(state.current, relation).to_vec()
            };
            for destination in destinations {
                let score = env.emb.score(claim.head, claim.relation, destination);
                let heuristic = beam_heuristic(masked[action], score, state.step + 1);
                let mut hs = heuristics.to_vec();
                hs.push(heuristic);
                recurse(
                    env,
                    params,
                    claim,
                    &state.advanced(relation, destination),
                    &hs,
                    out,
                )?;
            }
        }
        Ok(())
    }

    // (hops, cumulative, final-step weight, final entity)
    type ScoredHops = (Vec<(RelationId, EntityId)>, f64, f64, EntityId);

    let mut complete = Vec::new();
    let initial = env.initial_state(claim)?;
    recurse(env, params, &claim, &initial, &[], &mut complete)?;
    let mut paths: Vec<ScoredHops> = complete
        .into_iter()
        .map(|(state, hs)| {
            let cumulative = hs.iter().sum::<f64>();
            (state.hops, cumulative, *hs.last().unwrap(), state.current)
        })
        .collect();
    paths.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    paths.dedup_by(|a, b| a.0 == b.0);
    Ok(paths
        .into_iter()
        .map(|(hops, _, weight, final_entity)| EvidentialPath {
            start: claim.head,
            hops,
            final_entity,
            weight,
        })
        .collect())
}
