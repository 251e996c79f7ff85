//! The path-walking environment: states over a claim and a growing hop
//! list, fixed-size state encoding, transitions with embedding-guided
//! entity selection, and the terminal 0/1 reward.

use crate::embedding::ComplexEmbedding;
use crate::error::{Error, Result};
use crate::kg::{ClaimSample, EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Clone, Copy)]
pub struct EnvConfig {
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { max_steps: 3 }
    }
}

/// Walk state: the claim under scrutiny, hops taken so far, the walker's
/// current entity, and the step counter (always `hops.len()`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathState {
    pub claim: Triple,
    pub hops: Vec<(RelationId, EntityId)>,
    pub current: EntityId,
    pub step: usize,
}

impl PathState {
    /// Extend by one hop. Callers guarantee legality.
    pub(crate) fn advanced(&self, relation: RelationId, destination: EntityId) -> PathState {
        let mut hops = self.hops.clone();
        hops.push((relation, destination));
        PathState {
            claim: self.claim,
            hops,
            current: destination,
            step: self.step + 1,
        }
    }

    /// A single path judges the claim true iff it ends on the claimed tail.
    pub fn confirms_claim(&self) -> bool {
        self.current == self.claim.tail
    }
}

/// Read-only bundle of graph, embeddings, and episode length shared by the
/// policy, the beam search, and the evaluators.
pub struct Env<'a> {
    pub graph: &'a KnowledgeGraph,
    pub emb: &'a ComplexEmbedding,
    pub max_steps: usize,
}

impl<'a> Env<'a> {
    pub fn new(graph: &'a KnowledgeGraph, emb: &'a ComplexEmbedding, config: EnvConfig) -> Self {
        assert!(config.max_steps >= 1, "walks need at least one step");
        Env {
            graph,
            emb,
            max_steps: config.max_steps,
        }
    }

    /// Length of the encoded state: claim slots plus (relation, entity)
    /// slots per step, each slot a [re || im] pair of vectors.
    pub fn state_dim(&self) -> usize {
        (3 + 2 * self.max_steps) * 2 * self.emb.dim()
    }

    pub fn initial_state(&self, claim: Triple) -> Result<PathState> {
        self.graph.validate_triple(&claim)?;
        Ok(PathState {
            claim,
            hops: Vec::new(),
            current: claim.head,
            step: 0,
        })
    }

    /// Fixed-size encoding: claim head, claim relation, claim tail, then
    /// one (relation, entity) embedding pair per executed hop; slots beyond
    /// the current step are exactly zero. A self-loop hop contributes a
    /// zero relation slot (its embedding row is zero by construction) and
    /// the repeated entity.
    pub fn encode_state(&self, state: &PathState) -> Vec<f64> {
        let dim = self.emb.dim();
        let slot = 2 * dim;
        let mut values = vec![0.0; self.state_dim()];
        let write_entity = |values: &mut [f64], index: usize, e: EntityId| {
            let base = index * slot;
            for k in 0..dim {
                values[base + k] = self.emb.entity_re[[e.idx(), k]];
                values[base + dim + k] = self.emb.entity_im[[e.idx(), k]];
            }
        };
        let write_relation = |values: &mut [f64], index: usize, r: RelationId| {
            let base = index * slot;
            for k in 0..dim {
                values[base + k] = self.emb.relation_re[[r.idx(), k]];
                values[base + dim + k] = self.emb.relation_im[[r.idx(), k]];
            }
        };
        write_entity(&mut values, 0, state.claim.head);
        write_relation(&mut values, 1, state.claim.relation);
        write_entity(&mut values, 2, state.claim.tail);
        for (i, &(relation, entity)) in state.hops.iter().enumerate() {
            write_relation(&mut values, 3 + 2 * i, relation);
            write_entity(&mut values, 4 + 2 * i, entity);
        }
        values
    }

    /// Apply an action. For a non-self-loop relation the destination is the
    /// neighbor that scores highest as the claim's tail (ties to the lowest
    /// entity id).
    pub fn transition(&self, state: &PathState, action: RelationId) -> Result<PathState> {
        if state.step >= self.max_steps {
            return Err(Error::Contract(format!(
                "transition after terminal step {}",
                state.step
            )));
        }
        if action == self.graph.self_loop() {
            return Ok(state.advanced(action, state.current));
        }
        let candidates = self.graph.neighbors(state.current, action);
        if candidates.is_empty() {
            return Err(Error::Contract(format!(
                "relation {:?} is not a valid action at entity {:?}",
                self.graph.relation_label(action),
                self.graph.entity_label(state.current),
            )));
        }
        let destination = self.select_destination(&state.claim, candidates);
        Ok(state.advanced(action, destination))
    }

    /// Argmax of the claim-scoring heuristic over candidate destinations.
    pub fn select_destination(&self, claim: &Triple, candidates: &[EntityId]) -> EntityId {
        let mut best = candidates[0];
        let mut best_score = self.emb.score(claim.head, claim.relation, best);
        for &c in &candidates[1..] {
            let s = self.emb.score(claim.head, claim.relation, c);
            if s > best_score || (s == best_score && c < best) {
                best = c;
                best_score = s;
            }
        }
        best
    }

    /// Terminal reward: 1 if the walk ended on the true target, else 0.
    pub fn reward(&self, final_state: &PathState, sample: &ClaimSample) -> Result<f64> {
        if final_state.step != self.max_steps {
            return Err(Error::Contract(format!(
                "reward requested at step {} of {}",
                final_state.step, self.max_steps
            )));
        }
        Ok(if final_state.current == sample.true_tail {
            1.0
        } else {
            0.0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ComplexEmbedding;
    use crate::kg::KnowledgeGraph;

    fn fixture() -> (KnowledgeGraph, ComplexEmbedding) {
        let g = KnowledgeGraph::from_tsv_str("a\tr\tb\na\tr\tc\na\tr\td\nb\ts\tc\n").unwrap();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 20, 42);
        (g, emb)
    }

    fn claim(g: &KnowledgeGraph, h: &str, r: &str, t: &str) -> Triple {
        Triple::new(
            g.entity_id(h).unwrap(),
            g.relation_id(r).unwrap(),
            g.entity_id(t).unwrap(),
        )
    }

    #[test]
    fn initial_state_starts_at_claim_head() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let c = claim(&g, "a", "r", "b");
        let s = env.initial_state(c).unwrap();
        assert_eq!(s.current, c.head);
        assert_eq!(s.step, 0);
        assert!(s.hops.is_empty());
    }

    #[test]
    fn encode_pads_beyond_claim_slots_with_exact_zeros() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig { max_steps: 3 });
        assert_eq!(env.state_dim(), (3 + 6) * 40);
        let s = env.initial_state(claim(&g, "a", "r", "b")).unwrap();
        let sv = env.encode_state(&s);
        assert_eq!(sv.len(), 360);
        assert!(sv[120..].iter().all(|&v| v == 0.0));
        // The three claim slots are populated (random init, extremely
        // unlikely to be all-zero).
        assert!(sv[..120].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn encode_places_hop_embeddings_in_slots_three_and_four() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let s0 = env.initial_state(claim(&g, "b", "s", "c")).unwrap();
        let s1 = env.transition(&s0, g.relation_id("s").unwrap()).unwrap();
        let sv = env.encode_state(&s1);
        let dim = emb.dim();
        let r = g.relation_id("s").unwrap().idx();
        let c = g.entity_id("c").unwrap().idx();
        for k in 0..dim {
            assert_eq!(sv[3 * 2 * dim + k], emb.relation_re[[r, k]]);
            assert_eq!(sv[3 * 2 * dim + dim + k], emb.relation_im[[r, k]]);
            assert_eq!(sv[4 * 2 * dim + k], emb.entity_re[[c, k]]);
            assert_eq!(sv[4 * 2 * dim + dim + k], emb.entity_im[[c, k]]);
        }
    }

    #[test]
    fn self_loop_hop_encodes_zero_relation_slot() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let s0 = env.initial_state(claim(&g, "a", "r", "b")).unwrap();
        let s1 = env.transition(&s0, g.self_loop()).unwrap();
        assert_eq!(s1.current, s0.current);
        assert_eq!(s1.step, 1);
        let sv = env.encode_state(&s1);
        let dim = emb.dim();
        assert!(sv[3 * 2 * dim..4 * 2 * dim].iter().all(|&v| v == 0.0));
        let a = g.entity_id("a").unwrap().idx();
        for k in 0..dim {
            assert_eq!(sv[4 * 2 * dim + k], emb.entity_re[[a, k]]);
        }
    }

    #[test]
    fn claims_with_same_head_encode_differently() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let s1 = env.initial_state(claim(&g, "a", "r", "b")).unwrap();
        let s2 = env.initial_state(claim(&g, "a", "r", "c")).unwrap();
        assert_eq!(s1.current, s2.current);
        assert_ne!(env.encode_state(&s1), env.encode_state(&s2));
    }

    #[test]
    fn singleton_neighbor_is_chosen_regardless_of_score() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let s0 = env.initial_state(claim(&g, "b", "s", "c")).unwrap();
        let s1 = env.transition(&s0, g.relation_id("s").unwrap()).unwrap();
        assert_eq!(s1.current, g.entity_id("c").unwrap());
    }

    #[test]
    fn transition_picks_argmax_of_exhaustive_scores() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let c = claim(&g, "a", "r", "b");
        let s0 = env.initial_state(c).unwrap();
        let r = g.relation_id("r").unwrap();
        let s1 = env.transition(&s0, r).unwrap();
        // Brute-force max over the three neighbors.
        let best = g
            .neighbors(c.head, r)
            .iter()
            .copied()
            .max_by(|&x, &y| {
                let sx = emb.score(c.head, c.relation, x);
                let sy = emb.score(c.head, c.relation, y);
                sx.partial_cmp(&sy).unwrap().then(y.cmp(&x))
            })
            .unwrap();
        assert_eq!(s1.current, best);
    }

    #[test]
    fn illegal_action_and_exhausted_steps_are_contract_errors() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig { max_steps: 1 });
        let s0 = env.initial_state(claim(&g, "a", "r", "b")).unwrap();
        let s_rel = g.relation_id("s").unwrap();
        assert!(matches!(
            env.transition(&s0, s_rel),
            Err(Error::Contract(_))
        ));
        let s1 = env.transition(&s0, g.self_loop()).unwrap();
        assert!(matches!(
            env.transition(&s1, g.self_loop()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reward_is_bernoulli_on_true_target() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig { max_steps: 2 });
        let c = claim(&g, "a", "r", "b");
        let sample = ClaimSample {
            claim: claim(&g, "a", "r", "c"),
            label: false,
            true_tail: g.entity_id("b").unwrap(),
        };
        let s0 = env.initial_state(c).unwrap();
        let s1 = env.transition(&s0, g.self_loop()).unwrap();
        assert!(matches!(env.reward(&s1, &sample), Err(Error::Contract(_))));
        let s2 = env.transition(&s1, g.self_loop()).unwrap();
        // Stationary walk from a != true tail b.
        assert_eq!(env.reward(&s2, &sample).unwrap(), 0.0);

        // A walk that ends on the true tail earns 1 even though the claimed
        // tail is c.
        let r = g.relation_id("r").unwrap();
        let mut state = env.initial_state(sample.claim).unwrap();
        state = state.advanced(r, g.entity_id("b").unwrap());
        state = state.advanced(g.self_loop(), state.current);
        assert_eq!(env.reward(&state, &sample).unwrap(), 1.0);
        // Ending on the claimed-but-false tail earns 0.
        let mut wrong = env.initial_state(sample.claim).unwrap();
        wrong = wrong.advanced(r, g.entity_id("c").unwrap());
        wrong = wrong.advanced(g.self_loop(), wrong.current);
        assert_eq!(env.reward(&wrong, &sample).unwrap(), 0.0);
    }

    #[test]
    fn path_verdict_is_tail_equality() {
        let (g, emb) = fixture();
        let env = Env::new(&g, &emb, EnvConfig::default());
        let c = claim(&g, "a", "r", "b");
        let mut state = env.initial_state(c).unwrap();
        assert_eq!(state.confirms_claim(), state.current == c.tail);
        let r = g.relation_id("r").unwrap();
        for &dest in g.neighbors(c.head, r) {
            let next = state.advanced(r, dest);
            assert_eq!(next.confirms_claim(), next.current == c.tail);
        }
        state = state.advanced(g.self_loop(), state.current);
        assert_eq!(state.confirms_claim(), state.current == c.tail);
    }
}
