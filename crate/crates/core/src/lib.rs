//! Explainable fact checking over knowledge graphs.
//!
//! A claim `(head, relation, tail)` is verified by walking evidential
//! paths from the head entity. A learned policy proposes relations, a
//! complex-valued embedding scores candidate destinations, beam search
//! collects multiple paths, and a weighted vote over path endpoints yields
//! a boolean verdict together with human-readable path explanations.

pub mod config;
pub mod embedding;
pub mod env;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model_io;
pub mod optim;
pub mod policy;
pub mod reasoner;

pub use config::RunConfig;
pub use embedding::{embed_grad, embed_loss, train_embeddings, ComplexEmbedding, EmbedTrainConfig};
pub use env::{Env, EnvConfig, PathState};
pub use error::{Error, Result};
pub use eval::{eval_hits, eval_voting, evaluate_task, run_experiment, EvalReport, TaskSpec};
pub use kg::{
    extract_task, generate_negatives, ClaimSample, EntityId, KnowledgeGraph, RelationId,
    TaskDataset, Triple,
};
pub use policy::{
    init_policy, mask_renormalize, policy_forward, reinforce_update, run_episode, sample_top_k,
    train_policy, PolicyParams, PolicyTrainConfig, Trajectory,
};
pub use reasoner::{
    beam_heuristic, beam_search, check_claim, render_path, vote, EvidentialPath, Verdict,
};
