//! Two-layer softmax policy over the relation action space, trained with
//! REINFORCE on terminal 0/1 rewards.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::ComplexEmbedding;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::kg::{ClaimSample, KnowledgeGraph, RelationId, TaskDataset};
use crate::model_io::{ModelReader, ModelWriter};
use crate::optim::{snap_to_f32, AdamHyper, AdamState};

pub const POLICY_MAGIC: &[u8; 4] = b"POLN";

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyOptimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with conventional betas; the literal training setup.
    Adam,
}

#[derive(Debug, Clone)]
pub struct PolicyTrainConfig {
    pub episodes: u64,
    pub learning_rate: f64,
    pub top_k_sampling: usize,
    pub seed: u64,
    pub optimizer: PolicyOptimizer,
    /// Emit a progress record every this many episodes.
    pub progress_every: u64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        PolicyTrainConfig {
            episodes: 100_000,
            learning_rate: 0.001,
            top_k_sampling: 3,
            seed: 0,
            optimizer: PolicyOptimizer::Adam,
            progress_every: 1000,
        }
    }
}

/// One recorded step: the encoded state, the legal actions at that state,
/// the chosen action, and its masked probability.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub state: Vec<f64>,
    pub legal: Vec<usize>,
    pub action: usize,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ProgressRecord {
    pub episode: u64,
    pub avg_reward: f64,
}

impl PolicyParams {
    pub fn state_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn action_count(&self) -> usize {
        self.w2.nrows()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = ModelWriter::create(path, POLICY_MAGIC)?;
        w.write_dims(
            path,
            &[
                self.state_dim() as u64,
                self.hidden() as u64,
                self.action_count() as u64,
            ],
        )?;
        w.write_matrix(path, self.w1.iter().copied())?;
        w.write_matrix(path, self.b1.iter().copied())?;
        w.write_matrix(path, self.w2.iter().copied())?;
        w.write_matrix(path, self.b2.iter().copied())?;
        w.finish(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = ModelReader::open(path, POLICY_MAGIC, "policy")?;
        let state_dim = r.read_dim(path)? as usize;
        let hidden = r.read_dim(path)? as usize;
        let action_count = r.read_dim(path)? as usize;
        let w1 = Array2::from_shape_vec(
            (hidden, state_dim),
            r.read_matrix(path, hidden * state_dim, "w1")?,
        )
        .expect("shape matches length");
        let b1 = Array1::from_vec(r.read_matrix(path, hidden, "b1")?);
        let w2 = Array2::from_shape_vec(
            (action_count, hidden),
            r.read_matrix(path, action_count * hidden, "w2")?,
        )
        .expect("shape matches length");
        let b2 = Array1::from_vec(r.read_matrix(path, action_count, "b2")?);
        r.expect_eof(path)?;
        Ok(PolicyParams { w1, b1, w2, b2 })
    }

    pub fn ensure_shape(&self, state_dim: usize, action_count: usize) -> Result<()> {
        if self.state_dim() != state_dim || self.action_count() != action_count {
            return Err(Error::InvalidInput(format!(
                "policy shape (state {}, actions {}) does not match environment (state {}, actions {})",
                self.state_dim(),
                self.action_count(),
                state_dim,
                action_count
            )));
        }
        Ok(())
    }

    fn snap(&mut self) {
        snap_to_f32(self.w1.as_slice_mut().unwrap());
        snap_to_f32(self.b1.as_slice_mut().unwrap());
        snap_to_f32(self.w2.as_slice_mut().unwrap());
        snap_to_f32(self.b2.as_slice_mut().unwrap());
    }
}

/// Seeded Xavier-uniform weights (bound sqrt(6 / (fan_in + fan_out))),
/// zero biases.
pub fn init_policy(
    state_dim: usize,
    hidden: usize,
    action_count: usize,
    seed: u64,
) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xavier = |rows: usize, cols: usize| -> Array2<f64> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut m = Array2::zeros((rows, cols));
        for v in m.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        m
    };
    let mut params = PolicyParams {
        w1: xavier(hidden, state_dim),
        b1: Array1::zeros(hidden),
        w2: xavier(action_count, hidden),
        b2: Array1::zeros(action_count),
    };
    params.snap();
    params
}

/// softmax(w2 relu(w1 x + b1) + b2) with max subtraction.
pub fn policy_forward(params: &PolicyParams, state: &[f64]) -> Result<Vec<f64>> {
    let (hidden, logits) = forward_parts(params, state);
    drop(hidden);
    let probs = softmax(&logits);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite(
            "policy forward produced non-finite probabilities".to_string(),
        ));
    }
    Ok(probs)
}

fn forward_parts(params: &PolicyParams, state: &[f64]) -> (Array1<f64>, Array1<f64>) {
    let x = ndarray::ArrayView1::from(state);
    let mut hidden = params.w1.dot(&x) + &params.b1;
    hidden.mapv_inplace(|v| v.max(0.0));
    let logits = params.w2.dot(&hidden) + &params.b2;
    (hidden, logits)
}

fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Zero the illegal entries and rescale the legal ones to sum to one. If
/// every legal probability underflowed to zero, fall back to uniform over
/// the legal set.
pub fn mask_renormalize(probs: &[f64], legal: &[usize]) -> Vec<f64> {
    assert!(!legal.is_empty(), "legal action set must be nonempty");
    let mut masked = vec![0.0; probs.len()];
    let total: f64 = legal.iter().map(|&a| probs[a]).sum();
    if total > 0.0 && total.is_finite() {
        for &a in legal {
            masked[a] = probs[a] / total;
        }
    } else {
        let uniform = 1.0 / legal.len() as f64;
        for &a in legal {
            masked[a] = uniform;
        }
    }
    masked
}

/// Sample among the k highest-probability actions (ties to the lower
/// index), after renormalizing to the reduced set.
pub fn sample_top_k(masked: &[f64], k: usize, rng: &mut impl Rng) -> usize {
    assert!(k >= 1);
    let mut positive: Vec<(usize, f64)> = masked
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p > 0.0)
        .collect();
    positive.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    positive.truncate(k);
    let total: f64 = positive.iter().map(|&(_, p)| p).sum();
    let draw = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &(action, p) in &positive {
        acc += p;
        if draw < acc {
            return action;
        }
    }
    positive.last().expect("top-k set is nonempty").0
}

/// Walk one episode: encode, forward, mask, sample, transition, repeat for
/// `max_steps`, then collect the terminal reward.
pub fn run_episode(
    sample: &ClaimSample,
    params: &PolicyParams,
    env: &Env,
    top_k: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut state = env.initial_state(sample.claim)?;
    let mut steps = Vec::with_capacity(env.max_steps);
    for _ in 0..env.max_steps {
        let encoded = env.encode_state(&state);
        let probs = policy_forward(params, &encoded)?;
        let legal: Vec<usize> = env
            .graph
            .valid_actions(state.current)
            .iter()
            .map(|r| r.idx())
            .collect();
        let masked = mask_renormalize(&probs, &legal);
        let action = sample_top_k(&masked, top_k, rng);
        steps.push(TrajectoryStep {
            state: encoded,
            legal,
            action,
            prob: masked[action],
        });
        state = env.transition(&state, RelationId(action as u32))?;
    }
    let reward = env.reward(&state, sample)?;
    Ok(Trajectory { steps, reward })
}

/// Gradient of -reward * sum_t log(masked prob of chosen action), computed
/// analytically through the masked softmax and both layers.
pub fn policy_gradient(params: &PolicyParams, trajectory: &Trajectory) -> Result<PolicyGradients> {
    let mut grads = PolicyGradients {
        w1: Array2::zeros(params.w1.raw_dim()),
        b1: Array1::zeros(params.b1.raw_dim()),
        w2: Array2::zeros(params.w2.raw_dim()),
        b2: Array1::zeros(params.b2.raw_dim()),
    };
    if trajectory.reward == 0.0 {
        return Ok(grads);
    }
    for step in &trajectory.steps {
        let (hidden, logits) = forward_parts(params, &step.state);
        let probs = softmax(&logits);
        // If every legal probability underflowed, the masked distribution
        // is the uniform fallback: locally constant, zero gradient.
        if step.legal.iter().map(|&a| probs[a]).sum::<f64>() <= 0.0 {
            continue;
        }
        let masked = mask_renormalize(&probs, &step.legal);
        // d(-R log masked_a)/d logit_j = -R (1[j == a] - masked_j)
        let mut glogits = Array1::from_vec(masked);
        glogits.mapv_inplace(|m| trajectory.reward * m);
        glogits[step.action] -= trajectory.reward;
        grads.b2 += &glogits;
        for (mut row, &g) in grads.w2.rows_mut().into_iter().zip(glogits.iter()) {
            row.scaled_add(g, &hidden);
        }
        let mut ghidden = params.w2.t().dot(&glogits);
        for (gh, &h) in ghidden.iter_mut().zip(hidden.iter()) {
            if h <= 0.0 {
                *gh = 0.0;
            }
        }
        grads.b1 += &ghidden;
        let x = ndarray::ArrayView1::from(step.state.as_slice());
        for (mut row, &g) in grads.w1.rows_mut().into_iter().zip(ghidden.iter()) {
            row.scaled_add(g, &x);
        }
    }
    for m in [
        grads.w1.as_slice().unwrap(),
        grads.b1.as_slice().unwrap(),
        grads.w2.as_slice().unwrap(),
        grads.b2.as_slice().unwrap(),
    ] {
        if m.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("policy gradient".to_string()));
        }
    }
    Ok(grads)
}

/// One plain gradient-descent step on the episode loss. Zero-reward
/// trajectories leave the parameters untouched.
pub fn reinforce_update(
    params: &mut PolicyParams,
    trajectory: &Trajectory,
    learning_rate: f64,
) -> Result<()> {
    if trajectory.reward == 0.0 {
        return Ok(());
    }
    let grads = policy_gradient(params, trajectory)?;
    params.w1.scaled_add(-learning_rate, &grads.w1);
    params.b1.scaled_add(-learning_rate, &grads.b1);
    params.w2.scaled_add(-learning_rate, &grads.w2);
    params.b2.scaled_add(-learning_rate, &grads.b2);
    params.snap();
    Ok(())
}

struct PolicyAdam {
    w1: AdamState,
    b1: AdamState,
    w2: AdamState,
    b2: AdamState,
    hyper: AdamHyper,
}

impl PolicyAdam {
    fn new(params: &PolicyParams, learning_rate: f64) -> Self {
        PolicyAdam {
            w1: AdamState::new(params.w1.len()),
            b1: AdamState::new(params.b1.len()),
            w2: AdamState::new(params.w2.len()),
            b2: AdamState::new(params.b2.len()),
            hyper: AdamHyper::with_learning_rate(learning_rate),
        }
    }

    fn step(&mut self, params: &mut PolicyParams, grads: &PolicyGradients) {
        for s in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            s.advance();
        }
        self.w1.step(
            &self.hyper,
            params.w1.as_slice_mut().unwrap(),
            grads.w1.as_slice().unwrap(),
        );
        self.b1.step(
            &self.hyper,
            params.b1.as_slice_mut().unwrap(),
            grads.b1.as_slice().unwrap(),
        );
        self.w2.step(
            &self.hyper,
            params.w2.as_slice_mut().unwrap(),
            grads.w2.as_slice().unwrap(),
        );
        self.b2.step(
            &self.hyper,
            params.b2.as_slice_mut().unwrap(),
            grads.b2.as_slice().unwrap(),
        );
        params.snap();
    }
}

/// Run `config.episodes` training episodes over uniformly drawn train
/// claims (positives and negatives alike), updating after every episode.
/// Returns the trained parameters and the periodic progress records.
pub fn train_policy(
    task: &TaskDataset,
    mut params: PolicyParams,
    graph: &KnowledgeGraph,
    emb: &ComplexEmbedding,
    env_max_steps: usize,
    config: &PolicyTrainConfig,
) -> Result<(PolicyParams, Vec<ProgressRecord>)> {
    if task.train.is_empty() {
        return Err(Error::InvalidInput(
            "task has no training samples".to_string(),
        ));
    }
    if config.top_k_sampling == 0 || config.progress_every == 0 {
        return Err(Error::InvalidInput(
            "top_k_sampling and progress_every must be positive".to_string(),
        ));
    }
    let env = Env {
        graph,
        emb,
        max_steps: env_max_steps,
    };
    params.ensure_shape(env.state_dim(), graph.relation_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = match config.optimizer {
        PolicyOptimizer::Adam => Some(PolicyAdam::new(&params, config.learning_rate)),
        PolicyOptimizer::Sgd => None,
    };
    let mut records = Vec::new();
    let mut window_reward = 0.0;
    for episode in 0..config.episodes {
        let at_episode = |e: Error| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (episode {episode})")),
            other => other,
        };
        let sample = &task.train[rng.gen_range(0..task.train.len())];
        let trajectory = run_episode(sample, &params, &env, config.top_k_sampling, &mut rng)
            .map_err(at_episode)?;
        window_reward += trajectory.reward;
        match &mut adam {
            Some(adam) => {
                let grads = policy_gradient(&params, &trajectory).map_err(at_episode)?;
                adam.step(&mut params, &grads);
            }
            None => reinforce_update(&mut params, &trajectory, config.learning_rate)
                .map_err(at_episode)?,
        }
        if (episode + 1) % config.progress_every == 0 {
            let record = ProgressRecord {
                episode: episode + 1,
                avg_reward: window_reward / config.progress_every as f64,
            };
            log::info!(
                "policy episode {}: avg reward {:.4}",
                record.episode,
                record.avg_reward
            );
            records.push(record);
            window_reward = 0.0;
        }
    }
    Ok((params, records))
}

/// Append `episode<TAB>avg_reward` lines to a progress log.
pub fn write_progress(path: impl AsRef<Path>, records: &[ProgressRecord]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(file, "{}\t{}", r.episode, r.avg_reward).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::kg::{extract_task, generate_negatives, KnowledgeGraph, Triple};

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let p = init_policy(10, 128, 5, 0);
        let bound1 = (6.0 / (10 + 128) as f64).sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= bound1));
        let bound2 = (6.0 / (128 + 5) as f64).sqrt();
        assert!(p.w2.iter().all(|v| v.abs() <= bound2));
        assert!(p.b1.iter().all(|&v| v == 0.0));
        assert!(p.b2.iter().all(|&v| v == 0.0));
        assert_eq!(p, init_policy(10, 128, 5, 0));
        assert_ne!(p, init_policy(10, 128, 5, 1));
    }

    #[test]
    fn forward_is_a_probability_distribution() {
        let p = init_policy(6, 4, 5, 2);
        let state: Vec<f64> = (0..6).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let probs = policy_forward(&p, &state).unwrap();
        assert_eq!(probs.len(), 5);
        assert!(probs.iter().all(|&v| v > 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_parameters_give_uniform_distribution() {
        let p = PolicyParams {
            w1: Array2::zeros((4, 6)),
            b1: Array1::zeros(4),
            w2: Array2::zeros((5, 4)),
            b2: Array1::zeros(5),
        };
        let probs = policy_forward(&p, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]).unwrap();
        for v in probs {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    /// Naive scalar-loop forward pass, independent of ndarray.
    #[allow(clippy::needless_range_loop)]
    fn forward_oracle(p: &PolicyParams, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = (0..p.hidden())
            .map(|i| {
                let mut acc = p.b1[i];
                for j in 0..p.state_dim() {
                    acc += p.w1[[i, j]] * x[j];
                }
                acc.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..p.action_count())
            .map(|i| {
                let mut acc = p.b2[i];
                for j in 0..p.hidden() {
                    acc += p.w2[[i, j]] * hidden[j];
                }
                acc
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let p = init_policy(7, 5, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = policy_forward(&p, &x).unwrap();
            let want = forward_oracle(&p, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn masking_rescales_legal_entries() {
        let masked = mask_renormalize(&[0.25, 0.25, 0.25, 0.25], &[0, 2]);
        assert_eq!(masked, vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn masking_with_all_legal_is_identity() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let masked = mask_renormalize(&probs, &[0, 1, 2, 3]);
        for (m, p) in masked.iter().zip(&probs) {
            assert!((m - p).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_falls_back_to_uniform_on_underflow() {
        // Exact zeros on the legal set: fall back.
        let masked = mask_renormalize(&[0.0, 0.5, 0.0, 0.5], &[0, 2]);
        assert_eq!(masked, vec![0.5, 0.0, 0.5, 0.0]);
        // Denormal-tiny masses renormalize to the same uniform result.
        let masked = mask_renormalize(&[1e-300, 0.5, 1e-300, 0.5], &[0, 2]);
        assert!((masked[0] - 0.5).abs() < 1e-12);
        assert!((masked[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn top_one_is_greedy_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_top_k(&[0.1, 0.6, 0.3], 1, &mut rng), 1);
        }
    }

    #[test]
    fn top_k_ties_break_to_lower_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Two entries tie at 0.4; k = 1 must pick index 1, not 3.
        for _ in 0..20 {
            assert_eq!(sample_top_k(&[0.2, 0.4, 0.0, 0.4], 1, &mut rng), 1);
        }
    }

    #[test]
    fn top_k_frequencies_match_renormalized_distribution() {
        let masked = [0.7, 0.2, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u32; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_top_k(&masked, 3, &mut rng)] += 1;
        }
        for (count, want) in counts.iter().zip(&masked) {
            let freq = *count as f64 / draws as f64;
            assert!((freq - want).abs() < 0.01, "{freq} vs {want}");
        }
        // k = 2 drops the last action and renormalizes to 7/9, 2/9.
        let mut counts = [0u32; 3];
        for _ in 0..draws {
            counts[sample_top_k(&masked, 2, &mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        assert!((counts[0] as f64 / draws as f64 - 7.0 / 9.0).abs() < 0.01);
    }

    fn forced_self_loop_fixture() -> (KnowledgeGraph, ComplexEmbedding) {
        // Claims start at x, which has no outgoing edges after pruning q.
        let g =
            KnowledgeGraph::from_tsv_str("x\tq\ty\na\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\te\ne\tr\ta\n")
                .unwrap();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 1);
        (g, emb)
    }

    #[test]
    fn forced_path_is_three_self_loops() {
        let (g, emb) = forced_self_loop_fixture();
        let q = g.relation_id("q").unwrap();
        let pruned = g.pruned(&[q, g.inverse_of(q)]);
        let env = Env::new(&pruned, &emb, EnvConfig::default());
        let params = init_policy(env.state_dim(), 8, pruned.relation_count(), 0);
        let x = g.entity_id("x").unwrap();
        let y = g.entity_id("y").unwrap();
        let sample = ClaimSample {
            claim: Triple::new(x, q, y),
            label: true,
            true_tail: y,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = run_episode(&sample, &params, &env, 3, &mut rng).unwrap();
        assert_eq!(traj.steps.len(), 3);
        for step in &traj.steps {
            assert_eq!(step.action, pruned.self_loop().idx());
        }
        // Head x != true tail y, so the stationary walk earns 0.
        assert_eq!(traj.reward, 0.0);

        // Same-seed rerun reproduces the trajectory exactly.
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let traj2 = run_episode(&sample, &params, &env, 3, &mut rng2).unwrap();
        assert_eq!(traj.reward, traj2.reward);
        for (a, b) in traj.steps.iter().zip(&traj2.steps) {
            assert_eq!(a.action, b.action);
            assert_eq!(a.prob, b.prob);
        }
    }

    #[test]
    fn zero_reward_update_leaves_parameters_bitwise_unchanged() {
        let params = init_policy(4, 3, 2, 5);
        let mut updated = params.clone();
        let trajectory = Trajectory {
            steps: vec![TrajectoryStep {
                state: vec![0.1, 0.2, 0.3, 0.4],
                legal: vec![0, 1],
                action: 0,
                prob: 0.5,
            }],
            reward: 0.0,
        };
        reinforce_update(&mut updated, &trajectory, 0.001).unwrap();
        assert_eq!(params, updated);
    }

    fn episode_loss(params: &PolicyParams, trajectory: &Trajectory) -> f64 {
        let mut loss = 0.0;
        for step in &trajectory.steps {
            let probs = policy_forward(params, &step.state).unwrap();
            let masked = mask_renormalize(&probs, &step.legal);
            loss -= trajectory.reward * masked[step.action].ln();
        }
        loss
    }

    pub(crate) fn finite_difference_policy_grad(
        params: &PolicyParams,
        trajectory: &Trajectory,
        h: f64,
    ) -> PolicyGradients {
        let mut probe = params.clone();
        let mut out = PolicyGradients {
            w1: Array2::zeros(params.w1.raw_dim()),
            b1: Array1::zeros(params.b1.raw_dim()),
            w2: Array2::zeros(params.w2.raw_dim()),
            b2: Array1::zeros(params.b2.raw_dim()),
        };
        macro_rules! diff {
            ($field:ident) => {
                for i in 0..params.$field.len() {
                    let original = probe.$field.as_slice().unwrap()[i];
                    probe.$field.as_slice_mut().unwrap()[i] = original + h;
                    let up = episode_loss(&probe, trajectory);
                    probe.$field.as_slice_mut().unwrap()[i] = original - h;
                    let down = episode_loss(&probe, trajectory);
                    probe.$field.as_slice_mut().unwrap()[i] = original;
                    out.$field.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * h);
                }
            };
        }
        diff!(w1);
        diff!(b1);
        diff!(w2);
        diff!(b2);
        out
    }

    pub(crate) fn assert_policy_grad_close(analytic: &PolicyGradients, fd: &PolicyGradients) {
        for (a, n) in [(&analytic.w1, &fd.w1), (&analytic.w2, &fd.w2)] {
            for (&av, &nv) in a.iter().zip(n.iter()) {
                if av.abs() < 1e-8 && nv.abs() < 1e-8 {
                    continue;
                }
                let rel = (av - nv).abs() / av.abs().max(nv.abs());
                assert!(rel < 1e-4, "gradient mismatch: analytic {av}, fd {nv}");
            }
        }
        for (a, n) in [(&analytic.b1, &fd.b1), (&analytic.b2, &fd.b2)] {
            for (&av, &nv) in a.iter().zip(n.iter()) {
                if av.abs() < 1e-8 && nv.abs() < 1e-8 {
                    continue;
                }
                let rel = (av - nv).abs() / av.abs().max(nv.abs());
                assert!(rel < 1e-4, "gradient mismatch: analytic {av}, fd {nv}");
            }
        }
    }

    pub(crate) fn random_trajectory(
        params: &PolicyParams,
        steps: usize,
        legal: Vec<usize>,
        seed: u64,
    ) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = (0..steps)
            .map(|_| {
                let state: Vec<f64> = (0..params.state_dim())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let probs = policy_forward(params, &state).unwrap();
                let masked = mask_renormalize(&probs, &legal);
                let action = sample_top_k(&masked, legal.len(), &mut rng);
                TrajectoryStep {
                    prob: masked[action],
                    state,
                    legal: legal.clone(),
                    action,
                }
            })
            .collect();
        Trajectory { steps, reward: 1.0 }
    }

    #[test]
    fn reinforce_gradient_matches_finite_differences() {
        let params = init_policy(4, 3, 2, 11);
        let trajectory = random_trajectory(&params, 3, vec![0, 1], 3);
        let analytic = policy_gradient(&params, &trajectory).unwrap();
        let fd = finite_difference_policy_grad(&params, &trajectory, 1e-5);
        assert_policy_grad_close(&analytic, &fd);
    }

    #[test]
    fn gradient_flows_through_masked_actions_only() {
        let params = init_policy(5, 4, 4, 13);
        // Restrict to a strict subset of actions; the mask must shape the
        // gradient (checked against finite differences of the same loss).
        let trajectory = random_trajectory(&params, 2, vec![1, 3], 4);
        let analytic = policy_gradient(&params, &trajectory).unwrap();
        let fd = finite_difference_policy_grad(&params, &trajectory, 1e-5);
        assert_policy_grad_close(&analytic, &fd);
    }

    #[test]
    fn positive_update_does_not_decrease_action_log_probability() {
        let params = init_policy(6, 4, 3, 17);
        let trajectory = random_trajectory(&params, 3, vec![0, 1, 2], 8);
        let before = episode_loss(&params, &trajectory);
        let mut updated = params.clone();
        reinforce_update(&mut updated, &trajectory, 1e-3).unwrap();
        let after = episode_loss(&updated, &trajectory);
        // Loss is -log prob of the taken actions; it must not increase.
        assert!(after <= before + 1e-12, "{after} > {before}");
    }

    fn small_task() -> (KnowledgeGraph, TaskDataset) {
        let text: String = (0..10)
            .map(|i| format!("h{i}\tq\tt{i}\nh{i}\tlink\tt{i}\n"))
            .collect();
        let g = KnowledgeGraph::from_tsv_str(&text).unwrap();
        let q = g.relation_id("q").unwrap();
        let task = extract_task(&g, q, 0.8, 0).unwrap();
        let task = generate_negatives(&task, &g, 3, 1).unwrap();
        (g, task)
    }

    #[test]
    fn zero_episodes_is_a_no_op() {
        let (g, task) = small_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 0);
        let env_steps = 3;
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: env_steps,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 0);
        let config = PolicyTrainConfig {
            episodes: 0,
            ..Default::default()
        };
        let (trained, records) = train_policy(
            &task,
            params.clone(),
            &task.pruned_graph,
            &emb,
            env_steps,
            &config,
        )
        .unwrap();
        assert_eq!(trained, params);
        assert!(records.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (g, task) = small_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 0);
        let env_steps = 3;
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: env_steps,
        };
        let run = |seed| {
            let params = init_policy(env.state_dim(), 8, g.relation_count(), 0);
            let config = PolicyTrainConfig {
                episodes: 300,
                seed,
                progress_every: 100,
                ..Default::default()
            };
            train_policy(&task, params, &task.pruned_graph, &emb, env_steps, &config)
                .unwrap()
                .0
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let params = init_policy(12, 6, 4, 23);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        params.save(&path).unwrap();
        assert_eq!(PolicyParams::load(&path).unwrap(), params);
    }

    #[test]
    fn load_rejects_corrupt_magic_and_wrong_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        std::fs::write(&path, b"JUNKxxxx").unwrap();
        assert!(matches!(
            PolicyParams::load(&path),
            Err(Error::ModelFormat { .. })
        ));
        let params = init_policy(12, 6, 4, 23);
        params.save(&path).unwrap();
        let loaded = PolicyParams::load(&path).unwrap();
        let err = loaded.ensure_shape(12, 9).unwrap_err();
        assert!(err.to_string().contains("actions 4"), "{err}");
    }

    #[test]
    fn sampled_actions_are_always_legal() {
        let (g, task) = small_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 2);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for sample in task.train.iter().take(20) {
            let traj = run_episode(sample, &params, &env, 3, &mut rng).unwrap();
            let mut at = sample.claim.head;
            for step in &traj.steps {
                let legal = env.graph.valid_actions(at);
                let action = RelationId(step.action as u32);
                assert!(legal.contains(&action));
                if action != env.graph.self_loop() {
                    at = env.select_destination(&sample.claim, env.graph.neighbors(at, action));
                }
            }
        }
    }
}
