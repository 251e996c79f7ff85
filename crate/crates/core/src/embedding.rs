//! Complex-valued knowledge-graph embeddings: trilinear scoring with a
//! conjugated tail, logistic loss with cubic-norm regularization, analytic
//! gradients, and Adam training.
//!
//! Parameters are f64 in memory but always snapped to the f32 grid, so the
//! on-disk f32 format round-trips bitwise. The self-loop relation (always
//! the last relation row) stays identically zero and is never trained.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::model_io::{ModelReader, ModelWriter};
use crate::optim::{snap_to_f32, AdamHyper, AdamState};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"CPLX";

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEmbedding {
    dim: usize,
    pub entity_re: Array2<f64>,
    pub entity_im: Array2<f64>,
    pub relation_re: Array2<f64>,
    pub relation_im: Array2<f64>,
}

/// Gradient (or Adam-moment) storage with the same shapes as the model.
#[derive(Debug, Clone)]
pub struct EmbeddingGradients {
    pub entity_re: Array2<f64>,
    pub entity_im: Array2<f64>,
    pub relation_re: Array2<f64>,
    pub relation_im: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbedTrainConfig {
    pub dim: usize,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l3_strength: f64,
    pub negatives_per_positive: u32,
    pub seed: u64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig {
            dim: 20,
            epochs: 1000,
            batch_size: 50,
            learning_rate: 1e-4,
            l3_strength: 1e-5,
            negatives_per_positive: 10,
            seed: 0,
        }
    }
}

impl ComplexEmbedding {
    pub fn zeros(entity_count: usize, relation_count: usize, dim: usize) -> Self {
        ComplexEmbedding {
            dim,
            entity_re: Array2::zeros((entity_count, dim)),
            entity_im: Array2::zeros((entity_count, dim)),
            relation_re: Array2::zeros((relation_count, dim)),
            relation_im: Array2::zeros((relation_count, dim)),
        }
    }

    /// Seeded uniform(-0.05, 0.05) initialization; the self-loop row stays
    /// zero.
    pub fn init(entity_count: usize, relation_count: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(entity_count, relation_count, dim, &mut rng)
    }

    fn init_with_rng(
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut emb = Self::zeros(entity_count, relation_count, dim);
        let self_loop = relation_count - 1;
        for matrix in [&mut emb.entity_re, &mut emb.entity_im] {
            for v in matrix.iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
        for matrix in [&mut emb.relation_re, &mut emb.relation_im] {
            for (row, mut values) in matrix.rows_mut().into_iter().enumerate() {
                if row == self_loop {
                    continue;
                }
                for v in values.iter_mut() {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
        }
        emb.snap();
        emb
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entity_re.nrows()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_re.nrows()
    }

    /// Row index of the self-loop relation (by construction the last one).
    pub fn self_loop_row(&self) -> usize {
        self.relation_count() - 1
    }

    /// Real part of the trilinear product with conjugated tail:
    /// sum_k r_re(h_re t_re + h_im t_im) + r_im(h_re t_im - h_im t_re).
    pub fn score(&self, head: EntityId, relation: RelationId, tail: EntityId) -> f64 {
        let h_re = self.entity_re.row(head.idx());
        let h_im = self.entity_im.row(head.idx());
        let r_re = self.relation_re.row(relation.idx());
        let r_im = self.relation_im.row(relation.idx());
        let t_re = self.entity_re.row(tail.idx());
        let t_im = self.entity_im.row(tail.idx());
        let mut total = 0.0;
        for k in 0..self.dim {
            total += r_re[k] * (h_re[k] * t_re[k] + h_im[k] * t_im[k])
                + r_im[k] * (h_re[k] * t_im[k] - h_im[k] * t_re[k]);
        }
        total
    }

    fn matrices(&self) -> [&Array2<f64>; 4] {
        [
            &self.entity_re,
            &self.entity_im,
            &self.relation_re,
            &self.relation_im,
        ]
    }

    fn snap(&mut self) {
        for m in [
            &mut self.entity_re,
            &mut self.entity_im,
            &mut self.relation_re,
            &mut self.relation_im,
        ] {
            snap_to_f32(m.as_slice_mut().expect("owned arrays are contiguous"));
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = ModelWriter::create(path, EMBEDDING_MAGIC)?;
        w.write_dims(
            path,
            &[
                self.entity_count() as u64,
                self.relation_count() as u64,
                self.dim as u64,
            ],
        )?;
        for m in self.matrices() {
            w.write_matrix(path, m.iter().copied())?;
        }
        w.finish(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = ModelReader::open(path, EMBEDDING_MAGIC, "ComplEx embedding")?;
        let entity_count = r.read_dim(path)? as usize;
        let relation_count = r.read_dim(path)? as usize;
        let dim = r.read_dim(path)? as usize;
        let mut load_matrix = |rows: usize, name: &str| -> Result<Array2<f64>> {
            let data = r.read_matrix(path, rows * dim, name)?;
            Ok(Array2::from_shape_vec((rows, dim), data).expect("shape matches length"))
        };
        let entity_re = load_matrix(entity_count, "entity_re")?;
        let entity_im = load_matrix(entity_count, "entity_im")?;
        let relation_re = load_matrix(relation_count, "relation_re")?;
        let relation_im = load_matrix(relation_count, "relation_im")?;
        r.expect_eof(path)?;
        Ok(ComplexEmbedding {
            dim,
            entity_re,
            entity_im,
            relation_re,
            relation_im,
        })
    }

    /// Check compatibility with a graph's vocabulary sizes.
    pub fn ensure_shape(
        &self,
        entity_count: usize,
        relation_count: usize,
        dim: Option<usize>,
    ) -> Result<()> {
        if self.entity_count() != entity_count || self.relation_count() != relation_count {
            return Err(Error::InvalidInput(format!(
                "embedding shape {}x{} does not match graph vocabulary {}x{}",
                self.entity_count(),
                self.relation_count(),
                entity_count,
                relation_count
            )));
        }
        if let Some(d) = dim {
            if self.dim != d {
                return Err(Error::InvalidInput(format!(
                    "embedding dimension is {} but {} was expected",
                    self.dim, d
                )));
            }
        }
        Ok(())
    }
}

impl EmbeddingGradients {
    pub fn zeros_like(emb: &ComplexEmbedding) -> Self {
        EmbeddingGradients {
            entity_re: Array2::zeros(emb.entity_re.raw_dim()),
            entity_im: Array2::zeros(emb.entity_im.raw_dim()),
            relation_re: Array2::zeros(emb.relation_re.raw_dim()),
            relation_im: Array2::zeros(emb.relation_im.raw_dim()),
        }
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + exp(x)) without overflow.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cubic-norm penalty over all trained parameters (the self-loop rows are
/// excluded; they are not trained).
fn l3_penalty(emb: &ComplexEmbedding) -> f64 {
    let self_loop = emb.self_loop_row();
    let mut total = 0.0;
    for m in [&emb.entity_re, &emb.entity_im] {
        for v in m.iter() {
            total += v.abs().powi(3);
        }
    }
    for m in [&emb.relation_re, &emb.relation_im] {
        for (row, values) in m.rows().into_iter().enumerate() {
            if row == self_loop {
                continue;
            }
            for v in values.iter() {
                total += v.abs().powi(3);
            }
        }
    }
    total
}

/// Mean logistic loss log(1 + exp(-y * score)) over the batch, plus the
/// cubic-norm regularizer. Labels are +1 / -1.
pub fn embed_loss(emb: &ComplexEmbedding, batch: &[(Triple, f64)], l3_strength: f64) -> f64 {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let mut total = 0.0;
    for (triple, y) in batch {
        let phi = emb.score(triple.head, triple.relation, triple.tail);
        total += softplus(-y * phi);
    }
    total / batch.len() as f64 + l3_strength * l3_penalty(emb)
}

/// Exact analytic gradient of `embed_loss`.
pub fn embed_grad(
    emb: &ComplexEmbedding,
    batch: &[(Triple, f64)],
    l3_strength: f64,
) -> EmbeddingGradients {
    embed_loss_and_grad(emb, batch, l3_strength).1
}

fn embed_loss_and_grad(
    emb: &ComplexEmbedding,
    batch: &[(Triple, f64)],
    l3_strength: f64,
) -> (f64, EmbeddingGradients) {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let mut grad = EmbeddingGradients::zeros_like(emb);
    let scale = 1.0 / batch.len() as f64;
    let dim = emb.dim();
    let mut loss = 0.0;

    for (triple, y) in batch {
        let h = triple.head.idx();
        let r = triple.relation.idx();
        let t = triple.tail.idx();
        let phi = emb.score(triple.head, triple.relation, triple.tail);
        loss += softplus(-y * phi);
        // d/dphi log(1 + exp(-y phi)) = -y * sigmoid(-y phi)
        let w = -y * sigmoid(-y * phi) * scale;
        for k in 0..dim {
            let h_re = emb.entity_re[[h, k]];
            let h_im = emb.entity_im[[h, k]];
            let r_re = emb.relation_re[[r, k]];
            let r_im = emb.relation_im[[r, k]];
            let t_re = emb.entity_re[[t, k]];
            let t_im = emb.entity_im[[t, k]];
            grad.entity_re[[h, k]] += w * (r_re * t_re + r_im * t_im);
            grad.entity_im[[h, k]] += w * (r_re * t_im - r_im * t_re);
            grad.entity_re[[t, k]] += w * (r_re * h_re - r_im * h_im);
            grad.entity_im[[t, k]] += w * (r_re * h_im + r_im * h_re);
            grad.relation_re[[r, k]] += w * (h_re * t_re + h_im * t_im);
            grad.relation_im[[r, k]] += w * (h_re * t_im - h_im * t_re);
        }
    }
    loss *= scale;
    loss += l3_strength * l3_penalty(emb);

    // d/dp |p|^3 = 3 p |p|
    if l3_strength != 0.0 {
        let self_loop = emb.self_loop_row();
        for (g, p) in [
            (&mut grad.entity_re, &emb.entity_re),
            (&mut grad.entity_im, &emb.entity_im),
        ] {
            for (gv, pv) in g.iter_mut().zip(p.iter()) {
                *gv += l3_strength * 3.0 * pv * pv.abs();
            }
        }
        for (g, p) in [
            (&mut grad.relation_re, &emb.relation_re),
            (&mut grad.relation_im, &emb.relation_im),
        ] {
            for (row, (mut gr, pr)) in g.rows_mut().into_iter().zip(p.rows()).enumerate() {
                if row == self_loop {
                    continue;
                }
                for (gv, pv) in gr.iter_mut().zip(pr.iter()) {
                    *gv += l3_strength * 3.0 * pv * pv.abs();
                }
            }
        }
    }
    // The self-loop relation is never trained.
    let self_loop = emb.self_loop_row();
    grad.relation_re.row_mut(self_loop).fill(0.0);
    grad.relation_im.row_mut(self_loop).fill(0.0);

    (loss, grad)
}

/// Uniformly corrupt head or tail (equal probability), rejecting true
/// triples.
fn corrupt(triple: &Triple, graph: &KnowledgeGraph, rng: &mut impl Rng) -> Result<Triple> {
    let n = graph.entity_count() as u32;
    for _ in 0..1000 {
        let corrupt_head = rng.gen_bool(0.5);
        let replacement = EntityId(rng.gen_range(0..n));
        let candidate = if corrupt_head {
            Triple::new(replacement, triple.relation, triple.tail)
        } else {
            Triple::new(triple.head, triple.relation, replacement)
        };
        if !graph.contains(&candidate) {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidInput(format!(
        "could not corrupt triple ({}, {}, {}): graph too dense",
        graph.entity_label(triple.head),
        graph.relation_label(triple.relation),
        graph.entity_label(triple.tail),
    )))
}

/// Train embeddings on all stored triples of `graph` with Adam, pairing
/// each positive with seeded corruptions. Fixed seeds give bitwise
/// identical parameters.
pub fn train_embeddings(
    graph: &KnowledgeGraph,
    config: &EmbedTrainConfig,
) -> Result<ComplexEmbedding> {
    if config.dim == 0 || config.batch_size == 0 {
        return Err(Error::InvalidInput(
            "embedding dim and batch size must be positive".to_string(),
        ));
    }
    if !config.learning_rate.is_finite() || config.learning_rate <= 0.0 || config.l3_strength < 0.0
    {
        return Err(Error::InvalidInput(
            "embedding learning rate must be positive and l3 strength nonnegative".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut emb = ComplexEmbedding::init_with_rng(
        graph.entity_count(),
        graph.relation_count(),
        config.dim,
        &mut rng,
    );
    if graph.triples().is_empty() {
        return Err(Error::InvalidInput("graph has no triples".to_string()));
    }
    let hyper = AdamHyper::with_learning_rate(config.learning_rate);
    let param_count = emb.entity_re.len() + emb.entity_im.len();
    let rel_count = emb.relation_re.len() + emb.relation_im.len();
    let mut adam_entity_re = AdamState::new(param_count / 2);
    let mut adam_entity_im = AdamState::new(param_count / 2);
    let mut adam_relation_re = AdamState::new(rel_count / 2);
    let mut adam_relation_im = AdamState::new(rel_count / 2);

    let mut order: Vec<usize> = (0..graph.triples().len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch: Vec<(Triple, f64)> =
                Vec::with_capacity(chunk.len() * (1 + config.negatives_per_positive as usize));
            for &i in chunk {
                let positive = graph.triples()[i];
                batch.push((positive, 1.0));
                for _ in 0..config.negatives_per_positive {
                    batch.push((corrupt(&positive, graph, &mut rng)?, -1.0));
                }
            }
            let (loss, grad) = embed_loss_and_grad(&emb, &batch, config.l3_strength);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "embedding loss is {loss} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            for state in [
                &mut adam_entity_re,
                &mut adam_entity_im,
                &mut adam_relation_re,
                &mut adam_relation_im,
            ] {
                state.advance();
            }
            adam_entity_re.step(
                &hyper,
                emb.entity_re.as_slice_mut().unwrap(),
                grad.entity_re.as_slice().unwrap(),
            );
            adam_entity_im.step(
                &hyper,
                emb.entity_im.as_slice_mut().unwrap(),
                grad.entity_im.as_slice().unwrap(),
            );
            adam_relation_re.step(
                &hyper,
                emb.relation_re.as_slice_mut().unwrap(),
                grad.relation_re.as_slice().unwrap(),
            );
            adam_relation_im.step(
                &hyper,
                emb.relation_im.as_slice_mut().unwrap(),
                grad.relation_im.as_slice().unwrap(),
            );
            emb.snap();
        }
        if config.epochs >= 10 && (epoch + 1) % (config.epochs / 10).max(1) == 0 {
            log::debug!("embedding epoch {}/{}", epoch + 1, config.epochs);
        }
    }
    Ok(emb)
}
