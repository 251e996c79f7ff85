//! Evaluation: hits (any beam path reaches the true target) and weighted
//! voting accuracy over a task's test split, plus the experiment grid that
//! drives tasks x beam widths end to end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::{train_embeddings, ComplexEmbedding, EmbedTrainConfig};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::kg::{
    extract_task, generate_negatives, union_tasks, write_claims, EntityId, KnowledgeGraph,
    TaskDataset, Triple,
};
use crate::policy::{init_policy, train_policy, write_progress, PolicyParams, PolicyTrainConfig};
use crate::reasoner::{check_claim, verdict_record, write_verdicts, VerdictRecord};

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub claim: Triple,
    pub label: bool,
    pub true_tail: EntityId,
    /// Some beam path ended on the true target.
    pub reached: bool,
    pub winner: EntityId,
    /// The vote winner is the true target.
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub task: String,
    pub dataset_size: usize,
    pub beam_width: usize,
    /// Fraction of test samples (positives and negatives) whose true target
    /// was reached by at least one path.
    pub hits: f64,
    /// Same fraction over positive samples only.
    pub hits_positives: f64,
    /// Fraction of test samples whose vote winner is the true target.
    pub voting_accuracy: f64,
    pub samples: Vec<SampleRecord>,
}

/// Evaluate one task at one beam width, returning per-sample records and
/// the verdict export rows.
pub fn evaluate_task(
    task: &TaskDataset,
    params: &PolicyParams,
    emb: &ComplexEmbedding,
    width: usize,
    max_steps: usize,
) -> Result<(EvalReport, Vec<VerdictRecord>)> {
    if task.test.is_empty() {
        return Err(Error::InvalidInput(format!(
            "task {:?} has no test samples",
            task.name
        )));
    }
    let env = Env {
        graph: &task.pruned_graph,
        emb,
        max_steps,
    };
    // Models are frozen, so samples evaluate in parallel; collecting in
    // test-split order keeps the reduction deterministic.
    let outcomes: Vec<(SampleRecord, VerdictRecord)> = task
        .test
        .par_iter()
        .map(|sample| {
            let verdict = check_claim(sample.claim, params, &env, width)?;
            let reached = verdict
                .paths
                .iter()
                .any(|p| p.final_entity == sample.true_tail);
            let correct = verdict.winner == sample.true_tail;
            Ok((
                SampleRecord {
                    claim: sample.claim,
                    label: sample.label,
                    true_tail: sample.true_tail,
                    reached,
                    winner: verdict.winner,
                    correct,
                },
                verdict_record(&verdict, &task.pruned_graph),
            ))
        })
        .collect::<Result<_>>()?;
    let (samples, records): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let total = samples.len() as f64;
    let hits = samples.iter().filter(|s| s.reached).count() as f64 / total;
    let positives = samples.iter().filter(|s| s.label).count();
    let hits_positives = if positives == 0 {
        0.0
    } else {
        samples.iter().filter(|s| s.label && s.reached).count() as f64 / positives as f64
    };
    let voting_accuracy = samples.iter().filter(|s| s.correct).count() as f64 / total;
    Ok((
        EvalReport {
            task: task.name.clone(),
            dataset_size: task.train.len() + task.test.len(),
            beam_width: width,
            hits,
            hits_positives,
            voting_accuracy,
            samples,
        },
        records,
    ))
}

pub fn eval_hits(
    task: &TaskDataset,
    params: &PolicyParams,
    emb: &ComplexEmbedding,
    width: usize,
    max_steps: usize,
) -> Result<f64> {
    Ok(evaluate_task(task, params, emb, width, max_steps)?.0.hits)
}

pub fn eval_voting(
    task: &TaskDataset,
    params: &PolicyParams,
    emb: &ComplexEmbedding,
    width: usize,
    max_steps: usize,
) -> Result<f64> {
    Ok(evaluate_task(task, params, emb, width, max_steps)?
        .0
        .voting_accuracy)
}

/// One row of the experiment grid: a named task over one or more query
/// relations.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub split_ratio: f64,
    pub negative_ratio: u32,
    pub beam_widths: Vec<usize>,
    pub max_steps: usize,
    pub hidden: usize,
    pub embed: EmbedTrainConfig,
    pub policy: PolicyTrainConfig,
    pub seed: u64,
}

/// Replace path separators so task names are safe as directory names.
pub fn sanitize_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Build (or reuse) per-task models under `model_dir` and evaluate the
/// full tasks x widths grid. With `train_missing` unset, absent model
/// files are an error naming the path.
pub fn run_experiment(
    graph: &KnowledgeGraph,
    specs: &[TaskSpec],
    config: &ExperimentConfig,
    model_dir: &Path,
    train_missing: bool,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for spec in specs {
        let task = build_task(graph, spec, config)?;
        let task_dir = model_dir.join(sanitize_name(&spec.name));
        std::fs::create_dir_all(&task_dir).map_err(|e| Error::io(&task_dir, e))?;
        write_claims(task_dir.join("train.tsv"), &task.train, graph)?;
        write_claims(task_dir.join("test.tsv"), &task.test, graph)?;

        let emb = load_or_train_embeddings(&task, &task_dir, config, train_missing)?;
        let params = load_or_train_policy(&task, &emb, &task_dir, config, train_missing)?;

        for &width in &config.beam_widths {
            let (report, records) = evaluate_task(&task, &params, &emb, width, config.max_steps)?;
            write_verdicts(task_dir.join(format!("verdicts_w{width}.jsonl")), &records)?;
            reports.push(report);
        }
    }
    Ok(reports)
}

/// Resolve a task spec into a dataset with negatives. Multi-relation specs
/// are the union of their single-relation tasks.
pub fn build_task(
    graph: &KnowledgeGraph,
    spec: &TaskSpec,
    config: &ExperimentConfig,
) -> Result<TaskDataset> {
    if spec.relations.is_empty() {
        return Err(Error::Config(format!(
            "task {:?} lists no relations",
            spec.name
        )));
    }
    let mut singles = Vec::new();
    for label in &spec.relations {
        let relation = graph.resolve_relation(label)?;
        let task = extract_task(graph, relation, config.split_ratio, config.seed)?;
        singles.push(generate_negatives(
            &task,
            graph,
            config.negative_ratio,
            config.seed,
        )?);
    }
    if singles.len() == 1 {
        let mut task = singles.pop().unwrap();
        task.name = spec.name.clone();
        Ok(task)
    } else {
        let refs: Vec<&TaskDataset> = singles.iter().collect();
        Ok(union_tasks(graph, spec.name.clone(), &refs))
    }
}

/// Build the task for `spec` and train its embeddings unconditionally,
/// overwriting any existing model file. Returns the saved path.
pub fn train_task_embeddings(
    graph: &KnowledgeGraph,
    spec: &TaskSpec,
    config: &ExperimentConfig,
    model_dir: &Path,
) -> Result<std::path::PathBuf> {
    let task = build_task(graph, spec, config)?;
    let task_dir = model_dir.join(sanitize_name(&spec.name));
    std::fs::create_dir_all(&task_dir).map_err(|e| Error::io(&task_dir, e))?;
    write_claims(task_dir.join("train.tsv"), &task.train, graph)?;
    write_claims(task_dir.join("test.tsv"), &task.test, graph)?;
    let emb = train_embeddings(&task.pruned_graph, &config.embed)?;
    let path = task_dir.join("embeddings.bin");
    emb.save(&path)?;
    Ok(path)
}

/// Build the task for `spec` and train its policy unconditionally. The
/// task's embedding file must already exist.
pub fn train_task_policy(
    graph: &KnowledgeGraph,
    spec: &TaskSpec,
    config: &ExperimentConfig,
    model_dir: &Path,
) -> Result<std::path::PathBuf> {
    let task = build_task(graph, spec, config)?;
    let task_dir = model_dir.join(sanitize_name(&spec.name));
    std::fs::create_dir_all(&task_dir).map_err(|e| Error::io(&task_dir, e))?;
    let emb = load_or_train_embeddings(&task, &task_dir, config, false)?;
    let env = Env {
        graph: &task.pruned_graph,
        emb: &emb,
        max_steps: config.max_steps,
    };
    let init = init_policy(
        env.state_dim(),
        config.hidden,
        task.pruned_graph.relation_count(),
        config.policy.seed,
    );
    let (params, progress) = train_policy(
        &task,
        init,
        &task.pruned_graph,
        &emb,
        config.max_steps,
        &config.policy,
    )?;
    let path = task_dir.join("policy.bin");
    params.save(&path)?;
    let progress_path = task_dir.join("progress.tsv");
    if progress_path.exists() {
        std::fs::remove_file(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
    }
    write_progress(progress_path, &progress)?;
    Ok(path)
}

fn load_or_train_embeddings(
    task: &TaskDataset,
    task_dir: &Path,
    config: &ExperimentConfig,
    train_missing: bool,
) -> Result<ComplexEmbedding> {
    let path = task_dir.join("embeddings.bin");
    let graph = &task.pruned_graph;
    if path.exists() {
        let emb = ComplexEmbedding::load(&path)?;
        emb.ensure_shape(
            graph.entity_count(),
            graph.relation_count(),
            Some(config.embed.dim),
        )?;
        return Ok(emb);
    }
    if !train_missing {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "embedding model not found"),
        ));
    }
    log::info!("training embeddings for task {:?}", task.name);
    let emb = train_embeddings(graph, &config.embed)?;
    emb.save(&path)?;
    Ok(emb)
}

fn load_or_train_policy(
    task: &TaskDataset,
    emb: &ComplexEmbedding,
    task_dir: &Path,
    config: &ExperimentConfig,
    train_missing: bool,
) -> Result<PolicyParams> {
    let path = task_dir.join("policy.bin");
    let graph = &task.pruned_graph;
    let env = Env {
        graph,
        emb,
        max_steps: config.max_steps,
    };
    if path.exists() {
        let params = PolicyParams::load(&path)?;
        params.ensure_shape(env.state_dim(), graph.relation_count())?;
        return Ok(params);
    }
    if !train_missing {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "policy model not found"),
        ));
    }
    log::info!("training policy for task {:?}", task.name);
    let init = init_policy(
        env.state_dim(),
        config.hidden,
        graph.relation_count(),
        config.policy.seed,
    );
    let (params, progress) =
        train_policy(task, init, graph, emb, config.max_steps, &config.policy)?;
    params.save(&path)?;
    write_progress(task_dir.join("progress.tsv"), &progress)?;
    Ok(params)
}

/// Write the grid report: a header line, then one
/// `task<TAB>size<TAB>width<TAB>hits<TAB>voting_acc` row per cell.
pub fn write_report(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(w, "task\tsize\twidth\thits\tvoting_acc").map_err(|e| Error::io(path, e))?;
    for r in reports {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}\t{:.6}",
            r.task, r.dataset_size, r.beam_width, r.hits, r.voting_accuracy
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::ClaimSample;
    use crate::policy::PolicyOptimizer;

    /// Heads connect to their true tails via a single `link` edge, so every
    /// 3-step beam from hN can reach tN.
    fn reachable_task() -> (KnowledgeGraph, TaskDataset) {
        let text: String = (0..10)
            .map(|i| format!("h{i}\tq\tt{i}\nh{i}\tlink\tt{i}\n"))
            .collect();
        let g = KnowledgeGraph::from_tsv_str(&text).unwrap();
        let q = g.relation_id("q").unwrap();
        let task = extract_task(&g, q, 0.8, 3).unwrap();
        let task = generate_negatives(&task, &g, 5, 4).unwrap();
        (g, task)
    }

    fn test_config() -> ExperimentConfig {
        ExperimentConfig {
            split_ratio: 0.8,
            negative_ratio: 5,
            beam_widths: vec![3, 5, 10],
            max_steps: 3,
            hidden: 16,
            embed: EmbedTrainConfig {
                dim: 4,
                epochs: 5,
                batch_size: 10,
                negatives_per_positive: 2,
                ..Default::default()
            },
            policy: PolicyTrainConfig {
                episodes: 200,
                progress_every: 100,
                optimizer: PolicyOptimizer::Adam,
                ..Default::default()
            },
            seed: 0,
        }
    }

    #[test]
    fn hits_saturate_when_every_tail_is_reachable() {
        let (g, task) = reachable_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 0);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 0);
        // Width large enough to cover every path from a degree-1 head.
        let hits = eval_hits(&task, &params, &emb, 32, 3).unwrap();
        assert_eq!(hits, 1.0);
    }

    #[test]
    fn unreachable_true_tail_contributes_zero() {
        // The only edge from h leads away from the true tail, which is
        // isolated once q is pruned.
        let g = KnowledgeGraph::from_tsv_str(
            "h\tq\tt\nh2\tq\tt\nh3\tq\tt\nh4\tq\tt\nh5\tq\tt\nh\tlink\tz\n",
        )
        .unwrap();
        let q = g.relation_id("q").unwrap();
        let task = extract_task(&g, q, 0.8, 0).unwrap();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 0);
        let params = {
            let env = Env {
                graph: &task.pruned_graph,
                emb: &emb,
                max_steps: 3,
            };
            init_policy(env.state_dim(), 8, g.relation_count(), 0)
        };
        let hits = eval_hits(&task, &params, &emb, 100, 3).unwrap();
        assert_eq!(hits, 0.0);
    }

    #[test]
    fn saturated_width_hits_match_enumeration_oracle() {
        let (g, task) = reachable_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 6);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 7);
        // At saturating width, "reached" is exactly 3-hop reachability of
        // the true tail; recount it by exhaustive path enumeration.
        let (report, _) = evaluate_task(&task, &params, &emb, 1000, 3).unwrap();
        let mut oracle_hits = 0usize;
        for sample in &task.test {
            let all = crate::reasoner::enumerate_paths(sample.claim, &params, &env).unwrap();
            assert!(all.len() <= 1000);
            if all.iter().any(|p| p.final_entity == sample.true_tail) {
                oracle_hits += 1;
            }
        }
        let oracle = oracle_hits as f64 / task.test.len() as f64;
        assert_eq!(report.hits, oracle);
    }

    #[test]
    fn voting_correct_implies_reached_per_sample() {
        let (g, task) = reachable_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 1);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 2);
        for width in [3, 5, 10] {
            let (report, _) = evaluate_task(&task, &params, &emb, width, 3).unwrap();
            for s in &report.samples {
                if s.correct {
                    assert!(s.reached, "correct vote without reaching the target");
                }
            }
            assert!(report.voting_accuracy <= report.hits + 1e-12);
        }
    }

    #[test]
    fn vote_recount_from_records_matches_winner() {
        let (g, task) = reachable_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 1);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 2);
        let (report, records) = evaluate_task(&task, &params, &emb, 5, 3).unwrap();
        for (sample, record) in report.samples.iter().zip(&records) {
            let mut tallies: std::collections::BTreeMap<&str, f64> = Default::default();
            for p in &record.paths {
                *tallies.entry(p.final_entity.as_str()).or_insert(0.0) += p.weight;
            }
            let mut best: Option<(&str, f64)> = None;
            for (&entity, &weight) in &tallies {
                // BTreeMap iterates labels lexicographically, which may
                // differ from id order, so resolve ties through ids.
                let replace = match best {
                    None => true,
                    Some((cur, cur_w)) => {
                        weight > cur_w
                            || (weight == cur_w
                                && g.entity_id(entity).unwrap() < g.entity_id(cur).unwrap())
                    }
                };
                if replace {
                    best = Some((entity, weight));
                }
            }
            assert_eq!(
                g.entity_id(best.unwrap().0).unwrap(),
                sample.winner,
                "recount disagrees for {:?}",
                record.head
            );
        }
    }

    #[test]
    fn experiment_grid_is_complete_and_deterministic() {
        let text: String = (0..10)
            .map(|i| format!("h{i}\tq\tt{i}\nh{i}\tlink\tt{i}\nh{i}\tq2\tt{i}\n"))
            .collect();
        let g = KnowledgeGraph::from_tsv_str(&text).unwrap();
        let specs = vec![
            TaskSpec {
                name: "q".to_string(),
                relations: vec!["q".to_string()],
            },
            TaskSpec {
                name: "combined".to_string(),
                relations: vec!["q".to_string(), "q2".to_string()],
            },
        ];
        let config = test_config();
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let reports = run_experiment(&g, &specs, &config, dir.path(), true).unwrap();
            let report_path = dir.path().join("report.tsv");
            write_report(&report_path, &reports).unwrap();
            (reports, std::fs::read(report_path).unwrap())
        };
        let (reports, bytes) = run();
        assert_eq!(reports.len(), 2 * 3);
        // Each (task, width) cell appears exactly once.
        let mut cells: Vec<(String, usize)> = reports
            .iter()
            .map(|r| (r.task.clone(), r.beam_width))
            .collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 6);
        // Combined task is the union of its parts.
        let single = reports.iter().find(|r| r.task == "q").unwrap();
        let combined = reports.iter().find(|r| r.task == "combined").unwrap();
        assert_eq!(combined.dataset_size, 2 * single.dataset_size);
        // Rerun from scratch is byte-identical.
        let (_, bytes2) = run();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn missing_models_error_names_the_file() {
        let (g, _) = reachable_task();
        let specs = vec![TaskSpec {
            name: "q".to_string(),
            relations: vec!["q".to_string()],
        }];
        let config = test_config();
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&g, &specs, &config, dir.path(), false).unwrap_err();
        assert!(err.to_string().contains("embeddings.bin"), "{err}");
    }

    #[test]
    fn metrics_stay_in_unit_interval() {
        let (g, task) = reachable_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 9);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 9);
        let (report, _) = evaluate_task(&task, &params, &emb, 3, 3).unwrap();
        for v in [report.hits, report.hits_positives, report.voting_accuracy] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn report_file_has_header_and_rows() {
        let report = EvalReport {
            task: "demo".to_string(),
            dataset_size: 66,
            beam_width: 10,
            hits: 0.5,
            hits_positives: 0.75,
            voting_accuracy: 0.25,
            samples: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.tsv");
        write_report(&path, &[report]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "task\tsize\twidth\thits\tvoting_acc");
        assert_eq!(lines.next().unwrap(), "demo\t66\t10\t0.500000\t0.250000");
    }

    #[test]
    fn empty_test_split_is_rejected() {
        let (g, task) = reachable_task();
        let emb = ComplexEmbedding::init(g.entity_count(), g.relation_count(), 4, 0);
        let env = Env {
            graph: &task.pruned_graph,
            emb: &emb,
            max_steps: 3,
        };
        let params = init_policy(env.state_dim(), 8, g.relation_count(), 0);
        let empty = TaskDataset {
            test: Vec::<ClaimSample>::new(),
            ..task
        };
        assert!(evaluate_task(&empty, &params, &emb, 3, 3).is_err());
    }
}
