//! The annotation-loop harness: per-cycle joint training of the extractor
//! and heads, active-unknown clustering, pool scoring, querying, oracle
//! annotation, pool updates, evaluation-model training, and metric
//! collection across seeds.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{DatasetConfig, ExperimentConfig, StrategyName};
use crate::data::{generate_blobs, init_pools, load_csv, make_split, Dataset, OpenSetSplit, PoolState};
use crate::error::{Error, Result};
use crate::finch::{partition_at_k, Partition};
use crate::io::atomic_write;
use crate::losses::{
    ce_loss, total_loss_with_terms, ActiveUnknownBatch, AuClusters, LabeledBatch, LossTerms,
    LossWeights,
};
use crate::matrix::Matrix;
use crate::nnkit::{Mlp, ModelBundle, SgdConfig, SgdState};
use crate::rng::{derive_seed, rng_for};
use crate::samplers::{
    certainty_query, coreset_query, entropy_query, eoal_query, random_query, EoalOptions,
    QueryResult,
};
use crate::scalar::{real, Scalar};
use crate::scoring::{score_pool, ScoreOptions, ScoreTable, Temperature};

// Independent RNG streams per pipeline stage, sub-derived per cycle.
const STREAM_SPLIT: u64 = 1;
const STREAM_POOLS: u64 = 2;
const STREAM_MODEL: u64 = 3;
const STREAM_BATCH: u64 = 4;
const STREAM_QUERY: u64 = 5;
const STREAM_TARGET: u64 = 6;
const STREAM_QUERY_MODEL: u64 = 7;

fn cycle_seed(seed: u64, stream: u64, cycle: usize) -> u64 {
    derive_seed(derive_seed(seed, stream), cycle as u64)
}

/// Per-cycle bookkeeping: evaluation accuracy, query precision, and pool
/// sizes after the cycle's annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub cycle: usize,
    pub accuracy: f64,
    /// Fraction of this cycle's queries the oracle confirmed as known.
    pub precision: f64,
    pub n_labeled: usize,
    pub n_active_unknown: usize,
    pub n_unlabeled: usize,
    pub wall_ms: u64,
}

/// One seed's trajectory, or the error that stopped it.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub strategy: String,
    pub seeds: Vec<SeedOutcome>,
}

/// Mean first/last-epoch training loss of one joint-training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainStats<T> {
    pub first_epoch_mean_loss: T,
    pub last_epoch_mean_loss: T,
}

/// Builds the dataset a configuration describes.
pub fn build_dataset<T: Scalar>(config: &ExperimentConfig) -> Result<Dataset<T>> {
    match &config.dataset {
        DatasetConfig::Blobs {
            n_classes,
            per_class,
            dim,
            radius,
            sigma,
            seed,
        } => generate_blobs(*n_classes, *per_class, *dim, *radius, *sigma, *seed),
        DatasetConfig::Csv { path } => load_csv(path),
    }
}

/// Splits queried ids by the oracle's ground truth: knowns with remapped
/// labels, unknowns as open-set ids.
pub fn oracle_annotate<T: Scalar>(
    dataset: &Dataset<T>,
    split: &OpenSetSplit,
    ids: &[u64],
) -> Result<(Vec<(u64, u32)>, Vec<u64>)> {
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for &id in ids {
        let class = dataset.true_class(id)?;
        match split.remap_label(class) {
            Some(label) => known.push((id, label)),
            None => unknown.push(id),
        }
    }
    Ok((known, unknown))
}

struct SeedRun<'a, T> {
    dataset: &'a Dataset<T>,
    config: &'a ExperimentConfig,
    split: OpenSetSplit,
    seed: u64,
    out_dir: Option<&'a Path>,
    warm_bundle: Option<ModelBundle<T>>,
    warm_target: Option<Mlp<T>>,
}

impl<'a, T: Scalar> SeedRun<'a, T> {
    fn sgd_config(&self) -> SgdConfig<T> {
        let t = &self.config.training;
        SgdConfig {
            learning_rate: real(t.learning_rate),
            momentum: real(t.momentum),
            weight_decay: real(t.weight_decay),
            step_decay_factor: real(t.lr_decay_factor),
            step_decay_every: t.lr_decay_every,
        }
    }

    fn train_bundle(
        &mut self,
        pools: &PoolState,
        cycle: usize,
    ) -> Result<(ModelBundle<T>, TrainStats<T>)> {
        let warm = if self.config.training.warm_start {
            self.warm_bundle.take()
        } else {
            None
        };
        train_cycle_models(self.dataset, &self.split, pools, self.config, self.seed, cycle, warm)
    }

    /// Trains a fresh K-way classifier of the target architecture on the
    /// given labeled set with plain cross-entropy.
    fn train_target_model(
        &self,
        labeled: &[(u64, u32)],
        epochs: usize,
        seed: u64,
        warm: Option<Mlp<T>>,
    ) -> Result<Mlp<T>> {
        if labeled.is_empty() {
            return Err(Error::config("labeled pool is empty"));
        }
        let cfg = &self.config.training;
        let k = self.split.k();
        let mut plan = vec![self.dataset.dim()];
        plan.extend_from_slice(&cfg.hidden_dims);
        plan.push(k);
        let mut model = match (cfg.warm_start, warm) {
            (true, Some(m)) => m,
            _ => Mlp::init(&plan, seed)?,
        };
        let mut sgd = SgdState::new(self.sgd_config())?;
        let mut items: Vec<(u64, u32)> = labeled.to_vec();
        let mut shuffle_rng = rng_for(derive_seed(seed, 1));

        for epoch in 0..epochs {
            sgd.set_epoch(epoch);
            items.shuffle(&mut shuffle_rng);
            for chunk in items.chunks(cfg.batch_size) {
                let ids: Vec<u64> = chunk.iter().map(|&(id, _)| id).collect();
                // Remapped labels are 1..=K; the K-way head indexes 0..K.
                let labels: Vec<u32> = chunk.iter().map(|&(_, l)| l - 1).collect();
                let features = self.dataset.features_of(&ids)?;
                let acts = model.forward(&features)?;
                let (value, dlogits) = ce_loss(&acts.output, &labels)?;
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("target model loss {value}")));
                }
                let (grads, _) = model.backward(&acts, &dlogits)?;
                let grad_tensors = grads.tensors();
                sgd.step(&mut model.tensors_mut(), &grad_tensors)?;
            }
        }
        Ok(model)
    }

    /// K-way accuracy of the target model on the frozen test split.
    fn evaluate_target(&self, model: &Mlp<T>, test: &[(u64, u32)]) -> Result<f64> {
        let ids: Vec<u64> = test.iter().map(|&(id, _)| id).collect();
        let features = self.dataset.features_of(&ids)?;
        let out = model.output(&features)?;
        let mut correct = 0usize;
        for (i, &(_, label)) in test.iter().enumerate() {
            let row = out.row(i);
            let mut best = 0usize;
            for (j, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = j;
                }
            }
            if best as u32 == label - 1 {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.len() as f64)
    }

    /// Accuracy of the jointly trained extractor + classifier over the known
    /// classes only (argmax over labels 1..=K, ignoring the open-set logit).
    fn evaluate_bundle(&self, bundle: &ModelBundle<T>, test: &[(u64, u32)]) -> Result<f64> {
        let ids: Vec<u64> = test.iter().map(|&(id, _)| id).collect();
        let input = self.dataset.features_of(&ids)?;
        let features = bundle.feature.output(&input)?;
        let logits = bundle.classifier.forward(&features)?;
        let k = self.split.k();
        let mut correct = 0usize;
        for (i, &(_, label)) in test.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 1usize;
            for j in 1..=k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best as u32 == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.len() as f64)
    }

    fn dump_scores(&self, table: &ScoreTable<T>, cycle: usize) -> Result<()> {
        let Some(dir) = self.out_dir else {
            return Ok(());
        };
        let mut out = String::from("id,s_c,s_d,s,predicted_class,true_is_known\n");
        for r in &table.records {
            let known = self.split.is_known(self.dataset.true_class(r.id)?);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.id, r.s_c, r.s_d, r.s, r.predicted_class, known
            ));
        }
        let path = dir.join(format!("scores_seed{}_cycle{}.csv", self.seed, cycle));
        atomic_write(&path, out.as_bytes())
    }

    /// One full annotation cycle; returns the updated pools and the cycle's
    /// metrics.
    fn run_cycle(&mut self, pools: &PoolState, cycle: usize) -> Result<(PoolState, RoundMetrics)> {
        let start = Instant::now();
        let cfg = self.config;
        let strategy = cfg.strategy.name;
        let budget = cfg.strategy.budget;
        let k = self.split.k();

        let (query, bundle_for_eval): (QueryResult, Option<ModelBundle<T>>) = match strategy {
            StrategyName::Eoal => {
                let (bundle, _stats) = self.train_bundle(pools, cycle)?;
                let au =
                    cluster_active_unknowns(self.dataset, &self.split, pools, self.config, &bundle)?;
                if cfg.ablation.use_d_au
                    && !pools.active_unknown.is_empty()
                    && au.is_none()
                    && pools.active_unknown.len() >= 2
                {
                    return Err(Error::consistency(
                        "active unknowns present but no cluster centers were produced",
                    ));
                }
                let options = ScoreOptions {
                    temperature: Temperature::new(real(cfg.training.temperature))?,
                    closed_set_from_classifier: !cfg.ablation.use_bc,
                };
                let partition = au.as_ref().map(|(_, p)| p);
                let table = score_pool(pools, self.dataset, &bundle, partition, &options)?;
                if cfg.output.dump_scores {
                    self.dump_scores(&table, cycle)?;
                }
                let opts = EoalOptions {
                    use_s_c: cfg.ablation.use_s_c,
                    use_s_d: cfg.ablation.use_s_d,
                    use_diversity: cfg.ablation.use_diversity,
                    diversity_only: cfg.ablation.diversity_only,
                    cluster_domain: cfg.strategy.cluster_domain,
                    metric: cfg.strategy.metric,
                    seed: cycle_seed(self.seed, STREAM_QUERY, cycle),
                };
                let query = eoal_query(&table, budget, k, &opts)?;
                if cfg.training.warm_start {
                    self.warm_bundle = Some(bundle.clone());
                }
                (query, Some(bundle))
            }
            StrategyName::Random => {
                if pools.unlabeled.is_empty() {
                    return Err(Error::config("unlabeled pool is empty"));
                }
                let query = random_query(
                    &pools.unlabeled,
                    budget,
                    cycle_seed(self.seed, STREAM_QUERY, cycle),
                );
                (query, None)
            }
            StrategyName::Entropy | StrategyName::Certainty | StrategyName::Coreset => {
                if pools.unlabeled.is_empty() {
                    return Err(Error::config("unlabeled pool is empty"));
                }
                let qmodel = self.train_target_model(
                    &pools.labeled,
                    cfg.training.target_epochs(),
                    cycle_seed(self.seed, STREAM_QUERY_MODEL, cycle),
                    None,
                )?;
                let query = match strategy {
                    StrategyName::Coreset => {
                        let labeled_ids: Vec<u64> =
                            pools.labeled.iter().map(|&(id, _)| id).collect();
                        let labeled_emb =
                            qmodel.penultimate(&self.dataset.features_of(&labeled_ids)?)?;
                        let unlabeled_emb =
                            qmodel.penultimate(&self.dataset.features_of(&pools.unlabeled)?)?;
                        coreset_query(&labeled_emb, &unlabeled_emb, &pools.unlabeled, budget)?
                    }
                    _ => {
                        let out = qmodel.output(&self.dataset.features_of(&pools.unlabeled)?)?;
                        let mut probs = Matrix::zeros(out.rows(), out.cols());
                        for i in 0..out.rows() {
                            let row = out.row(i);
                            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                            let mut denom = T::zero();
                            for &z in row {
                                denom += (z - max).exp();
                            }
                            for (j, &z) in row.iter().enumerate() {
                                probs.set(i, j, (z - max).exp() / denom);
                            }
                        }
                        if strategy == StrategyName::Entropy {
                            entropy_query(&pools.unlabeled, &probs, budget)?
                        } else {
                            certainty_query(&pools.unlabeled, &probs, budget)?
                        }
                    }
                };
                (query, None)
            }
        };

        let (known_adds, unknown_adds) =
            oracle_annotate(self.dataset, &self.split, &query.selected_ids)?;
        let precision = known_adds.len() as f64 / query.selected_ids.len() as f64;
        let next = pools.apply_annotations(self.dataset, &self.split, &known_adds, &unknown_adds)?;
        next.validate(self.dataset, &self.split)?;
        if next.total() != pools.total() {
            return Err(Error::consistency("pool conservation violated"));
        }

        let accuracy = if cfg.ablation.use_target_model {
            let warm = self.warm_target.take();
            let target = self.train_target_model(
                &next.labeled,
                cfg.training.target_epochs(),
                cycle_seed(self.seed, STREAM_TARGET, cycle),
                warm,
            )?;
            let acc = self.evaluate_target(&target, &next.test)?;
            if cfg.training.warm_start {
                self.warm_target = Some(target);
            }
            acc
        } else {
            let bundle = bundle_for_eval
                .as_ref()
                .expect("target-free evaluation is eoal-only by config validation");
            self.evaluate_bundle(bundle, &next.test)?
        };

        let wall_ms = if cfg.output.measure_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let metrics = RoundMetrics {
            cycle,
            accuracy,
            precision,
            n_labeled: next.n_labeled(),
            n_active_unknown: next.n_active_unknown(),
            n_unlabeled: next.n_unlabeled(),
            wall_ms,
        };
        Ok((next, metrics))
    }
}

/// Clusters the active unknowns in the extractor's feature space into (at
/// most) K clusters. Returns `None` when the ablation disables them or when
/// there are too few samples to form the two clusters the distance machinery
/// needs.
pub fn cluster_active_unknowns<T: Scalar>(
    dataset: &Dataset<T>,
    split: &OpenSetSplit,
    pools: &PoolState,
    config: &ExperimentConfig,
    bundle: &ModelBundle<T>,
) -> Result<Option<(Vec<u64>, Partition<T>)>> {
    if !config.ablation.use_d_au {
        return Ok(None);
    }
    let ids = &pools.active_unknown;
    let k = split.k().min(ids.len());
    if k < 2 {
        return Ok(None);
    }
    let input = dataset.features_of(ids)?;
    let features = bundle.feature.output(&input)?;
    let partition = partition_at_k(&features, k, config.strategy.metric)?;
    Ok(Some((ids.clone(), partition)))
}

/// Joint training of the extractor, classifier, and binary heads over
/// shuffled minibatches of the labeled and active-unknown pools, with the
/// active unknowns re-clustered in feature space at the start of every
/// epoch. Starts from `warm` when given, otherwise from a fresh
/// cycle-seeded initialization.
pub fn train_cycle_models<T: Scalar>(
    dataset: &Dataset<T>,
    split: &OpenSetSplit,
    pools: &PoolState,
    config: &ExperimentConfig,
    seed: u64,
    cycle: usize,
    warm: Option<ModelBundle<T>>,
) -> Result<(ModelBundle<T>, TrainStats<T>)> {
    if pools.labeled.is_empty() {
        return Err(Error::config("labeled pool is empty"));
    }
    let cfg = config;
    let k = split.k();
    let mut bundle = match warm {
        Some(b) => b,
        None => ModelBundle::init(
            dataset.dim(),
            &cfg.training.hidden_dims,
            k,
            cfg.ablation.use_bc,
            cycle_seed(seed, STREAM_MODEL, cycle),
        )?,
    };
    let t = &cfg.training;
    let mut sgd = SgdState::new(SgdConfig {
        learning_rate: real(t.learning_rate),
        momentum: real(t.momentum),
        weight_decay: real(t.weight_decay),
        step_decay_factor: real(t.lr_decay_factor),
        step_decay_every: t.lr_decay_every,
    })?;
    let weights = LossWeights {
        lambda: real(t.lambda),
        beta: real(t.beta),
    };
    let terms = LossTerms {
        bce: cfg.ablation.use_bc,
        em: cfg.ablation.use_bc && cfg.ablation.use_s_c,
        tuplet: cfg.ablation.use_s_d,
    };

    let au_ids: Vec<u64> = if cfg.ablation.use_d_au {
        pools.active_unknown.clone()
    } else {
        Vec::new()
    };
    // (id, Some(label)) for knowns, (id, None) for active unknowns.
    let mut items: Vec<(u64, Option<u32>)> = pools
        .labeled
        .iter()
        .map(|&(id, label)| (id, Some(label)))
        .collect();
    items.extend(au_ids.iter().map(|&id| (id, None)));

    let mut first_epoch_mean = T::zero();
    let mut last_epoch_mean = T::zero();
    let mut shuffle_rng = rng_for(cycle_seed(seed, STREAM_BATCH, cycle));

    for epoch in 0..cfg.training.epochs {
        sgd.set_epoch(epoch);

        // Fresh cluster structure per epoch: centers track the moving
        // feature space.
        let au_clusters = if au_ids.is_empty() {
            None
        } else {
            cluster_active_unknowns(dataset, split, pools, config, &bundle)?
        };
        let cluster_of = au_clusters.as_ref().map(|(ids, partition)| {
            let map: std::collections::HashMap<u64, usize> = ids
                .iter()
                .zip(&partition.labels)
                .map(|(&id, &l)| (id, l))
                .collect();
            (map, partition.centroids.clone())
        });

        items.shuffle(&mut shuffle_rng);
        let mut epoch_loss = T::zero();
        let mut batches = 0usize;
        for chunk in items.chunks(cfg.training.batch_size) {
            let labeled: Vec<(u64, u32)> = chunk
                .iter()
                .filter_map(|&(id, l)| l.map(|l| (id, l)))
                .collect();
            let unknown: Vec<u64> = chunk
                .iter()
                .filter(|(_, l)| l.is_none())
                .map(|&(id, _)| id)
                .collect();

            let labeled_ids: Vec<u64> = labeled.iter().map(|&(id, _)| id).collect();
            let labels: Vec<u32> = labeled.iter().map(|&(_, l)| l).collect();
            let labeled_features = dataset.features_of(&labeled_ids)?;
            let labeled_batch = LabeledBatch {
                features: &labeled_features,
                labels: &labels,
            };

            let au_features;
            let au_labels;
            let au_batch = if unknown.is_empty() {
                None
            } else {
                au_features = dataset.features_of(&unknown)?;
                let clusters = match &cluster_of {
                    Some((map, centers)) => {
                        au_labels = unknown
                            .iter()
                            .map(|id| map.get(id).copied().unwrap_or(0))
                            .collect::<Vec<_>>();
                        Some(AuClusters {
                            labels: &au_labels,
                            centers,
                        })
                    }
                    None => None,
                };
                Some(ActiveUnknownBatch {
                    features: &au_features,
                    clusters,
                })
            };

            let effective_terms = LossTerms {
                // The tuplet term needs this epoch's cluster structure.
                tuplet: terms.tuplet && cluster_of.is_some(),
                ..terms
            };
            let loss = total_loss_with_terms(
                &bundle,
                &labeled_batch,
                au_batch.as_ref(),
                &weights,
                effective_terms,
            )?;
            if !loss.value.is_finite() {
                return Err(Error::Diverged(format!(
                    "cycle {cycle} epoch {epoch}: loss {}",
                    loss.value
                )));
            }
            epoch_loss += loss.value;
            batches += 1;
            let grads = loss.grads.tensors();
            sgd.step(&mut bundle.tensors_mut(), &grads)?;
        }

        let mean = epoch_loss / real::<T>(batches.max(1) as f64);
        if epoch == 0 {
            first_epoch_mean = mean;
        }
        last_epoch_mean = mean;
    }

    if !bundle.all_finite() {
        return Err(Error::Diverged("non-finite parameters after training".into()));
    }
    Ok((
        bundle,
        TrainStats {
            first_epoch_mean_loss: first_epoch_mean,
            last_epoch_mean_loss: last_epoch_mean,
        },
    ))
}

/// Runs all cycles for one seed: fresh split, fresh pools, `R` cycles.
pub fn run_seed<T: Scalar>(
    dataset: &Dataset<T>,
    config: &ExperimentConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<RoundMetrics>> {
    let split = make_split(
        dataset,
        config.split.mismatch_ratio,
        derive_seed(seed, STREAM_SPLIT),
    )?;
    let pools = init_pools(
        dataset,
        &split,
        config.split.initial_label_fraction,
        config.split.test_fraction,
        derive_seed(seed, STREAM_POOLS),
    )?;
    let mut run = SeedRun {
        dataset,
        config,
        split,
        seed,
        out_dir,
        warm_bundle: None,
        warm_target: None,
    };
    let mut rounds = Vec::with_capacity(config.strategy.cycles);
    let mut current = pools;
    for cycle in 0..config.strategy.cycles {
        let (next, metrics) = run.run_cycle(&current, cycle)?;
        current = next;
        rounds.push(metrics);
    }
    Ok(rounds)
}

/// Runs the configured seeds (in parallel), one independent experiment each.
/// A failed seed is recorded and does not abort the others.
pub fn run_experiment<T: Scalar>(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let dataset: Dataset<T> = build_dataset(config)?;
    let seeds: Vec<SeedOutcome> = config
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| match run_seed(&dataset, config, seed, out_dir) {
            Ok(rounds) => SeedOutcome {
                seed,
                rounds,
                error: None,
            },
            Err(e) => SeedOutcome {
                seed,
                rounds: Vec::new(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ExperimentResult {
        strategy: config.strategy.name.as_str().to_string(),
        seeds,
    })
}

/// One row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub seed: u64,
    pub cycle: usize,
    pub strategy: String,
    pub accuracy: f64,
    pub precision: f64,
    pub n_labeled: usize,
    pub n_active_unknown: usize,
    pub n_unlabeled: usize,
    pub wall_ms: u64,
}

pub const ROUNDS_HEADER: &str =
    "seed,cycle,strategy,accuracy,precision,n_labeled,n_active_unknown,n_unlabeled,wall_ms";

impl ExperimentResult {
    pub fn to_rows(&self) -> Vec<RoundRow> {
        let mut rows = Vec::new();
        for outcome in &self.seeds {
            for m in &outcome.rounds {
                rows.push(RoundRow {
                    seed: outcome.seed,
                    cycle: m.cycle,
                    strategy: self.strategy.clone(),
                    accuracy: m.accuracy,
                    precision: m.precision,
                    n_labeled: m.n_labeled,
                    n_active_unknown: m.n_active_unknown,
                    n_unlabeled: m.n_unlabeled,
                    wall_ms: m.wall_ms,
                });
            }
        }
        rows
    }

    /// Seeds that failed, with their error messages.
    pub fn failures(&self) -> Vec<(u64, String)> {
        self.seeds
            .iter()
            .filter_map(|s| s.error.as_ref().map(|e| (s.seed, e.clone())))
            .collect()
    }
}

pub fn rounds_csv_string(rows: &[RoundRow]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.cycle,
            r.strategy,
            r.accuracy,
            r.precision,
            r.n_labeled,
            r.n_active_unknown,
            r.n_unlabeled,
            r.wall_ms
        ));
    }
    out
}

pub fn write_rounds_csv(path: &Path, rows: &[RoundRow]) -> Result<()> {
    atomic_write(path, rounds_csv_string(rows).as_bytes())
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != ROUNDS_HEADER {
        return Err(Error::Parse {
            path: display,
            row: 1,
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row = i + 2;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Parse {
                path: display,
                row,
                message: format!("expected 9 fields, got {}", parts.len()),
            });
        }
        let err = |message: String| Error::Parse {
            path: display.clone(),
            row,
            message,
        };
        rows.push(RoundRow {
            seed: parts[0].parse().map_err(|_| err("bad seed".into()))?,
            cycle: parts[1].parse().map_err(|_| err("bad cycle".into()))?,
            strategy: parts[2].to_string(),
            accuracy: parts[3].parse().map_err(|_| err("bad accuracy".into()))?,
            precision: parts[4].parse().map_err(|_| err("bad precision".into()))?,
            n_labeled: parts[5].parse().map_err(|_| err("bad n_labeled".into()))?,
            n_active_unknown: parts[6]
                .parse()
                .map_err(|_| err("bad n_active_unknown".into()))?,
            n_unlabeled: parts[7].parse().map_err(|_| err("bad n_unlabeled".into()))?,
            wall_ms: parts[8].parse().map_err(|_| err("bad wall_ms".into()))?,
        });
    }
    Ok(rows)
}

/// Per-(strategy, cycle) aggregate of accuracy and precision across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub cycle: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregates round rows by (strategy, cycle), ordered the same way.
pub fn summarize(rows: &[RoundRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize)> = rows
        .iter()
        .map(|r| (r.strategy.clone(), r.cycle))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(strategy, cycle)| {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.cycle == cycle)
                .map(|r| r.accuracy)
                .collect();
            let prec: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.cycle == cycle)
                .map(|r| r.precision)
                .collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (precision_mean, precision_std) = mean_std(&prec);
            SummaryRow {
                strategy,
                cycle,
                accuracy_mean,
                accuracy_std,
                precision_mean,
                precision_std,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str =
    "strategy,cycle,accuracy_mean,accuracy_std,precision_mean,precision_std";

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.strategy, r.cycle, r.accuracy_mean, r.accuracy_std, r.precision_mean, r.precision_std
        ));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::example_toml;

    /// A small, fast configuration for harness tests.
    fn small_config(strategy: &str) -> ExperimentConfig {
        let text = crate::config::apply_overrides(
            example_toml(),
            &[
                format!("strategy.name=\"{strategy}\""),
                "dataset.per_class=40".to_string(),
                "dataset.dim=6".to_string(),
                "dataset.n_classes=6".to_string(),
                "split.mismatch_ratio=0.5".to_string(),
                "split.initial_label_fraction=0.05".to_string(),
                "strategy.budget=20".to_string(),
                "strategy.cycles=2".to_string(),
                "training.epochs=8".to_string(),
                "training.hidden_dims=[16,8]".to_string(),
                "experiment.seeds=[1]".to_string(),
                "output.measure_wall_time=false".to_string(),
            ],
        )
        .unwrap();
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn oracle_annotation_partitions_by_ground_truth() {
        let ds: Dataset<f64> = generate_blobs(6, 10, 4, 5.0, 1.0, 3).unwrap();
        let split = make_split(&ds, 0.5, 4).unwrap();
        let known_ids: Vec<u64> = ds
            .samples()
            .iter()
            .filter(|s| split.is_known(s.true_class))
            .map(|s| s.id)
            .take(3)
            .collect();
        let unknown_ids: Vec<u64> = ds
            .samples()
            .iter()
            .filter(|s| !split.is_known(s.true_class))
            .map(|s| s.id)
            .take(2)
            .collect();

        let (k, u) = oracle_annotate(&ds, &split, &known_ids).unwrap();
        assert_eq!(k.len(), 3);
        assert!(u.is_empty());

        let (k, u) = oracle_annotate(&ds, &split, &unknown_ids).unwrap();
        assert!(k.is_empty());
        assert_eq!(u.len(), 2);

        let mixed: Vec<u64> = known_ids.into_iter().chain(unknown_ids).collect();
        let (k, u) = oracle_annotate(&ds, &split, &mixed).unwrap();
        assert_eq!((k.len(), u.len()), (3, 2));
        assert!((k.len() as f64 / mixed.len() as f64 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn single_seed_single_cycle_emits_one_round() {
        let mut config = small_config("random");
        config.strategy.cycles = 1;
        let result = run_experiment::<f64>(&config, None).unwrap();
        assert!(result.failures().is_empty());
        assert_eq!(result.seeds.len(), 1);
        assert_eq!(result.seeds[0].rounds.len(), 1);
        let rows = result.to_rows();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].strategy, "random");
    }

    #[test]
    fn eoal_cycles_populate_active_unknowns_and_conserve_pools() {
        let config = small_config("eoal");
        let dataset: Dataset<f64> = build_dataset(&config).unwrap();
        let rounds = run_seed(&dataset, &config, 1, None).unwrap();
        assert_eq!(rounds.len(), 2);
        // Non-test pool mass is conserved; annotations only move ids around.
        let non_test = rounds[0].n_labeled + rounds[0].n_active_unknown + rounds[0].n_unlabeled;
        let mut annotated_prev = None;
        for m in &rounds {
            assert_eq!(m.n_labeled + m.n_active_unknown + m.n_unlabeled, non_test);
            // Budget spent exactly: labeled + active unknowns grow by b.
            let annotated = m.n_labeled + m.n_active_unknown;
            if let Some(prev) = annotated_prev {
                assert_eq!(annotated, prev + config.strategy.budget);
            }
            annotated_prev = Some(annotated);
            assert!(m.precision >= 0.0 && m.precision <= 1.0);
            assert!(m.accuracy >= 0.0 && m.accuracy <= 1.0);
        }
        // Some queried samples were true unknowns on this mixed pool.
        assert!(rounds.last().unwrap().n_active_unknown > 0);
    }

    #[test]
    fn experiments_are_deterministic() {
        let config = small_config("eoal");
        let a = run_experiment::<f64>(&config, None).unwrap();
        let b = run_experiment::<f64>(&config, None).unwrap();
        assert_eq!(a.to_rows(), b.to_rows());
    }

    #[test]
    fn rounds_csv_round_trips() {
        let rows = vec![
            RoundRow {
                seed: 1,
                cycle: 0,
                strategy: "eoal".into(),
                accuracy: 0.8125,
                precision: 0.55,
                n_labeled: 32,
                n_active_unknown: 9,
                n_unlabeled: 400,
                wall_ms: 0,
            },
            RoundRow {
                seed: 2,
                cycle: 1,
                strategy: "eoal".into(),
                accuracy: 0.9,
                precision: 0.7,
                n_labeled: 52,
                n_active_unknown: 12,
                n_unlabeled: 380,
                wall_ms: 3,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        write_rounds_csv(&path, &rows).unwrap();
        assert_eq!(read_rounds_csv(&path).unwrap(), rows);
    }

    #[test]
    fn summary_aggregates_mean_and_std() {
        let mk = |seed, cycle, acc, prec| RoundRow {
            seed,
            cycle,
            strategy: "eoal".into(),
            accuracy: acc,
            precision: prec,
            n_labeled: 0,
            n_active_unknown: 0,
            n_unlabeled: 0,
            wall_ms: 0,
        };
        let rows = vec![mk(1, 0, 0.8, 0.5), mk(2, 0, 0.6, 0.7), mk(1, 1, 0.9, 0.9)];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2);
        assert!((summary[0].accuracy_mean - 0.7).abs() < 1e-12);
        let expected_std = ((0.1f64 * 0.1 + 0.1 * 0.1) / 1.0).sqrt();
        assert!((summary[0].accuracy_std - expected_std).abs() < 1e-12);
        // Single-seed cycle has zero stddev.
        assert_eq!(summary[1].accuracy_std, 0.0);
        assert_eq!(summary[1].accuracy_mean, 0.9);
    }

    #[test]
    fn failed_seeds_are_recorded_not_fatal() {
        let mut config = small_config("random");
        // A budget larger than the pool still works; exhaust the pool in one
        // cycle, then the next cycle finds it empty and fails.
        config.strategy.budget = 100_000;
        config.strategy.cycles = 2;
        let result = run_experiment::<f64>(&config, None).unwrap();
        let failures = result.failures();
        assert_eq!(failures.len(), 1);
        assert!(failures[0].1.contains("unlabeled pool is empty"));
    }
}
