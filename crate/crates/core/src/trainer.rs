//! End-to-end training loop: sample a partition, embed it, build the
//! affinity graph, mine triplets, then alternate per mini-batch between
//! Riemannian optimization of the metric factor (network fixed) and one SGD
//! step on the network (factor fixed).
//!
//! Two modes:
//!
//! * `Stochastic`: the pipeline above, one fresh partition per round.
//!   Plain SGD carries no per-step descent guarantee, so the log records
//!   losses without asserting monotonicity.
//! * `Fullbatch`: one partition, graph and triplets built once from the
//!   initial embeddings, all triplets as a single batch, and the network
//!   step accepted only if it decreases the objective (halving the rate up
//!   to 20 times, else rejecting). With the factor phase already monotone
//!   by line search, the recorded round losses are non-increasing, which
//!   makes the convergence argument directly testable.

use nalgebra::DMatrix;
use serde::Serialize;
use std::time::Instant;

use crate::dataset::{sample_partition, Dataset};
use crate::error::{Contextualize, Error, Result};
use crate::eval::{evaluate_embeddings, EvalReport};
use crate::graph::AffinityGraph;
use crate::loss::{build_batch, grad_metric, grad_points, loss, LossConfig, MetricFactor};
use crate::manifold::{optimize_factor, RiemannianOptConfig};
use crate::mining::{batch_triplets, mine_triplets, TripletBatch};
use crate::net::{EmbedNet, LrSchedule, SgdConfig};
use crate::rng::derive_seed;

// seed stream tags
const STREAM_PARTITION: u64 = 1;
const STREAM_BATCHES: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Training schedule variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Stochastic,
    Fullbatch,
}

/// All knobs of the training loop.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Propagation weight in (0, 1).
    pub gamma: f64,
    /// kNN graph degree.
    pub k: usize,
    /// Loss angle in degrees.
    pub alpha_deg: f64,
    /// Rank l of the metric factor.
    pub metric_rank: usize,
    /// Mini-batch size in triplets.
    pub t_b: usize,
    /// Unlabeled examples sampled per partition.
    pub n_p: usize,
    /// Outer rounds T (0 is a no-op).
    pub outer_rounds: usize,
    pub epochs_per_partition: usize,
    pub riemann: RiemannianOptConfig,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub mode: TrainMode,
    /// K values for validation snapshots.
    pub eval_ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            k: 10,
            alpha_deg: 40.0,
            metric_rank: 64,
            t_b: 100,
            n_p: 9000,
            outer_rounds: 5,
            epochs_per_partition: 10,
            riemann: RiemannianOptConfig::default(),
            sgd: SgdConfig::default(),
            seed: 0,
            mode: TrainMode::Stochastic,
            eval_ks: vec![1, 2, 4, 8],
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.alpha_deg)
    }

    fn validate(&self, net: &EmbedNet) -> Result<()> {
        if self.metric_rank > net.out_dim() {
            return Err(Error::invalid(format!(
                "metric_rank {} exceeds embedding dimension {}",
                self.metric_rank,
                net.out_dim()
            )));
        }
        if self.t_b < 1 {
            return Err(Error::invalid("t_b must be >= 1"));
        }
        if self.k < 2 {
            return Err(Error::invalid("k must be >= 2"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma must be in (0, 1)"));
        }
        self.loss_config().map(|_| ())
    }
}

/// One alternate step's measurements.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss_before: f64,
    pub loss_after_metric: f64,
    pub metric_grad_norm: f64,
    pub point_grad_norm: f64,
}

/// Mutable training state threaded through [`alternate_step`].
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: EmbedNet,
    pub factor: MetricFactor,
    /// 1-based counter of network updates, drives the lr schedule.
    pub theta_step: u64,
}

/// Per-step log record. Wall time is measured but not serialized, so logs
/// from identical (config, seed) runs are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub round: usize,
    pub partition: usize,
    pub epoch: usize,
    pub batch: usize,
    pub loss_before: f64,
    pub loss_after_metric: f64,
    pub metric_grad_norm: f64,
    pub point_grad_norm: f64,
    #[serde(skip)]
    pub wall_micros: u128,
}

/// Per-round snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub partition: usize,
    pub nodes: usize,
    pub triplets: usize,
    /// Fullbatch: the exact objective after the round. Stochastic: mean of
    /// the round's post-step batch losses.
    pub loss: f64,
    pub val: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Round(RoundRecord),
}

/// Full training trace plus the index of the best validation round.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub best_round: Option<usize>,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Round(s) => Some(s),
            _ => None,
        })
    }

    /// Line-delimited JSON: one record per line, then a summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({
            "type": "summary",
            "best_round": self.best_round,
        }))?);
        out.push('\n');
        Ok(out)
    }
}

/// Result of [`train`]: the selected model and the log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: EmbedNet,
    pub factor: MetricFactor,
    pub log: TrainLog,
}

/// On-disk model: the network checkpoint plus the metric factor in
/// row-major order. Version 1.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net: crate::net::NetCheckpoint,
    pub factor_dim: usize,
    pub factor_rank: usize,
    pub factor_row_major: Vec<f64>,
}

impl Checkpoint {
    pub fn capture(net: &EmbedNet, factor: &MetricFactor) -> Self {
        Checkpoint {
            version: 1,
            net: net.to_checkpoint(),
            factor_dim: factor.dim(),
            factor_rank: factor.rank(),
            factor_row_major: factor
                .as_matrix()
                .row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect(),
        }
    }

    pub fn restore(&self) -> Result<(EmbedNet, MetricFactor)> {
        if self.version != 1 {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.factor_row_major.len() != self.factor_dim * self.factor_rank {
            return Err(Error::invalid("factor size mismatch in checkpoint"));
        }
        let net = EmbedNet::from_checkpoint(&self.net)?;
        let factor = MetricFactor::new(DMatrix::from_row_slice(
            self.factor_dim,
            self.factor_rank,
            &self.factor_row_major,
        ))?;
        Ok((net, factor))
    }
}

/// Snapshot consumer invoked after every round (checkpointing hook).
pub type RoundCallback<'a> =
    &'a mut dyn FnMut(usize, &EmbedNet, &MetricFactor, Option<&EvalReport>) -> Result<()>;

/// One factor-then-network step on a prepared batch.
///
/// `inputs` holds the raw feature columns the batch indices refer to. The
/// factor phase runs at most `riemann.max_iter` line-searched Riemannian
/// iterations with the embeddings fixed; the network phase takes exactly one
/// SGD step at the new factor. The factor stays orthonormal throughout.
pub fn alternate_step(
    state: &mut TrainState,
    inputs: &DMatrix<f64>,
    batch: &TripletBatch,
    loss_cfg: &LossConfig,
    riemann: &RiemannianOptConfig,
    sgd: &SgdConfig,
) -> Result<StepStats> {
    let (embeddings, cache) = state.net.forward(inputs)?;
    let template = build_batch(&embeddings, batch)?;

    let mut before = template.clone();
    let loss_before = loss(&state.factor, loss_cfg, &mut before)?;

    // factor phase: network fixed
    let report = optimize_factor(
        &state.factor,
        |candidate| {
            let mut bm = template.clone();
            let value = loss(candidate, loss_cfg, &mut bm)?;
            let grad = grad_metric(candidate, loss_cfg, &bm)?;
            Ok((value, grad))
        },
        riemann,
    )?;
    state.factor = report.factor.clone();

    // network phase: factor fixed
    let mut bm = template;
    loss(&state.factor, loss_cfg, &mut bm)?;
    let d_points = grad_points(&state.factor, loss_cfg, &bm, batch, embeddings.ncols())?;
    let point_grad_norm = d_points.norm();
    let (grads, _) = state.net.backward(&cache, &d_points)?;
    state.theta_step += 1;
    state.net.sgd_step(&grads, sgd, state.theta_step)?;

    Ok(StepStats {
        loss_before,
        loss_after_metric: report.cost,
        metric_grad_norm: report.grad_norm,
        point_grad_norm,
    })
}

/// Prepared per-partition data: raw inputs and mined triplets.
struct PartitionStage {
    inputs: DMatrix<f64>, // D×n, columns follow the partition's node order
    triplets: Vec<crate::mining::Triplet>,
    nodes: usize,
}

fn stage_partition(
    ds: &Dataset,
    net: &EmbedNet,
    cfg: &TrainConfig,
    round: usize,
) -> Result<PartitionStage> {
    let partition = sample_partition(
        ds,
        cfg.n_p,
        derive_seed(cfg.seed, derive_seed(STREAM_PARTITION, round as u64)),
    )?;
    let node_rows = ds.gather(&partition.node_indices());
    let inputs = node_rows.transpose();
    let embeddings = net.embed(&inputs)?;
    let graph = AffinityGraph::build(
        &embeddings.transpose(),
        &partition.node_labels(ds),
        cfg.k,
        cfg.gamma,
    )?;
    let anchors: Vec<usize> = (0..graph.n).collect();
    let triplets = mine_triplets(&graph.w, &graph.knn, &anchors)?;
    Ok(PartitionStage {
        inputs,
        triplets,
        nodes: graph.n,
    })
}

/// Runs the full loop for `cfg.outer_rounds` rounds and returns the
/// selected model (best validation Recall@min-K when `val` is given,
/// else the final iterate) together with the log.
pub fn train(
    ds: &Dataset,
    net0: &EmbedNet,
    factor0: &MetricFactor,
    cfg: &TrainConfig,
    val: Option<&Dataset>,
    mut on_round: Option<RoundCallback>,
) -> Result<TrainOutcome> {
    cfg.validate(net0)?;
    if factor0.orthonormality_error() > 1e-8 {
        return Err(Error::invalid("initial factor must be orthonormal"));
    }
    if factor0.dim() != net0.out_dim() || factor0.rank() != cfg.metric_rank {
        return Err(Error::invalid(format!(
            "factor is {}x{}, expected {}x{}",
            factor0.dim(),
            factor0.rank(),
            net0.out_dim(),
            cfg.metric_rank
        )));
    }
    let loss_cfg = cfg.loss_config()?;
    let mut state = TrainState {
        net: net0.clone(),
        factor: factor0.clone(),
        theta_step: 0,
    };
    let mut log = TrainLog::default();
    let mut step_counter: u64 = 0;
    let mut best: Option<(f64, usize, EmbedNet, MetricFactor)> = None;

    // fullbatch: the partition, graph, and triplet set are fixed up front,
    // so the objective is a fixed function of (theta, L) and the round
    // losses can be compared across rounds
    let mut fullbatch_stage: Option<PartitionStage> = None;
    if cfg.mode == TrainMode::Fullbatch && cfg.outer_rounds > 0 {
        fullbatch_stage = Some(stage_partition(ds, &state.net, cfg, 1)?);
    }

    for round in 1..=cfg.outer_rounds {
        let round_loss;
        let (partition_id, nodes, n_triplets);
        match cfg.mode {
            TrainMode::Stochastic => {
                let stage = stage_partition(ds, &state.net, cfg, round)
                    .context_with(|| format!("round {round}"))?;
                partition_id = round;
                nodes = stage.nodes;
                n_triplets = stage.triplets.len();
                let mut loss_sum = 0.0;
                let mut loss_count = 0usize;
                for epoch in 0..cfg.epochs_per_partition {
                    let batch_seed = derive_seed(
                        cfg.seed,
                        derive_seed(STREAM_BATCHES, (round as u64) << 20 | epoch as u64),
                    );
                    let batches = batch_triplets(&stage.triplets, cfg.t_b, batch_seed)?;
                    for (batch_id, batch) in batches.iter().enumerate() {
                        let started = Instant::now();
                        let stats = alternate_step(
                            &mut state,
                            &stage.inputs,
                            batch,
                            &loss_cfg,
                            &cfg.riemann,
                            &cfg.sgd,
                        )
                        .context_with(|| {
                            format!("round {round} epoch {epoch} batch {batch_id}")
                        })?;
                        step_counter += 1;
                        loss_sum += stats.loss_after_metric;
                        loss_count += 1;
                        log.records.push(LogRecord::Step(StepRecord {
                            step: step_counter,
                            round,
                            partition: partition_id,
                            epoch,
                            batch: batch_id,
                            loss_before: stats.loss_before,
                            loss_after_metric: stats.loss_after_metric,
                            metric_grad_norm: stats.metric_grad_norm,
                            point_grad_norm: stats.point_grad_norm,
                            wall_micros: started.elapsed().as_micros(),
                        }));
                    }
                }
                round_loss = if loss_count > 0 {
                    loss_sum / loss_count as f64
                } else {
                    f64::NAN
                };
            }
            TrainMode::Fullbatch => {
                let stage = fullbatch_stage.as_ref().expect("staged above");
                partition_id = 1;
                nodes = stage.nodes;
                n_triplets = stage.triplets.len();
                let batch = TripletBatch {
                    triplets: stage.triplets.clone(),
                };
                let started = Instant::now();
                let (stats, j_round) = fullbatch_round(
                    &mut state,
                    &stage.inputs,
                    &batch,
                    &loss_cfg,
                    &cfg.riemann,
                    &cfg.sgd,
                )
                .context_with(|| format!("round {round}"))?;
                step_counter += 1;
                log.records.push(LogRecord::Step(StepRecord {
                    step: step_counter,
                    round,
                    partition: partition_id,
                    epoch: 0,
                    batch: 0,
                    loss_before: stats.loss_before,
                    loss_after_metric: stats.loss_after_metric,
                    metric_grad_norm: stats.metric_grad_norm,
                    point_grad_norm: stats.point_grad_norm,
                    wall_micros: started.elapsed().as_micros(),
                }));
                round_loss = j_round;
            }
        }
        if !round_loss.is_finite() && cfg.epochs_per_partition > 0 && n_triplets >= cfg.t_b {
            return Err(Error::numerical(format!(
                "non-finite loss in round {round}"
            )));
        }

        let val_report = match val {
            Some(vds) => Some(
                evaluate_round(&state, vds, cfg, round)
                    .context_with(|| format!("validation after round {round}"))?,
            ),
            None => None,
        };
        if let Some(report) = &val_report {
            let score = report.recall.values().next().copied().unwrap_or(report.nmi);
            let improved = best.as_ref().is_none_or(|(b, ..)| score > *b);
            if improved {
                best = Some((score, round, state.net.clone(), state.factor.clone()));
            }
        }
        if let Some(cb) = on_round.as_mut() {
            cb(round, &state.net, &state.factor, val_report.as_ref())?;
        }
        log.records.push(LogRecord::Round(RoundRecord {
            round,
            partition: partition_id,
            nodes,
            triplets: n_triplets,
            loss: round_loss,
            val: val_report,
        }));
    }

    let (net, factor) = match best {
        Some((_, round, net, factor)) => {
            log.best_round = Some(round);
            (net, factor)
        }
        None => (state.net, state.factor),
    };
    Ok(TrainOutcome { net, factor, log })
}

/// One fullbatch round: monotone factor phase, then a network step accepted
/// only on decrease (rate halved up to 20 times, else the step is skipped).
/// Returns the step stats and the objective at the end of the round.
fn fullbatch_round(
    state: &mut TrainState,
    inputs: &DMatrix<f64>,
    batch: &TripletBatch,
    loss_cfg: &LossConfig,
    riemann: &RiemannianOptConfig,
    sgd: &SgdConfig,
) -> Result<(StepStats, f64)> {
    let (embeddings, cache) = state.net.forward(inputs)?;
    let template = build_batch(&embeddings, batch)?;
    let mut before = template.clone();
    let loss_before = loss(&state.factor, loss_cfg, &mut before)?;

    let report = optimize_factor(
        &state.factor,
        |candidate| {
            let mut bm = template.clone();
            let value = loss(candidate, loss_cfg, &mut bm)?;
            let grad = grad_metric(candidate, loss_cfg, &bm)?;
            Ok((value, grad))
        },
        riemann,
    )?;
    state.factor = report.factor.clone();
    let loss_after_metric = report.cost;

    let mut bm = template;
    loss(&state.factor, loss_cfg, &mut bm)?;
    let d_points = grad_points(&state.factor, loss_cfg, &bm, batch, embeddings.ncols())?;
    let point_grad_norm = d_points.norm();
    let (grads, _) = state.net.backward(&cache, &d_points)?;

    let mut j_round = loss_after_metric;
    let mut rate = sgd.rate_at(state.theta_step + 1);
    for _ in 0..=20 {
        let mut candidate = state.net.clone();
        candidate.sgd_step(
            &grads,
            &SgdConfig {
                lr: rate,
                schedule: LrSchedule::Constant,
            },
            1,
        )?;
        let cand_embeddings = candidate.embed(inputs)?;
        let mut cand_bm = build_batch(&cand_embeddings, batch)?;
        let cand_loss = loss(&state.factor, loss_cfg, &mut cand_bm)?;
        if cand_loss < loss_after_metric {
            state.net = candidate;
            state.theta_step += 1;
            j_round = cand_loss;
            break;
        }
        rate *= 0.5;
    }

    Ok((
        StepStats {
            loss_before,
            loss_after_metric,
            metric_grad_norm: report.grad_norm,
            point_grad_norm,
        },
        j_round,
    ))
}

fn evaluate_round(
    state: &TrainState,
    val: &Dataset,
    cfg: &TrainConfig,
    round: usize,
) -> Result<EvalReport> {
    let labels: Vec<usize> = val
        .labels()
        .iter()
        .map(|l| l.ok_or_else(|| Error::invalid("validation set must be fully labeled")))
        .collect::<Result<_>>()?;
    // drop K values the split is too small for
    let ks: Vec<usize> = cfg
        .eval_ks
        .iter()
        .copied()
        .filter(|&k| k < val.len())
        .collect();
    if ks.is_empty() {
        return Err(Error::invalid(format!(
            "validation set of {} examples supports none of the requested K values",
            val.len()
        )));
    }
    let inputs = val.features().transpose();
    let embeddings = state.net.embed(&inputs)?;
    evaluate_embeddings(
        &embeddings.transpose(),
        &labels,
        &ks,
        derive_seed(cfg.seed, derive_seed(STREAM_EVAL, round as u64)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_blobs;
    use crate::mining::Triplet;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn small_cfg(l: usize) -> TrainConfig {
        TrainConfig {
            k: 4,
            metric_rank: l,
            t_b: 20,
            n_p: 1000,
            outer_rounds: 2,
            epochs_per_partition: 2,
            sgd: SgdConfig {
                lr: 0.05,
                schedule: LrSchedule::Constant,
            },
            ..Default::default()
        }
    }

    #[test]
    fn default_configuration_values() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.alpha_deg, 40.0);
        assert_eq!(cfg.t_b, 100);
        assert_eq!(cfg.n_p, 9000);
        assert_eq!(cfg.epochs_per_partition, 10);
        // 5 rounds x 10 epochs = the 50-epoch budget
        assert_eq!(cfg.outer_rounds * cfg.epochs_per_partition, 50);
        assert_eq!(cfg.riemann.max_iter, 10);
        assert_eq!(cfg.sgd.lr, 1e-4);
        assert_eq!(LossConfig::default().alpha_degrees(), 40.0);
    }

    #[test]
    fn zero_rounds_is_a_no_op() {
        let ds = gen_blobs(1, 2, 12, 5, 0.5, 0.5).unwrap();
        let net = EmbedNet::random(&[5, 6, 4], 0).unwrap();
        let factor = MetricFactor::random_orthonormal(4, 2, 1).unwrap();
        let cfg = TrainConfig {
            outer_rounds: 0,
            ..small_cfg(2)
        };
        let out = train(&ds, &net, &factor, &cfg, None, None).unwrap();
        assert_eq!(out.net.layers(), net.layers());
        assert_eq!(out.factor.as_matrix(), factor.as_matrix());
        assert!(out.log.records.is_empty());
    }

    #[test]
    fn stationary_batch_leaves_state_unchanged() {
        // points live in the first two coordinates; the factor spans the
        // last two, so all projected differences vanish
        let mut inputs = DMatrix::zeros(4, 6);
        let mut rng = rng_from_seed(3);
        for i in 0..6 {
            inputs[(0, i)] = StandardNormal.sample(&mut rng);
            inputs[(1, i)] = StandardNormal.sample(&mut rng);
        }
        // identity net on 4 dims, no normalization so embeddings = inputs
        let net = EmbedNet::new(
            vec![crate::net::Layer {
                weight: DMatrix::identity(4, 4),
                bias: nalgebra::DVector::zeros(4),
                activation: crate::net::Activation::None,
            }],
            false,
        )
        .unwrap();
        let factor = MetricFactor::new(DMatrix::from_row_slice(
            4,
            2,
            &[0., 0., 0., 0., 1., 0., 0., 1.],
        ))
        .unwrap();
        let batch = TripletBatch {
            triplets: vec![
                Triplet {
                    anchor: 0,
                    positive: 1,
                    negative: 2,
                },
                Triplet {
                    anchor: 3,
                    positive: 4,
                    negative: 5,
                },
            ],
        };
        let mut state = TrainState {
            net: net.clone(),
            factor: factor.clone(),
            theta_step: 0,
        };
        let stats = alternate_step(
            &mut state,
            &inputs,
            &batch,
            &LossConfig::default(),
            &RiemannianOptConfig::default(),
            &SgdConfig {
                lr: 0.1,
                schedule: LrSchedule::Constant,
            },
        )
        .unwrap();
        assert_eq!(stats.metric_grad_norm, 0.0);
        assert_eq!(stats.point_grad_norm, 0.0);
        assert!((state.factor.as_matrix() - factor.as_matrix()).amax() <= 1e-12);
        for (a, b) in state.net.layers().iter().zip(net.layers()) {
            assert!((&a.weight - &b.weight).amax() <= 1e-12);
        }
    }

    #[test]
    fn metric_phase_never_increases_loss() {
        // 100 random states; Armijo guarantees the factor phase is monotone
        let mut rng = rng_from_seed(7);
        for trial in 0..100 {
            let inputs = DMatrix::from_fn(5, 9, |_, _| StandardNormal.sample(&mut rng));
            let net = EmbedNet::random(&[5, 6, 4], 100 + trial).unwrap();
            let factor = MetricFactor::random_orthonormal(4, 2, 200 + trial).unwrap();
            let batch = TripletBatch {
                triplets: vec![
                    Triplet {
                        anchor: 0,
                        positive: 1,
                        negative: 2,
                    },
                    Triplet {
                        anchor: 3,
                        positive: 4,
                        negative: 5,
                    },
                    Triplet {
                        anchor: 6,
                        positive: 7,
                        negative: 8,
                    },
                ],
            };
            let mut state = TrainState {
                net,
                factor,
                theta_step: 0,
            };
            let stats = alternate_step(
                &mut state,
                &inputs,
                &batch,
                &LossConfig::default(),
                &RiemannianOptConfig::default(),
                &SgdConfig::default(),
            )
            .unwrap();
            assert!(
                stats.loss_after_metric <= stats.loss_before,
                "trial {trial}: {} -> {}",
                stats.loss_before,
                stats.loss_after_metric
            );
        }
    }

    #[test]
    fn training_runs_and_logs() {
        let ds = gen_blobs(5, 3, 20, 6, 0.6, 0.3).unwrap();
        let net = EmbedNet::random(&[6, 8, 4], 1).unwrap();
        let factor = MetricFactor::random_orthonormal(4, 2, 2).unwrap();
        let cfg = small_cfg(2);
        let out = train(&ds, &net, &factor, &cfg, None, None).unwrap();
        assert_eq!(out.log.rounds().count(), 2);
        assert!(out.log.steps().count() > 0);
        assert!(out.factor.orthonormality_error() <= 1e-8);
        // step counter is strictly increasing
        let steps: Vec<u64> = out.log.steps().map(|s| s.step).collect();
        assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
        // every logged loss is finite
        assert!(out.log.steps().all(|s| s.loss_before.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = gen_blobs(6, 3, 15, 5, 0.7, 0.4).unwrap();
        let (_, val) = crate::dataset::validation_split(&ds, 0.2, 9).unwrap();
        let net = EmbedNet::random(&[5, 6, 4], 3).unwrap();
        let factor = MetricFactor::random_orthonormal(4, 2, 4).unwrap();
        let cfg = TrainConfig {
            eval_ks: vec![1, 2],
            ..small_cfg(2)
        };
        let a = train(&ds, &net, &factor, &cfg, Some(&val), None).unwrap();
        let b = train(&ds, &net, &factor, &cfg, Some(&val), None).unwrap();
        assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
        assert_eq!(a.factor.as_matrix(), b.factor.as_matrix());
        assert_eq!(a.net.layers(), b.net.layers());
    }

    #[test]
    fn fullbatch_rounds_are_monotone() {
        let ds = gen_blobs(8, 3, 20, 6, 0.8, 0.2).unwrap();
        let net = EmbedNet::random(&[6, 8, 4], 5).unwrap();
        let factor = MetricFactor::random_orthonormal(4, 2, 6).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Fullbatch,
            outer_rounds: 10,
            sgd: SgdConfig {
                lr: 0.5,
                schedule: LrSchedule::Constant,
            },
            ..small_cfg(2)
        };
        let out = train(&ds, &net, &factor, &cfg, None, None).unwrap();
        let losses: Vec<f64> = out.log.rounds().map(|r| r.loss).collect();
        assert_eq!(losses.len(), 10);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0], "round loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn validation_selects_best_round() {
        let ds = gen_blobs(9, 3, 20, 6, 0.5, 0.3).unwrap();
        let (train_ds, val_ds) = crate::dataset::validation_split(&ds, 0.2, 1).unwrap();
        let net = EmbedNet::random(&[6, 8, 4], 7).unwrap();
        let factor = MetricFactor::random_orthonormal(4, 2, 8).unwrap();
        let cfg = TrainConfig {
            eval_ks: vec![1, 2, 4],
            ..small_cfg(2)
        };
        let mut callback_rounds = Vec::new();
        let mut cb =
            |round: usize, _n: &EmbedNet, _f: &MetricFactor, report: Option<&EvalReport>| {
                assert!(report.is_some());
                callback_rounds.push(round);
                Ok(())
            };
        let out = train(&train_ds, &net, &factor, &cfg, Some(&val_ds), Some(&mut cb)).unwrap();
        assert_eq!(callback_rounds, vec![1, 2]);
        assert!(out.log.best_round.is_some());
        let reported = out.log.rounds().filter(|r| r.val.is_some()).count();
        assert_eq!(reported, 2);
    }

    #[test]
    fn orthonormality_survives_many_alternate_steps() {
        let mut rng = rng_from_seed(50);
        let inputs = DMatrix::from_fn(6, 12, |_, _| StandardNormal.sample(&mut rng));
        let net = EmbedNet::random(&[6, 8, 5], 51).unwrap();
        let factor = MetricFactor::random_orthonormal(5, 3, 52).unwrap();
        let mut state = TrainState {
            net,
            factor,
            theta_step: 0,
        };
        use rand::Rng;
        let loss_cfg = LossConfig::default();
        let riemann = RiemannianOptConfig {
            max_iter: 3,
            ..Default::default()
        };
        let sgd = SgdConfig {
            lr: 0.01,
            schedule: LrSchedule::Constant,
        };
        for _ in 0..300 {
            let triplets: Vec<Triplet> = (0..4)
                .map(|_| loop {
                    let a = rng.random_range(0..12);
                    let p = rng.random_range(0..12);
                    let n = rng.random_range(0..12);
                    if a != p && a != n && p != n {
                        break Triplet {
                            anchor: a,
                            positive: p,
                            negative: n,
                        };
                    }
                })
                .collect();
            let batch = TripletBatch { triplets };
            alternate_step(&mut state, &inputs, &batch, &loss_cfg, &riemann, &sgd).unwrap();
            assert!(state.factor.orthonormality_error() <= 1e-8);
        }
    }
}
