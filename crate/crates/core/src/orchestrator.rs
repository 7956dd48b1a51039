//! The server-round loop: sample, broadcast, train, collect, aggregate,
//! evaluate, and account for bytes and simulated time.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{make_aggregator, AggregatorState, ClientUpdate};
use crate::config::{CostModel, ExperimentConfig};
use crate::error::{Error, Result};
use crate::model::{evaluate_classifier, init_params, local_train, LabeledExample, ModelParameters, ModelSpec, TrainOptions};
use crate::partition::{client_dataset, generate_synthetic, partition_iid, partition_label_shard, sample_sorted, Partition, PartitionScheme};
use crate::seed::{derive_seed, rng_for, SimRng, TAG_EVAL, TAG_HOLDOUT, TAG_INIT, TAG_SAMPLE, TAG_TRAIN};

/// Weights travel as 8-byte floats.
pub const BYTES_PER_VALUE: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round number.
    pub round_index: usize,
    pub participants: Vec<usize>,
    pub global_accuracy: f64,
    pub mean_client_loss: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub simulated_duration_s: f64,
    pub wall_clock_s: f64,
}

/// `max(1, round_half_even(fraction * k))`, capped at `k`.
pub fn participants_per_round(k: usize, fraction: f64) -> usize {
    let m = (fraction * k as f64).round_ties_even() as usize;
    m.clamp(1, k.max(1))
}

/// Uniformly samples participants without replacement; the result depends
/// only on `(seed, round_index)` and is sorted ascending.
pub fn sample_clients(k: usize, fraction: f64, round_index: usize, seed: u64) -> Vec<usize> {
    let m = participants_per_round(k, fraction);
    let mut rng = rng_for(seed, &[TAG_SAMPLE, round_index as u64]);
    sample_sorted(k, m, &mut rng)
}

/// `(bytes_down, bytes_up)` for broadcasting to and collecting full weight
/// vectors from `m` clients.
pub fn communication_bytes(m: u64, param_count: u64, bytes_per_value: u64) -> (u64, u64) {
    let per_direction = m * param_count * bytes_per_value;
    (per_direction, per_direction)
}

/// `per_round_s + max_k(epochs * n_k * per_example_s)` over the
/// participants' training-set sizes. Aggregation cost is not modelled.
pub fn simulated_duration(epochs: usize, participant_sizes: &[usize], cost: &CostModel) -> f64 {
    let slowest = participant_sizes
        .iter()
        .map(|&n| epochs as f64 * n as f64 * cost.per_example_s)
        .fold(0.0, f64::max);
    cost.per_round_s + slowest
}

/// Live state of one simulated federated run.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    spec: ModelSpec,
    partition: Partition,
    train: Vec<Vec<LabeledExample>>,
    holdout: Vec<Vec<LabeledExample>>,
    global: ModelParameters,
    aggregator: AggregatorState,
    rounds_done: usize,
}

impl Experiment {
    /// Builds data, partition, hold-out split and initial weights from the
    /// config. Fails if any client would be left without training data.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec();
        let dataset = generate_synthetic(&config.synthetic_spec())?;
        let partition = match config.partition_scheme() {
            PartitionScheme::Iid => partition_iid(dataset.len(), config.num_clients, config.seed)?,
            PartitionScheme::LabelShard { classes_per_client } => {
                let labels: Vec<usize> = dataset.iter().map(|e| e.label).collect();
                partition_label_shard(&labels, config.num_clients, classes_per_client, config.seed)?
            }
        };
        let mut train = Vec::with_capacity(config.num_clients);
        let mut holdout = Vec::with_capacity(config.num_clients);
        for client in 0..config.num_clients {
            let (t, h) = split_holdout(
                client_dataset(&partition, &dataset, client)?,
                config.holdout_fraction,
                &mut rng_for(config.seed, &[TAG_HOLDOUT, client as u64]),
            );
            if t.is_empty() {
                return Err(Error::EmptyClient(client));
            }
            train.push(t);
            holdout.push(h);
        }
        if holdout.iter().all(Vec::is_empty) {
            return Err(Error::InvalidInput("hold-out pool is empty; raise holdout_fraction".into()));
        }
        let global = init_params(&spec, derive_seed(config.seed, &[TAG_INIT]))?;
        let aggregator = make_aggregator(&config.aggregator, global.len())?;
        Ok(Self {
            config,
            spec,
            partition,
            train,
            holdout,
            global,
            aggregator,
            rounds_done: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn global(&self) -> &ModelParameters {
        &self.global
    }

    pub fn aggregator(&self) -> &AggregatorState {
        &self.aggregator
    }

    pub fn client_train_data(&self, client: usize) -> &[LabeledExample] {
        &self.train[client]
    }

    pub fn client_holdout(&self, client: usize) -> &[LabeledExample] {
        &self.holdout[client]
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }

    /// Seed used by `client` for its local training in `round_index`.
    pub fn train_seed(&self, round_index: usize, client: usize) -> u64 {
        derive_seed(self.config.seed, &[TAG_TRAIN, round_index as u64, client as u64])
    }

    /// Runs the next round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let started = Instant::now();
        let round_index = self.rounds_done + 1;
        let cfg = &self.config;
        let participants = sample_clients(cfg.num_clients, cfg.fraction, round_index, cfg.seed);
        let prox_mu = self.aggregator.client_prox_mu();

        let updates: Vec<ClientUpdate> = participants
            .par_iter()
            .map(|&client| {
                let opts = TrainOptions {
                    epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                    lr: cfg.local_lr,
                    prox_mu,
                    seed: self.train_seed(round_index, client),
                };
                let data = &self.train[client];
                let (params, train_loss) = local_train(&self.spec, &self.global, data, &self.global, &opts)?;
                Ok(ClientUpdate {
                    client_id: client,
                    params,
                    num_examples: data.len(),
                    train_loss,
                })
            })
            .collect::<Result<_>>()?;

        let next = self.aggregator.aggregate(&self.global, &updates)?;
        self.global = next;
        self.rounds_done = round_index;

        let accuracy = self.evaluate(round_index)?;
        let mean_client_loss = updates.iter().map(|u| u.train_loss).sum::<f64>() / updates.len() as f64;
        let (bytes_down, bytes_up) =
            communication_bytes(participants.len() as u64, self.global.len() as u64, BYTES_PER_VALUE);
        let sizes: Vec<usize> = participants.iter().map(|&c| self.train[c].len()).collect();
        Ok(RoundMetrics {
            round_index,
            participants,
            global_accuracy: accuracy,
            mean_client_loss,
            bytes_up,
            bytes_down,
            simulated_duration_s: simulated_duration(self.config.local_epochs, &sizes, &self.config.cost),
            wall_clock_s: started.elapsed().as_secs_f64(),
        })
    }

    /// Accuracy of the current global model on the evaluation pool: the
    /// union of hold-outs of every client when `eval_fraction` is 1,
    /// otherwise of a per-round sample of clients.
    fn evaluate(&self, round_index: usize) -> Result<f64> {
        let eligible: Vec<usize> = (0..self.config.num_clients)
            .filter(|&c| !self.holdout[c].is_empty())
            .collect();
        let chosen: Vec<usize> = if self.config.eval_fraction >= 1.0 {
            eligible
        } else {
            let m = participants_per_round(eligible.len(), self.config.eval_fraction);
            let mut rng = rng_for(self.config.seed, &[TAG_EVAL, round_index as u64]);
            sample_sorted(eligible.len(), m, &mut rng)
                .into_iter()
                .map(|i| eligible[i])
                .collect()
        };
        let pool: Vec<LabeledExample> = chosen
            .iter()
            .flat_map(|&c| self.holdout[c].iter().cloned())
            .collect();
        evaluate_classifier(&self.spec, &self.global, &pool)
    }
}

/// Seeded split of a client's examples into `(train, holdout)`; the
/// hold-out takes `floor(fraction * n)` examples.
fn split_holdout(
    mut examples: Vec<LabeledExample>,
    fraction: f64,
    rng: &mut SimRng,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    use rand::seq::SliceRandom;
    examples.shuffle(rng);
    let n_hold = (fraction * examples.len() as f64).floor() as usize;
    let train = examples.split_off(n_hold);
    (train, examples)
}

/// Runs every round of `config` and returns the per-round metrics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    let mut exp = Experiment::new(config.clone())?;
    (0..config.rounds).map(|_| exp.run_round()).collect()
}

/// Total simulated duration over all rounds.
pub fn total_simulated_duration(metrics: &[RoundMetrics]) -> f64 {
    metrics.iter().map(|m| m.simulated_duration_s).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{AggregatorConfig, AggregatorKind};
    use crate::config::Distribution;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            rounds: 3,
            num_clients: 4,
            local_epochs: 2,
            ..ExperimentConfig::default()
        };
        cfg.data.examples_per_class = 20;
        cfg.data.num_classes = 4;
        cfg.data.input_dim = 3;
        cfg.hidden_dim = 5;
        cfg
    }

    #[test]
    fn participant_counts() {
        assert_eq!(sample_clients(20, 0.1, 1, 0).len(), 2);
        assert_eq!(sample_clients(20, 1.0, 3, 0), (0..20).collect::<Vec<_>>());
        assert_eq!(participants_per_round(3, 0.5), 2);
        assert_eq!(participants_per_round(5, 0.5), 2);
        assert_eq!(participants_per_round(7, 0.5), 4);
        assert_eq!(participants_per_round(20, 0.01), 1);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_clients(20, 0.5, 4, 9);
        assert_eq!(a, sample_clients(20, 0.5, 4, 9));
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup, a);
        assert!((1..10).any(|r| sample_clients(20, 0.5, r, 9) != a));
    }

    #[test]
    fn bytes_and_duration() {
        assert_eq!(communication_bytes(2, 35, 8), (560, 560));
        assert_eq!(communication_bytes(2, 70, 8), (1120, 1120));
        let cost = CostModel { per_example_s: 0.0, per_round_s: 3.0 };
        assert_eq!(simulated_duration(5, &[10, 40], &cost), 3.0);
        let cost = CostModel { per_example_s: 0.5, per_round_s: 1.0 };
        assert_eq!(simulated_duration(2, &[10, 40], &cost), 1.0 + 40.0);
        assert_eq!(simulated_duration(4, &[10, 40], &cost), 1.0 + 80.0);
    }

    #[test]
    fn rounds_produce_metrics() {
        let cfg = small_config();
        let metrics = run_experiment(&cfg).unwrap();
        assert_eq!(metrics.len(), 3);
        let params = cfg.model_spec().param_count() as u64;
        for (i, m) in metrics.iter().enumerate() {
            assert_eq!(m.round_index, i + 1);
            assert_eq!(m.participants.len(), 2);
            assert_eq!(m.bytes_up, 2 * 8 * params);
            assert!((0.0..=1.0).contains(&m.global_accuracy));
        }
    }

    #[test]
    fn empty_client_rejected_at_setup() {
        let mut cfg = small_config();
        cfg.distribution = Distribution::LabelShard;
        cfg.num_clients = 100;
        cfg.classes_per_client = 1;
        // 80 examples over 100 shards leaves clients empty
        assert!(matches!(Experiment::new(cfg), Err(Error::EmptyClient(_))));
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        for kind in [AggregatorKind::FedAvg, AggregatorKind::FedProx, AggregatorKind::FedAdam] {
            let mut cfg = small_config();
            cfg.aggregator = AggregatorConfig::with_defaults(kind);
            let mut exp = Experiment::new(cfg).unwrap();
            exp.config.local_lr = 0.0;
            let start = exp.global().clone();
            for _ in 0..3 {
                exp.run_round().unwrap();
                assert_eq!(exp.global(), &start, "{kind}");
            }
        }
    }

    #[test]
    fn eval_fraction_subsamples_pool() {
        let mut cfg = small_config();
        cfg.eval_fraction = 0.5;
        let metrics = run_experiment(&cfg).unwrap();
        assert_eq!(metrics, {
            let again = run_experiment(&cfg).unwrap();
            metrics.iter().zip(again).map(|(a, b)| RoundMetrics { wall_clock_s: a.wall_clock_s, ..b }).collect::<Vec<_>>()
        });
    }

    #[test]
    fn holdout_is_a_fifth() {
        let exp = Experiment::new(small_config()).unwrap();
        let held: usize = (0..4).map(|c| exp.client_holdout(c).len()).sum();
        let trained: usize = (0..4).map(|c| exp.client_train_data(c).len()).sum();
        assert_eq!(held + trained, 80);
        for c in 0..4 {
            let n = exp.partition().assignments()[c].len();
            assert_eq!(exp.client_holdout(c).len(), n / 5);
        }
    }
}
