//! Deterministic federated-learning simulation.
//!
//! Clients own class-partitioned shards of a synthetic dataset, train small
//! softmax classifiers locally with mini-batch SGD, and a central server
//! combines their weights with FedAvg, FedProx or FedAdam. Every random
//! choice is derived from the experiment seed, so a run is reproducible
//! bit-for-bit regardless of how many threads train clients.
//!
//! The [`yolo`] module parses YOLO label files and provides IoU-based
//! detection metrics for working with real annotation corpora.

pub mod aggregation;
pub mod config;
pub mod error;
pub mod model;
pub mod orchestrator;
pub mod partition;
pub mod report;
pub mod seed;
pub mod yolo;

pub use aggregation::{
    fedadam_round, fedavg_round, make_aggregator, weighted_average, AggregatorConfig, AggregatorKind,
    AggregatorState, ClientUpdate, FedAdamState,
};
pub use config::{CostModel, DataConfig, Distribution, ExperimentConfig, SweepAxis, SweepCell, SweepSpec};
pub use error::{ConfigError, Error, Result};
pub use model::{
    evaluate_classifier, forward_loss_grad, init_params, local_train, LabeledExample, ModelKind, ModelParameters,
    ModelSpec, TensorShape, TrainOptions,
};
pub use orchestrator::{
    communication_bytes, run_experiment, sample_clients, simulated_duration, Experiment, RoundMetrics,
};
pub use partition::{
    client_dataset, generate_synthetic, partition_iid, partition_label_shard, Partition, PartitionScheme,
    SyntheticSpec,
};
pub use yolo::{corpus_stats, detection_accuracy, iou, parse_label_file, AnnotationRecord, BBox, CorpusStats};
