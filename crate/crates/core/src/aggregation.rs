//! Server-side aggregation of client updates.
//!
//! FedAvg and FedProx share the same server rule (example-weighted mean of
//! the returned weights); FedProx differs only in the proximal coefficient
//! handed to clients. FedAdam treats `mean - global` as a pseudo-gradient
//! and takes an Adam-style step without bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::model::ModelParameters;

pub const DEFAULT_PROX_MU: f64 = 0.01;
pub const DEFAULT_SERVER_LR: f64 = 0.01;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.99;
pub const DEFAULT_TAU: f64 = 1e-3;

/// Trained weights returned by one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParameters,
    pub num_examples: usize,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    FedAvg,
    FedProx,
    FedAdam,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::FedProx => "fedprox",
            AggregatorKind::FedAdam => "fedadam",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(AggregatorKind::FedAvg),
            "fedprox" => Ok(AggregatorKind::FedProx),
            "fedadam" => Ok(AggregatorKind::FedAdam),
            other => Err(format!("unknown aggregator `{other}` (expected fedavg, fedprox or fedadam)")),
        }
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Resolved aggregator hyperparameters. Fields not used by `kind` are
/// carried at their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub prox_mu: f64,
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

impl AggregatorConfig {
    pub fn with_defaults(kind: AggregatorKind) -> Self {
        Self {
            kind,
            prox_mu: DEFAULT_PROX_MU,
            server_lr: DEFAULT_SERVER_LR,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            tau: DEFAULT_TAU,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::at(None, key, msg))
            }
        };
        match self.kind {
            AggregatorKind::FedAvg => Ok(()),
            AggregatorKind::FedProx => check(
                self.prox_mu >= 0.0 && self.prox_mu.is_finite(),
                "aggregator.mu",
                "must be a non-negative number",
            ),
            AggregatorKind::FedAdam => {
                check(
                    self.server_lr > 0.0 && self.server_lr.is_finite(),
                    "aggregator.server_lr",
                    "must be positive",
                )?;
                check((0.0..1.0).contains(&self.beta1), "aggregator.beta1", "must lie in [0, 1)")?;
                check((0.0..1.0).contains(&self.beta2), "aggregator.beta2", "must lie in [0, 1)")?;
                check(self.tau > 0.0 && self.tau.is_finite(), "aggregator.tau", "must be positive")
            }
        }
    }
}

/// Server optimizer moments for FedAdam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAdamState {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl FedAdamState {
    pub fn zeroed(config: &AggregatorConfig, param_count: usize) -> Self {
        Self {
            server_lr: config.server_lr,
            beta1: config.beta1,
            beta2: config.beta2,
            tau: config.tau,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AggregatorState {
    FedAvg,
    FedProx { mu: f64 },
    FedAdam(FedAdamState),
}

impl AggregatorState {
    pub fn kind(&self) -> AggregatorKind {
        match self {
            AggregatorState::FedAvg => AggregatorKind::FedAvg,
            AggregatorState::FedProx { .. } => AggregatorKind::FedProx,
            AggregatorState::FedAdam(_) => AggregatorKind::FedAdam,
        }
    }

    /// Proximal coefficient clients should train with.
    pub fn client_prox_mu(&self) -> f64 {
        match self {
            AggregatorState::FedProx { mu } => *mu,
            _ => 0.0,
        }
    }

    /// Produces the next global model and advances any server state.
    pub fn aggregate(&mut self, global: &ModelParameters, updates: &[ClientUpdate]) -> Result<ModelParameters> {
        match self {
            AggregatorState::FedAvg | AggregatorState::FedProx { .. } => fedavg_round(global, updates),
            AggregatorState::FedAdam(state) => {
                let (next, new_state) = fedadam_round(state, global, updates)?;
                *state = new_state;
                Ok(next)
            }
        }
    }
}

/// Builds fresh aggregator state for a model with `param_count` weights.
pub fn make_aggregator(config: &AggregatorConfig, param_count: usize) -> Result<AggregatorState, ConfigError> {
    config.validate()?;
    Ok(match config.kind {
        AggregatorKind::FedAvg => AggregatorState::FedAvg,
        AggregatorKind::FedProx => AggregatorState::FedProx { mu: config.prox_mu },
        AggregatorKind::FedAdam => AggregatorState::FedAdam(FedAdamState::zeroed(config, param_count)),
    })
}

/// Example-weighted mean `sum_k (n_k / n) w_k`, summed in ascending
/// `client_id` order so the result does not depend on arrival order.
pub fn weighted_average(updates: &[ClientUpdate]) -> Result<ModelParameters> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Contract("cannot average zero updates".into()))?;
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    for pair in ordered.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::Contract(format!("duplicate update from client {}", pair[0].client_id)));
        }
    }
    for u in &ordered {
        if !u.params.same_layout(&first.params) {
            return Err(Error::Contract(format!("client {} sent a different layout", u.client_id)));
        }
        if u.num_examples == 0 {
            return Err(Error::Contract(format!("client {} reported zero examples", u.client_id)));
        }
    }

    let total: usize = ordered.iter().map(|u| u.num_examples).sum();
    let len = first.params.len();
    let weight_of = |u: &ClientUpdate| u.num_examples as f64 / total as f64;
    let w0 = weight_of(ordered[0]);
    let mut acc: Vec<f64> = ordered[0].params.values().iter().map(|&w| w0 * w).collect();
    let mut lo = ordered[0].params.values().to_vec();
    let mut hi = lo.clone();
    for u in &ordered[1..] {
        let weight = weight_of(u);
        for (i, &w) in u.params.values().iter().enumerate() {
            acc[i] += weight * w;
            lo[i] = lo[i].min(w);
            hi[i] = hi[i].max(w);
        }
    }
    // rounding can leave the sum an ulp or two outside the clients' range
    for i in 0..len {
        acc[i] = acc[i].clamp(lo[i], hi[i]);
    }
    first.params.with_values(acc)
}

/// FedAvg server step. The current global is not consulted.
pub fn fedavg_round(global: &ModelParameters, updates: &[ClientUpdate]) -> Result<ModelParameters> {
    let avg = weighted_average(updates)?;
    if !avg.same_layout(global) {
        return Err(Error::Contract("updates do not match the global layout".into()));
    }
    Ok(avg)
}

/// One FedAdam server step:
/// `d = mean - x; m = b1 m + (1-b1) d; v = b2 v + (1-b2) d^2; x += lr m / (sqrt(v) + tau)`.
pub fn fedadam_round(
    state: &FedAdamState,
    global: &ModelParameters,
    updates: &[ClientUpdate],
) -> Result<(ModelParameters, FedAdamState)> {
    let avg = fedavg_round(global, updates)?;
    if state.m.len() != global.len() || state.v.len() != global.len() {
        return Err(Error::Contract("server moments do not match the global layout".into()));
    }
    let mut next = state.clone();
    let mut x = global.values().to_vec();
    for (i, (xi, &target)) in x.iter_mut().zip(avg.values()).enumerate() {
        let delta = target - *xi;
        next.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * delta;
        next.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * delta * delta;
        *xi += state.server_lr * next.m[i] / (next.v[i].sqrt() + state.tau);
    }
    Ok((global.with_values(x)?, next))
}
