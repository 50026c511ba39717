//! Noisy full-batch gradient descent with the signal/noise split.
//!
//! Every step applies `U <- (1 - g*lambda) U - g (grad + xi)` with `xi` spherical
//! Gaussian noise on the in-block entries, and in lockstep the two linear
//! recursions `U_bar <- (1 - g*lambda) U_bar - g grad` (accumulated signal) and
//! `U_tilde <- (1 - g*lambda) U_tilde - g xi` (initialization plus noise).

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{MetricsRecord, Monitor};
use crate::distribution::Dataset;
use crate::error::{invalid, Error, Result};
use crate::network::{init_with, loss_and_coef, Arch, Batch, Forward, Network};
use crate::rng::{self, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    LargeThenAnneal,
    SmallConstant,
    MitigationNoise,
}

impl Algorithm {
    pub fn dir_name(self) -> &'static str {
        match self {
            Algorithm::LargeThenAnneal => "large_then_anneal",
            Algorithm::SmallConstant => "small_constant",
            Algorithm::MitigationNoise => "mitigation_noise",
        }
    }
}

/// When the pre-activation noise of the mitigation run is decayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnnealRule {
    /// At a fixed iteration.
    Iteration(u64),
    /// When the training loss first reaches `epsilon1 + q log 2`.
    LossThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationConfig {
    pub tau_act_init: f64,
    #[serde(default)]
    pub tau_act_final: f64,
    pub anneal_at: AnnealRule,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        MitigationConfig {
            tau_act_init: 0.0,
            tau_act_final: 0.0,
            anneal_at: AnnealRule::LossThreshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    BlockDense,
    Conv { k: usize },
}

impl ModelKind {
    pub fn patches(self) -> usize {
        match self {
            ModelKind::BlockDense => 1,
            ModelKind::Conv { k } => k,
        }
    }
}

fn default_w_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Hidden width.
    pub m: usize,
    #[serde(default = "default_w_fraction")]
    pub w_fraction: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub lambda: f64,
    pub tau0: f64,
    /// Weight-noise std; derived from `(tau0, eta1, lambda)` when absent.
    #[serde(default)]
    pub tau_xi: Option<f64>,
    pub epsilon1: f64,
    /// Stopping loss of the constant-rate runs; `sqrt(epsilon1 / q)` when absent.
    #[serde(default)]
    pub epsilon2_prime: Option<f64>,
    pub max_iters: u64,
    pub eval_every: u64,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        pos("eta1", self.eta1)?;
        pos("eta2", self.eta2)?;
        pos("lambda", self.lambda)?;
        pos("tau0", self.tau0)?;
        pos("epsilon1", self.epsilon1)?;
        if self.eta2 >= self.eta1 {
            return Err(invalid("eta2", format!("need eta2 < eta1, got {} >= {}", self.eta2, self.eta1)));
        }
        if self.lambda * self.eta1 >= 1.0 {
            return Err(invalid("lambda", "need lambda * eta1 < 1"));
        }
        if let Some(t) = self.tau_xi {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("tau_xi", "must be >= 0"));
            }
        }
        if let Some(e) = self.epsilon2_prime {
            pos("epsilon2_prime", e)?;
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every", "must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be >= 1"));
        }
        if self.mitigation.tau_act_init < 0.0 || self.mitigation.tau_act_final < 0.0 {
            return Err(invalid("mitigation", "noise levels must be >= 0"));
        }
        Ok(())
    }

    pub fn arch(&self, d: usize) -> Arch {
        Arch {
            m: self.m,
            d,
            patches: self.model.patches(),
            w_fraction: self.w_fraction,
        }
    }

    pub fn noise_std(&self) -> Result<f64> {
        match self.tau_xi {
            Some(t) => Ok(t),
            None => solve_noise_std(self.tau0, self.eta1, self.lambda),
        }
    }
}

/// Solves `(1 - eta1*lambda)^2 tau0^2 + eta1^2 tau_xi^2 = tau0^2` for `tau_xi`.
pub fn solve_noise_std(tau0: f64, eta1: f64, lambda: f64) -> Result<f64> {
    let a = eta1 * lambda;
    if !(a > 0.0 && a < 1.0) {
        return Err(invalid("eta1*lambda", format!("need 0 < eta1*lambda < 1, got {a}")));
    }
    // 1 - (1-a)^2 = a (2 - a), kept in factored form for small a
    Ok(tau0 * (a * (2.0 - a)).sqrt() / eta1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    LargeLR,
    Annealed,
    Done,
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub t: u64,
    pub net: Network,
    pub u_bar: Array2<f64>,
    pub u_tilde: Array2<f64>,
    pub phase: Phase,
    pub t0: Option<u64>,
    /// Sum of step sizes taken so far.
    pub lr_sum: f64,
    /// Current pre-activation noise level (mitigation only).
    pub tau_act: f64,
    pub noise_rng: SimRng,
    pub act_rng: SimRng,
}

impl TrainerState {
    /// Fresh state: `U_0` drawn from the init stream, `U_bar = 0`, `U_tilde = U_0`.
    pub fn init(cfg: &TrainerConfig, d: usize) -> Result<Self> {
        let mut init_rng = rng::stream(cfg.seed, Stream::Init);
        let net = init_with(cfg.arch(d), cfg.tau0, &mut init_rng)?;
        let phase = match cfg.algorithm {
            Algorithm::SmallConstant => Phase::Annealed,
            _ => Phase::LargeLR,
        };
        let tau_act = match cfg.algorithm {
            Algorithm::MitigationNoise => cfg.mitigation.tau_act_init,
            _ => 0.0,
        };
        Ok(TrainerState {
            t: 0,
            u_bar: net.zeros_like(),
            u_tilde: net.weights.clone(),
            net,
            phase,
            t0: None,
            lr_sum: 0.0,
            tau_act,
            noise_rng: rng::stream(cfg.seed, Stream::WeightNoise),
            act_rng: rng::stream(cfg.seed, Stream::ActivationNoise),
        })
    }

    /// Max-abs of `U_t - (U_bar + U_tilde)`.
    pub fn decomposition_drift(&self) -> f64 {
        let mut worst = 0.0f64;
        ndarray::Zip::from(&self.net.weights)
            .and(&self.u_bar)
            .and(&self.u_tilde)
            .for_each(|w, b, n| worst = worst.max((w - (b + n)).abs()));
        worst
    }

    /// Current step size for `cfg`.
    pub fn gamma(&self, cfg: &TrainerConfig) -> f64 {
        match (cfg.algorithm, self.phase) {
            (Algorithm::LargeThenAnneal, Phase::LargeLR) => cfg.eta1,
            _ => cfg.eta2,
        }
    }

    /// One update with a precomputed gradient and fresh weight noise.
    pub fn apply_update(&mut self, grad: &Array2<f64>, gamma: f64, lambda: f64, tau_xi: f64) {
        let decay = 1.0 - gamma * lambda;
        let (rows, cols) = grad.dim();
        let net = &mut self.net;
        for i in 0..rows {
            for j in 0..cols {
                if !net.in_block(i, j) {
                    continue;
                }
                let xi = if tau_xi > 0.0 {
                    tau_xi * self.noise_rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let g = grad[[i, j]];
                net.weights[[i, j]] = decay * net.weights[[i, j]] - gamma * (g + xi);
                self.u_bar[[i, j]] = decay * self.u_bar[[i, j]] - gamma * g;
                self.u_tilde[[i, j]] = decay * self.u_tilde[[i, j]] - gamma * xi;
            }
        }
        self.t += 1;
        self.lr_sum += gamma;
    }

    fn draw_act_noise(&mut self) -> Option<Vec<f64>> {
        if self.tau_act > 0.0 {
            let tau = self.tau_act;
            let m = self.net.m();
            Some((0..m).map(|_| tau * self.act_rng.sample::<f64, _>(StandardNormal)).collect())
        } else {
            None
        }
    }
}

/// One noisy gradient step at rate `gamma` on the full training set.
pub fn step(state: &mut TrainerState, cfg: &TrainerConfig, data: &Dataset, gamma: f64) -> Result<()> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "step size must be positive"));
    }
    let batch = Batch::for_network(data, &state.net);
    let tau_xi = cfg.noise_std()?;
    let act = state.draw_act_noise();
    let fwd = state.net.forward_batch(state.net.weights.view(), &batch, act.as_deref());
    let (loss, coef) = loss_and_coef(&fwd.outputs(), &batch.y, None)?;
    let grad = state.net.gradient_batch(&batch, &fwd, &coef);
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant {
            t: state.t,
            what: "non-finite loss or gradient".into(),
        });
    }
    state.apply_update(&grad, gamma, cfg.lambda, tau_xi);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    MaxIters,
    NonFinite { t: u64 },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: TrainerState,
    pub trace: Vec<MetricsRecord>,
    pub status: RunStatus,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

/// Loss thresholds derived from the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// `epsilon1 + q log 2`.
    pub anneal: f64,
    /// `sqrt(epsilon1 / q)`; infinite when `q = 0`.
    pub stop_ls: f64,
    /// Stop loss for the constant-rate runs.
    pub stop_s: f64,
}

pub fn thresholds(cfg: &TrainerConfig, data: &Dataset) -> Thresholds {
    let q = data.q_emp;
    let stop_ls = if q > 0.0 { (cfg.epsilon1 / q).sqrt() } else { f64::INFINITY };
    Thresholds {
        anneal: cfg.epsilon1 + q * std::f64::consts::LN_2,
        stop_ls,
        stop_s: cfg.epsilon2_prime.unwrap_or(stop_ls),
    }
}

pub fn run_ls(cfg: &TrainerConfig, data: &Dataset, monitor: &Monitor) -> Result<RunOutcome> {
    expect_algorithm(cfg, Algorithm::LargeThenAnneal)?;
    run(cfg, data, monitor)
}

pub fn run_s(cfg: &TrainerConfig, data: &Dataset, monitor: &Monitor) -> Result<RunOutcome> {
    expect_algorithm(cfg, Algorithm::SmallConstant)?;
    run(cfg, data, monitor)
}

pub fn run_mitigation(cfg: &TrainerConfig, data: &Dataset, monitor: &Monitor) -> Result<RunOutcome> {
    expect_algorithm(cfg, Algorithm::MitigationNoise)?;
    run(cfg, data, monitor)
}

fn expect_algorithm(cfg: &TrainerConfig, want: Algorithm) -> Result<()> {
    if cfg.algorithm != want {
        return Err(invalid("algorithm", format!("expected {want:?}, got {:?}", cfg.algorithm)));
    }
    Ok(())
}

/// Runs `cfg.algorithm` from a fresh state.
pub fn run(cfg: &TrainerConfig, data: &Dataset, monitor: &Monitor) -> Result<RunOutcome> {
    cfg.validate()?;
    let state = TrainerState::init(cfg, data.dim())?;
    resume(cfg, data, monitor, state)
}

/// Continues a run from `state` (fresh or restored from a checkpoint).
pub fn resume(cfg: &TrainerConfig, data: &Dataset, monitor: &Monitor, mut state: TrainerState) -> Result<RunOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySubset("training set"));
    }
    let tau_xi = cfg.noise_std()?;
    let th = thresholds(cfg, data);
    let batch = Batch::for_network(data, &state.net);
    let grad_bound_scale = state.net.patches as f64 * data.max_norm() / (state.net.m() as f64).sqrt();
    let mut trace = Vec::new();

    let status = loop {
        let t = state.t;
        let fwd = state.net.forward_batch(state.net.weights.view(), &batch, None);
        let (loss, coef) = loss_and_coef(&fwd.outputs(), &batch.y, None)?;

        if !loss.is_finite() {
            trace.push(monitor_record(monitor, cfg, &state, data, &fwd, false)?);
            break RunStatus::NonFinite { t };
        }

        transition(cfg, &th, &mut state, loss);

        let done = state.phase == Phase::Done;
        let capped = !done && t >= cfg.max_iters;
        if t.is_multiple_of(cfg.eval_every) || done || capped {
            check_invariants(&state, grad_bound_scale, cfg.lambda)?;
            trace.push(monitor_record(monitor, cfg, &state, data, &fwd, done || capped)?);
        }
        if done {
            break RunStatus::Converged;
        }
        if capped {
            break RunStatus::MaxIters;
        }

        let gamma = state.gamma(cfg);
        let grad = match state.draw_act_noise() {
            Some(xi) => {
                let noisy = state.net.forward_batch(state.net.weights.view(), &batch, Some(&xi));
                let (_, c) = loss_and_coef(&noisy.outputs(), &batch.y, None)?;
                state.net.gradient_batch(&batch, &noisy, &c)
            }
            None => state.net.gradient_batch(&batch, &fwd, &coef),
        };
        if grad.iter().any(|v| !v.is_finite()) {
            trace.push(monitor_record(monitor, cfg, &state, data, &fwd, false)?);
            break RunStatus::NonFinite { t };
        }
        state.apply_update(&grad, gamma, cfg.lambda, tau_xi);
    };

    Ok(RunOutcome { state, trace, status })
}

fn transition(cfg: &TrainerConfig, th: &Thresholds, state: &mut TrainerState, loss: f64) {
    let t = state.t;
    match cfg.algorithm {
        Algorithm::LargeThenAnneal => {
            // phase I always takes at least one step at eta1
            if state.phase == Phase::LargeLR && t >= 1 && loss <= th.anneal {
                state.t0 = Some(t);
                state.phase = Phase::Annealed;
            }
            if state.phase == Phase::Annealed && loss <= th.stop_ls {
                state.phase = Phase::Done;
            }
        }
        Algorithm::SmallConstant => {
            if loss <= th.stop_s {
                state.phase = Phase::Done;
            }
        }
        Algorithm::MitigationNoise => {
            if state.phase == Phase::LargeLR {
                let fire = match cfg.mitigation.anneal_at {
                    AnnealRule::Iteration(at) => t >= at,
                    AnnealRule::LossThreshold => t >= 1 && loss <= th.anneal,
                };
                if fire {
                    state.t0 = Some(t);
                    state.phase = Phase::Annealed;
                    state.tau_act = cfg.mitigation.tau_act_final;
                }
            }
            if loss <= th.stop_s {
                state.phase = Phase::Done;
            }
        }
    }
}

fn monitor_record(
    monitor: &Monitor,
    cfg: &TrainerConfig,
    state: &TrainerState,
    data: &Dataset,
    fwd: &Forward,
    last: bool,
) -> Result<MetricsRecord> {
    monitor.record(
        state.t,
        state.gamma(cfg),
        cfg.lambda,
        &state.net,
        &state.u_bar,
        &state.u_tilde,
        data,
        fwd,
        last,
    )
}

fn check_invariants(state: &TrainerState, grad_bound_scale: f64, lambda: f64) -> Result<()> {
    let t = state.t;
    let drift = state.decomposition_drift();
    if drift >= 1e-9 {
        return Err(Error::Invariant {
            t,
            what: format!("U_t - (U_bar + U_tilde) drifted to {drift:e}"),
        });
    }
    let net = &state.net;
    for (name, a) in [("U", &net.weights), ("U_bar", &state.u_bar), ("U_tilde", &state.u_tilde)] {
        if net.off_block_max(a) != 0.0 {
            return Err(Error::Invariant {
                t,
                what: format!("{name} has nonzero out-of-block entries"),
            });
        }
    }
    let bound = grad_bound_scale * state.lr_sum.min(1.0 / lambda) * (1.0 + 1e-9);
    for (i, row) in state.u_bar.rows().into_iter().enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > bound {
            return Err(Error::Invariant {
                t,
                what: format!("row {i} of U_bar has norm {n} above bound {bound}"),
            });
        }
    }
    Ok(())
}

/// Serializable snapshot of a [`TrainerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub network: serde_json::Value,
    pub t: u64,
    pub phase: Phase,
    pub t0: Option<u64>,
    #[serde(rename = "U_bar")]
    pub u_bar: Vec<f64>,
    #[serde(rename = "U_tilde")]
    pub u_tilde: Vec<f64>,
    pub rng_state: String,
    pub act_rng_state: String,
    pub lr_sum: f64,
    pub tau_act: f64,
}

impl TrainerState {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.net.to_json_value(),
            t: self.t,
            phase: self.phase,
            t0: self.t0,
            u_bar: self.u_bar.iter().copied().collect(),
            u_tilde: self.u_tilde.iter().copied().collect(),
            rng_state: rng::encode_state(&self.noise_rng),
            act_rng_state: rng::encode_state(&self.act_rng),
            lr_sum: self.lr_sum,
            tau_act: self.tau_act,
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self> {
        let net = Network::from_json_value(cp.network)?;
        let shape = net.weights.raw_dim();
        let u_bar = Array2::from_shape_vec(shape, cp.u_bar).map_err(|e| Error::Shape(e.to_string()))?;
        let u_tilde =
            Array2::from_shape_vec(net.weights.raw_dim(), cp.u_tilde).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(TrainerState {
            t: cp.t,
            net,
            u_bar,
            u_tilde,
            phase: cp.phase,
            t0: cp.t0,
            lr_sum: cp.lr_sum,
            tau_act: cp.tau_act,
            noise_rng: rng::decode_state(&cp.rng_state)?,
            act_rng: rng::decode_state(&cp.act_rng_state)?,
        })
    }
}
