//! The training loop: resample, step every network once per batch, and
//! refresh the frozen velocity whenever the loss has dropped far enough.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::geometry::{Domain, GeometryError};
use crate::losses::{FrozenFields, LossBreakdown, LossContext, LossError, LossWeights, SchemeId};
use crate::model::{Architecture, FlowModel};
use crate::mlp::NetError;
use crate::optim::{adam_step, AdamConfig, AdamState, LrSchedule, OptimError};
use crate::problem::FlowParams;

pub const TRAIN_STATE_KIND: &str = "train_state";

/// RNG streams derived from the run seed.
pub const INIT_STREAM: u64 = 1;
pub const SAMPLE_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fresh networks drawn from the initialization stream of `seed`.
pub fn init_model(arch: &Architecture, shared: bool, scheme: SchemeId, seed: u64) -> Result<FlowModel, NetError> {
    FlowModel::init(arch, shared, scheme == SchemeId::Vgvp, &mut seeded_rng(seed, INIT_STREAM))
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {detail}{}", dump_note(.dump))]
    Diverged {
        epoch: u64,
        detail: String,
        dump: Option<PathBuf>,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn is_divergence(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Loss(LossError::NonFinite(_))
            | TrainError::Loss(LossError::Net(NetError::NonFinite(_)))
            | TrainError::Optim(OptimError::NonFiniteGradient { .. })
            | TrainError::Optim(OptimError::Net(NetError::NonFinite(_)))
    )
}

fn dump_note(dump: &Option<PathBuf>) -> String {
    dump.as_ref()
        .map(|p| format!(" (state written to {})", p.display()))
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Outer iterations; the snapshot test runs after each.
    pub outer_iters: u64,
    /// Epochs per outer iteration.
    pub inner_epochs: u64,
    pub gamma: f64,
    pub tau_init: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_batches: usize,
    pub scheme: SchemeId,
    pub seed: u64,
    pub weights: LossWeights,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Write a resumable state every this many epochs.
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// `epochs` outer iterations of one epoch each, with the usual defaults.
    pub fn new(scheme: SchemeId, epochs: u64, n_interior: usize, n_boundary: usize, n_batches: usize, lr: f64) -> Self {
        Self {
            outer_iters: epochs,
            inner_epochs: 1,
            gamma: 0.9,
            tau_init: 1e12,
            n_interior,
            n_boundary,
            n_batches,
            scheme,
            seed: 0,
            weights: LossWeights::default(),
            schedule: LrSchedule {
                initial_lr: lr,
                decay_factor: 1.0,
                decay_every: 50,
            },
            adam: AdamConfig::default(),
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }

    pub fn total_epochs(&self) -> u64 {
        self.outer_iters * self.inner_epochs
    }

    pub fn interior_per_batch(&self) -> usize {
        self.n_interior / self.n_batches
    }

    pub fn boundary_per_batch(&self) -> usize {
        self.n_boundary / self.n_batches
    }

    /// Every violation, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.outer_iters == 0 {
            out.push("outer_iters must be positive".into());
        }
        if self.inner_epochs == 0 {
            out.push("inner_epochs must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau_init.is_finite() && self.tau_init > 0.0) {
            out.push(format!("tau_init must be positive, got {}", self.tau_init));
        }
        if self.n_batches == 0 {
            out.push("n_batches must be positive".into());
        } else {
            if self.interior_per_batch() == 0 {
                out.push(format!("n_interior ({}) is smaller than n_batches ({})", self.n_interior, self.n_batches));
            }
            if self.boundary_per_batch() == 0 {
                out.push(format!("n_boundary ({}) is smaller than n_batches ({})", self.n_boundary, self.n_batches));
            }
        }
        for (name, w) in [("w_bc", self.weights.w_bc), ("w_p", self.weights.w_p)] {
            if !(w.is_finite() && w >= 0.0) {
                out.push(format!("{name} must be a nonnegative number, got {w}"));
            }
        }
        if let Err(e) = LrSchedule::new(self.schedule.initial_lr, self.schedule.decay_factor, self.schedule.decay_every) {
            out.push(e.to_string());
        }
        if let Err(e) = self.adam.validate() {
            out.push(e.to_string());
        }
        if self.checkpoint_every == Some(0) {
            out.push("checkpoint_every must be positive".into());
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            out.push("checkpoint_every needs a checkpoint directory".into());
        }
        out
    }

    /// Rounds the point counts down to multiples of `n_batches`, warning when
    /// that drops points.
    pub fn round_counts(&mut self) {
        if self.n_batches == 0 {
            return;
        }
        for (name, n) in [("n_interior", &mut self.n_interior), ("n_boundary", &mut self.n_boundary)] {
            let r = *n - *n % self.n_batches;
            if r != *n {
                warn!("{name} = {n} is not divisible by n_batches = {}; using {r}", self.n_batches);
                *n = r;
            }
        }
    }
}

/// The snapshot rule: accept `loss` as the new threshold when it has fallen
/// to at most `gamma * tau`.
pub fn snapshot_update(tau: f64, gamma: f64, loss: f64) -> Option<f64> {
    (loss <= gamma * tau).then_some(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: u64,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub lr: f64,
    /// Threshold after this epoch's snapshot test.
    pub tau: f64,
    pub frozen_updated: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.total).collect()
    }

    pub fn update_epochs(&self) -> Vec<u64> {
        self.epochs.iter().filter(|e| e.frozen_updated).map(|e| e.epoch).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss.total)
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; the value is a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, String> {
        let pos: u128 = self.word_pos.parse().map_err(|e| format!("bad RNG word_pos: {e}"))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: FlowModel,
    pub adam: Vec<AdamState>,
    pub frozen: Option<FrozenFields>,
    pub tau: f64,
    pub next_epoch: u64,
    pub rng: RngState,
    pub record: TrainRecord,
}

/// One epoch: fresh points, `n_batches` equal batches, one Adam step per
/// network and batch. Returns the mean breakdown over the batches.
#[allow(clippy::too_many_arguments)]
pub fn epoch<R: RngCore>(
    cfg: &TrainConfig,
    domain: &Domain,
    flow: &FlowParams,
    model: &mut FlowModel,
    frozen: Option<&FrozenFields>,
    adam: &mut [AdamState],
    rng: &mut R,
    index: u64,
) -> Result<LossBreakdown, TrainError> {
    let (ni, nb) = (cfg.interior_per_batch(), cfg.boundary_per_batch());
    let interior = domain.sample_interior(ni * cfg.n_batches, rng)?;
    let boundary = domain.sample_boundary(nb * cfg.n_batches, rng);
    let lr = cfg.schedule.lr_at(index);
    let mut parts = Vec::with_capacity(cfg.n_batches);
    for b in 0..cfg.n_batches {
        let ctx = LossContext {
            scheme: cfg.scheme,
            model,
            frozen,
            weights: cfg.weights,
            flow,
        };
        let (loss, grads) = ctx
            .batch_loss_and_grad(&interior[b * ni..(b + 1) * ni], &boundary[b * nb..(b + 1) * nb])
            .map_err(|e| match e {
                LossError::NonFinite(what) => LossError::NonFinite(format!("{what} in batch {b}")),
                e => e,
            })?;
        if !loss.total.is_finite() {
            return Err(LossError::NonFinite(format!("loss {} in batch {b}", loss.total)).into());
        }
        for (k, g) in grads.iter().enumerate() {
            adam_step(&mut adam[k], &mut model.nets_mut()[k], g, lr)?;
        }
        parts.push(loss);
    }
    Ok(LossBreakdown::mean(&parts))
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    domain: &'a Domain,
    flow: &'a FlowParams,
    model: FlowModel,
    adam: Vec<AdamState>,
    frozen: Option<FrozenFields>,
    tau: f64,
    next_epoch: u64,
    rng: ChaCha8Rng,
    record: TrainRecord,
}

impl<'a> Trainer<'a> {
    /// Starts a run; the frozen fields begin as a copy of the initial nets.
    pub fn new(mut cfg: TrainConfig, domain: &'a Domain, flow: &'a FlowParams, model: FlowModel) -> Result<Self, TrainError> {
        cfg.round_counts();
        Self::check(&cfg, &model)?;
        let adam = model.nets().iter().map(|n| AdamState::for_net(n, cfg.adam)).collect();
        let frozen = cfg.scheme.is_linearized().then(|| FrozenFields::snapshot(&model));
        Ok(Self {
            tau: cfg.tau_init,
            rng: seeded_rng(cfg.seed, SAMPLE_STREAM),
            cfg,
            domain,
            flow,
            model,
            adam,
            frozen,
            next_epoch: 0,
            record: TrainRecord::default(),
        })
    }

    pub fn resume(mut cfg: TrainConfig, domain: &'a Domain, flow: &'a FlowParams, state: TrainState) -> Result<Self, TrainError> {
        cfg.round_counts();
        Self::check(&cfg, &state.model)?;
        let bad = |m: String| TrainError::Config(format!("checkpoint does not match the configuration: {m}"));
        if state.adam.len() != state.model.nets().len()
            || state.adam.iter().zip(state.model.nets()).any(|(a, n)| a.m.len() != n.num_params() || a.v.len() != n.num_params())
        {
            return Err(bad("optimizer state shapes differ from the networks".into()));
        }
        match (&state.frozen, cfg.scheme.is_linearized()) {
            (Some(f), true) if f.compatible_with(&state.model) => {}
            (None, false) => {}
            _ => return Err(bad(format!("frozen fields do not fit scheme {}", cfg.scheme))),
        }
        if state.record.epochs.len() as u64 != state.next_epoch {
            return Err(bad("loss history length differs from the epoch counter".into()));
        }
        let rng = state.rng.restore().map_err(bad)?;
        Ok(Self {
            cfg,
            domain,
            flow,
            model: state.model,
            adam: state.adam,
            frozen: state.frozen,
            tau: state.tau,
            next_epoch: state.next_epoch,
            rng,
            record: state.record,
        })
    }

    fn check(cfg: &TrainConfig, model: &FlowModel) -> Result<(), TrainError> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(TrainError::Config(v.join("; ")));
        }
        model.validate()?;
        if (cfg.scheme == SchemeId::Vgvp) != model.has_grad() {
            return Err(TrainError::Config(format!(
                "scheme {} {} a gradient-tensor network",
                cfg.scheme,
                if model.has_grad() { "does not use" } else { "needs" }
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn frozen(&self) -> Option<&FrozenFields> {
        self.frozen.as_ref()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn record(&self) -> &TrainRecord {
        &self.record
    }

    pub fn next_epoch(&self) -> u64 {
        self.next_epoch
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.cfg.total_epochs()
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            model: self.model.clone(),
            adam: self.adam.clone(),
            frozen: self.frozen.clone(),
            tau: self.tau,
            next_epoch: self.next_epoch,
            rng: RngState::capture(&self.rng),
            record: self.record.clone(),
        }
    }

    pub fn save_state(&self, path: &Path) -> Result<(), CheckpointError> {
        checkpoint::write(path, TRAIN_STATE_KIND, &self.state())
    }

    pub fn load_state(path: &Path) -> Result<TrainState, CheckpointError> {
        checkpoint::read(path, TRAIN_STATE_KIND)
    }

    /// Runs one epoch and, at the end of an outer iteration, the snapshot test.
    pub fn step_epoch(&mut self) -> Result<&EpochRecord, TrainError> {
        let index = self.next_epoch;
        let start = Instant::now();
        let before = self.state();
        let result = epoch(
            &self.cfg,
            self.domain,
            self.flow,
            &mut self.model,
            self.frozen.as_ref(),
            &mut self.adam,
            &mut self.rng,
            index,
        );
        let loss = match result {
            Ok(l) => l,
            Err(e) if is_divergence(&e) => return Err(self.abort(before, index, e)),
            Err(e) => return Err(e),
        };
        let mut frozen_updated = false;
        if self.cfg.scheme.is_linearized() && (index + 1) % self.cfg.inner_epochs == 0 {
            if let Some(tau) = snapshot_update(self.tau, self.cfg.gamma, loss.total) {
                self.tau = tau;
                self.frozen = Some(FrozenFields::snapshot(&self.model));
                frozen_updated = true;
                debug!("epoch {index}: frozen fields refreshed, tau = {tau:e}");
            }
        }
        self.next_epoch += 1;
        self.record.epochs.push(EpochRecord {
            epoch: index,
            loss,
            lr: self.cfg.schedule.lr_at(index),
            tau: self.tau,
            frozen_updated,
            seconds: start.elapsed().as_secs_f64(),
        });
        if let (Some(every), Some(dir)) = (self.cfg.checkpoint_every, &self.cfg.checkpoint_dir) {
            if self.next_epoch % every == 0 {
                self.save_state(&dir.join("train_state.json"))?;
            }
        }
        let rec = self.record.epochs.last().expect("just pushed");
        info!("epoch {index}: loss {:.6e} lr {:.3e} ({:.2}s)", rec.loss.total, rec.lr, rec.seconds);
        Ok(rec)
    }

    /// Dumps the state from the start of the failed epoch next to the
    /// checkpoints, if there is a checkpoint directory.
    fn abort(&self, before: TrainState, epoch: u64, cause: TrainError) -> TrainError {
        let dump = self.cfg.checkpoint_dir.as_ref().and_then(|dir| {
            let path = dir.join("abort_state.json");
            match checkpoint::write(&path, TRAIN_STATE_KIND, &before) {
                Ok(()) => Some(path),
                Err(e) => {
                    warn!("could not write abort state: {e}");
                    None
                }
            }
        });
        TrainError::Diverged {
            epoch,
            detail: cause.to_string(),
            dump,
        }
    }

    pub fn run(&mut self) -> Result<(), TrainError> {
        while !self.is_done() {
            self.step_epoch()?;
        }
        Ok(())
    }

    /// Runs until `epochs` epochs have been completed in total.
    pub fn run_until(&mut self, epochs: u64) -> Result<(), TrainError> {
        while self.next_epoch < epochs.min(self.cfg.total_epochs()) {
            self.step_epoch()?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (FlowModel, TrainRecord) {
        (self.model, self.record)
    }
}

/// Trains `model` for the full configured budget.
pub fn train(cfg: TrainConfig, domain: &Domain, flow: &FlowParams, model: FlowModel) -> Result<(FlowModel, TrainRecord), TrainError> {
    let mut t = Trainer::new(cfg, domain, flow, model)?;
    t.run()?;
    Ok(t.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_trace() {
        let gamma = 0.9;
        let tau = 1e12;
        let tau = snapshot_update(tau, gamma, 5.0).expect("first loop always updates");
        assert_eq!(tau, 5.0);
        assert_eq!(snapshot_update(tau, gamma, 4.6), None);
        assert_eq!(snapshot_update(tau, gamma, 4.5), Some(4.5));
        assert_eq!(snapshot_update(tau, gamma, 4.4), Some(4.4));
    }

    #[test]
    fn config_lists_every_violation() {
        let mut cfg = TrainConfig::new(SchemeId::VFixed, 0, 10, 10, 0, -1.0);
        cfg.gamma = 1.0;
        cfg.checkpoint_every = Some(5);
        let v = cfg.violations();
        assert_eq!(v.len(), 5, "{v:?}");
        assert!(TrainConfig::new(SchemeId::VFixed, 3, 100, 10, 10, 1e-3).violations().is_empty());
    }

    #[test]
    fn counts_round_down_to_batches() {
        let mut cfg = TrainConfig::new(SchemeId::VFixed, 1, 160_003, 16_000, 50, 1e-3);
        cfg.round_counts();
        assert_eq!((cfg.n_interior, cfg.n_boundary), (160_000, 16_000));
        assert_eq!((cfg.interior_per_batch(), cfg.boundary_per_batch()), (3200, 320));
    }

    #[test]
    fn rng_state_round_trips() {
        let mut rng = seeded_rng(9, SAMPLE_STREAM);
        for _ in 0..37 {
            rng.next_u32();
        }
        let mut back = RngState::capture(&rng).restore().unwrap();
        for _ in 0..10 {
            assert_eq!(rng.next_u64(), back.next_u64());
        }
    }
}
