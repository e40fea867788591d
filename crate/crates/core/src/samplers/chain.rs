use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::kernels::{ggmc_step, obabo_step, sgld_step, update_preconditioner, SamplerState, DIVERGENCE_THRESHOLD};
use super::schedule::LrSchedule;
use crate::diagnostics::{configurational_temperature, kinetic_temperature, TempEstimate};
use crate::error::{Error, Result};
use crate::models::InitMode;
use crate::params::ParamTree;
use crate::posterior::Target;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Sgd,
    Sgld,
    #[default]
    Ggmc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    #[default]
    RmspropDiag,
}

/// Momentum decay per step of O-step decay `a = 0.9` used to derive the
/// default friction.
pub const DEFAULT_DECAY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub temperature: f64,
    pub cycles: usize,
    pub epochs_per_cycle: usize,
    /// Snapshots at the ends of the last this-many epochs of each cycle.
    pub samples_per_cycle: usize,
    /// Langevin noise only in the last this-many epochs of each cycle.
    pub noise_epochs: usize,
    pub burn_in_samples: usize,
    /// Learning rate on the per-datum loss scale.
    pub lr0: f64,
    pub schedule: LrSchedule,
    /// `None` is full batch.
    pub batch_size: Option<usize>,
    /// GGMC friction; defaults to `a = 0.9` at `lr0`.
    pub friction: Option<f64>,
    /// SGD momentum.
    pub momentum: f64,
    pub precondition: Preconditioner,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ggmc,
            temperature: 1.0,
            cycles: 60,
            epochs_per_cycle: 45,
            samples_per_cycle: 5,
            noise_epochs: 15,
            burn_in_samples: 50,
            lr0: 0.01,
            schedule: LrSchedule::Cosine,
            batch_size: Some(128),
            friction: None,
            momentum: 0.9,
            precondition: Preconditioner::RmspropDiag,
            init: InitMode::He,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Momentum SGD on the 0.05/0.005/0.0005 schedule, without noise or snapshots
    /// beyond the last epoch.
    pub fn map_preset() -> Self {
        Self {
            kind: SamplerKind::Sgd,
            temperature: 0.0,
            cycles: 1,
            epochs_per_cycle: 450,
            samples_per_cycle: 1,
            noise_epochs: 0,
            burn_in_samples: 0,
            lr0: 0.05,
            schedule: LrSchedule::map_preset(),
            precondition: Preconditioner::None,
            ..Self::default()
        }
    }

    /// Full-batch sampling at a flat learning rate of 5e-5.
    pub fn full_batch_flat() -> Self {
        Self { lr0: 5e-5, schedule: LrSchedule::Flat, batch_size: None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.cycles == 0 || self.epochs_per_cycle == 0 {
            return bad("cycles and epochs_per_cycle must be positive".into());
        }
        if self.samples_per_cycle == 0 || self.samples_per_cycle > self.epochs_per_cycle {
            return bad(format!(
                "samples_per_cycle must be in 1..={}, got {}",
                self.epochs_per_cycle, self.samples_per_cycle
            ));
        }
        if self.noise_epochs > self.epochs_per_cycle {
            return bad(format!("noise_epochs {} exceeds epochs_per_cycle {}", self.noise_epochs, self.epochs_per_cycle));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be non-negative, got {}", self.temperature));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        if let Some(g) = self.friction {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("friction must be non-negative, got {g}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        self.schedule.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.total_epochs(self.cycles, self.epochs_per_cycle)
    }

    pub fn raw_samples(&self) -> usize {
        self.cycles * self.samples_per_cycle
    }

    /// Integrator step for learning rate `lr` on `n` data points:
    /// `sqrt(lr/n)` for the momentum kernels, `lr/n` for SGLD.
    pub fn step_size(&self, lr: f64, n: usize) -> f64 {
        let n = n.max(1) as f64;
        match self.kind {
            SamplerKind::Sgld => lr / n,
            SamplerKind::Ggmc | SamplerKind::Sgd => (lr / n).sqrt(),
        }
    }

    pub fn friction_for(&self, n: usize) -> f64 {
        self.friction.unwrap_or_else(|| -2.0 * DEFAULT_DECAY.ln() / self.step_size(self.lr0, n))
    }

    pub fn noise_active(&self, epoch_in_cycle: usize) -> bool {
        epoch_in_cycle + self.noise_epochs >= self.epochs_per_cycle
    }

    pub fn is_sample_epoch(&self, epoch_in_cycle: usize) -> bool {
        epoch_in_cycle + self.samples_per_cycle >= self.epochs_per_cycle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawMeta {
    pub index: usize,
    pub cycle: usize,
    pub epoch: usize,
    pub epoch_in_cycle: usize,
    pub step: u64,
    pub lr: f64,
    pub burn_in: bool,
    pub potential: f64,
    pub nll: f64,
    pub log_prior: f64,
    pub kinetic: TempEstimate,
    pub configurational: TempEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub params: ParamTree,
    pub meta: DrawMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub epoch: usize,
    pub step: u64,
    pub reason: String,
}

/// All snapshots of one chain, burn-in included and flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleArchive {
    pub seed: u64,
    pub draws: Vec<Draw>,
    pub divergence: Option<DivergenceRecord>,
}

impl SampleArchive {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn retained(&self) -> impl Iterator<Item = &Draw> {
        self.draws.iter().filter(|d| !d.meta.burn_in)
    }

    pub fn retained_params(&self) -> Vec<&ParamTree> {
        self.retained().map(|d| &d.params).collect()
    }
}

fn batches(n: usize, batch: Option<usize>, state: &mut SamplerState) -> Vec<Vec<usize>> {
    let b = batch.unwrap_or(n).min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    if b < n {
        order.shuffle(&mut state.rng);
    }
    order.chunks(b).map(<[usize]>::to_vec).collect()
}

fn divergence_of(e: Error, epoch: usize, step: u64) -> Result<DivergenceRecord> {
    match e {
        Error::Diverged(reason) => Ok(DivergenceRecord { epoch, step, reason }),
        Error::NonFinite { node, op } => {
            Ok(DivergenceRecord { epoch, step, reason: format!("non-finite value at node {node} ({op})") })
        }
        other => Err(other),
    }
}

/// Runs one epoch of minibatch steps. Returns the mean potential estimate.
fn run_epoch(
    config: &SamplerConfig,
    target: &dyn Target,
    state: &mut SamplerState,
    lr: f64,
    gamma: f64,
    temperature: f64,
) -> Result<f64> {
    let n = target.data_len();
    let h = config.step_size(lr, n);
    let mut total = 0.0;
    let parts = batches(n, config.batch_size, state);
    for batch in &parts {
        let mut f = |w: &ParamTree| target.minibatch_grad(w, batch);
        total += match config.kind {
            SamplerKind::Ggmc => ggmc_step(state, &mut f, h, gamma, temperature)?,
            SamplerKind::Sgld => sgld_step(state, &mut f, h, temperature)?,
            SamplerKind::Sgd => obabo_step(state, &mut f, h, config.momentum.sqrt(), 0.0)?,
        };
    }
    Ok(total / parts.len() as f64)
}

fn snapshot(
    target: &dyn Target,
    state: &SamplerState,
    index: usize,
    cycle: usize,
    epoch: usize,
    epoch_in_cycle: usize,
    lr: f64,
    burn_in: bool,
) -> Result<Draw> {
    let (terms, grad) = target.full_grad(&state.params)?;
    let u = terms.potential();
    if !u.is_finite() || u.abs() > DIVERGENCE_THRESHOLD || !grad.all_finite() {
        return Err(Error::Diverged(format!("full-data potential {u:e} at snapshot")));
    }
    Ok(Draw {
        params: state.params.clone(),
        meta: DrawMeta {
            index,
            cycle,
            epoch,
            epoch_in_cycle,
            step: state.step,
            lr,
            burn_in,
            potential: u,
            nll: terms.nll,
            log_prior: terms.log_prior,
            kinetic: kinetic_temperature(&state.momenta, &state.mass)?,
            configurational: configurational_temperature(&state.params, &grad)?,
        },
    })
}

/// Runs `cycles × epochs_per_cycle` epochs from `init`, snapshotting the last
/// `samples_per_cycle` epochs of each cycle. Divergence truncates the archive.
pub fn run_chain(config: &SamplerConfig, target: &dyn Target, init: ParamTree) -> Result<SampleArchive> {
    config.validate()?;
    let n = target.data_len();
    let gamma = config.friction_for(n);
    let mut state = SamplerState::new(init, config.seed);
    let mut archive = SampleArchive { seed: config.seed, draws: Vec::new(), divergence: None };
    let e = config.epochs_per_cycle;
    for cycle in 0..config.cycles {
        state.cycle = cycle;
        for t in 0..e {
            let epoch = cycle * e + t;
            let lr = config.schedule.lr(epoch, e, config.lr0);
            let noise = config.noise_active(t);
            let temperature = if noise { config.temperature } else { 0.0 };
            if let Err(err) = run_epoch(config, target, &mut state, lr, gamma, temperature) {
                archive.divergence = Some(divergence_of(err, epoch, state.step)?);
                return Ok(archive);
            }
            if config.precondition == Preconditioner::RmspropDiag && !noise {
                if let Some(g) = state.last_grad.clone() {
                    update_preconditioner(&mut state, &g)?;
                }
            }
            if config.is_sample_epoch(t) {
                let index = archive.draws.len();
                let burn_in = index < config.burn_in_samples;
                match snapshot(target, &state, index, cycle, epoch, t, lr, burn_in) {
                    Ok(d) => archive.draws.push(d),
                    Err(err) => {
                        archive.divergence = Some(divergence_of(err, epoch, state.step)?);
                        return Ok(archive);
                    }
                }
            }
        }
    }
    Ok(archive)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch potential estimate divided by `N`.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MapResult {
    pub params: ParamTree,
    pub log: Vec<EpochRecord>,
    pub divergence: Option<DivergenceRecord>,
}

/// Momentum-SGD minimization of `U` on the configured schedule. `error` is
/// evaluated after every epoch when given.
pub fn sgd_map(
    config: &SamplerConfig,
    target: &dyn Target,
    init: ParamTree,
    error: Option<&dyn Fn(&ParamTree) -> Result<f64>>,
) -> Result<MapResult> {
    config.validate()?;
    if config.kind != SamplerKind::Sgd {
        return Err(Error::contract("sgd_map needs kind = sgd"));
    }
    let n = target.data_len() as f64;
    let mut state = SamplerState::new(init, config.seed);
    let mut log = Vec::new();
    for epoch in 0..config.total_epochs() {
        let lr = config.schedule.lr(epoch, config.epochs_per_cycle, config.lr0);
        match run_epoch(config, target, &mut state, lr, 0.0, 0.0) {
            Ok(u) => {
                if config.precondition == Preconditioner::RmspropDiag {
                    if let Some(g) = state.last_grad.clone() {
                        update_preconditioner(&mut state, &g)?;
                    }
                }
                let train_error = error.map(|f| f(&state.params)).transpose()?;
                log.push(EpochRecord { epoch, lr, loss: u / n, train_error });
            }
            Err(err) => {
                let d = divergence_of(err, epoch, state.step)?;
                return Ok(MapResult { params: state.params, log, divergence: Some(d) });
            }
        }
    }
    Ok(MapResult { params: state.params, log, divergence: None })
}
