//! Single-stage joint training with optional alternating view-adversarial
//! updates, epoch logs and resumable checkpoints.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::losses::{
    schedule_weights, schedule_weights_capped, AdversarialMode, LossBreakdown, LossToggles,
    LossWeights, ScheduleMode, VarianceMode,
};
use crate::model::{Checkpoint, ModelParams, ParamGroup, Tensor};
use crate::objective::{
    adversarial_active, batch_embeddings, discriminator_objective, encoder_objective,
    ObjectiveModes,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::sampler::{Sampler, SamplerConfig};
use crate::synthdata::Dataset;
use crate::types::{json_hash, Hyperparams};

pub const FINAL_CHECKPOINT: &str = "checkpoint.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to one pass over the unlabeled training split.
    pub steps_per_epoch: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub toggles: LossToggles,
    pub schedule: ScheduleMode,
    /// Optional cap on the growing schedule weights.
    pub lambda_max: Option<f64>,
    /// Sub-weights of category contrast, instance contrast and consistency.
    pub cl_parts: [f64; 3],
    pub variance_mode: VarianceMode,
    pub adversarial_mode: AdversarialMode,
    pub lambda_adv: f64,
    pub disc_steps_per_enc_step: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    /// Evaluate on the test split every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: None,
            optimizer: OptimizerConfig::default(),
            toggles: LossToggles::all(),
            schedule: ScheduleMode::Adaptive,
            lambda_max: None,
            cl_parts: [1.0; 3],
            variance_mode: VarianceMode::Batchwise,
            adversarial_mode: AdversarialMode::Off,
            lambda_adv: 1.0,
            disc_steps_per_enc_step: 1,
            sampler: SamplerConfig::default(),
            seed: 0,
            checkpoint_every: None,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("steps_per_epoch must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        self.optimizer.validate()?;
        self.sampler.validate()?;
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(Error::invalid("lambda_adv must be nonnegative"));
        }
        if self.lambda_max.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::invalid("lambda_max must be nonnegative"));
        }
        if self.adversarial_mode != AdversarialMode::Off && self.disc_steps_per_enc_step == 0 {
            return Err(Error::invalid(
                "disc_steps_per_enc_step must be at least 1 with adversarial training",
            ));
        }
        Ok(())
    }

    /// Loss weights in force during epoch `n_ep` (completed epochs so far).
    pub fn weights(&self, n_ep: usize, hyper: &Hyperparams) -> LossWeights {
        let mut w = match self.schedule {
            ScheduleMode::Adaptive => schedule_weights_capped(n_ep, self.lambda_max),
            ScheduleMode::Fixed => LossWeights {
                n_ep,
                schedule_mode: ScheduleMode::Fixed,
                ..schedule_weights(0)
            },
        };
        w.lambda_h = hyper.lambda_h;
        w.cl_parts = self.cl_parts;
        w.lambda_adv = if self.adversarial_mode == AdversarialMode::Off {
            0.0
        } else {
            self.lambda_adv
        };
        w.masked(&self.toggles)
    }

    fn modes(&self) -> ObjectiveModes {
        ObjectiveModes {
            variance: self.variance_mode,
            adversarial: self.adversarial_mode,
        }
    }

    /// Hash of everything that shapes the trajectory except its length and
    /// bookkeeping cadences.
    pub fn trajectory_hash(&self, hyper: &Hyperparams) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        c.checkpoint_every = None;
        json_hash(&(c, hyper))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub acr: f64,
    pub acc: f64,
    pub silhouette: f64,
}

/// One epoch of training. Equality ignores wall-clock time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub weights: LossWeights,
    /// Mean per-step losses.
    pub losses: LossBreakdown,
    /// Mean encoder objective, adversarial term included when active.
    pub objective: f64,
    pub eval: Option<EvalSnapshot>,
    pub wall_clock_secs: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.weights == other.weights
            && self.losses == other.losses
            && self.objective == other.objective
            && self.eval == other.eval
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub encoder_opt: Optimizer,
    pub disc_opt: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
    pub log: TrainLog,
}

impl TrainState {
    pub fn new(params: ModelParams, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            encoder_opt: Optimizer::new(config.optimizer, ParamGroup::Encoder, &params)?,
            disc_opt: Optimizer::new(config.optimizer, ParamGroup::Discriminator, &params)?,
            params,
            epoch: 0,
            log: TrainLog::default(),
        })
    }

    pub fn to_checkpoint(&self, config: &TrainConfig, hyper: &Hyperparams) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.meta.insert("epoch".into(), self.epoch.to_string());
        ck.meta
            .insert("trajectory_hash".into(), config.trajectory_hash(hyper));
        for (name, opt) in [
            ("encoder", &self.encoder_opt),
            ("discriminator", &self.disc_opt),
        ] {
            ck.meta.insert(format!("optim.{name}.t"), opt.t.to_string());
            for (part, values) in [("m", &opt.m), ("v", &opt.v)] {
                ck.tensors.push(Tensor {
                    name: format!("optim.{name}.{part}"),
                    rows: values.len(),
                    cols: 1,
                    values: values.clone(),
                });
            }
        }
        for r in &self.log.records {
            let mut r = r.clone();
            r.wall_clock_secs = 0.0;
            ck.meta.insert(
                format!("log.{:06}", r.epoch),
                serde_json::to_string(&r).expect("record serializes"),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: &TrainConfig) -> Result<Self> {
        let params = ck.to_params()?;
        let mut state = Self::new(params, config)?;
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::invalid(format!("checkpoint is missing meta `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            meta(k)?
                .parse()
                .map_err(|e| Error::invalid(format!("bad checkpoint meta `{k}`: {e}")))
        };
        state.epoch = num("epoch")? as usize;
        for (name, opt) in [
            ("encoder", &mut state.encoder_opt),
            ("discriminator", &mut state.disc_opt),
        ] {
            opt.t = num(&format!("optim.{name}.t"))?;
            for (part, dst) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                let key = format!("optim.{name}.{part}");
                let t = ck
                    .tensor(&key)
                    .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor {key}")))?;
                if t.values.len() != dst.len() {
                    return Err(Error::shape(key, dst.len(), t.values.len()));
                }
                dst.copy_from_slice(&t.values);
            }
        }
        for (k, v) in ck.meta.range("log.".to_string().."log/".to_string()) {
            let r: EpochRecord = serde_json::from_str(v)
                .map_err(|e| Error::invalid(format!("bad checkpoint record {k}: {e}")))?;
            state.log.records.push(r);
        }
        Ok(state)
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

fn non_finite(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(term) => Error::NonFiniteLoss { term, epoch, step },
        other => other,
    }
}

/// Runs epochs `state.epoch..config.epochs`. Checkpoints go to `checkpoint_dir`
/// when given: every `checkpoint_every` epochs and at the end.
pub fn run(
    mut state: TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
    hyper: &Hyperparams,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainState> {
    config.validate()?;
    dataset.validate()?;
    let spec = dataset.spec;
    if *state.params.spec() != spec {
        return Err(Error::shape(
            "model dataset layout",
            format!("{:?}", spec),
            format!("{:?}", state.params.spec()),
        ));
    }
    let sampler = Sampler::new(&spec, &dataset.train, hyper, &config.sampler)?;
    let n_unlabeled = dataset.unlabeled_train().count();
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| n_unlabeled.div_ceil(hyper.unlabeled_batch(&spec)).max(1));
    let modes = config.modes();

    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let started = Instant::now();
        let weights = config.weights(epoch, hyper);
        let adversarial = adversarial_active(&state.params, &weights, &modes);
        let mut rng = epoch_rng(config.seed, epoch);
        let mut sum = LossBreakdown::default();
        let mut objective = 0.0;
        for step in 0..steps {
            let batch = sampler.make_joint_batch(&mut rng);
            if adversarial {
                let (zs, views) = batch_embeddings(&state.params, &batch, hyper)?;
                for _ in 0..config.disc_steps_per_enc_step {
                    let (loss, grads) = discriminator_objective(&state.params, &zs, &views)
                        .map_err(|e| non_finite(e, epoch, step))?;
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            term: "disc".into(),
                            epoch,
                            step,
                        });
                    }
                    state.disc_opt.step(&mut state.params, &grads);
                }
            }
            let out = encoder_objective(&state.params, &batch, &weights, hyper, &modes)
                .map_err(|e| non_finite(e, epoch, step))?;
            if let Some(term) = out.breakdown.first_non_finite() {
                return Err(Error::NonFiniteLoss {
                    term: term.into(),
                    epoch,
                    step,
                });
            }
            state.encoder_opt.step(&mut state.params, &out.grads);
            accumulate(&mut sum, &out.breakdown);
            objective += out.value;
        }
        let n = steps as f64;
        let losses = scale(&sum, 1.0 / n);
        let eval = if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
            let r = evaluate(&state.params, &dataset.test, hyper)?;
            Some(EvalSnapshot {
                acr: r.acr,
                acc: r.acc,
                silhouette: r.silhouette,
            })
        } else {
            None
        };
        state.epoch += 1;
        log::info!(
            "epoch {} joint {:.4} ce {:.4} nl {:.4} H {:.4} var {:.5}{}",
            state.epoch,
            losses.joint,
            losses.ce,
            losses.nl,
            losses.entropy,
            losses.var,
            eval.map(|e| format!(" acr {:.3} acc {:.3}", e.acr, e.acc))
                .unwrap_or_default()
        );
        state.log.records.push(EpochRecord {
            epoch,
            weights,
            losses,
            objective: objective / n,
            eval,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
        if let (Some(dir), Some(k)) = (checkpoint_dir, config.checkpoint_every) {
            if state.epoch % k == 0 && state.epoch < config.epochs {
                let path = dir.join(format!("checkpoint-epoch-{:04}.txt", state.epoch));
                state.to_checkpoint(config, hyper).save(path)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        state
            .to_checkpoint(config, hyper)
            .save(dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(state)
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.ce += b.ce;
    acc.nl += b.nl;
    acc.entropy += b.entropy;
    acc.cl_category += b.cl_category;
    acc.cl_instance += b.cl_instance;
    acc.mse += b.mse;
    acc.var += b.var;
    acc.disc += b.disc;
    acc.adv += b.adv;
    acc.joint += b.joint;
}

fn scale(b: &LossBreakdown, s: f64) -> LossBreakdown {
    LossBreakdown {
        ce: b.ce * s,
        nl: b.nl * s,
        entropy: b.entropy * s,
        cl_category: b.cl_category * s,
        cl_instance: b.cl_instance * s,
        mse: b.mse * s,
        var: b.var * s,
        disc: b.disc * s,
        adv: b.adv * s,
        joint: b.joint * s,
    }
}

/// Trains from `params` for `config.epochs` epochs.
pub fn train(
    dataset: &Dataset,
    params: ModelParams,
    config: &TrainConfig,
    hyper: &Hyperparams,
) -> Result<(ModelParams, TrainLog)> {
    let state = run(
        TrainState::new(params, config)?,
        dataset,
        config,
        hyper,
        None,
    )?;
    Ok((state.params, state.log))
}

/// Loads a checkpoint written by [`run`] and continues to `config.epochs`.
/// The checkpoint's architecture must match the dataset layout and its
/// trajectory hash must match `config` and `hyper`.
pub fn resume(
    checkpoint: impl AsRef<Path>,
    dataset: &Dataset,
    config: &TrainConfig,
    hyper: &Hyperparams,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams, TrainLog)> {
    let ck = Checkpoint::load(checkpoint)?;
    let expected = crate::model::Architecture {
        spec: dataset.spec,
        ..ck.architecture.clone()
    };
    ck.to_params_checked(&expected.config_hash())?;
    let stored = ck.meta.get("trajectory_hash").cloned().unwrap_or_default();
    let wanted = config.trajectory_hash(hyper);
    if stored != wanted {
        return Err(Error::HashMismatch {
            expected: wanted,
            found: stored,
        });
    }
    let state = TrainState::from_checkpoint(&ck, config)?;
    let state = run(state, dataset, config, hyper, checkpoint_dir)?;
    Ok((state.params, state.log))
}
