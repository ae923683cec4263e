//! Flow-matching training with the weighted strain/vorticity regularizer.

mod adam;
mod data;
mod log;
mod loss;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use data::{interpolate, pinwheel_from, pinwheel_raw, pinwheel_std, sample_pinwheel, Batch};
pub use log::{LogRecord, TrainLog, METRICS_HEADER};
pub use loss::{
    fm_loss, objective, penalty_exact, penalty_exact_at, penalty_hutchinson, rademacher_probes,
    LossEval, LossSettings, RegMode, TRAIN_CHUNK,
};

use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::autodiff::gradcheck::Objective;
use crate::autodiff::{FlowModel, MlpParams, ModelKind};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Dimension of the pinwheel experiments.
pub const PINWHEEL_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Strain weight.
    pub alpha: f64,
    /// Vorticity weight.
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    /// One epoch is one optimizer step on a freshly sampled batch.
    pub epochs: usize,
    pub seed: u64,
    pub sigma_min: f64,
    pub reg_mode: RegMode,
    pub probes: usize,
    pub model_kind: ModelKind,
    pub log_every: usize,
    pub hidden: usize,
    pub depth: usize,
    pub fd_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            lr: 1e-3,
            batch: 512,
            epochs: 2000,
            seed: 0,
            sigma_min: 0.0,
            reg_mode: RegMode::Exact,
            probes: 1,
            model_kind: ModelKind::Mlp,
            log_every: 100,
            hidden: 256,
            depth: 5,
            fd_step: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.lr, self.sigma_min, self.fd_step];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "training config has non-finite values".into(),
            ));
        }
        let checks = [
            (self.alpha >= 0.0, "alpha must be nonnegative"),
            (self.beta >= 0.0, "beta must be nonnegative"),
            (self.lr > 0.0, "lr must be positive"),
            (self.batch >= 1, "batch must be at least 1"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (
                (0.0..1.0).contains(&self.sigma_min),
                "sigma_min must lie in [0, 1)",
            ),
            (self.probes >= 1, "probes must be at least 1"),
            (self.log_every >= 1, "log_every must be at least 1"),
            (self.fd_step > 0.0, "fd_step must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidArgument(msg.into()));
            }
        }
        Ok(())
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            alpha: self.alpha,
            beta: self.beta,
            sigma_min: self.sigma_min,
            reg_mode: self.reg_mode,
            fd_step: self.fd_step,
            activation_fault: 1.0,
        }
    }

    pub fn init_model(&self) -> Result<FlowModel> {
        FlowModel::new(
            self.model_kind,
            PINWHEEL_DIM,
            self.hidden,
            self.depth,
            self.seed,
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub log: TrainLog,
}

/// `α̃ = α·d`.
pub fn normalized_weight(alpha: f64, d: usize) -> f64 {
    alpha * d as f64
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(config, |_| {})
}

/// Trains from the seeded initialization, calling `on_log` for every logged
/// record. Epoch `e` draws its batch from the `data` stream at index `e` and
/// its probes from the `probes` stream at index `e`.
pub fn train_with(
    config: &TrainConfig,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = config.init_model()?;
    let arch = model.params().arch;
    let mut flat = model.params().to_flat();
    let mut adam = AdamState::new(flat.len());
    let settings = config.loss_settings();
    let mut log = TrainLog::default();
    for epoch in 1..=config.epochs {
        let batch = Batch::for_epoch(config.seed, epoch, config.batch);
        let probes = match config.reg_mode {
            RegMode::Hutchinson => rademacher_probes(
                &mut stream_rng(config.seed, "probes", epoch as u64),
                config.probes,
                config.batch,
                PINWHEEL_DIM,
            ),
            RegMode::Exact => Vec::new(),
        };
        let eval = objective(&model, &batch, &probes, &settings, true)?;
        let grad = eval.grad.as_deref().unwrap();
        let finite = eval.total.is_finite() && grad.iter().all(|g| g.is_finite());
        let due = epoch == 1 || epoch % config.log_every == 0 || epoch == config.epochs;
        if due || !finite {
            let (strain, vort) = match (eval.strain, eval.vort, config.reg_mode) {
                (Some(s), Some(v), RegMode::Exact) => (s, v),
                _ => {
                    penalty_exact(&model, &batch, config.sigma_min).unwrap_or((f64::NAN, f64::NAN))
                }
            };
            let record = LogRecord {
                epoch,
                fm_loss: eval.fm,
                strain_sq: strain,
                vort_sq: vort,
                reg_total: config.alpha * strain + config.beta * vort,
            };
            if !finite {
                return Err(Error::Diverged {
                    epoch,
                    log: Box::new(log),
                });
            }
            on_log(&record);
            log.push(record);
        }
        adam_step(&mut flat, grad, &mut adam, config.lr)?;
        *model.params_mut() = MlpParams::from_flat(arch, config.seed, &flat)?;
    }
    Ok(TrainOutcome { model, log })
}

/// Loss terms of a model on a held-out batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub fm_loss: f64,
    pub strain_sq: f64,
    pub vort_sq: f64,
}

/// Fixed evaluation batch: the `eval` stream of `seed`.
pub fn eval_batch(seed: u64, n: usize) -> Batch {
    Batch::sample(&mut stream_rng(seed, "eval", 0), n)
}

pub fn evaluate_model(model: &FlowModel, batch: &Batch, sigma_min: f64) -> Result<EvalMetrics> {
    let fm = fm_loss(model, batch, sigma_min)?;
    let (strain, vort) = penalty_exact(model, batch, sigma_min)?;
    Ok(EvalMetrics {
        fm_loss: fm,
        strain_sq: strain,
        vort_sq: vort,
    })
}

/// Which part of the training objective a [`LossObjective`] exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Fm,
    /// `α·strain + β·vort`, without the flow-matching term.
    Penalty,
    Total,
}

/// The batch objective as a function of the flat parameter vector, for
/// gradient checking.
pub struct LossObjective<'a> {
    pub model: &'a FlowModel,
    pub batch: &'a Batch,
    pub probes: Vec<Array2<f64>>,
    pub settings: LossSettings,
    pub term: LossTerm,
}

impl LossObjective<'_> {
    fn eval(&self, flat: &[f64], with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let p = self.model.params();
        let model = FlowModel::from_params(
            self.model.kind(),
            MlpParams::from_flat(p.arch, p.seed, flat)?,
        )?;
        let fm_only = LossSettings {
            alpha: 0.0,
            beta: 0.0,
            ..self.settings
        };
        let run = |s: &LossSettings| objective(&model, self.batch, &self.probes, s, with_grad);
        match self.term {
            LossTerm::Fm => run(&fm_only).map(|e| (e.total, e.grad)),
            LossTerm::Total => run(&self.settings).map(|e| (e.total, e.grad)),
            LossTerm::Penalty => {
                let full = run(&self.settings)?;
                let fm = run(&fm_only)?;
                let grad = full
                    .grad
                    .zip(fm.grad)
                    .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x - y).collect());
                Ok((full.total - fm.total, grad))
            }
        }
    }
}

impl Objective for LossObjective<'_> {
    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok(self.eval(params, false)?.0)
    }

    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.eval(params, true)?;
        Ok((v, g.unwrap()))
    }
}
