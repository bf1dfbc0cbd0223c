//! Minibatch training with AdamW and linear warmup.

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::VertexId;
use crate::model::{AblationFlags, Example, ModelError, ModelParams};
use crate::oracle::SampledQuery;
use crate::rng::{derive_rng, derive_seed};
use crate::tensor::Tensor;
use crate::tokenizer::{orthonormal_rows, tokenize, TokenSequence};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training queries with answers")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay, applied to weight matrices only.
    pub weight_decay: f64,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 disables intermediate ones.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 3e-4,
            warmup_steps: 100,
            steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.warmup_steps > self.steps {
            return Err(TrainError::Config(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("learning rate or betas out of range".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step`: linear ramp, then constant.
    pub fn rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Adam moments for every parameter, in registry order.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".w1") || name.ends_with(".w2")
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let m: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (((name, p), g), (m, v)) in params
            .named_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let wd = if decays(&name) { cfg.weight_decay } else { 0.0 };
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
                p[i] -= lr * (update + wd * p[i]);
            }
        }
    }
}

/// A training query tokenized once, with its answers.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tokens: TokenSequence,
    pub answers: Vec<VertexId>,
}

/// Tokenizes training queries; queries without train answers are dropped.
pub fn prepare(params: &ModelParams, queries: &[SampledQuery], flags: AblationFlags) -> Result<Vec<Prepared>> {
    let sizes = params.table_sizes();
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        if q.answers.train.is_empty() {
            continue;
        }
        let tokens = tokenize(&q.query, &sizes, flags.into()).map_err(ModelError::from)?;
        if tokens.n > params.config.d2 {
            return Err(ModelError::from(crate::tokenizer::TokenizerError::TooManyNodes {
                nodes: tokens.n,
                d2: params.config.d2,
            })
            .into());
        }
        out.push(Prepared {
            tokens,
            answers: q.answers.train.iter().copied().collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Batch loss at every completed step.
    pub losses: Vec<(usize, f64)>,
    /// Step at which training stopped on a non-finite loss or gradient;
    /// `params` then hold the last finite state.
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    /// Two-column TSV: step, loss.
    pub fn loss_tsv(&self) -> String {
        let mut s = String::from("step\tloss\n");
        for (step, loss) in &self.losses {
            s += &format!("{step}\t{loss}\n");
        }
        s
    }
}

/// Builds the batch for 0-based `step`: queries drawn uniformly with
/// replacement, one answer each, fresh identifier bases.
pub fn batch_at(data: &[Prepared], d2: usize, cfg: &TrainConfig, step: usize) -> Vec<Example> {
    let mut rng = derive_rng(cfg.seed, &[0xba7c, step as u64]);
    (0..cfg.batch_size)
        .map(|i| {
            let p = &data[rng.random_range(0..data.len())];
            let answer = p.answers[rng.random_range(0..p.answers.len())];
            let seed = derive_seed(cfg.seed, &[step as u64, i as u64]);
            Example {
                basis: orthonormal_rows(p.tokens.n, d2, seed).expect("node count checked in prepare"),
                tokens: p.tokens.clone(),
                answer,
            }
        })
        .collect()
}

/// Trains `params` in place of a copy and returns the result.
/// `on_checkpoint` is called every `checkpoint_every` steps and at the end.
pub fn train(
    cfg: &TrainConfig,
    data: &[Prepared],
    params: ModelParams,
    mut on_checkpoint: impl FnMut(usize, &ModelParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = params;
    let mut opt = AdamW::new(&params);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut diverged_at = None;
    for step in 0..cfg.steps {
        let batch = batch_at(data, params.config.d2, cfg, step);
        let (loss, grads) = params.loss_and_grad(&batch)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            warn!("non-finite loss or gradient at step {step}; stopping with the last good parameters");
            diverged_at = Some(step);
            break;
        }
        opt.step(&mut params, &grads, cfg.rate_at(step), cfg);
        losses.push((step, loss));
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let k = cfg.log_every.min(losses.len());
            let avg = losses[losses.len() - k..].iter().map(|(_, l)| l).sum::<f64>() / k as f64;
            info!("step {}: mean loss {avg:.4} over the last {k} steps", step + 1);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
            on_checkpoint(step + 1, &params);
        }
    }
    on_checkpoint(losses.len(), &params);
    Ok(TrainOutcome {
        params,
        losses,
        diverged_at,
    })
}
