//! Training objectives and the two-phase training loop.
//!
//! Every objective is a per-step sum over the reference response under teacher
//! forcing. With `lp_i = log p(y_i | y_<i, X)` and `p_i = exp(lp_i)`:
//!
//! * XENT: `-lp_i`
//! * DMIN: `-(1-λ) lp_i + λ p_i ‖mean(X) - mean(y_1..y_i)‖`
//! * DMAX: `-(1-λ) lp_i - λ p_i ‖mean(X) - mean(y_1..y_i)‖`
//! * AC:   `-(1-λ) lp_i - λ p_i ‖w2av(y_i) - η‖`
//!
//! The distances use reference tokens and are constants; gradients flow through
//! `lp_i` and `p_i` only. A batch loss sums over steps and averages over pairs.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use log::info;

use crate::checkpoint;
use crate::corpus::{batches, Batch, DialoguePair, Vocabulary, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::lexicon::{affect_distance, Lexicon, VadVector};
use crate::model::Seq2Seq;
use crate::tensor::{clip_global_norm, Adam, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Xent,
    Dmin,
    Dmax,
    Ac,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Xent, LossKind::Dmin, LossKind::Dmax, LossKind::Ac];

    /// Tuned balance weights: DMIN 0.5, DMAX 0.4, AC 0.5.
    pub fn default_lambda(self) -> f64 {
        match self {
            LossKind::Xent => 0.0,
            LossKind::Dmin => 0.5,
            LossKind::Dmax => 0.4,
            LossKind::Ac => 0.5,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Xent => "xent",
            LossKind::Dmin => "dmin",
            LossKind::Dmax => "dmax",
            LossKind::Ac => "ac",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xent" => Ok(LossKind::Xent),
            "dmin" => Ok(LossKind::Dmin),
            "dmax" => Ok(LossKind::Dmax),
            "ac" => Ok(LossKind::Ac),
            other => Err(Error::config(format!("unknown loss `{other}` (xent, dmin, dmax, ac)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda: f64,
    /// Divide each pair's affect term by its response length.
    pub normalize_affect: bool,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            lambda: kind.default_lambda(),
            normalize_affect: false,
        }
    }

    pub fn with_lambda(kind: LossKind, lambda: f64) -> Self {
        LossConfig {
            kind,
            lambda,
            normalize_affect: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// A loss configuration bound to the per-token affect vectors it needs.
#[derive(Debug, Clone)]
pub struct Objective {
    pub config: LossConfig,
    affect: Vec<VadVector>,
}

impl Objective {
    pub fn new(config: LossConfig, vocab: &Vocabulary, lexicon: &Lexicon) -> Result<Self> {
        config.validate()?;
        let affect = vocab
            .tokens()
            .iter()
            .enumerate()
            .map(|(id, t)| {
                if id < NUM_RESERVED {
                    VadVector::NEUTRAL
                } else {
                    lexicon.w2av(t)
                }
            })
            .collect();
        Ok(Objective { config, affect })
    }

    fn vad(&self, id: usize) -> VadVector {
        self.affect.get(id).copied().unwrap_or(VadVector::NEUTRAL)
    }

    /// Per-step affect distances for one pair (before λ and sign).
    pub fn step_distances(&self, pair: &DialoguePair) -> Vec<f64> {
        let n = pair.response_ids.len();
        match self.config.kind {
            LossKind::Xent => vec![0.0; n],
            LossKind::Dmin | LossKind::Dmax => {
                let prompt = pair.prompt_ids.iter().fold(VadVector::ZERO, |a, &i| a + self.vad(i))
                    / pair.prompt_ids.len() as f64;
                let mut sum = VadVector::ZERO;
                pair.response_ids
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| {
                        sum += self.vad(y);
                        affect_distance(prompt, sum / (i + 1) as f64)
                    })
                    .collect()
            }
            LossKind::Ac => pair
                .response_ids
                .iter()
                .map(|&y| affect_distance(self.vad(y), VadVector::NEUTRAL))
                .collect(),
        }
    }

    fn affect_sign(&self) -> f64 {
        match self.config.kind {
            LossKind::Dmin => 1.0,
            _ => -1.0,
        }
    }

    /// Builds the batch loss on `g` from the per-step reference log-probabilities.
    pub fn batch_loss(&self, g: &mut Graph, step_logp: &[Var], batch: &Batch) -> Result<Var> {
        let rows = batch.len();
        let lambda = if self.config.kind == LossKind::Xent {
            0.0
        } else {
            self.config.lambda
        };
        let dists: Vec<Vec<f64>> = batch.pairs.iter().map(|p| self.step_distances(p)).collect();
        let mut total: Option<Var> = None;
        for (t, &lp) in step_logp.iter().enumerate() {
            let mask = batch.responses.mask_column(t);
            let c_log: Vec<f64> = mask.iter().map(|m| -(1.0 - lambda) * m).collect();
            let c_log = g.constant(Tensor::new(rows, 1, c_log));
            let mut term = g.hadamard(lp, c_log)?;
            if lambda != 0.0 {
                let c_prob: Vec<f64> = (0..rows)
                    .map(|r| {
                        if mask[r] == 0.0 {
                            return 0.0;
                        }
                        let norm = if self.config.normalize_affect {
                            batch.pairs[r].response_ids.len() as f64
                        } else {
                            1.0
                        };
                        self.affect_sign() * lambda * dists[r][t] / norm
                    })
                    .collect();
                let c_prob = g.constant(Tensor::new(rows, 1, c_prob));
                let p = g.exp(lp);
                let affect_term = g.hadamard(p, c_prob)?;
                term = g.add(term, affect_term)?;
            }
            let step = g.sum(term);
            total = Some(match total {
                None => step,
                Some(acc) => g.add(acc, step)?,
            });
        }
        let total = total.ok_or_else(|| Error::data("empty batch"))?;
        Ok(g.scale(total, 1.0 / rows as f64))
    }
}

/// Loss value and gradients (in [`crate::model::ModelParams::trainable`] order) for
/// the given trainable values.
pub fn loss_and_grad(
    model: &Seq2Seq,
    trainable: &[Tensor],
    batch: &Batch,
    objective: &Objective,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = model.register(&mut g, trainable);
    let steps = model.teacher_forced(&mut g, &vars, batch)?;
    let loss = objective.batch_loss(&mut g, &steps, batch)?;
    g.backward(loss)?;
    let grads = vars.trainable.iter().map(|&v| g.grad_tensor(v).data).collect();
    Ok((g.scalar_value(loss), grads))
}

/// Forward-only batch loss.
pub fn loss_value(model: &Seq2Seq, batch: &Batch, objective: &Objective) -> Result<f64> {
    let mut g = Graph::new();
    let trainable: Vec<Tensor> = model.params.trainable().into_iter().cloned().collect();
    let vars = model.register(&mut g, &trainable);
    let steps = model.teacher_forced(&mut g, &vars, batch)?;
    let loss = objective.batch_loss(&mut g, &steps, batch)?;
    Ok(g.scalar_value(loss))
}

fn pair_loss(model: &Seq2Seq, pair: &DialoguePair, config: LossConfig, lexicon: &Lexicon) -> Result<f64> {
    let objective = Objective::new(config, &model.vocab, lexicon)?;
    loss_value(model, &Batch::new(vec![pair.clone()]), &objective)
}

pub fn xent_loss(model: &Seq2Seq, pair: &DialoguePair) -> Result<f64> {
    pair_loss(model, pair, LossConfig::new(LossKind::Xent), &Lexicon::default())
}

pub fn dmin_loss(model: &Seq2Seq, pair: &DialoguePair, lambda: f64, lexicon: &Lexicon) -> Result<f64> {
    pair_loss(model, pair, LossConfig::with_lambda(LossKind::Dmin, lambda), lexicon)
}

pub fn dmax_loss(model: &Seq2Seq, pair: &DialoguePair, lambda: f64, lexicon: &Lexicon) -> Result<f64> {
    pair_loss(model, pair, LossConfig::with_lambda(LossKind::Dmax, lambda), lexicon)
}

pub fn ac_loss(model: &Seq2Seq, pair: &DialoguePair, lambda: f64, lexicon: &Lexicon) -> Result<f64> {
    pair_loss(model, pair, LossConfig::with_lambda(LossKind::Ac, lambda), lexicon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    /// Epochs of XENT pre-training.
    pub phase1_epochs: usize,
    /// Epochs with the configured (affective) loss.
    pub phase2_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// When set, the model is saved to `<path>.phase1` after phase 1 and to `<path>`
    /// at the end.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainSchedule {
    /// 40:10 split between the phases, batch 64, Adam at 1e-3, clip at 5.
    fn default() -> Self {
        TrainSchedule {
            phase1_epochs: 40,
            phase2_epochs: 10,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            clip_norm: Some(5.0),
            checkpoint_path: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!("clip norm must be positive and finite, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: u8,
    pub kind: LossKind,
    pub mean_loss: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.6}\t{:.3}",
            self.epoch, self.phase, self.kind, self.mean_loss, self.seconds
        )
    }
}

/// Runs `phase1_epochs` of XENT, then `phase2_epochs` of `loss`, updating `model`
/// in place. `on_epoch` sees every log line as it is produced.
pub fn train(
    model: &mut Seq2Seq,
    pairs: &[DialoguePair],
    schedule: &TrainSchedule,
    loss: LossConfig,
    lexicon: &Lexicon,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if pairs.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    schedule.validate()?;
    let phases = [
        (
            1u8,
            schedule.phase1_epochs,
            Objective::new(LossConfig::new(LossKind::Xent), &model.vocab, lexicon)?,
        ),
        (
            2u8,
            schedule.phase2_epochs,
            Objective::new(loss, &model.vocab, lexicon)?,
        ),
    ];
    let mut adam = Adam::new(schedule.learning_rate);
    let mut log = Vec::new();
    let mut epoch = 0;
    for (phase, epochs, objective) in &phases {
        for _ in 0..*epochs {
            let started = Instant::now();
            let epoch_seed = schedule.seed.wrapping_add(epoch as u64);
            let mut sum = 0.0;
            let all = batches(pairs, schedule.batch_size, epoch_seed);
            for (bi, batch) in all.iter().enumerate() {
                let trainable: Vec<Tensor> = model.params.trainable().into_iter().cloned().collect();
                let (value, mut grads) = loss_and_grad(model, &trainable, batch, objective)?;
                if !value.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: bi,
                        kind: objective.config.kind.to_string(),
                        value,
                    });
                }
                if let Some(max) = schedule.clip_norm {
                    clip_global_norm(&mut grads, max);
                }
                let mut slots = model.params.trainable_mut();
                adam.step(&mut slots, &grads);
                slots.iter_mut().for_each(|t| t.round_to_f32());
                if slots.iter().any(|t| t.data.iter().any(|x| !x.is_finite())) {
                    // an update overflowed the f32 range
                    return Err(Error::NonFinite {
                        epoch,
                        batch: bi,
                        kind: objective.config.kind.to_string(),
                        value: f64::INFINITY,
                    });
                }
                sum += value;
            }
            let entry = EpochLog {
                epoch,
                phase: *phase,
                kind: objective.config.kind,
                mean_loss: sum / all.len() as f64,
                seconds: started.elapsed().as_secs_f64(),
            };
            info!("{entry}");
            on_epoch(&entry);
            log.push(entry);
            epoch += 1;
        }
        if *phase == 1 && schedule.phase1_epochs > 0 && schedule.phase2_epochs > 0 {
            if let Some(path) = &schedule.checkpoint_path {
                let mut p = path.clone().into_os_string();
                p.push(".phase1");
                checkpoint::save(model, &PathBuf::from(p))?;
            }
        }
    }
    if let Some(path) = &schedule.checkpoint_path {
        checkpoint::save(model, path)?;
    }
    Ok(log)
}
