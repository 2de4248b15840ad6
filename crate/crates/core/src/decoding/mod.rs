//! Greedy decoding, beam search and diverse beam search.
//!
//! Diverse beam search splits the `B` beams into `G` groups of `B / G`. At every
//! time step the groups are extended in order; group `g` ranks its candidates by
//! `log p + λ_g · Δ`, where `Δ` only looks at the choices groups `1..g` already made
//! at this step. Stored beam scores stay pure log-probabilities, so the final
//! ranking ignores `Δ`. Plain beam search is the `G = 1` case.
//!
//! Ties are broken by higher score, then by the lexicographically smaller token
//! sequence.

mod mock;

pub use mock::MockModel;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{EOS, SOS};
use crate::error::{Error, Result};
use crate::lexicon::{cosine_sim, VadVector};
use crate::model::{DecoderState, Seq2Seq};

/// Anything that yields next-token log-probabilities one step at a time.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    /// Token fed to the first decoder step.
    fn start_token(&self) -> usize;
    fn eos(&self) -> Option<usize>;
    fn initial(&self, prompt: &[usize]) -> Result<Self::State>;
    /// Feeds `prev` and returns log-probabilities over the vocabulary.
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
    /// Affect vector of a token, used by the affective metrics.
    fn affect(&self, _id: usize) -> VadVector {
        VadVector::NEUTRAL
    }
}

impl StepModel for Seq2Seq {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn start_token(&self) -> usize {
        SOS
    }

    fn eos(&self) -> Option<usize> {
        Some(EOS)
    }

    fn initial(&self, prompt: &[usize]) -> Result<DecoderState> {
        self.encode(prompt)
    }

    fn step(&self, state: &DecoderState, prev: usize) -> Result<(Vec<f64>, DecoderState)> {
        self.decode_step(state, prev)
    }

    fn affect(&self, id: usize) -> VadVector {
        let r = self.params.affect.row(id);
        VadVector::new(r[0], r[1], r[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiversityMetric {
    None,
    Hamming,
    WlAffect,
    SlAffect,
}

impl fmt::Display for DiversityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiversityMetric::None => "none",
            DiversityMetric::Hamming => "hamming",
            DiversityMetric::WlAffect => "wl-affect",
            DiversityMetric::SlAffect => "sl-affect",
        })
    }
}

impl FromStr for DiversityMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DiversityMetric::None),
            "hamming" => Ok(DiversityMetric::Hamming),
            "wl-affect" | "wl" => Ok(DiversityMetric::WlAffect),
            "sl-affect" | "sl" => Ok(DiversityMetric::SlAffect),
            other => Err(Error::config(format!(
                "unknown metric `{other}` (none, hamming, wl-affect, sl-affect)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub groups: usize,
    pub diversity_strength: f64,
    pub max_len: usize,
    pub metric: DiversityMetric,
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    /// Three beams, one per group, λ_g = 0.7, sentence-level affect metric.
    fn default() -> Self {
        DecodeConfig {
            beam_width: 3,
            groups: 3,
            diversity_strength: 0.7,
            max_len: 20,
            metric: DiversityMetric::SlAffect,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn beam(beam_width: usize, max_len: usize) -> Self {
        DecodeConfig {
            beam_width,
            groups: 1,
            diversity_strength: 0.0,
            max_len,
            metric: DiversityMetric::None,
            length_normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::config("beam width must be at least 1"));
        }
        if self.groups == 0 || !self.beam_width.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "group count {} must divide beam width {}",
                self.groups, self.beam_width
            )));
        }
        if !(self.diversity_strength >= 0.0 && self.diversity_strength.is_finite()) {
            return Err(Error::config(format!(
                "diversity strength {} must be >= 0",
                self.diversity_strength
            )));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be at least 1"));
        }
        Ok(())
    }

    fn group_width(&self) -> usize {
        self.beam_width / self.groups
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    /// Generated tokens, including the final EOS if one was produced.
    pub token_ids: Vec<usize>,
    pub log_prob: f64,
    /// Ψ of the prefix; EOS contributes nothing.
    pub affect_sum: VadVector,
    pub finished: bool,
    pub group: usize,
}

impl BeamState {
    fn root(group: usize) -> Self {
        BeamState {
            token_ids: Vec::new(),
            log_prob: 0.0,
            affect_sum: VadVector::ZERO,
            finished: false,
            group,
        }
    }

    /// Ranking score: total log-probability, or its per-token mean.
    pub fn final_score(&self, length_normalize: bool) -> f64 {
        if length_normalize && !self.token_ids.is_empty() {
            self.log_prob / self.token_ids.len() as f64
        } else {
            self.log_prob
        }
    }

    /// Tokens without the trailing EOS.
    pub fn response(&self, eos: Option<usize>) -> &[usize] {
        match (self.token_ids.last(), eos) {
            (Some(&last), Some(e)) if last == e => &self.token_ids[..self.token_ids.len() - 1],
            _ => &self.token_ids,
        }
    }
}

pub fn delta_hamming(current: usize, previous: &[usize]) -> f64 {
    -(previous.iter().filter(|&&p| p == current).count() as f64)
}

pub fn delta_wl_affect(current: VadVector, previous: &[VadVector]) -> f64 {
    -previous.iter().map(|&p| cosine_sim(current, p)).sum::<f64>()
}

/// `current` is Ψ of the candidate beam (prefix plus candidate token); `previous`
/// holds Ψ of each already-extended beam from earlier groups.
pub fn delta_sl_affect(current: VadVector, previous: &[VadVector]) -> f64 {
    -previous.iter().map(|&p| cosine_sim(current, p)).sum::<f64>()
}

fn better(a_score: f64, a_seq: (&[usize], Option<usize>), b_score: f64, b_seq: (&[usize], Option<usize>)) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| {
        let a = a_seq.0.iter().copied().chain(a_seq.1);
        let b = b_seq.0.iter().copied().chain(b_seq.1);
        a.cmp(b)
    })
}

struct Beam<S> {
    hyp: BeamState,
    state: S,
    /// Token to feed at the next step.
    pending: usize,
    /// Extended during the current time step (so it has a step-t token).
    fresh: bool,
}

struct Candidate {
    parent: usize,
    /// `None` carries a finished beam over unchanged.
    token: Option<usize>,
    rank_score: f64,
}

/// Highest-scoring token, lowest id on ties.
pub fn greedy_decode<M: StepModel>(model: &M, prompt: &[usize], max_len: usize) -> Result<Vec<usize>> {
    let mut state = model.initial(prompt)?;
    let mut prev = model.start_token();
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (lp, next) = model.step(&state, prev)?;
        let best = lp
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > lp[best] { i } else { best });
        out.push(best);
        if Some(best) == model.eos() {
            break;
        }
        state = next;
        prev = best;
    }
    Ok(out)
}

/// Standard beam search with `config.beam_width` beams; groups and metric are ignored.
pub fn beam_search<M: StepModel>(model: &M, prompt: &[usize], config: &DecodeConfig) -> Result<Vec<BeamState>> {
    let plain = DecodeConfig {
        groups: 1,
        diversity_strength: 0.0,
        metric: DiversityMetric::None,
        ..*config
    };
    diverse_beam_search(model, prompt, &plain)
}

/// Diverse beam search; returns all `B` beams ranked by final score.
pub fn diverse_beam_search<M: StepModel>(model: &M, prompt: &[usize], config: &DecodeConfig) -> Result<Vec<BeamState>> {
    config.validate()?;
    let width = config.group_width();
    let root_state = model.initial(prompt)?;
    let eos = model.eos();
    let lambda = if config.metric == DiversityMetric::None {
        0.0
    } else {
        config.diversity_strength
    };

    let mut groups: Vec<Vec<Beam<M::State>>> = (0..config.groups)
        .map(|g| {
            vec![Beam {
                hyp: BeamState::root(g),
                state: root_state.clone(),
                pending: model.start_token(),
                fresh: false,
            }]
        })
        .collect();

    for _t in 0..config.max_len {
        if groups.iter().flatten().all(|b| b.hyp.finished) {
            break;
        }
        groups.iter_mut().flatten().for_each(|b| b.fresh = false);
        for g in 0..groups.len() {
            let (done, rest) = groups.split_at_mut(g);
            let current = &mut rest[0];
            let prev_tokens: Vec<usize> = done
                .iter()
                .flatten()
                .filter(|b| b.fresh)
                .filter_map(|b| b.hyp.token_ids.last().copied())
                .collect();
            let prev_affect: Vec<VadVector> = prev_tokens.iter().map(|&w| model.affect(w)).collect();
            let prev_psi: Vec<VadVector> = done
                .iter()
                .flatten()
                .filter(|b| b.fresh)
                .map(|b| b.hyp.affect_sum)
                .collect();

            let mut steps = Vec::with_capacity(current.len());
            let mut candidates = Vec::new();
            for (i, beam) in current.iter().enumerate() {
                if beam.hyp.finished {
                    steps.push(None);
                    candidates.push(Candidate {
                        parent: i,
                        token: None,
                        rank_score: beam.hyp.log_prob,
                    });
                    continue;
                }
                let (lp, next) = model.step(&beam.state, beam.pending)?;
                if lp.len() != model.vocab_size() {
                    return Err(Error::data(format!(
                        "model returned {} log-probabilities for a vocabulary of {}",
                        lp.len(),
                        model.vocab_size()
                    )));
                }
                for (w, &x) in lp.iter().enumerate() {
                    let delta = if lambda == 0.0 || (prev_tokens.is_empty() && prev_psi.is_empty()) {
                        0.0
                    } else {
                        match config.metric {
                            DiversityMetric::None => 0.0,
                            DiversityMetric::Hamming => delta_hamming(w, &prev_tokens),
                            DiversityMetric::WlAffect => delta_wl_affect(model.affect(w), &prev_affect),
                            DiversityMetric::SlAffect => {
                                delta_sl_affect(extend_psi(model, beam.hyp.affect_sum, w), &prev_psi)
                            }
                        }
                    };
                    candidates.push(Candidate {
                        parent: i,
                        token: Some(w),
                        rank_score: beam.hyp.log_prob + x + lambda * delta,
                    });
                }
                steps.push(Some((lp, next)));
            }

            candidates.sort_by(|a, b| {
                better(
                    a.rank_score,
                    (&current[a.parent].hyp.token_ids, a.token),
                    b.rank_score,
                    (&current[b.parent].hyp.token_ids, b.token),
                )
            });
            candidates.truncate(width);

            let next_group = candidates
                .into_iter()
                .map(|c| {
                    let parent = &current[c.parent];
                    match c.token {
                        None => Beam {
                            hyp: parent.hyp.clone(),
                            state: parent.state.clone(),
                            pending: parent.pending,
                            fresh: false,
                        },
                        Some(w) => {
                            let (lp, next) = steps[c.parent].as_ref().expect("live parent was stepped");
                            let mut hyp = parent.hyp.clone();
                            hyp.token_ids.push(w);
                            hyp.log_prob += lp[w];
                            hyp.affect_sum = extend_psi(model, hyp.affect_sum, w);
                            hyp.finished = Some(w) == eos;
                            Beam {
                                hyp,
                                state: next.clone(),
                                pending: w,
                                fresh: true,
                            }
                        }
                    }
                })
                .collect();
            *current = next_group;
        }
    }

    let mut out: Vec<BeamState> = groups.into_iter().flatten().map(|b| b.hyp).collect();
    out.sort_by(|a, b| {
        better(
            a.final_score(config.length_normalize),
            (&a.token_ids, None),
            b.final_score(config.length_normalize),
            (&b.token_ids, None),
        )
    });
    Ok(out)
}

fn extend_psi<M: StepModel>(model: &M, psi: VadVector, token: usize) -> VadVector {
    if Some(token) == model.eos() {
        psi
    } else {
        psi + model.affect(token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_mock() -> MockModel {
        // vocab 4, EOS = 3; argmax chain 1 -> 2 -> EOS
        MockModel::parse(
            "vocab 4\neos 3\n\
             -\t0.1 0.6 0.2 0.1\n\
             1\t0.1 0.1 0.7 0.1\n\
             1 2\t0.1 0.1 0.1 0.7\n\
             @1\t0.25 0.25 0.25 0.25\n\
             @2\t0.25 0.25 0.25 0.25\n",
        )
        .unwrap()
    }

    #[test]
    fn hamming_counts() {
        assert_eq!(delta_hamming(2, &[]), 0.0);
        assert_eq!(delta_hamming(2, &[2, 5, 2]), -2.0);
        assert_eq!(delta_hamming(1, &[2, 5, 2]), 0.0);
    }

    #[test]
    fn wl_affect_values() {
        let ecstatic = VadVector::new(6.45, 6.95, 5.63);
        let bored = VadVector::new(2.95, 3.65, 4.96);
        assert_eq!(delta_wl_affect(ecstatic, &[]), 0.0);
        assert!((delta_wl_affect(ecstatic, &[ecstatic]) + 1.0).abs() < 1e-12);
        let dot = 6.45 * 2.95 + 6.95 * 3.65 + 5.63 * 4.96;
        let na = (6.45f64 * 6.45 + 6.95 * 6.95 + 5.63 * 5.63).sqrt();
        let nb = (2.95f64 * 2.95 + 3.65 * 3.65 + 4.96 * 4.96).sqrt();
        assert!((delta_wl_affect(ecstatic, &[bored]) + dot / (na * nb)).abs() < 1e-12);
    }

    #[test]
    fn sl_affect_values() {
        let happy = VadVector::new(8.47, 6.05, 7.21);
        let sad = VadVector::new(2.1, 3.49, 3.84);
        let love = VadVector::new(8.0, 5.26, 5.92);
        let hate = VadVector::new(1.96, 6.26, 4.47);
        let cur = happy + love;
        let prev = sad + hate;
        let (c, p) = ([16.47, 11.31, 13.13], [4.06, 9.75, 8.31]);
        let dot: f64 = c.iter().zip(p).map(|(a, b)| a * b).sum();
        let n = |v: [f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((delta_sl_affect(cur, &[prev]) + dot / (n(c) * n(p))).abs() < 1e-12);
        assert!((delta_sl_affect(cur, &[cur, cur]) + 2.0).abs() < 1e-12);
        assert_eq!(delta_sl_affect(cur, &[VadVector::ZERO]), 0.0);
    }

    #[test]
    fn greedy_follows_chain() {
        let m = chain_mock();
        assert_eq!(greedy_decode(&m, &[], 5).unwrap(), vec![1, 2, 3]);
        assert_eq!(greedy_decode(&m, &[], 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn greedy_ties_pick_lowest_id() {
        let m = MockModel::parse("vocab 3\n@0\t0.4 0.4 0.2\n@1\t0.2 0.4 0.4\n").unwrap();
        assert_eq!(greedy_decode(&m, &[], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn beam_one_is_greedy() {
        let m = chain_mock();
        let b = beam_search(&m, &[], &DecodeConfig::beam(1, 5)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].token_ids, greedy_decode(&m, &[], 5).unwrap());
        assert!(b[0].finished);
        let expected = 0.6f64.ln() + 0.7f64.ln() + 0.7f64.ln();
        assert!((b[0].log_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn finished_beams_compete() {
        // EOS at step 0 has p = 0.5; every continuation is worse.
        let m = MockModel::parse("vocab 3\neos 2\n@0\t0.3 0.2 0.5\n@1\t0.4 0.3 0.3\n@2\t0.4 0.3 0.3\n").unwrap();
        let b = beam_search(&m, &[], &DecodeConfig::beam(2, 3)).unwrap();
        assert_eq!(b[0].token_ids, vec![2]);
        assert!(b[0].finished);
        assert_eq!(b[1].token_ids, vec![0, 0, 0]);
        assert!(!b[1].finished);
    }

    #[test]
    fn length_normalization_changes_ranking() {
        let m = MockModel::parse("vocab 3\neos 2\n@0\t0.35 0.15 0.5\n@1\t0.05 0.05 0.9\n@2\t0.4 0.3 0.3\n").unwrap();
        let mut cfg = DecodeConfig::beam(2, 3);
        let raw = beam_search(&m, &[], &cfg).unwrap();
        assert_eq!(raw[0].token_ids, vec![2]);
        cfg.length_normalize = true;
        let norm = beam_search(&m, &[], &cfg).unwrap();
        // [0, EOS]: (ln 0.35 + ln 0.9) / 2 > ln 0.5
        assert_eq!(norm[0].token_ids, vec![0, 2]);
    }

    #[test]
    fn affect_sum_is_exact() {
        let mut m = chain_mock();
        m.set_affect(1, VadVector::new(8.47, 6.05, 7.21));
        m.set_affect(2, VadVector::new(2.1, 3.49, 3.84));
        let b = beam_search(&m, &[], &DecodeConfig::beam(3, 3)).unwrap();
        for beam in b {
            let fresh = beam
                .response(m.eos())
                .iter()
                .fold(VadVector::ZERO, |a, &w| a + m.affect(w));
            assert_eq!(beam.affect_sum, fresh);
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let m = chain_mock();
        let cfg = DecodeConfig {
            beam_width: 3,
            groups: 2,
            ..Default::default()
        };
        assert!(diverse_beam_search(&m, &[], &cfg).is_err());
        assert!(beam_search(&m, &[], &DecodeConfig::beam(0, 3)).is_err());
        let cfg = DecodeConfig {
            diversity_strength: -1.0,
            ..Default::default()
        };
        assert!(diverse_beam_search(&m, &[], &cfg).is_err());
        assert_eq!(
            "SL-affect".parse::<DiversityMetric>().unwrap(),
            DiversityMetric::SlAffect
        );
        assert!("cosine".parse::<DiversityMetric>().is_err());
    }
}
