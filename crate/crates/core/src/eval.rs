//! Affect-centric automatic metrics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use crate::decoding::{diverse_beam_search, DecodeConfig, StepModel};
use crate::error::{Error, Result};
use crate::lexicon::{affect_distance, cosine_sim, Lexicon, VadVector};
use crate::model::Seq2Seq;

/// Mean distance of each token's affect vector from the neutral vector.
pub fn affect_content_score<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Domain("affect content of an empty token list".into()));
    }
    let total: f64 = tokens
        .iter()
        .map(|t| affect_distance(lexicon.w2av(t.as_ref()), VadVector::NEUTRAL))
        .sum();
    Ok(total / tokens.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub mean_pairwise_affect_distance: f64,
    pub mean_pairwise_cosine: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub beam_count: usize,
}

fn distinct_n<S: AsRef<str>>(beams: &[Vec<S>], n: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for b in beams {
        for gram in b.windows(n) {
            total += 1;
            seen.insert(gram.iter().map(|s| s.as_ref()).collect::<Vec<_>>());
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Pairwise statistics over the affect means of the beams plus pooled distinct-n.
/// An empty beam counts as neutral.
pub fn affect_diversity_report<S: AsRef<str>>(beams: &[Vec<S>], lexicon: &Lexicon) -> Result<DiversityReport> {
    if beams.len() < 2 {
        return Err(Error::Domain(format!(
            "diversity needs at least 2 beams, got {}",
            beams.len()
        )));
    }
    let means: Vec<VadVector> = beams
        .iter()
        .map(|b| lexicon.affect_mean(b).unwrap_or(VadVector::NEUTRAL))
        .collect();
    let (mut dist, mut cos, mut pairs) = (0.0, 0.0, 0usize);
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            dist += affect_distance(means[i], means[j]);
            cos += cosine_sim(means[i], means[j]);
            pairs += 1;
        }
    }
    Ok(DiversityReport {
        mean_pairwise_affect_distance: dist / pairs as f64,
        mean_pairwise_cosine: cos / pairs as f64,
        distinct_1: distinct_n(beams, 1),
        distinct_2: distinct_n(beams, 2),
        beam_count: beams.len(),
    })
}

/// One row of a corpus evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub prompts: usize,
    /// Mean affect content of the top-ranked response; an empty response scores 0.
    pub affect_content: f64,
    /// Averages over prompts; `None` when fewer than two beams are decoded.
    pub diversity: Option<DiversityReport>,
}

/// Decodes every prompt under each configuration and aggregates the metrics.
pub fn corpus_eval(
    model: &Seq2Seq,
    prompts: &[Vec<usize>],
    configs: &[(String, DecodeConfig)],
    lexicon: &Lexicon,
) -> Result<Vec<EvalRow>> {
    if prompts.is_empty() {
        return Err(Error::data("evaluation needs at least one prompt"));
    }
    configs
        .iter()
        .map(|(label, config)| {
            let mut content = 0.0;
            let mut div = [0.0; 4];
            for p in prompts {
                let beams = diverse_beam_search(model, p, config)?;
                let texts: Vec<Vec<&str>> = beams
                    .iter()
                    .map(|b| {
                        b.response(model.eos())
                            .iter()
                            .map(|&id| model.vocab.token(id))
                            .collect()
                    })
                    .collect();
                if !texts[0].is_empty() {
                    content += affect_content_score(&texts[0], lexicon)?;
                }
                if texts.len() >= 2 {
                    let r = affect_diversity_report(&texts, lexicon)?;
                    div[0] += r.mean_pairwise_affect_distance;
                    div[1] += r.mean_pairwise_cosine;
                    div[2] += r.distinct_1;
                    div[3] += r.distinct_2;
                }
            }
            let n = prompts.len() as f64;
            let diversity = (config.beam_width >= 2).then(|| DiversityReport {
                mean_pairwise_affect_distance: div[0] / n,
                mean_pairwise_cosine: div[1] / n,
                distinct_1: div[2] / n,
                distinct_2: div[3] / n,
                beam_count: config.beam_width,
            });
            Ok(EvalRow {
                label: label.clone(),
                prompts: prompts.len(),
                affect_content: content / n,
                diversity,
            })
        })
        .collect()
}

pub const TSV_HEADER: &str =
    "config\tprompts\taffect_content\tmean_pairwise_affect_distance\tmean_pairwise_cosine\tdistinct_1\tdistinct_2\tbeams";

impl EvalRow {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\t{}\t{:.6}", self.label, self.prompts, self.affect_content);
        match &self.diversity {
            Some(d) => {
                let _ = write!(
                    s,
                    "\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                    d.mean_pairwise_affect_distance, d.mean_pairwise_cosine, d.distinct_1, d.distinct_2, d.beam_count
                );
            }
            None => s.push_str("\tNA\tNA\tNA\tNA\t1"),
        }
        s
    }
}

pub fn write_tsv<W: Write>(rows: &[EvalRow], mut out: W, header: bool) -> Result<()> {
    if header {
        writeln!(out, "{TSV_HEADER}")?;
    }
    for r in rows {
        writeln!(out, "{}", r.to_tsv())?;
    }
    Ok(())
}
