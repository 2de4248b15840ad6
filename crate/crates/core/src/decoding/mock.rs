//! Table-driven step model for decoder tests and `decode --mock`.
//!
//! ```text
//! # comment
//! vocab 4            number of token ids (required)
//! eos 3              optional end token
//! -<TAB>p0 p1 p2 p3  distribution at the empty prefix
//! 1 2<TAB>...        distribution after generating 1, 2
//! @2<TAB>...         fallback for any prefix of length 2
//! affect 1<TAB>v a d affect vector of token 1 (default η)
//! ```
//!
//! Rows must be strictly positive and sum to 1 within 1e-6. An exact prefix row
//! wins over a positional one.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::StepModel;
use crate::error::{Error, Result};
use crate::lexicon::VadVector;

const START: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockModel {
    vocab_size: usize,
    eos: Option<usize>,
    prefix_rows: HashMap<Vec<usize>, Row>,
    position_rows: HashMap<usize, Row>,
    affect: Vec<VadVector>,
}

fn parse_ids(s: &str, line: usize) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::data(format!("mock line {line}: bad token id `{t}`")))
        })
        .collect()
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::data(format!("mock line {line}: bad number `{t}`")))
        })
        .collect()
}

impl MockModel {
    pub fn new(vocab_size: usize, eos: Option<usize>) -> Self {
        MockModel {
            vocab_size,
            eos,
            prefix_rows: HashMap::new(),
            position_rows: HashMap::new(),
            affect: vec![VadVector::NEUTRAL; vocab_size],
        }
    }

    fn check_row(&self, probs: &[f64]) -> Result<Row> {
        if probs.len() != self.vocab_size {
            return Err(Error::data(format!(
                "row has {} entries, vocabulary is {}",
                probs.len(),
                self.vocab_size
            )));
        }
        if probs.iter().any(|&p| p.is_nan() || p <= 0.0) {
            return Err(Error::data("probabilities must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!("row sums to {total}, not 1")));
        }
        Ok(Row {
            probs: probs.to_vec(),
            log_probs: probs.iter().map(|p| p.ln()).collect(),
        })
    }

    pub fn set_prefix_row(&mut self, prefix: Vec<usize>, probs: &[f64]) -> Result<()> {
        let lp = self.check_row(probs)?;
        self.prefix_rows.insert(prefix, lp);
        Ok(())
    }

    pub fn set_position_row(&mut self, position: usize, probs: &[f64]) -> Result<()> {
        let lp = self.check_row(probs)?;
        self.position_rows.insert(position, lp);
        Ok(())
    }

    pub fn set_affect(&mut self, id: usize, v: VadVector) {
        self.affect[id] = v;
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut model: Option<MockModel> = None;
        let mut eos = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("vocab ") {
                let v: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::data(format!("mock line {n}: bad vocab size")))?;
                if v == 0 || model.is_some() {
                    return Err(Error::data(format!(
                        "mock line {n}: vocab must be positive and given once"
                    )));
                }
                model = Some(MockModel::new(v, None));
                continue;
            }
            let m = model
                .as_mut()
                .ok_or_else(|| Error::data(format!("mock line {n}: `vocab N` must come first")))?;
            if let Some(rest) = line.strip_prefix("eos ") {
                let e: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::data(format!("mock line {n}: bad eos id")))?;
                if e >= m.vocab_size {
                    return Err(Error::data(format!("mock line {n}: eos {e} outside vocabulary")));
                }
                eos = Some(e);
                continue;
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("mock line {n}: expected `<key><TAB><values>`")))?;
            let values = parse_floats(values, n)?;
            let wrap = |e: Error| Error::data(format!("mock line {n}: {e}"));
            if let Some(id) = key.strip_prefix("affect ") {
                let id = parse_ids(id, n)?;
                match (id.as_slice(), values.as_slice()) {
                    (&[id], &[v, a, d]) if id < m.vocab_size => m.set_affect(id, VadVector::new(v, a, d)),
                    _ => return Err(Error::data(format!("mock line {n}: expected `affect <id><TAB>v a d`"))),
                }
            } else if let Some(pos) = key.strip_prefix('@') {
                let pos = pos
                    .trim()
                    .parse()
                    .map_err(|_| Error::data(format!("mock line {n}: bad position")))?;
                m.set_position_row(pos, &values).map_err(wrap)?;
            } else {
                let prefix = if key.trim() == "-" {
                    Vec::new()
                } else {
                    parse_ids(key, n)?
                };
                if prefix.iter().any(|&t| t >= m.vocab_size) {
                    return Err(Error::data(format!("mock line {n}: prefix token outside vocabulary")));
                }
                m.set_prefix_row(prefix, &values).map_err(wrap)?;
            }
        }
        let mut m = model.ok_or_else(|| Error::data("mock table has no `vocab N` line"))?;
        m.eos = eos;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        MockModel::parse(&std::fs::read_to_string(path)?)
    }

    /// Writes the table back in the text format; rows are sorted for stable output.
    pub fn to_text(&self) -> String {
        let mut out = format!("vocab {}\n", self.vocab_size);
        if let Some(e) = self.eos {
            let _ = writeln!(out, "eos {e}");
        }
        let row = |r: &Row| r.probs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut prefixes: Vec<_> = self.prefix_rows.iter().collect();
        prefixes.sort_by(|a, b| a.0.cmp(b.0));
        for (p, lp) in prefixes {
            let key = if p.is_empty() {
                "-".to_string()
            } else {
                p.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
            };
            let _ = writeln!(out, "{key}\t{}", row(lp));
        }
        let mut positions: Vec<_> = self.position_rows.iter().collect();
        positions.sort_by_key(|(p, _)| **p);
        for (p, lp) in positions {
            let _ = writeln!(out, "@{p}\t{}", row(lp));
        }
        for (id, v) in self.affect.iter().enumerate() {
            if *v != VadVector::NEUTRAL {
                let _ = writeln!(out, "affect {id}\t{} {} {}", v.v, v.a, v.d);
            }
        }
        out
    }

    /// A model whose next-token distribution depends only on the position, with
    /// random positive rows and no end token.
    pub fn random_positional<R: Rng>(vocab_size: usize, max_len: usize, rng: &mut R) -> Self {
        let mut m = MockModel::new(vocab_size, None);
        for t in 0..max_len {
            m.set_position_row(t, &random_row(vocab_size, rng))
                .expect("random row is valid");
        }
        m
    }

    /// A model with an independent random row for every prefix up to `max_len - 1`.
    pub fn random_full<R: Rng>(vocab_size: usize, max_len: usize, eos: Option<usize>, rng: &mut R) -> Self {
        let mut m = MockModel::new(vocab_size, eos);
        let mut frontier = vec![Vec::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for p in frontier {
                m.set_prefix_row(p.clone(), &random_row(vocab_size, rng))
                    .expect("random row is valid");
                for w in 0..vocab_size {
                    if Some(w) != eos {
                        let mut q = p.clone();
                        q.push(w);
                        next.push(q);
                    }
                }
            }
            frontier = next;
        }
        m
    }

    /// Log-probability of the next token after `prefix`.
    pub fn log_probs(&self, prefix: &[usize]) -> Result<&[f64]> {
        self.prefix_rows
            .get(prefix)
            .or_else(|| self.position_rows.get(&prefix.len()))
            .map(|r| r.log_probs.as_slice())
            .ok_or_else(|| Error::data(format!("mock table has no row for prefix {prefix:?}")))
    }
}

fn random_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

impl StepModel for MockModel {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start_token(&self) -> usize {
        START
    }

    fn eos(&self) -> Option<usize> {
        self.eos
    }

    fn initial(&self, _prompt: &[usize]) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&self, state: &Vec<usize>, prev: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        let mut prefix = state.clone();
        if prev != START {
            prefix.push(prev);
        }
        Ok((self.log_probs(&prefix)?.to_vec(), prefix))
    }

    fn affect(&self, id: usize) -> VadVector {
        self.affect.get(id).copied().unwrap_or(VadVector::NEUTRAL)
    }
}
