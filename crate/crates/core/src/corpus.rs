//! Tokenization, vocabulary, prompt/response pairs and batching.

use std::collections::HashMap;
use std::io::Read;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<sos>", "<eos>"];

pub const DEFAULT_MAX_LEN: usize = 20;

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"'];

/// Lowercases, splits on whitespace and splits off the punctuation characters
/// `.,!?;:'"` as standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for ch in chunk.chars().flat_map(char::to_lowercase) {
            if PUNCT.contains(&ch) {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
    }
    tokens
}

/// Bidirectional token/id map. Ids 0..4 are reserved for PAD, UNK, SOS, EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list (reserved tokens first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_RESERVED || tokens.iter().zip(RESERVED_TOKENS).any(|(t, r)| t != r) {
            return Err(Error::data("vocabulary does not start with the reserved tokens"));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), id).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .unwrap_or(RESERVED_TOKENS[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Surface text of a generated response: EOS and everything after it is dropped.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Keeps the `max_size - 4` most frequent tokens; equal counts are ordered lexicographically.
pub fn build_vocab<'a, I>(sequences: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size <= NUM_RESERVED {
        return Err(Error::config(format!(
            "vocabulary max size {max_size} must be at least 5"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in sequences {
        for t in seq {
            if !RESERVED_TOKENS.contains(&t.as_str()) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - NUM_RESERVED);

    let tokens = RESERVED_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// A prompt X and its EOS-terminated response Y, as token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialoguePair {
    pub prompt_ids: Vec<usize>,
    pub response_ids: Vec<usize>,
}

/// Tokenized text pairs read from a TSV source, plus the 1-based line numbers skipped.
#[derive(Debug, Clone, Default)]
pub struct TextPairs {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub skipped_lines: Vec<usize>,
}

impl TextPairs {
    pub fn sequences(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().flat_map(|(p, r)| [p.as_slice(), r.as_slice()])
    }
}

/// Parses `prompt<TAB>response` lines. Lines without a tab, or with an empty side,
/// are skipped with a warning.
pub fn read_text_pairs<R: Read>(mut source: R) -> Result<TextPairs> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut out = TextPairs::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some((p, r)) = line.split_once('\t') else {
            warn!("pairs line {lineno}: no tab separator, skipped");
            out.skipped_lines.push(lineno);
            continue;
        };
        let (p, r) = (tokenize(p), tokenize(r));
        if p.is_empty() || r.is_empty() {
            warn!("pairs line {lineno}: empty prompt or response, skipped");
            out.skipped_lines.push(lineno);
            continue;
        }
        out.pairs.push((p, r));
    }
    Ok(out)
}

/// Encodes tokenized pairs. Prompts are cut to `max_len` tokens; responses to
/// `max_len - 1` so that the appended EOS keeps them within `max_len`.
pub fn encode_pairs(text: &TextPairs, vocab: &Vocabulary, max_len: usize) -> Result<Vec<DialoguePair>> {
    if max_len < 2 {
        return Err(Error::config("max_len must be at least 2"));
    }
    let pairs: Vec<DialoguePair> = text
        .pairs
        .iter()
        .map(|(p, r)| {
            let mut prompt_ids = vocab.encode(p);
            prompt_ids.truncate(max_len);
            let mut response_ids = vocab.encode(r);
            response_ids.truncate(max_len - 1);
            response_ids.push(EOS);
            DialoguePair {
                prompt_ids,
                response_ids,
            }
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::data("no usable prompt/response lines"));
    }
    Ok(pairs)
}

pub fn load_pairs<R: Read>(source: R, vocab: &Vocabulary, max_len: usize) -> Result<Vec<DialoguePair>> {
    encode_pairs(&read_text_pairs(source)?, vocab, max_len)
}

/// Right-padded id matrix with a 0/1 mask of real positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded {
    pub rows: usize,
    pub len: usize,
    /// Row-major `rows x len`.
    pub ids: Vec<usize>,
    pub mask: Vec<f64>,
}

impl Padded {
    pub fn new(seqs: &[&[usize]]) -> Self {
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![PAD; seqs.len() * len];
        let mut mask = vec![0.0; seqs.len() * len];
        for (r, s) in seqs.iter().enumerate() {
            ids[r * len..r * len + s.len()].copy_from_slice(s);
            mask[r * len..r * len + s.len()].iter_mut().for_each(|m| *m = 1.0);
        }
        Padded {
            rows: seqs.len(),
            len,
            ids,
            mask,
        }
    }

    /// Ids at time step `t`, one per row.
    pub fn column(&self, t: usize) -> Vec<usize> {
        (0..self.rows).map(|r| self.ids[r * self.len + t]).collect()
    }

    pub fn mask_column(&self, t: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.mask[r * self.len + t]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub pairs: Vec<DialoguePair>,
    pub prompts: Padded,
    pub responses: Padded,
}

impl Batch {
    pub fn new(pairs: Vec<DialoguePair>) -> Self {
        let p: Vec<&[usize]> = pairs.iter().map(|x| x.prompt_ids.as_slice()).collect();
        let r: Vec<&[usize]> = pairs.iter().map(|x| x.response_ids.as_slice()).collect();
        let prompts = Padded::new(&p);
        let responses = Padded::new(&r);
        Batch {
            pairs,
            prompts,
            responses,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Shuffles the pairs with a seeded generator and cuts them into padded batches.
pub fn batches(pairs: &[DialoguePair], batch_size: usize, rng_seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    order
        .chunks(batch_size)
        .map(|chunk| Batch::new(chunk.iter().map(|&i| pairs[i].clone()).collect()))
        .collect()
}
