//! Valence-Arousal-Dominance lexicon and affect-space arithmetic.
//!
//! Every word maps to a 3-D [`VadVector`] with components rated on a 1..9 scale.
//! Words the dictionary does not know fall back to the neutral vector
//! [`VadVector::NEUTRAL`] = (5, 1, 5): neutral pleasantness and power, no arousal.

use std::collections::HashMap;
use std::io::Read;
use std::ops::{Add, AddAssign, Div, Sub};

use log::warn;

use crate::error::{Error, Result};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 9.0;

/// A point in VAD space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VadVector {
    pub v: f64,
    pub a: f64,
    pub d: f64,
}

impl VadVector {
    /// The affectively neutral vector.
    pub const NEUTRAL: VadVector = VadVector { v: 5.0, a: 1.0, d: 5.0 };
    pub const ZERO: VadVector = VadVector { v: 0.0, a: 0.0, d: 0.0 };

    pub const fn new(v: f64, a: f64, d: f64) -> Self {
        VadVector { v, a, d }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v, self.a, self.d]
    }

    pub fn dot(self, other: VadVector) -> f64 {
        self.v * other.v + self.a * other.a + self.d * other.d
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    fn clamped(self) -> (VadVector, bool) {
        let c = VadVector::new(
            self.v.clamp(MIN_RATING, MAX_RATING),
            self.a.clamp(MIN_RATING, MAX_RATING),
            self.d.clamp(MIN_RATING, MAX_RATING),
        );
        (c, c != self)
    }
}

impl Add for VadVector {
    type Output = VadVector;
    fn add(self, o: VadVector) -> VadVector {
        VadVector::new(self.v + o.v, self.a + o.a, self.d + o.d)
    }
}

impl AddAssign for VadVector {
    fn add_assign(&mut self, o: VadVector) {
        self.v += o.v;
        self.a += o.a;
        self.d += o.d;
    }
}

impl Sub for VadVector {
    type Output = VadVector;
    fn sub(self, o: VadVector) -> VadVector {
        VadVector::new(self.v - o.v, self.a - o.a, self.d - o.d)
    }
}

impl Div<f64> for VadVector {
    type Output = VadVector;
    fn div(self, k: f64) -> VadVector {
        VadVector::new(self.v / k, self.a / k, self.d / k)
    }
}

/// Header names of the word column and the three rating columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub word: String,
    pub valence: String,
    pub arousal: String,
    pub dominance: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            word: "Word".into(),
            valence: "V.Mean.Sum".into(),
            arousal: "A.Mean.Sum".into(),
            dominance: "D.Mean.Sum".into(),
        }
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my", "your",
    "his", "its", "our", "their", "is", "am", "are", "was", "were", "be", "been", "do", "does", "did", "have", "has",
    "had", "and", "or", "but", "if", "of", "at", "by", "for", "with", "to", "from", "in", "on", "not", "no", "so",
    "that", "this", "what", "there", "here",
];

/// Immutable word → VAD table. Keys are stored lowercased.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, VadVector>,
    force_neutral_stopwords: bool,
}

impl Lexicon {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, VadVector)>,
        S: AsRef<str>,
    {
        let entries = entries
            .into_iter()
            .map(|(w, v)| (w.as_ref().to_lowercase(), v))
            .collect();
        Lexicon {
            entries,
            force_neutral_stopwords: false,
        }
    }

    /// When set, stop words map to the neutral vector even if the dictionary rates them.
    pub fn with_force_neutral_stopwords(mut self, on: bool) -> Self {
        self.force_neutral_stopwords = on;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Raw dictionary lookup, case-insensitive, no lemmatization.
    pub fn get(&self, word: &str) -> Option<VadVector> {
        self.entries.get(&word.to_lowercase()).copied()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Maps a word to its affect vector: the rating of its lemma, or the neutral vector.
    pub fn w2av(&self, word: &str) -> VadVector {
        let lemma = lemmatize(word, self);
        if self.force_neutral_stopwords && STOPWORDS.contains(&lemma.as_str()) {
            return VadVector::NEUTRAL;
        }
        self.entries.get(&lemma).copied().unwrap_or(VadVector::NEUTRAL)
    }

    /// Cumulative affect Ψ: component-wise sum of `w2av` over the tokens.
    pub fn affect_sum<S: AsRef<str>>(&self, tokens: &[S]) -> VadVector {
        tokens
            .iter()
            .fold(VadVector::ZERO, |acc, t| acc + self.w2av(t.as_ref()))
    }

    pub fn affect_mean<S: AsRef<str>>(&self, tokens: &[S]) -> Result<VadVector> {
        if tokens.is_empty() {
            return Err(Error::Domain("affect mean of an empty sequence".into()));
        }
        Ok(self.affect_sum(tokens) / tokens.len() as f64)
    }
}

/// Reads a delimiter-separated VAD table. Comma and tab delimiters are accepted;
/// the delimiter is taken from the header row.
pub fn load_lexicon<R: Read>(mut source: R, columns: &ColumnMap) -> Result<Lexicon> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::config(format!("lexicon is missing column `{name}`")))
    };
    let word_col = find(&columns.word)?;
    let cols = [
        find(&columns.valence)?,
        find(&columns.arousal)?,
        find(&columns.dominance)?,
    ];

    let mut entries = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is row 1
        let row = i + 2;
        let word = record
            .get(word_col)
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .ok_or_else(|| Error::data(format!("lexicon row {row}: empty word")))?;
        let mut vals = [0.0; 3];
        for (slot, &c) in vals.iter_mut().zip(cols.iter()) {
            let raw = record.get(c).unwrap_or("").trim();
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::data(format!("lexicon row {row}: cannot parse rating `{raw}`")))?;
        }
        let (vad, clamped) = VadVector::new(vals[0], vals[1], vals[2]).clamped();
        if clamped {
            warn!("lexicon row {row}: rating for `{word}` outside [1, 9], clamped");
        }
        if entries.insert(word.clone(), vad).is_some() {
            warn!("lexicon row {row}: duplicate word `{word}`, keeping the later row");
        }
    }
    Ok(Lexicon {
        entries,
        force_neutral_stopwords: false,
    })
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Candidate stems for one suffix: bare stem, e-restored stem, then the stem with
/// a doubled final consonant reduced.
fn stem_candidates(stem: &str, out: &mut Vec<String>) {
    if stem.is_empty() {
        return;
    }
    out.push(stem.to_string());
    out.push(format!("{stem}e"));
    let chars: Vec<char> = stem.chars().collect();
    if let [.., x, y] = chars.as_slice() {
        if x == y && !is_vowel(*y) {
            out.push(chars[..chars.len() - 1].iter().collect());
        }
    }
}

/// Reduces a word to a dictionary lemma. Exact hits win; otherwise the suffix rules
/// -s, -es, -ed, -ing are tried in that order and the first candidate that is a
/// lexicon key is returned. Falls back to the lowercased word.
pub fn lemmatize(word: &str, lexicon: &Lexicon) -> String {
    let lower = word.to_lowercase();
    if lexicon.contains(&lower) {
        return lower;
    }
    let mut candidates = Vec::new();
    if let Some(stem) = lower.strip_suffix('s') {
        if !stem.is_empty() {
            candidates.push(stem.to_string());
        }
    }
    if let Some(stem) = lower.strip_suffix("es") {
        if !stem.is_empty() {
            candidates.push(stem.to_string());
        }
    }
    if let Some(stem) = lower.strip_suffix("ed") {
        stem_candidates(stem, &mut candidates);
    }
    if let Some(stem) = lower.strip_suffix("ing") {
        stem_candidates(stem, &mut candidates);
    }
    candidates.into_iter().find(|c| lexicon.contains(c)).unwrap_or(lower)
}

/// Euclidean distance in VAD space.
pub fn affect_distance(p: VadVector, q: VadVector) -> f64 {
    (p - q).norm()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_sim(p: VadVector, q: VadVector) -> f64 {
    let denom = p.norm() * q.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (p.dot(q) / denom).clamp(-1.0, 1.0)
}
