//! Cornell movie-dialogs preprocessing.
//!
//! `movie_lines.txt` rows are `L1045 +++$+++ u0 +++$+++ m0 +++$+++ NAME +++$+++ text`
//! and `movie_conversations.txt` rows end in a list such as `['L194', 'L195']`.
//! The raw files are Latin-1; UTF-8 input is accepted as is.

use std::collections::HashMap;
use std::path::Path;

use affectgen::corpus::tokenize;
use affectgen::{Error, Result};
use log::warn;

const SEP: &str = " +++$+++ ";
pub const LINES_FILE: &str = "movie_lines.txt";
pub const CONVERSATIONS_FILE: &str = "movie_conversations.txt";

fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

pub fn parse_lines(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|line| {
            let fields: Vec<&str> = line.splitn(5, SEP).collect();
            (fields.len() == 5).then(|| (fields[0].trim().to_string(), fields[4].trim().to_string()))
        })
        .collect()
}

pub fn parse_conversations(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter_map(|line| {
            let list = line.rsplit(SEP).next()?;
            let ids: Vec<String> = list
                .trim()
                .trim_start_matches('[')
                .trim_end_matches(']')
                .split(',')
                .map(|s| s.trim().trim_matches('\'').trim_matches('"').to_string())
                .filter(|s| !s.is_empty())
                .collect();
            (!ids.is_empty()).then_some(ids)
        })
        .collect()
}

fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Adjacent utterances of each conversation as (prompt, response) pairs of
/// space-joined tokens. Pairs touching a missing or empty line are dropped.
pub fn adjacent_pairs(lines: &HashMap<String, String>, conversations: &[Vec<String>]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut missing = 0usize;
    for conv in conversations {
        for w in conv.windows(2) {
            match (lines.get(&w[0]), lines.get(&w[1])) {
                (Some(a), Some(b)) => {
                    let (a, b) = (normalize(a), normalize(b));
                    if !a.is_empty() && !b.is_empty() {
                        out.push((a, b));
                    }
                }
                _ => missing += 1,
            }
        }
    }
    if missing > 0 {
        warn!("{missing} pairs reference unknown line ids");
    }
    out
}

pub fn prep(dir: &Path) -> Result<Vec<(String, String)>> {
    let lines_path = dir.join(LINES_FILE);
    let conv_path = dir.join(CONVERSATIONS_FILE);
    let absent: Vec<String> = [&lines_path, &conv_path]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !absent.is_empty() {
        return Err(Error::data(format!("missing corpus file(s): {}", absent.join(", "))));
    }
    let lines = parse_lines(&read_text(&lines_path)?);
    let conversations = parse_conversations(&read_text(&conv_path)?);
    if conversations.is_empty() {
        warn!("{} holds no conversations", conv_path.display());
    }
    Ok(adjacent_pairs(&lines, &conversations))
}
