//! Seeded synthetic corpora for learnability and direction experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TextPairs;

/// `pairs` random sequences over `w00..w{words-1}`, each response equal to its prompt.
/// Every word occurs at least once when the sequences have room for all of them.
pub fn copy_task(pairs: usize, words: usize, min_len: usize, max_len: usize, seed: u64) -> TextPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..words).map(|i| format!("w{i:02}")).collect();
    let lens: Vec<usize> = (0..pairs).map(|_| rng.gen_range(min_len..=max_len)).collect();
    let slots: usize = lens.iter().sum();
    let mut pool: Vec<String> = vocab.iter().take(slots).cloned().collect();
    while pool.len() < slots {
        pool.push(vocab.choose(&mut rng).expect("nonempty").clone());
    }
    pool.shuffle(&mut rng);
    let mut rest = pool.into_iter();
    let pairs = lens
        .into_iter()
        .map(|n| {
            let seq: Vec<String> = rest.by_ref().take(n).collect();
            (seq.clone(), seq)
        })
        .collect();
    TextPairs {
        pairs,
        skipped_lines: Vec::new(),
    }
}

/// Topics with the (positive, negative) reaction words used for them.
pub const TOPICS: [(&str, &str, &str); 8] = [
    ("movie", "great", "awful"),
    ("party", "fun", "angry"),
    ("day", "wonderful", "terrible"),
    ("food", "good", "horrible"),
    ("music", "nice", "hate"),
    ("trip", "happy", "scared"),
    ("weather", "calm", "storm"),
    ("game", "excited", "enraged"),
];

const OPENERS: [&str; 3] = ["how was the", "what about the", "did you like the"];
const FILLERS: [&str; 3] = ["really", "indeed", "honestly"];
/// Not in the lexicon, so neutral.
pub const NEUTRAL_REPLY: &str = "fine";

/// Weights of the first reply word: neutral, negative, positive.
pub const REPLY_WEIGHTS: [f64; 3] = [0.37, 0.33, 0.30];

/// Short exchanges about a topic. Replies open with a reaction word drawn from
/// [`REPLY_WEIGHTS`], so the neutral reply is the single most likely one but
/// affective replies are nearly as frequent, followed by a uniform filler.
pub fn affect_dialogues(pairs: usize, seed: u64) -> TextPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..pairs)
        .map(|_| {
            let (topic, pos, neg) = *TOPICS.choose(&mut rng).expect("nonempty");
            let opener = OPENERS.choose(&mut rng).expect("nonempty");
            let prompt: Vec<String> = format!("{opener} {topic} ?")
                .split_whitespace()
                .map(str::to_string)
                .collect();
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = REPLY_WEIGHTS.len() - 1;
            for (i, w) in REPLY_WEIGHTS.iter().enumerate() {
                acc += w;
                if r < acc {
                    pick = i;
                    break;
                }
            }
            let head = [NEUTRAL_REPLY, neg, pos][pick];
            let filler = FILLERS.choose(&mut rng).expect("nonempty");
            let response = vec![head.to_string(), filler.to_string(), ".".to_string()];
            (prompt, response)
        })
        .collect();
    TextPairs {
        pairs,
        skipped_lines: Vec::new(),
    }
}
