use std::path::PathBuf;

use affectgen::decoding::{DecodeConfig, DiversityMetric};
use affectgen::lexicon::ColumnMap;
use affectgen::losses::LossKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "affectgen", version, about = "Affect-aware dialogue response generation")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Log verbosity: error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a raw Cornell-style movie dialog corpus into a TSV of adjacent pairs.
    PrepCornell(PrepArgs),
    /// Train a model (or continue training one) and write a checkpoint.
    Train(TrainArgs),
    /// Decode every line of a prompts file.
    Decode(DecodeArgs),
    /// Interactive prompt/response loop. `:quit` or end of input exits.
    Chat(ChatArgs),
    /// Report per-token VAD values, Ψ, mean and affect content of a text.
    AffectScore(AffectScoreArgs),
    /// Decode held-out prompts and append a metrics row to a TSV report.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ConfigFile {
    /// key=value file of defaults; flags on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    /// VAD lexicon (CSV or TSV with a header row).
    #[arg(long, value_name = "FILE")]
    pub lexicon: PathBuf,
    #[arg(long, default_value = "Word")]
    pub lex_word_col: String,
    #[arg(long, default_value = "V.Mean.Sum")]
    pub lex_v_col: String,
    #[arg(long, default_value = "A.Mean.Sum")]
    pub lex_a_col: String,
    #[arg(long, default_value = "D.Mean.Sum")]
    pub lex_d_col: String,
    /// Map common function words to the neutral vector.
    #[arg(long)]
    pub neutral_stopwords: bool,
}

impl LexiconArgs {
    pub fn columns(&self) -> ColumnMap {
        ColumnMap {
            word: self.lex_word_col.clone(),
            valence: self.lex_v_col.clone(),
            arousal: self.lex_a_col.clone(),
            dominance: self.lex_d_col.clone(),
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct PrepArgs {
    #[command(flatten)]
    pub config: ConfigFile,
    /// Directory holding movie_lines.txt and movie_conversations.txt.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigFile,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    /// Training pairs, one `prompt<TAB>response` per line.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// Checkpoint to write. `<out>.phase1` is also written between phases.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-epoch log (epoch, phase, loss, mean loss, seconds). Default: `<out>.log`.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Start from this checkpoint (its vocabulary and shape are kept).
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Objective for the second phase: xent, dmin, dmax, ac.
    #[arg(long, default_value = "ac")]
    pub loss: LossKind,
    /// Affect weight λ. Default: 0.5 for dmin and ac, 0.4 for dmax.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Divide each pair's affect term by its response length.
    #[arg(long)]
    pub normalize_affect: bool,
    #[arg(long, default_value_t = 40)]
    pub phase1_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub phase2_epochs: usize,
    /// Single phase of N epochs with `--loss` (overrides both phase counts).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 2_000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    /// Drop the VAD vector from the model input.
    #[arg(long)]
    pub no_affect_input: bool,
    /// Give the decoder its own embedding table.
    #[arg(long)]
    pub separate_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Clone)]
pub struct DecodeOpts {
    /// Beam width B; 1 with `--metric none` is greedy decoding.
    #[arg(long, default_value_t = 3)]
    pub beam: usize,
    /// Number of beam groups G; must divide B. Default: B.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Diversity strength λ_g.
    #[arg(long, default_value_t = 0.7)]
    pub lambda_g: f64,
    /// none, hamming, wl-affect, sl-affect.
    #[arg(long, default_value = "sl-affect")]
    pub metric: DiversityMetric,
    #[arg(long, default_value_t = 20)]
    pub max_decode_len: usize,
    /// Rank finished beams by mean instead of total log-probability.
    #[arg(long)]
    pub length_normalize: bool,
}

impl DecodeOpts {
    pub fn config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_width: self.beam,
            groups: self.groups.unwrap_or(self.beam),
            diversity_strength: self.lambda_g,
            max_len: self.max_decode_len,
            metric: self.metric,
            length_normalize: self.length_normalize,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub config: ConfigFile,
    #[arg(long, value_name = "FILE", required_unless_present = "mock")]
    pub checkpoint: Option<PathBuf>,
    /// Decode a mock probability table instead of a checkpoint; output is token ids.
    #[arg(long, value_name = "FILE", conflicts_with = "checkpoint")]
    pub mock: Option<PathBuf>,
    /// One prompt per line; `-` reads standard input.
    #[arg(long, value_name = "FILE", default_value = "-")]
    pub prompts: PathBuf,
    /// Responses file; `-` writes standard output.
    #[arg(long, value_name = "FILE", default_value = "-")]
    pub output: PathBuf,
    #[command(flatten)]
    pub decode: DecodeOpts,
    /// Accepted for symmetry with other subcommands; decoding is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ChatArgs {
    #[command(flatten)]
    pub config: ConfigFile,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Needed for `--show-affect`.
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Print the response's mean VAD and affect content after each turn.
    #[arg(long)]
    pub show_affect: bool,
    /// Print every beam instead of only the best one.
    #[arg(long)]
    pub all_beams: bool,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AffectScoreArgs {
    #[command(flatten)]
    pub config: ConfigFile,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    /// Read the text from a file instead of the positional argument.
    #[arg(long, value_name = "FILE", conflicts_with = "text")]
    pub file: Option<PathBuf>,
    pub text: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigFile,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Held-out pairs TSV; only the prompts are used.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// TSV report; a header is written when the file is new or empty.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Append to `--output` instead of replacing it.
    #[arg(long)]
    pub append: bool,
    /// Row label in the report.
    #[arg(long, default_value = "model")]
    pub label: String,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
