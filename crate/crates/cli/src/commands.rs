use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use affectgen::checkpoint;
use affectgen::corpus::{build_vocab, encode_pairs, read_text_pairs, tokenize};
use affectgen::decoding::{diverse_beam_search, MockModel};
use affectgen::eval::{affect_content_score, corpus_eval, write_tsv};
use affectgen::lexicon::{lemmatize, load_lexicon, ColumnMap, Lexicon};
use affectgen::losses::{train, LossConfig, LossKind, TrainSchedule};
use affectgen::model::{ModelConfig, Seq2Seq};
use affectgen::{Error, Result};
use log::{info, warn};
use rayon::prelude::*;

use crate::args::{AffectScoreArgs, ChatArgs, DecodeArgs, EvalArgs, LexiconArgs, PrepArgs, TrainArgs};
use crate::cornell;

fn open_input(path: &Path) -> Result<Box<dyn Read>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdin()))
    } else {
        File::open(path)
            .map(|f| Box::new(f) as Box<dyn Read>)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdout().lock()))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn load_lex(args: &LexiconArgs) -> Result<Lexicon> {
    read_lexicon(&args.lexicon, &args.columns()).map(|l| l.with_force_neutral_stopwords(args.neutral_stopwords))
}

fn read_lexicon(path: &Path, columns: &ColumnMap) -> Result<Lexicon> {
    let f = File::open(path).map_err(|e| Error::data(format!("lexicon {}: {e}", path.display())))?;
    load_lexicon(f, columns)
}

fn load_model(path: &Path) -> Result<Seq2Seq> {
    checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("{}: {io}", path.display())),
        other => other,
    })
}

pub fn prep_cornell(args: &PrepArgs) -> Result<()> {
    let pairs = cornell::prep(&args.input)?;
    if pairs.is_empty() {
        warn!("no pairs extracted");
    }
    let mut out = BufWriter::new(File::create(&args.output)?);
    for (p, r) in &pairs {
        writeln!(out, "{p}\t{r}")?;
    }
    out.flush()?;
    println!("{} pairs written to {}", pairs.len(), args.output.display());
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let lexicon = load_lex(&args.lexicon)?;
    let text = read_text_pairs(open_input(&args.pairs)?)?;
    let mut model = match &args.resume {
        Some(path) => {
            let mut m = load_model(path)?;
            m.config.max_decode_len = args.max_len;
            m
        }
        None => {
            let vocab = build_vocab(text.sequences(), args.vocab_size)?;
            let config = ModelConfig {
                vocab_size: vocab.len(),
                embed_dim: args.embed_dim,
                hidden_dim: args.hidden_dim,
                use_affect_input: !args.no_affect_input,
                share_embeddings: !args.separate_embeddings,
                max_decode_len: args.max_len,
            };
            Seq2Seq::init(config, &lexicon, vocab, args.seed)?
        }
    };
    let pairs = encode_pairs(&text, &model.vocab, args.max_len)?;
    let loss = LossConfig {
        kind: args.loss,
        lambda: args.lambda.unwrap_or_else(|| args.loss.default_lambda()),
        normalize_affect: args.normalize_affect,
    };
    let (phase1, phase2) = match args.epochs {
        Some(n) if args.loss == LossKind::Xent => (n, 0),
        Some(n) => (0, n),
        None => (args.phase1_epochs, args.phase2_epochs),
    };
    let schedule = TrainSchedule {
        phase1_epochs: phase1,
        phase2_epochs: phase2,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        seed: args.seed,
        clip_norm: (args.clip != 0.0).then_some(args.clip),
        checkpoint_path: Some(args.out.clone()),
    };
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "epoch\tphase\tloss\tmean_loss\tseconds")?;
    let mut write_err = None;
    let result = train(&mut model, &pairs, &schedule, loss, &lexicon, |e| {
        if let Err(err) = writeln!(log, "{e}").and_then(|_| log.flush()) {
            write_err.get_or_insert(err);
        }
    });
    if let Some(err) = write_err {
        return Err(err.into());
    }
    let epochs = result?;
    info!("{} pairs, vocabulary {}", pairs.len(), model.vocab.len());
    eprintln!(
        "trained {} epoch(s) on {} pairs; checkpoint {}",
        epochs.len(),
        pairs.len(),
        args.out.display()
    );
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    BufReader::new(open_input(path)?)
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Responses of the model for one prompt line, in rank order.
pub fn respond(model: &Seq2Seq, line: &str, config: &affectgen::decoding::DecodeConfig) -> Result<Vec<String>> {
    let tokens = tokenize(line);
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let ids = model.vocab.encode(&tokens);
    let beams = diverse_beam_search(model, &ids, config)?;
    Ok(beams.iter().map(|b| model.vocab.render(&b.token_ids)).collect())
}

pub fn decode_cmd(args: &DecodeArgs) -> Result<()> {
    let config = args.decode.config();
    config.validate()?;
    let lines = read_lines(&args.prompts)?;
    let rendered: Vec<String> = if let Some(mock_path) = &args.mock {
        let mock = MockModel::load(mock_path)?;
        let beams = diverse_beam_search(&mock, &[], &config)?;
        let row = beams
            .iter()
            .map(|b| b.token_ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\t");
        let n = lines.len().max(1);
        vec![row; n]
    } else {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::config("--checkpoint or --mock is required"))?;
        let model = load_model(path)?;
        lines
            .par_iter()
            .map(|line| respond(&model, line, &config).map(|r| r.join("\t")))
            .collect::<Result<_>>()?
    };
    let mut out = open_output(&args.output)?;
    for r in rendered {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    Ok(())
}

/// One-line affect summary of a response: mean VAD triple and affect content.
pub fn affect_line<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> String {
    match lexicon.affect_mean(tokens) {
        Ok(m) => {
            let content = affect_content_score(tokens, lexicon).unwrap_or(0.0);
            format!("affect V={:.4} A={:.4} D={:.4} content={:.4}", m.v, m.a, m.d, content)
        }
        Err(_) => "affect (empty response)".to_string(),
    }
}

pub fn chat_cmd(args: &ChatArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let config = args.decode.config();
    config.validate()?;
    let lexicon = match (&args.lexicon, args.show_affect) {
        (Some(p), _) => Some(read_lexicon(p, &ColumnMap::default())?),
        (None, true) => return Err(Error::config("--show-affect needs --lexicon")),
        (None, false) => None,
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut line = String::new();
    loop {
        write!(stdout, "> ")?;
        stdout.flush()?;
        line.clear();
        if stdin.lock().read_line(&mut line)? == 0 {
            writeln!(stdout)?;
            break;
        }
        let prompt = line.trim();
        if prompt.is_empty() {
            continue;
        }
        if prompt == ":quit" {
            break;
        }
        let responses = respond(&model, prompt, &config)?;
        let shown = if args.all_beams {
            responses.len()
        } else {
            responses.len().min(1)
        };
        for r in &responses[..shown] {
            writeln!(stdout, "{r}")?;
        }
        if let (Some(lex), Some(best)) = (&lexicon, responses.first()) {
            let tokens: Vec<&str> = best.split_whitespace().collect();
            writeln!(stdout, "{}", affect_line(&tokens, lex))?;
        }
    }
    Ok(())
}

pub fn affect_score_cmd(args: &AffectScoreArgs) -> Result<()> {
    let lexicon = load_lex(&args.lexicon)?;
    let text = match (&args.text, &args.file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| Error::data(format!("{}: {e}", p.display())))?,
        (None, None) => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let tokens = tokenize(&text);
    let mut out = io::stdout().lock();
    writeln!(out, "token\tV\tA\tD\tlemma")?;
    for t in &tokens {
        let v = lexicon.w2av(t);
        let lemma = lemmatize(t, &lexicon);
        let lemma = if lexicon.contains(&lemma) {
            lemma
        } else {
            "-".to_string()
        };
        writeln!(out, "{t}\t{}\t{}\t{}\t{lemma}", v.v, v.a, v.d)?;
    }
    if !tokens.is_empty() {
        let sum = lexicon.affect_sum(&tokens);
        let mean = lexicon.affect_mean(&tokens)?;
        writeln!(out, "#sum\t{}\t{}\t{}", sum.v, sum.a, sum.d)?;
        writeln!(out, "#mean\t{}\t{}\t{}", mean.v, mean.a, mean.d)?;
        writeln!(out, "#content\t{}", affect_content_score(&tokens, &lexicon)?)?;
    }
    Ok(())
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let config = args.decode.config();
    config.validate()?;
    let lexicon = load_lex(&args.lexicon)?;
    let model = load_model(&args.checkpoint)?;
    let text = read_text_pairs(open_input(&args.pairs)?)?;
    let prompts: Vec<Vec<usize>> = encode_pairs(&text, &model.vocab, args.max_len)?
        .into_iter()
        .map(|p| p.prompt_ids)
        .collect();
    let rows = corpus_eval(&model, &prompts, &[(args.label.clone(), config)], &lexicon)?;
    let fresh = !args.append || std::fs::metadata(&args.output).map(|m| m.len() == 0).unwrap_or(true);
    let file = if args.append {
        OpenOptions::new().create(true).append(true).open(&args.output)?
    } else {
        File::create(&args.output)?
    };
    write_tsv(&rows, BufWriter::new(file), fresh)?;
    write_tsv(&rows, io::stdout().lock(), false)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use affectgen::lexicon::VadVector;

    #[test]
    fn affect_line_hand_values() {
        let lex = Lexicon::from_entries([("hate", VadVector::new(1.96, 6.26, 4.47))]);
        // i, you -> neutral (5, 1, 5)
        let line = affect_line(&["i", "hate", "you"], &lex);
        let (v, a, d) = (
            (5.0 + 1.96 + 5.0) / 3.0,
            (1.0 + 6.26 + 1.0) / 3.0,
            (5.0 + 4.47 + 5.0) / 3.0,
        );
        assert!(
            line.starts_with(&format!("affect V={v:.4} A={a:.4} D={d:.4}")),
            "{line}"
        );
        assert_eq!(affect_line::<&str>(&[], &lex), "affect (empty response)");
    }
}
