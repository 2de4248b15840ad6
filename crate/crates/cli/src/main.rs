//! `affectgen` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric
//! failure.

mod args;
mod commands;
mod config_file;
mod cornell;

use std::process::ExitCode;

use affectgen::Error;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        1
    } else if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let raw = match config_file::expand(std::env::args_os().collect(), &names) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(raw) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::PrepCornell(a) => commands::prep_cornell(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Decode(a) => commands::decode_cmd(a),
        Command::Chat(a) => commands::chat_cmd(a),
        Command::AffectScore(a) => commands::affect_score_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
