mod args;
mod batch;
mod calibrate;
mod context;
mod corpus_cmd;
mod evaluate;
mod pipeline;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, CorpusCmd, JudgeCmd};
use context::{exit_code, Ctx, EXIT_CONFIG, EXIT_REMOTE};

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::Corpus(CorpusCmd::Stats(a)) => corpus_cmd::stats(&ctx, a)?,
        Command::Corpus(CorpusCmd::Sample(a)) => corpus_cmd::sample(&ctx, a)?,
        Command::Generate(a) => {
            // the batch is written in full; failed samples are in the sidecar
            if !batch::generate(&ctx, a)? {
                return Ok(ExitCode::from(EXIT_REMOTE));
            }
        }
        Command::ScoreMetrics(a) => batch::score_metrics(&ctx, a)?,
        Command::Calibrate(a) => calibrate::run(&ctx, a)?,
        Command::Judge(JudgeCmd::Run(a)) => batch::judge_run(&ctx, a)?,
        Command::Evaluate(a) => evaluate::evaluate(&ctx, a)?,
        Command::Report(a) => evaluate::report(&ctx, a)?,
        Command::Sweep(a) => evaluate::sweep(&ctx, a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
