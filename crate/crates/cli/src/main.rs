//! `gsanim`: build, animate, render and evaluate Gaussian avatars.

mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};
use manifest::Recorder;

fn configure_threads(requested: Option<usize>) -> CliResult<usize> {
    if let Some(t) = requested {
        if t == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    Ok(rayon::current_num_threads())
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = configure_threads(cli.global.threads)?;
    let seed = cli.global.seed.unwrap_or(0);
    let name = match &cli.command {
        Command::Canonicalize(_) => "canonicalize",
        Command::Template(_) => "template",
        Command::Animate(_) => "animate",
        Command::Render(_) => "render",
        Command::TrainRefiner(_) => "train-refiner",
        Command::Evaluate(_) => "evaluate",
        Command::Bench(_) => "bench",
        Command::Synth(_) => "synth",
    };
    let mut rec = Recorder::new(name, seed, threads);
    match &cli.command {
        Command::Canonicalize(a) => commands::canonicalize(a, &mut rec)?,
        Command::Template(a) => commands::template(a, &mut rec)?,
        Command::Animate(a) => commands::animate_cmd(a, &mut rec)?,
        Command::Render(a) => commands::render_cmd(a, &mut rec)?,
        Command::TrainRefiner(a) => commands::train(a, cli.global.seed, &mut rec)?,
        Command::Evaluate(a) => commands::evaluate(a, seed, &mut rec)?,
        Command::Bench(a) => commands::bench_cmd(a, seed, &mut rec)?,
        Command::Synth(a) => commands::synth(a, seed, &mut rec)?,
    }
    let manifest = match (&cli.global.manifest, &cli.command) {
        (Some(p), _) => Some(p.clone()),
        (None, Command::Synth(a)) => Some(a.out.join("manifest.json")),
        (None, _) => None,
    };
    rec.finish(manifest.as_deref())?;
    Ok(())
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.machine_line());
    eprintln!("{e}");
    ExitCode::from(e.kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // clap's message runs up to the first blank line; usage follows
            let text = e.to_string();
            let summary: Vec<&str> = text
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            let mut err = CliError::usage(summary.join(" ").trim_start_matches("error: ").to_string());
            for line in text.lines().skip(summary.len()).filter(|l| !l.trim().is_empty()) {
                err = err.with_detail(line);
            }
            return fail(&err);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
