//! `polygrain` command-line front end.

// `!(x > 0.0)` is meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::Settings;
use polygrain::Execution;

/// A failed run: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<polygrain::Error> for Failure {
    fn from(e: polygrain::Error) -> Self {
        let code = match e {
            polygrain::Error::LineSearchFailure => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// What a subcommand needs besides its settings.
pub struct Context {
    pub out: PathBuf,
    pub exec: Execution,
    /// Whether `--out` was given explicitly.
    pub out_given: bool,
}

fn cli() -> Command {
    let mut cmd = Command::new("polygrain")
        .about("Phase-field grain-boundary energies, cell problems and lattice-image segmentation")
        .version(env!("CARGO_PKG_VERSION"))
        .after_help(
            "Exit codes: 0 success, 1 input or usage error, 2 a solver did not converge \
             (outputs are still written).",
        )
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in commands::SPECS {
        let mut sub = Command::new(spec.name).about(spec.about);
        for k in spec.keys {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            sub = sub.arg(
                Arg::new(k.name)
                    .long(k.name.replace('_', "-"))
                    .value_name("VALUE")
                    .help(help),
            );
        }
        sub = sub
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("key=value lines (keys as the flags, with '_' for '-'); later keys win, flags override the file"),
            )
            .arg(
                Arg::new("threads")
                    .long("threads")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize))
                    .help("Worker threads; outputs do not depend on this [default: all cores]"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .help("Output directory, created if missing [default: .]"),
            )
            .arg(
                Arg::new("quiet")
                    .long("quiet")
                    .action(ArgAction::SetTrue)
                    .help("Suppress the per-stage log on stderr"),
            );
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn resolve(spec: &commands::Spec, m: &ArgMatches) -> Result<Settings, Failure> {
    let mut s = Settings::defaults(spec.keys);
    if let Some(path) = m.get_one::<String>("config") {
        s.apply_file(path.as_ref())?;
    }
    for k in spec.keys {
        if let Some(v) = m.get_one::<String>(k.name) {
            s.set(k.name, v)?;
        }
    }
    Ok(s)
}

fn run(m: &ArgMatches) -> Result<bool, Failure> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let spec = commands::SPECS
        .iter()
        .find(|s| s.name == name)
        .expect("every subcommand has a spec");
    let settings = resolve(spec, sub)?;
    let threads = sub.get_one::<usize>("threads").copied();
    if threads == Some(0) {
        return Err(Failure::input("--threads must be at least 1"));
    }
    if let Some(t) = threads {
        polygrain::exec::init_threads(t);
    }
    let exec = if threads == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let out_given = sub.contains_id("out");
    let out = PathBuf::from(sub.get_one::<String>("out").map_or(".", String::as_str));
    let ctx = Context {
        out,
        exec,
        out_given,
    };
    output::set_quiet(sub.get_flag("quiet"));
    (spec.run)(&settings, &ctx)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: solver did not converge; results were written and flagged");
            ExitCode::from(2)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
