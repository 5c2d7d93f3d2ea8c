//! `volframe` command-line tool.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Opts;

#[derive(Debug, Parser)]
#[command(name = "volframe", version, about = "Octahedral and odeco frame fields on tetrahedral meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (TOML or `key = value` lines); flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Derive the quadric sets from sampled frames and write a data file.
    DeriveQuadrics,
    /// Compute a smooth frame field on a mesh.
    Solve,
    /// Project one vector onto a variety.
    Project,
    /// Measure the exactness of the SDP projection on random queries.
    ExactnessTest,
    /// Sample an octahedral geodesic.
    Geodesic,
    /// Write a VTK file for a saved field.
    ExportVtk,
    /// Print mesh and quadric-data information.
    Info,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::DeriveQuadrics => "derive-quadrics",
            Command::Solve => "solve",
            Command::Project => "project",
            Command::ExactnessTest => "exactness-test",
            Command::Geodesic => "geodesic",
            Command::ExportVtk => "export-vtk",
            Command::Info => "info",
        }
    }
}

/// A failed run: message and exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<volframe::Error> for Failure {
    fn from(e: volframe::Error) -> Self {
        Failure { code: if e.is_input_error() { 2 } else { 1 }, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(format!("I/O error: {e}"))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let opts = match &cli.config {
        Some(p) => cli.opts.merge(config::load_config(p)?),
        None => cli.opts,
    };
    if let Some(w) = opts.workers {
        if w == 0 {
            return Err(Failure::input("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::numerical(format!("cannot start worker pool: {e}")))?;
    }
    let ctx = commands::Context::new(cli.command.name(), opts)?;
    match cli.command {
        Command::DeriveQuadrics => commands::derive_quadrics(&ctx),
        Command::Solve => commands::solve(&ctx),
        Command::Project => commands::project(&ctx),
        Command::ExactnessTest => commands::exactness_test(&ctx),
        Command::Geodesic => commands::geodesic(&ctx),
        Command::ExportVtk => commands::export_vtk(&ctx),
        Command::Info => commands::info(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
