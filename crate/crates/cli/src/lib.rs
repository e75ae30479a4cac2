//! `gazelab` command-line driver. Every subcommand writes its artifacts and a
//! `manifest.json` (inputs, resolved parameters, seed, version) into `--out`.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on data errors.

mod commands;
pub mod params;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser};
use serde::Serialize;

pub use commands::Command;
pub use params::Params;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "gazelab", version, about = "Gaze-driven perception of unknown objects")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "gazelab-out")]
    pub out: PathBuf,
    /// File of `key = value` parameter lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parameter override, repeatable; wins over --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// State handed to a subcommand.
pub struct Ctx {
    pub out: PathBuf,
    pub seed: u64,
    pub params: Params,
    inputs: BTreeMap<String, String>,
}

impl Ctx {
    pub fn input(&mut self, role: &str, path: &Path) -> PathBuf {
        self.inputs.insert(role.to_string(), path.display().to_string());
        path.to_path_buf()
    }

    pub fn note_input(&mut self, role: &str, value: impl ToString) {
        self.inputs.insert(role.to_string(), value.to_string());
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    inputs: &'a BTreeMap<String, String>,
    params: &'a BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn write_manifest(ctx: &Ctx, command: &str) -> anyhow::Result<()> {
    let mut outputs = Vec::new();
    list_files(&ctx.out, &ctx.out, &mut outputs)?;
    outputs.retain(|p| p != "manifest.json");
    outputs.sort();
    let m = Manifest {
        tool: "gazelab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: ctx.seed,
        inputs: &ctx.inputs,
        params: ctx.params.values(),
        outputs,
    };
    commands::write_json(&ctx.path("manifest.json"), &m)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut params = cli.command.defaults();
    if let Some(path) = &cli.common.config {
        let text = fs::read_to_string(path).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        params.apply_config(&text)?;
    }
    for pair in &cli.common.set {
        params.set_pair(pair)?;
    }
    cli.command.apply_flags(&mut params)?;
    fs::create_dir_all(&cli.common.out)?;
    let mut ctx = Ctx {
        out: cli.common.out.clone(),
        seed: cli.common.seed,
        params,
        inputs: BTreeMap::new(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| cli.command.run(&mut ctx))?;
    write_manifest(&ctx, cli.command.name())
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            let report = serde_json::json!({
                "error": if usage { "usage" } else { "data" },
                "message": message(&e),
            });
            eprintln!("{report}");
            if usage {
                2
            } else {
                1
            }
        }
    }
}
