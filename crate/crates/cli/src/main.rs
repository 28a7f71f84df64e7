use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cipwave::{run_stage, ConfigError, Options, Stage};

/// Reconstruct a dielectric coefficient from synthetic backscattered data.
#[derive(Debug, Parser)]
#[command(name = "cipwave", version)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; later stages read the files of earlier ones here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value = "full")]
    stage: Stage,
    /// Also write legacy-VTK coefficient fields.
    #[arg(long)]
    dump_fields: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        dump_fields: cli.dump_fields,
    };
    match run_stage(cli.stage, &opts) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}", opts.out.join(o).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let summary = match e.downcast_ref::<ConfigError>() {
                Some(c) => serde_json::json!({
                    "error": "config",
                    "message": c.to_string(),
                    "keys": c.keys(),
                }),
                None => serde_json::json!({
                    "error": "run",
                    "message": format!("{e:#}"),
                }),
            };
            eprintln!("{summary}");
            ExitCode::from(if e.is::<ConfigError>() { 2 } else { 1 })
        }
    }
}
