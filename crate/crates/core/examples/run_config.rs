//! Drive the command layer from a JSON config, as the binary does.
//!
//! `cargo run --example run_config -- configs/saturating.json out/`

use std::path::PathBuf;

use optswitch::cli::{self, Command, RunConfig, RunOptions};

fn main() -> optswitch::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("configs/equal_profits.json"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("optswitch-run"));
    let config = RunConfig::load(&path)?;
    for command in [
        Command::Validate,
        Command::Constants,
        Command::SolveSwitching,
        Command::Verify,
    ] {
        let manifest = cli::run(
            command,
            &config,
            Some(&path),
            &out.join(command.name()),
            RunOptions::default(),
        )?;
        println!(
            "{}: {:?} in {:.2}s",
            command.name(),
            manifest.outputs,
            manifest.wall_time_s
        );
        println!("  {}", manifest.summary);
    }
    Ok(())
}
