//! Runs the in-process desk pipeline for one seed and prints the metrics.
//!
//! `cargo run --release --example desk_pipeline -- [seed] [config] [key=value ...]`

use ipgan::config::RunConfig;
use ipgan::experiment::run_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let file = args.get(1).cloned().unwrap_or_else(|| "desk".into());
    let overrides: Vec<String> = args.iter().skip(2).cloned().collect();
    let config = RunConfig::resolve(Some(&file), &overrides)?;
    let dir = tempfile::tempdir()?;
    let outcome = run_seed(&config, seed, dir.path())?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(())
}
