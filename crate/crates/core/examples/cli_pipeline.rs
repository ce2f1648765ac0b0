//! The command-line workflow driven through the library: `synth` writes a
//! group and a config, `register` aligns it, `evaluate` replays the metrics.
//!
//! Run with `cargo run --release --example cli_pipeline [OUT_DIR]`.

use std::path::PathBuf;

use groupreg::io::report::without_timing;
use groupreg::io::run::{evaluate, register, synth, RunOptions};

fn main() -> groupreg::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("groupreg-pipeline"));
    std::fs::create_dir_all(&root).map_err(|e| groupreg::Error::Config(format!("{}: {e}", root.display())))?;
    let synth_cfg = root.join("synth.toml");
    std::fs::write(
        &synth_cfg,
        "[synth]\ndims = [24, 24, 24]\nsmoothness = 8.0\namplitude = 10.0\n\n\
         [optimizer]\niterations = 150\n\n[run]\noutput_dir = \"group\"\n",
    )
    .map_err(|e| groupreg::Error::Config(e.to_string()))?;

    let group_dir = synth(&RunOptions {
        config: synth_cfg,
        quiet: true,
        ..RunOptions::default()
    })?;
    let registered = register(&RunOptions {
        config: group_dir.join("register.toml"),
        ..RunOptions::default()
    })?;
    let replayed = evaluate(&RunOptions {
        config: group_dir.join("registered").join("evaluate.toml"),
        quiet: true,
        ..RunOptions::default()
    })?;
    let same = without_timing(&registered.to_text()) == without_timing(&replayed.to_text());
    println!("outputs in {}", group_dir.join("registered").display());
    println!("evaluate reproduces the register report: {same}");
    Ok(())
}
