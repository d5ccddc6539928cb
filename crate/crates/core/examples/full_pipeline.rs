//! Simulate a panel, then run the whole analysis from its config file and
//! write every artifact.
//!
//! cargo run --release --example full_pipeline -- [output_dir]

use std::path::PathBuf;

use spillsynth::pipeline::{run_pipeline, write_simulation, RunConfig};
use spillsynth::simulate::SimulationSpec;

fn main() -> spillsynth::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("spillsynth_example"));
    write_simulation(&SimulationSpec::default(), 6, &dir)?;

    let mut cfg = RunConfig::from_toml_file(&dir.join("config.toml"))?;
    cfg.grid.size = 500;
    for path in run_pipeline(&cfg)? {
        println!("{}", path.display());
    }
    print!("{}", std::fs::read_to_string(cfg.output_dir.join("placebo_summary.csv"))?);
    Ok(())
}
