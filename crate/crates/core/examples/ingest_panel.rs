//! Read a long-format panel from CSV and check it against an assignment.
//!
//! cargo run --example ingest_panel -- path/to/panel.csv u01 2 y1
//!
//! Without arguments a simulated panel is written to a temporary file first.

use std::path::PathBuf;

use spillsynth::io::{ingest_panel, write_long_panel};
use spillsynth::panel::Assignment;
use spillsynth::simulate::{generate_synthetic_panel, SimulationSpec};

fn main() -> spillsynth::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (path, assignment) = if args.len() >= 4 {
        let assignment = Assignment {
            treated_unit: args[1].clone(),
            last_pre_period: args[2].parse().expect("last pre-period must be an integer"),
            outcomes: args[3..].to_vec(),
            covariates: Vec::new(),
        };
        (PathBuf::from(&args[0]), assignment)
    } else {
        let sim = generate_synthetic_panel(&SimulationSpec::default(), 1)?;
        let path = std::env::temp_dir().join("spillsynth_ingest_example.csv");
        write_long_panel(&sim.dataset.to_long_panel(), std::fs::File::create(&path)?)?;
        (path, sim.dataset.assignment())
    };

    match ingest_panel(&path, &assignment) {
        Ok((ds, report)) => {
            println!("{}: {report:?}", path.display());
            for k in 0..ds.n_clusters() {
                let members: Vec<&str> = ds.cluster_members(k).iter().map(|&u| ds.unit_id(u)).collect();
                println!("  {} {:?}", ds.cluster_id(k), members);
            }
        }
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
