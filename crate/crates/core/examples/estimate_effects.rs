//! Direct, spillover, unrealized spillover and net effects for one outcome,
//! with the donor weights and pre-period balance behind them.

use spillsynth::cv::PenaltyValues;
use spillsynth::effects::{estimate_effects, CONSTANT_SPILLOVER_NOTE};
use spillsynth::io::{balance_csv, weights_table};
use spillsynth::simulate::{generate_synthetic_panel, SimulationSpec};
use spillsynth::synthesis::SynthContext;

fn main() -> spillsynth::Result<()> {
    let sim = generate_synthetic_panel(&SimulationSpec::default(), 4)?;
    let ds = &sim.dataset;
    let ctx = SynthContext::for_outcome(ds, 0, false)?;
    let penalties = PenaltyValues {
        lambda_treated: 0.05,
        lambda_neighbors: 0.05,
        lambda_star: 0.1,
    };
    let est = estimate_effects(&ctx, &penalties)?;

    for s in est.aggregate_series() {
        let v: Vec<String> = s.values.iter().map(|x| format!("{x:+.3}")).collect();
        println!("{:<18} {}", s.estimand.name(), v.join(" "));
    }
    for s in &est.spillovers {
        println!("  spillover on {}: mean {:+.3}", ds.unit_id(s.unit), s.values.iter().sum::<f64>() / s.len() as f64);
    }
    println!("truth: tau {} delta {} gamma {}", sim.truth.tau[0], sim.truth.delta[0], sim.truth.gamma[0]);
    println!("note: {CONSTANT_SPILLOVER_NOTE}\n");

    // only donors with positive weight in some column
    let w = weights_table(ds, &est);
    println!("{}", w.header.join(","));
    for row in w.rows.iter().filter(|r| r[2..].iter().any(|c| c != "-" && c != "0")) {
        println!("{}", row.join(","));
    }
    println!();
    print!("{}", balance_csv(ds, &est).to_csv_string()?);
    Ok(())
}
