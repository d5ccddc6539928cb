//! Cross-validated penalties: one λ for the treated unit, one for its
//! neighbors and one for the within-cluster synthesis.

use spillsynth::cv::{select_penalties, Grid};
use spillsynth::matching::build_match_sets;
use spillsynth::simulate::{generate_synthetic_panel, SimulationSpec};
use spillsynth::synthesis::SynthContext;

fn main() -> spillsynth::Result<()> {
    let sim = generate_synthetic_panel(&SimulationSpec::default(), 3)?;
    let ds = &sim.dataset;
    let ctx = SynthContext::for_outcome(ds, 0, false)?;
    let matches = build_match_sets(ds, ctx.spec(), 5)?;
    let grid = Grid::uniform(200)?;

    let (config, reports) = select_penalties(&ctx, &matches, &grid)?;
    for r in &reports {
        let curve: Vec<String> = r.curve.iter().step_by(40).map(|p| format!("{:.3}:{:.4}", p.lambda, p.rmspe)).collect();
        println!(
            "{:<16} chosen {:.3} (rmspe {:.4}) from {} pseudo units; curve {}",
            r.criterion.name(),
            r.chosen_lambda,
            r.chosen_rmspe,
            r.details.len(),
            curve.join(" ")
        );
    }
    println!("{:?}", config.values);
    Ok(())
}
