//! In-space placebo inference: every control unit takes a turn as the
//! treated unit, badly fitted runs are dropped and the actual estimate is
//! ranked against the rest.

use spillsynth::cv::PenaltyValues;
use spillsynth::effects::estimate_effects;
use spillsynth::placebo::{filter_by_rmspe, run_placebos, summarize_all, PlaceboOptions};
use spillsynth::simulate::{generate_synthetic_panel, SimulationSpec};
use spillsynth::synthesis::SynthContext;

fn main() -> spillsynth::Result<()> {
    let sim = generate_synthetic_panel(&SimulationSpec::default(), 5)?;
    let ds = &sim.dataset;
    let ctx = SynthContext::for_outcome(ds, 0, false)?;
    let penalties = PenaltyValues {
        lambda_treated: 0.05,
        lambda_neighbors: 0.05,
        lambda_star: 0.1,
    };
    let est = estimate_effects(&ctx, &penalties)?;

    let options = PlaceboOptions::default();
    let runs = filter_by_rmspe(run_placebos(ds, ctx.spec(), &penalties, &options)?, options.rmspe_threshold);
    let excluded: Vec<&str> = runs.iter().filter(|r| !r.is_included()).map(|r| r.pseudo_id.as_str()).collect();
    println!("{} placebo runs, excluded: {excluded:?}", runs.len());

    for s in summarize_all(&est, &runs) {
        let s = s?;
        let per: Vec<String> = s.per_period.iter().map(|r| format!("{:.3}", r.p_value)).collect();
        println!(
            "{:<18} mean |effect| {:.3}  p {:.3} ({} of {})  per period [{}]",
            s.estimand.name(),
            s.aggregate.actual,
            s.aggregate.p_value,
            s.aggregate.rank,
            s.aggregate.count,
            per.join(" ")
        );
    }
    Ok(())
}
