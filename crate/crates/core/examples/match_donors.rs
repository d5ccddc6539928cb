//! Mahalanobis matching of each treated-cluster unit to control units in
//! every pre-period.

use spillsynth::matching::build_match_sets;
use spillsynth::simulate::{generate_synthetic_panel, SimulationSpec};
use spillsynth::synthesis::SynthContext;

fn main() -> spillsynth::Result<()> {
    let sim = generate_synthetic_panel(&SimulationSpec::default(), 2)?;
    let ds = &sim.dataset;
    let ctx = SynthContext::for_outcome(ds, 0, false)?;
    let matches = build_match_sets(ds, ctx.spec(), 3)?;

    let ids = |set: &std::collections::BTreeSet<usize>| set.iter().map(|&u| ds.unit_id(u).to_string()).collect::<Vec<_>>();
    for (anchor, set) in &matches.by_anchor {
        println!("{}:", ds.unit_id(*anchor));
        for (t, ranked) in set.per_period.iter().enumerate() {
            let top: Vec<String> = ranked.iter().take(3).map(|&(u, d)| format!("{} ({d:.3})", ds.unit_id(u))).collect();
            println!("  period {}: {}", ds.periods()[t], top.join(", "));
        }
        println!("  union: {:?}", ids(&set.units()));
    }
    println!("treated matches   {:?}", ids(&matches.treated));
    println!("neighbors' matches {:?}", ids(&matches.neighbors));
    Ok(())
}
