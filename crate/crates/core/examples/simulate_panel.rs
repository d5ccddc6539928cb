//! Generate a clustered panel with known direct and spillover effects.
//!
//! cargo run --example simulate_panel -- [seed]

use spillsynth::simulate::{generate_synthetic_panel, SimulationSpec};

fn main() -> spillsynth::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SimulationSpec::default();
    let sim = generate_synthetic_panel(&spec, seed)?;
    let ds = &sim.dataset;

    println!(
        "{} units in {} clusters, {} periods ({} pre), variables {:?}",
        ds.n_units(),
        ds.n_clusters(),
        ds.n_periods(),
        ds.pre_periods(),
        ds.variables()
    );
    let t = ds.treated_unit();
    println!("treated {} in cluster {}", ds.unit_id(t), ds.cluster_id(ds.treated_cluster()));
    println!("true tau   {:?}", sim.truth.tau);
    println!("true delta {:?}", sim.truth.delta);

    // observed minus latent untreated path is exactly the injected effect
    for l in sim.truth.latent.iter().filter(|l| l.variable == "y1") {
        let u = ds.unit_index(&l.unit)?;
        let last = ds.n_periods() - 1;
        println!("  {} shift in last period: {:+.3}", l.unit, ds.value(u, 0, last) - l.values[last]);
    }
    Ok(())
}
