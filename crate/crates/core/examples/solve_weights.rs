//! The penalized simplex problem on its own: how λ moves the weights from
//! the best aggregate fit toward the nearest donor.

use spillsynth::solver::{grid_oracle, nearest_neighbor_weights, solve_penalized_sc, SolveProblem};

fn main() -> spillsynth::Result<()> {
    // target 0, donors -2 and +1: ω₁ = (1 - λ/2) / 3 until it hits zero
    for lambda in [0.0, 0.5, 1.0, 2.0, 10.0] {
        let p = SolveProblem::new(vec![0.0], vec![vec![-2.0], vec![1.0]], lambda)?;
        let w = solve_penalized_sc(&p)?;
        println!(
            "lambda {lambda:>4}: weights [{:.4}, {:.4}] closed form {:.4}",
            w.weights[0],
            w.weights[1],
            ((1.0 - lambda / 2.0) / 3.0).clamp(0.0, 1.0)
        );
    }

    let target = vec![1.0, 2.0, 0.5];
    let donors = vec![vec![0.0, 2.5, 0.0], vec![2.0, 1.0, 1.0], vec![1.2, 2.4, 0.4]];
    println!("\nthree donors, target {target:?}");
    for lambda in [0.0, 0.01, 0.1, 1.0] {
        let p = SolveProblem::new(target.clone(), donors.clone(), lambda)?;
        let w = solve_penalized_sc(&p)?;
        let o = grid_oracle(&p, 1e-3)?;
        println!(
            "lambda {lambda:<4}: {:?} objective {:.6} (fit {:.6}, penalty {:.6}); lattice {:.6}",
            w.weights.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>(),
            w.objective_value,
            w.fit_term,
            w.penalty_term,
            o.objective_value
        );
    }
    let nn = nearest_neighbor_weights(&target, &donors)?;
    println!("nearest neighbor: {:?}", nn.weights);
    Ok(())
}
