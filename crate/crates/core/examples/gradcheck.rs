//! Finite-difference check of every differentiable primitive and model
//! component against the tape's analytic gradients.
//!
//! cargo run --example gradcheck -- [SEED]

use pemp::gradcases::all_cases;

fn main() -> pemp::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut worst: f64 = 0.0;
    for case in all_cases(seed) {
        let by_step: Vec<String> = [1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&h| case.run(h).map(|e| format!("{e:.1e}")))
            .collect::<Result<_, _>>()?;
        worst = worst.max(case.run(1e-6)?);
        println!(
            "{:<30} params {:>3}  rel err at h=1e-4,1e-5,1e-6: {}",
            case.name,
            case.param_count(),
            by_step.join(" ")
        );
    }
    println!("worst relative error at h=1e-6: {worst:.2e}");
    Ok(())
}
