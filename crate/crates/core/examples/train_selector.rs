//! Featurizes the labeled pairs of a synthetic benchmark, fits the boosted
//! selector and reports its training accuracy and feature gains.

use seqft::benchmark::{generate_synthetic_benchmark, SyntheticBenchmarkSpec};
use seqft::cli::selector_training_set;
use seqft::selector::{gbdt_fit, GbdtParams, FEATURE_NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticBenchmarkSpec::default();
    let generated = generate_synthetic_benchmark(&spec)?;
    let backend = generated.backend();
    let (x, y) = selector_training_set(&generated.benchmark, &backend, spec.budget, 0).map_err(|e| e.message)?;
    let positives = y.iter().filter(|&&v| v).count();
    println!("{} pairs, {positives} positive", y.len());

    let (model, trace) = gbdt_fit(&x, &y, &GbdtParams::default(), 0)?;
    for (round, loss) in trace.losses.iter().enumerate().step_by(20) {
        println!("round {round:>3} loss {loss:.4}");
    }
    let correct = x.iter().zip(&y).filter(|(row, &label)| model.decide(row, 0.5).unwrap() == label).count();
    println!("training accuracy {correct}/{}", y.len());
    let mut gains: Vec<(&str, f64)> = FEATURE_NAMES.iter().copied().zip(model.feature_gains()).collect();
    gains.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (name, g) in gains.iter().take(5) {
        println!("  {name:<24} {g:.4}");
    }
    Ok(())
}
