//! Scores every initialization chain for the last task of a sequence and
//! prints them best first.

use seqft::benchmark::{generate_synthetic_benchmark, SyntheticBenchmarkSpec};
use seqft::engine::Engine;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticBenchmarkSpec { n_tasks: 8, n_families: 2, ..Default::default() };
    let generated = generate_synthetic_benchmark(&spec)?;
    let bench = &generated.benchmark;
    let backend = generated.backend();
    let engine = Engine::new(&backend);

    let tasks: Vec<_> = bench.tasks.iter().take(4).map(|t| t.to_spec()).collect();
    let names: Vec<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    println!("sequence {}", names.join(" -> "));
    let result = engine.oracle_search(&tasks, spec.budget, 7, 4)?;
    let mut scores = result.scores.clone();
    scores.sort_by(|a, b| b.relative.total_cmp(&a.relative));
    for s in &scores {
        let chain = if s.chain.is_empty() { "(root)".to_string() } else { s.chain.join(" > ") };
        println!("{:+7.2}%  {chain}", 100.0 * s.relative);
    }
    println!("best: {:?} at {:+.2}%", result.best_chain, 100.0 * result.best_relative);
    Ok(())
}
