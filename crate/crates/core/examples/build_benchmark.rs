//! From a pair-transfer matrix to diagnostic triplets: label the pairs,
//! pick sources per target family, then sample triplets per configuration.

use std::collections::{BTreeMap, BTreeSet};

use seqft::benchmark::{build_triplets, family_search, generate_synthetic_benchmark, Label, SyntheticBenchmarkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let generated = generate_synthetic_benchmark(&SyntheticBenchmarkSpec::default())?;
    let bench = &generated.benchmark;

    let tasks: BTreeMap<String, String> = bench.families();
    let families: Vec<String> = tasks.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    // Mean transfer between families, from the measured pair records.
    let index = |f: &str| families.iter().position(|g| g == f).expect("known family");
    let mut sum = vec![vec![0.0; families.len()]; families.len()];
    let mut count = vec![vec![0usize; families.len()]; families.len()];
    for r in &bench.records {
        let (s, t) = (index(&tasks[&r.source_task]), index(&tasks[&r.target_task]));
        sum[s][t] += r.trials.iter().sum::<f64>() / r.trials.len() as f64;
        count[s][t] += 1;
    }
    let matrix: Vec<Vec<f64>> =
        sum.iter().zip(&count).map(|(row, n)| row.iter().zip(n).map(|(s, &n)| s / n.max(1) as f64).collect()).collect();
    let search = family_search(&matrix, &families, &tasks, 1)?;
    for sel in &search.selections {
        println!("{}: best {:?} worst {:?}", sel.target_family, sel.best_sources, sel.worst_sources);
    }
    println!("{} candidate pairs", search.count());

    let labeled: Vec<_> = bench.records.iter().filter(|r| search.pairs.contains(&(r.source_task.clone(), r.target_task.clone()))).cloned().collect();
    for label in [Label::Positive, Label::Negative, Label::Neutral] {
        println!("  {label:?}: {}", labeled.iter().filter(|r| r.label == label).count());
    }
    let built = build_triplets(&labeled, 2, 2, 0);
    println!("{} triplets", built.triplets.len());
    for s in &built.shortfalls {
        println!("  short: {} has {} of {}", s.config, s.got, s.wanted);
    }
    Ok(())
}
