//! PerfAUC of a few hand-written learning curves, and relative PerfAUC
//! against the independently fine-tuned one.

use seqft::metrics::{best_perf, median_of, relative_perf_auc, LearningCurve, MetricSpec, PerfSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget = 10_000;
    let spec = MetricSpec::loss("loss");
    let curve = |pts: &[(u64, f64)]| LearningCurve::new(pts.to_vec(), "loss", 0.0);
    let baseline = curve(&[(0, 2.3), (10, 2.1), (100, 1.4), (1000, 0.7), (10_000, 0.45)])?;
    let warm = curve(&[(0, 1.2), (10, 0.9), (100, 0.6), (1000, 0.45), (10_000, 0.4)])?;
    let hurt = curve(&[(0, 3.0), (10, 2.9), (100, 2.0), (1000, 1.1), (10_000, 0.5)])?;

    let ind = PerfSummary::of(&baseline, budget, "independent")?;
    println!("independent  PerfAUC {:.4}  best@1000 {:.3}", ind.perf_auc, best_perf(&baseline, 1000)?);
    let mut rels = Vec::new();
    for (name, c) in [("warm start", &warm), ("bad init", &hurt)] {
        let m = PerfSummary::of(c, budget, name)?;
        let rel = relative_perf_auc(&m, &ind, &spec)?;
        println!("{name:<12} PerfAUC {:.4}  relative {:+.1}%", m.perf_auc, 100.0 * rel);
        rels.push(rel);
    }
    println!("median relative {:+.1}%", 100.0 * median_of(&rels)?);
    Ok(())
}
