//! Recomputes the median table from the shipped per-triplet rows.

use std::path::Path;

use seqft::cli::cmd_verify_fixtures;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let report = match cmd_verify_fixtures(&dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit);
        }
    };
    for cell in &report.cells {
        let mark = if cell.matches { ' ' } else { '!' };
        println!("{mark} {:<8} {:<10} median {:>8.3}  printed {:>6}", cell.config.tag(), cell.column, cell.median, cell.printed);
    }
    println!(
        "{}/{} cells, {} oracle violations, {} label mismatches",
        report.cells_matched,
        report.cells_total,
        report.oracle.violations.len(),
        report.label_mismatches.len()
    );
}
