//! Shipped appendix tables: per-triplet results, the median table and task metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{label_pair, BenchmarkError, Polarity, TransferRecord, TripletConfig, LABEL_THRESHOLD};
use crate::metrics::median_of;

pub const FIXTURE_COLUMNS: [&str; 5] = ["a_to_c", "b_to_c", "naive", "selective", "oracle"];
const MANIFEST: &str = "manifest.json";
const N_TABLES: usize = 8;
const ROWS_PER_TABLE: usize = 16;

/// One triplet's results in percent; `id` is `C.<table>#<row>` (both 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub id: String,
    pub config: TripletConfig,
    pub a_to_c: f64,
    pub b_to_c: f64,
    pub naive: f64,
    pub selective: f64,
    pub oracle: f64,
}

impl FixtureRow {
    pub fn values(&self) -> [f64; 5] {
        [self.a_to_c, self.b_to_c, self.naive, self.selective, self.oracle]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub family: String,
    pub train: u64,
    pub validation: u64,
    pub test: u64,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRegistry {
    pub evaluated_pair_count: usize,
    pub families: Vec<String>,
    pub tasks: Vec<TaskMeta>,
}

impl TaskRegistry {
    pub fn get(&self, name: &str) -> Option<&TaskMeta> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

/// Printed medians for one configuration, kept as strings to retain precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub config: TripletConfig,
    pub printed: [String; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelException {
    pub table: String,
    pub row: usize,
    pub column: String,
    pub value: String,
    pub tagged: Polarity,
    pub point_label: Polarity,
}

impl LabelException {
    pub fn row_id(&self) -> String {
        format!("{}#{}", self.table, self.row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceptionsManifest {
    pub version: u32,
    pub label_exceptions: Vec<LabelException>,
    /// Row ids exempt from the oracle/selective consistency check.
    pub oracle_exceptions: Vec<String>,
    /// Median cells where the printed table disagrees with its own appendix rows.
    #[serde(default)]
    pub table2_discrepancies: Vec<KnownDiscrepancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownDiscrepancy {
    /// Configuration tag, e.g. `neg/pos`.
    pub config: String,
    pub column: String,
    pub printed: String,
    #[serde(default)]
    pub note: String,
}

impl KnownDiscrepancy {
    pub fn covers(&self, cell: &CellCheck) -> bool {
        self.config == cell.config.tag() && self.column == cell.column
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub rows: Vec<FixtureRow>,
    pub registry: TaskRegistry,
    pub table2: Vec<Table2Row>,
    pub exceptions: ExceptionsManifest,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn schema(file: &str, reason: impl Into<String>) -> BenchmarkError {
    BenchmarkError::Schema { file: file.to_string(), reason: reason.into() }
}

fn expected_files() -> Vec<String> {
    let mut files: Vec<String> = (1..=N_TABLES).map(|k| format!("table_c{k}.csv")).collect();
    files.extend(["table2.csv", "tasks.json", "exceptions.json"].map(String::from));
    files
}

/// Reads every fixture file, checking it against the sha256 manifest.
fn read_verified(dir: &Path) -> Result<BTreeMap<String, String>, BenchmarkError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.version != 1 {
        return Err(schema(MANIFEST, format!("version {}", manifest.version)));
    }
    let mut out = BTreeMap::new();
    for name in expected_files() {
        let digest = manifest.files.get(&name).ok_or_else(|| schema(MANIFEST, format!("missing entry for {name}")))?;
        let bytes = fs::read(dir.join(&name))?;
        if !sha256_hex(&bytes).eq_ignore_ascii_case(digest) {
            return Err(BenchmarkError::Checksum(name));
        }
        let text = String::from_utf8(bytes).map_err(|_| schema(&name, "not UTF-8"))?;
        out.insert(name, text);
    }
    Ok(out)
}

fn read_rows(name: &str, text: &str, table: usize) -> Result<Vec<FixtureRow>, BenchmarkError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut expected: Vec<String> = FIXTURE_COLUMNS.iter().map(|s| s.to_string()).collect();
    expected.push("config".into());
    if header != expected {
        return Err(schema(name, format!("header {header:?}")));
    }
    let config = TripletConfig::ALL[table - 1];
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let id = format!("C.{table}#{}", i + 1);
        let mut v = [0.0; 5];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = record[k].trim().parse().map_err(|_| schema(name, format!("{id}: bad value `{}`", &record[k])))?;
        }
        let tag: TripletConfig = record[5].trim().parse().map_err(|_| schema(name, format!("{id}: bad config")))?;
        if tag != config {
            return Err(schema(name, format!("{id}: config {tag} in the {config} table")));
        }
        rows.push(FixtureRow { id, config, a_to_c: v[0], b_to_c: v[1], naive: v[2], selective: v[3], oracle: v[4] });
    }
    if rows.len() != ROWS_PER_TABLE {
        return Err(schema(name, format!("{} rows, expected {ROWS_PER_TABLE}", rows.len())));
    }
    Ok(rows)
}

fn read_table2(text: &str) -> Result<Vec<Table2Row>, BenchmarkError> {
    let name = "table2.csv";
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 6 {
            return Err(schema(name, "expected 6 columns"));
        }
        let config: TripletConfig = record[0].parse().map_err(|_| schema(name, "bad config"))?;
        let printed: [String; 5] = std::array::from_fn(|k| record[k + 1].trim().to_string());
        for p in &printed {
            p.parse::<f64>().map_err(|_| schema(name, format!("bad value `{p}`")))?;
        }
        out.push(Table2Row { config, printed });
    }
    let configs: Vec<TripletConfig> = out.iter().map(|r| r.config).collect();
    if configs != TripletConfig::ALL {
        return Err(schema(name, "rows must cover the eight configurations in order"));
    }
    Ok(out)
}

pub fn load_fixtures(dir: &Path) -> Result<Fixtures, BenchmarkError> {
    let files = read_verified(dir)?;
    let mut rows = Vec::with_capacity(N_TABLES * ROWS_PER_TABLE);
    for k in 1..=N_TABLES {
        let name = format!("table_c{k}.csv");
        rows.extend(read_rows(&name, &files[&name], k)?);
    }
    let registry: TaskRegistry = serde_json::from_str(&files["tasks.json"])?;
    for t in &registry.tasks {
        if !registry.families.contains(&t.family) {
            return Err(schema("tasks.json", format!("task {} has unknown family {}", t.name, t.family)));
        }
    }
    let exceptions: ExceptionsManifest = serde_json::from_str(&files["exceptions.json"])?;
    Ok(Fixtures { rows, registry, table2: read_table2(&files["table2.csv"])?, exceptions })
}

/// One recomputed median against its printed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub config: TripletConfig,
    pub column: String,
    pub median: f64,
    pub printed: String,
    /// Allowed |median - printed|: half a unit in the last printed place plus 0.005.
    pub tolerance: f64,
    pub matches: bool,
}

fn decimals(printed: &str) -> i32 {
    printed.split_once('.').map_or(0, |(_, frac)| frac.len() as i32)
}

/// Recomputes every median cell from the per-triplet rows.
pub fn reproduce_table2(rows: &[FixtureRow], table2: &[Table2Row]) -> Result<Vec<CellCheck>, BenchmarkError> {
    let mut out = Vec::with_capacity(table2.len() * 5);
    for t2 in table2 {
        let group: Vec<&FixtureRow> = rows.iter().filter(|r| r.config == t2.config).collect();
        for (k, column) in FIXTURE_COLUMNS.iter().enumerate() {
            let values: Vec<f64> = group.iter().map(|r| r.values()[k]).collect();
            let median = median_of(&values).map_err(|e| schema("table2.csv", format!("{}: {e}", t2.config)))?;
            let printed_value: f64 = t2.printed[k].parse().expect("validated on load");
            let tolerance = 0.5 * 10f64.powi(-decimals(&t2.printed[k])) + 0.005;
            out.push(CellCheck {
                config: t2.config,
                column: column.to_string(),
                median,
                printed: t2.printed[k].clone(),
                tolerance,
                // Small slack absorbs binary representation of the decimal inputs.
                matches: (median - printed_value).abs() <= tolerance + 1e-9,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMismatch {
    pub row_id: String,
    pub column: String,
    pub value: f64,
    pub tagged: Polarity,
    pub point_label: Polarity,
    pub excepted: bool,
}

/// Pairwise cells whose single-trial label disagrees with the table's config tag.
pub fn label_consistency(rows: &[FixtureRow], exceptions: &ExceptionsManifest) -> Vec<LabelMismatch> {
    let mut out = Vec::new();
    for row in rows {
        for (column, value, tagged) in [("a_to_c", row.a_to_c, row.config.a_to_c), ("b_to_c", row.b_to_c, row.config.b_to_c)] {
            let rec = TransferRecord::new("a", "c", vec![value]).expect("finite fixture value");
            let point = Polarity::of(label_pair(&rec, LABEL_THRESHOLD).expect("non-empty")).expect("labeled");
            if point != tagged {
                let excepted = exceptions.label_exceptions.iter().any(|e| e.row_id() == row.id && e.column == column);
                out.push(LabelMismatch { row_id: row.id.clone(), column: column.into(), value, tagged, point_label: point, excepted });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimals_of_printed() {
        assert_eq!(decimals("42.7"), 1);
        assert_eq!(decimals("-2.35"), 2);
        assert_eq!(decimals("0.244"), 3);
        assert_eq!(decimals("3"), 0);
    }

    #[test]
    fn sha_hex() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
