use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct Row {
    rater_id: String,
    sample_id: String,
    method: String,
    question: String,
    rating: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosEntry {
    pub method: String,
    pub question: String,
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub rater_id: String,
    pub sample_id: String,
    pub reason: String,
}

/// Per-(method, question) means of 1–5 ratings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    pub entries: Vec<MosEntry>,
    pub errors: usize,
    pub rejected: Vec<RejectedRow>,
}

impl MosTable {
    pub fn get(&self, method: &str, question: &str) -> Option<&MosEntry> {
        self.entries.iter().find(|e| e.method == method && e.question == question)
    }
}

pub fn mos_aggregate(path: &Path) -> Result<MosTable> {
    let file = std::fs::File::open(path)?;
    mos_aggregate_reader(file, path)
}

/// Columns `rater_id, sample_id, method, question, rating`. Non-integer
/// ratings and rows that do not parse are errors; integer ratings outside
/// 1..=5 are rejected and counted.
pub fn mos_aggregate_reader(reader: impl Read, path: &Path) -> Result<MosTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut sums: BTreeMap<(String, String), (i64, usize)> = BTreeMap::new();
    let mut table = MosTable::default();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?
        .clone();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_err(e.position().map_or(0, |p| p.line()), e.to_string())),
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let rating: i64 = row
            .rating
            .parse()
            .map_err(|_| parse_err(line, format!("rating `{}` is not an integer", row.rating)))?;
        if !(1..=5).contains(&rating) {
            table.errors += 1;
            table.rejected.push(RejectedRow {
                line,
                rater_id: row.rater_id,
                sample_id: row.sample_id,
                reason: format!("rating {rating} outside 1..5"),
            });
            continue;
        }
        let e = sums.entry((row.method, row.question)).or_default();
        e.0 += rating;
        e.1 += 1;
    }
    table.entries = sums
        .into_iter()
        .map(|((method, question), (sum, count))| MosEntry {
            method,
            question,
            mean: sum as f64 / count as f64,
            count,
        })
        .collect();
    Ok(table)
}
