use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::trainer::TrainError;

use super::model::{split_record, ServingModel};

/// Scores every row of a headered CSV through the online request path
/// against one snapshot, writing a `score` column in row order. The label
/// column, if present, is ignored; empty cells count as missing.
pub fn score_csv<R: Read, W: Write>(model: &ServingModel, input: R, out: W) -> Result<usize, TrainError> {
    let data = &model.config().data_config;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(data.delimiter_byte())
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| TrainError::Data { row: 0, reason: e.to_string() })?
        .clone();
    let snap = model.snapshot();
    let mut w = std::io::BufWriter::new(out);
    let io = |e: std::io::Error| TrainError::Io(e.to_string());
    writeln!(w, "score").map_err(io)?;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| TrainError::Data { row, reason: e.to_string() })?;
        let flat: BTreeMap<String, String> = header
            .iter()
            .zip(record.iter())
            .filter(|(k, v)| *k != data.label_column && !v.is_empty())
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let item_key = flat.get("item_key").cloned().unwrap_or_default();
        let (user, item) = split_record(&flat, &item_key);
        let score = model
            .score_uncached(&snap, &user, &item)
            .map_err(|e| TrainError::Data { row, reason: e.to_string() })?;
        writeln!(w, "{score}").map_err(io)?;
        rows += 1;
    }
    w.flush().map_err(io)?;
    Ok(rows)
}
