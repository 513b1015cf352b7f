use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::config::DataConfig;
use crate::feature_gen::{generate, FeatureSpec, FeatureVector, RawRecord};

use super::TrainError;

/// Generated features and 0/1 labels, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, fv: FeatureVector, label: f64) {
        self.features.push(fv);
        self.labels.push(label);
    }
}

/// One CSV data row viewed through its header.
pub struct CsvRow<'a> {
    pub columns: &'a HashMap<String, usize>,
    pub record: &'a csv::StringRecord,
}

impl RawRecord for CsvRow<'_> {
    fn get(&self, column: &str) -> Option<&str> {
        self.columns.get(column).and_then(|&i| self.record.get(i))
    }
}

pub fn parse_label(text: &str) -> Option<f64> {
    match text.trim().parse::<f64>() {
        Ok(0.0) => Some(0.0),
        Ok(1.0) => Some(1.0),
        _ => None,
    }
}

/// Reads a headered CSV and generates features for every row. Row numbers
/// in errors count data rows from 1; 0 refers to the header.
pub fn read_dataset<R: Read>(input: R, data: &DataConfig, specs: &[FeatureSpec]) -> Result<Dataset, TrainError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(data.delimiter_byte())
        .has_headers(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| TrainError::Data { row: 0, reason: e.to_string() })?
        .clone();
    let columns: HashMap<String, usize> = header
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), i))
        .collect();
    let label_idx = *columns.get(&data.label_column).ok_or_else(|| TrainError::Data {
        row: 0,
        reason: format!("label column `{}` not in header", data.label_column),
    })?;

    let mut out = Dataset::default();
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    loop {
        row += 1;
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(TrainError::Data { row, reason: e.to_string() }),
        }
        let label_text = record.get(label_idx).unwrap_or("");
        let label = parse_label(label_text).ok_or_else(|| TrainError::Data {
            row,
            reason: format!("label `{label_text}` is not 0 or 1"),
        })?;
        let fv = generate(&CsvRow { columns: &columns, record: &record }, specs)
            .map_err(|e| TrainError::Data { row, reason: e.to_string() })?;
        out.push(fv, label);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, data: &DataConfig, specs: &[FeatureSpec]) -> Result<Dataset, TrainError> {
    let file = std::fs::File::open(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(file), data, specs)
}
