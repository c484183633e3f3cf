//! CSV and JSON forms of [`WeightedDiscreteMeasure`].
//!
//! CSV: one atom per row, coordinates first, weight in the last column. A header
//! row `x0,...,x{m-1},weight` is written and skipped on read when present.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::WeightedDiscreteMeasure;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
pub(super) struct MeasureJson {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureJson> for WeightedDiscreteMeasure {
    type Error = Error;

    fn try_from(value: MeasureJson) -> Result<Self> {
        WeightedDiscreteMeasure::new(value.atoms, value.weights)
    }
}

impl From<WeightedDiscreteMeasure> for MeasureJson {
    fn from(m: WeightedDiscreteMeasure) -> Self {
        Self {
            atoms: m.atoms().map(<[f64]>::to_vec).collect(),
            weights: m.weights,
        }
    }
}

impl WeightedDiscreteMeasure {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        out.write_record(&header)?;
        for (atom, w) in self.atoms().zip(&self.weights) {
            let mut row: Vec<String> = atom.iter().map(f64::to_string).collect();
            row.push(w.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut dim = None;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::Structure(format!("CSV line {}: {e}", line + 1)));
                }
            };
            if values.len() < 2 {
                return Err(Error::Structure(format!(
                    "CSV line {}: need at least one coordinate and a weight",
                    line + 1
                )));
            }
            let m = values.len() - 1;
            match dim {
                None => dim = Some(m),
                Some(d) if d != m => return Err(Error::Dimension { expected: d, found: m }),
                _ => {}
            }
            coords.extend_from_slice(&values[..m]);
            weights.push(values[m]);
        }
        let dim = dim.ok_or_else(|| Error::Structure("CSV contains no atoms".into()))?;
        Self::from_flat(dim, coords, weights)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
