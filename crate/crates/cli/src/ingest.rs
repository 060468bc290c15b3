//! CSV ingestion into validated tables.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use codareg::dirichlet::{adjust_zeros, Composition};
use codareg::{CoDaTable, ModelError};
use csv::StringRecord;
use thiserror::Error;

use crate::config::DataConfig;

/// Largest tolerated distance of a row sum from one before renormalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Group label used when no group column is configured.
pub const SINGLE_GROUP: &str = "all";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` appears more than once")]
    DuplicateColumn(String),
    #[error("column `{0}` is used in two roles")]
    ColumnRole(String),
    #[error("need at least two component columns, found {0}")]
    TooFewComponents(usize),
    #[error("no data rows")]
    Empty,
    #[error("row {row} (line {line}), column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, line: u64, column: String, value: String },
    #[error("row {row} (line {line}), column `{column}`: value {value} is negative or not finite")]
    OutOfRange { row: usize, line: u64, column: String, value: f64 },
    #[error("row {row} (line {line}), column `{column}`: zero part; set zero_adjust = true to replace zeros")]
    Zero { row: usize, line: u64, column: String },
    #[error("row {row} (line {line}): parts sum to {sum}, more than {ROW_SUM_TOLERANCE:e} from 1")]
    RowSum { row: usize, line: u64, sum: f64 },
    #[error("row {row} (line {line}): unknown group label `{label}`")]
    UnknownGroup { row: usize, line: u64, label: String },
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A table with the names behind its columns and group indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub table: CoDaTable,
    pub components: Vec<String>,
    pub mean_covariates: Vec<String>,
    pub precision_covariates: Vec<String>,
    /// Group labels in index order.
    pub groups: Vec<String>,
    /// Rows whose sum was within tolerance but not exactly one.
    pub renormalized: usize,
    pub zero_adjusted: bool,
}

/// Covariate rows of new observations, for prediction.
#[derive(Debug, Clone)]
pub struct NewData {
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub groups: Vec<usize>,
}

struct Sheet {
    columns: HashMap<String, usize>,
    headers: Vec<String>,
    rows: Vec<(u64, StringRecord)>,
}

impl Sheet {
    fn read(path: &Path) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
        let mut columns = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if columns.insert(h.clone(), i).is_some() {
                return Err(IngestError::DuplicateColumn(h.clone()));
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record));
        }
        if rows.is_empty() {
            return Err(IngestError::Empty);
        }
        Ok(Self { columns, headers, rows })
    }

    fn index(&self, name: &str) -> Result<usize, IngestError> {
        self.columns
            .get(name)
            .copied()
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    fn number(&self, row: usize, column: usize) -> Result<f64, IngestError> {
        let (line, record) = &self.rows[row];
        let text = &record[column];
        text.parse().map_err(|_| IngestError::Parse {
            row: row + 1,
            line: *line,
            column: self.headers[column].clone(),
            value: text.to_string(),
        })
    }

    /// `[1, covariates...]` for every row.
    fn design(&self, names: &[String]) -> Result<Vec<Vec<f64>>, IngestError> {
        let indices = names.iter().map(|n| self.index(n)).collect::<Result<Vec<_>, _>>()?;
        (0..self.rows.len())
            .map(|r| {
                let mut row = Vec::with_capacity(indices.len() + 1);
                row.push(1.0);
                for &c in &indices {
                    let v = self.number(r, c)?;
                    if !v.is_finite() {
                        return Err(IngestError::OutOfRange {
                            row: r + 1,
                            line: self.rows[r].0,
                            column: self.headers[c].clone(),
                            value: v,
                        });
                    }
                    row.push(v);
                }
                Ok(row)
            })
            .collect()
    }

    fn labels(&self, group: Option<&str>) -> Result<Vec<String>, IngestError> {
        match group {
            None => Ok(vec![SINGLE_GROUP.to_string(); self.rows.len()]),
            Some(name) => {
                let c = self.index(name)?;
                Ok(self.rows.iter().map(|(_, r)| r[c].to_string()).collect())
            }
        }
    }
}

fn component_columns(sheet: &Sheet, config: &DataConfig) -> Result<Vec<String>, IngestError> {
    let mut used = BTreeSet::new();
    for name in config
        .mean_covariates
        .iter()
        .chain(&config.precision_covariates)
        .chain(config.group.iter())
    {
        sheet.index(name)?;
        used.insert(name.as_str());
    }
    if let Some(g) = &config.group {
        if config.mean_covariates.contains(g) || config.precision_covariates.contains(g) {
            return Err(IngestError::ColumnRole(g.clone()));
        }
    }
    let components: Vec<String> = if config.components.is_empty() {
        sheet
            .headers
            .iter()
            .filter(|h| !used.contains(h.as_str()))
            .cloned()
            .collect()
    } else {
        for name in &config.components {
            sheet.index(name)?;
            if used.contains(name.as_str()) {
                return Err(IngestError::ColumnRole(name.clone()));
            }
        }
        config.components.clone()
    };
    if components.len() < 2 {
        return Err(IngestError::TooFewComponents(components.len()));
    }
    Ok(components)
}

/// Reads an observed table.
///
/// Rows within [`ROW_SUM_TOLERANCE`] of one are renormalized. Zero parts are
/// rejected unless `zero_adjust` is set, in which case the whole table is
/// shrunk towards the barycentre. Groups are indexed in sorted label order.
pub fn ingest_csv(path: &Path, config: &DataConfig) -> Result<Dataset, IngestError> {
    let sheet = Sheet::read(path)?;
    let components = component_columns(&sheet, config)?;
    let indices: Vec<usize> = components.iter().map(|n| sheet.index(n)).collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(sheet.rows.len());
    let mut has_zero = false;
    let mut renormalized = 0;
    for r in 0..sheet.rows.len() {
        let line = sheet.rows[r].0;
        let mut parts = Vec::with_capacity(indices.len());
        for &c in &indices {
            let v = sheet.number(r, c)?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(IngestError::OutOfRange {
                    row: r + 1,
                    line,
                    column: sheet.headers[c].clone(),
                    value: v,
                });
            }
            if v == 0.0 {
                if !config.zero_adjust {
                    return Err(IngestError::Zero {
                        row: r + 1,
                        line,
                        column: sheet.headers[c].clone(),
                    });
                }
                has_zero = true;
            }
            parts.push(v);
        }
        let sum: f64 = parts.iter().sum();
        // a deviation of exactly 1e-6 written in decimal lands a few ulps
        // either side of the bound
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE + 8.0 * f64::EPSILON {
            return Err(IngestError::RowSum { row: r + 1, line, sum });
        }
        if sum != 1.0 {
            renormalized += 1;
            parts.iter_mut().for_each(|p| *p /= sum);
        }
        rows.push(parts);
    }
    if has_zero {
        rows = adjust_zeros(&rows);
    }
    let y = rows
        .into_iter()
        .map(|parts| Composition::with_tolerance(parts, ROW_SUM_TOLERANCE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ModelError::from(codareg::DirichletError::from(e)))?;

    let labels = sheet.labels(config.group.as_deref())?;
    let groups: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let group_index: Vec<usize> = labels
        .iter()
        .map(|l| groups.binary_search(l).expect("label collected above"))
        .collect();

    let table = CoDaTable::new(
        y,
        sheet.design(&config.mean_covariates)?,
        sheet.design(&config.precision_covariates)?,
        group_index,
        groups.len(),
    )?;
    Ok(Dataset {
        table,
        components,
        mean_covariates: config.mean_covariates.clone(),
        precision_covariates: config.precision_covariates.clone(),
        groups,
        renormalized,
        zero_adjusted: has_zero,
    })
}

/// Reads covariates and group labels of new observations. Every covariate
/// the model was fitted with must be present and every label known.
pub fn ingest_new_data(
    path: &Path,
    mean_covariates: &[String],
    precision_covariates: &[String],
    group: Option<&str>,
    known_groups: &[String],
) -> Result<NewData, IngestError> {
    let sheet = Sheet::read(path)?;
    let x = sheet.design(mean_covariates)?;
    let z = sheet.design(precision_covariates)?;
    let labels = sheet.labels(group)?;
    let groups = labels
        .iter()
        .enumerate()
        .map(|(r, label)| {
            known_groups
                .iter()
                .position(|g| g == label)
                .ok_or_else(|| IngestError::UnknownGroup {
                    row: r + 1,
                    line: sheet.rows[r].0,
                    label: label.clone(),
                })
        })
        .collect::<Result<_, _>>()?;
    Ok(NewData { x, z, groups })
}
