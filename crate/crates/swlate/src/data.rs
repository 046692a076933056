//! CSV input and output for study samples, and the key-value column mapping.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use swlate_core::dataset::{Study, StudySample};
use swlate_core::matrix::Matrix;

use crate::error::{CliError, CliResult};

/// Which CSV columns hold the instrument, treatment, outcome, and covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub instrument: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl ColumnMapping {
    /// Parses `key = value` lines. `covariates` takes a comma-separated list and
    /// `covariate` may be repeated; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let (mut instrument, mut treatment, mut outcome) = (None, None, None);
        let mut covariates = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| CliError::data(format!("mapping line {}: expected `key = value`", lineno + 1)))?;
            let value = value.trim().to_string();
            match key.trim().to_ascii_lowercase().as_str() {
                "instrument" | "z" => instrument = Some(value),
                "treatment" | "d" => treatment = Some(value),
                "outcome" | "y" => outcome = Some(value),
                "covariate" => covariates.push(value),
                "covariates" | "x" => covariates.extend(value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty())),
                other => return Err(CliError::data(format!("mapping line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        let need = |v: Option<String>, what: &str| v.ok_or_else(|| CliError::data(format!("mapping does not name the {what} column")));
        let m = ColumnMapping {
            instrument: need(instrument, "instrument")?,
            treatment: need(treatment, "treatment")?,
            outcome: need(outcome, "outcome")?,
            covariates,
        };
        m.check().map_err(CliError::data)?;
        Ok(m)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read mapping {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "instrument = {}\ntreatment = {}\noutcome = {}\ncovariates = {}\n",
            self.instrument,
            self.treatment,
            self.outcome,
            self.covariates.join(", ")
        )
    }

    pub fn check(&self) -> Result<(), String> {
        if self.covariates.is_empty() {
            return Err("mapping names no covariate columns".into());
        }
        let mut all: Vec<&str> = vec![&self.instrument, &self.treatment, &self.outcome];
        all.extend(self.covariates.iter().map(String::as_str));
        let mut sorted = all.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("column `{}` is mapped more than once", w[0]));
        }
        Ok(())
    }

    /// Mapping used for files written by this tool.
    pub fn standard(covariates: &[String]) -> Self {
        ColumnMapping { instrument: "Z".into(), treatment: "D".into(), outcome: "Y".into(), covariates: covariates.to_vec() }
    }
}

fn parse_cell(value: &str, column: &str, row: usize) -> CliResult<f64> {
    let v = value.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
        return Err(CliError::data(format!("row {row}: missing value in column `{column}`")));
    }
    v.parse::<f64>()
        .map_err(|_| CliError::data(format!("row {row}: cannot parse `{v}` in column `{column}` as a number")))
}

fn parse_binary(value: &str, column: &str, row: usize) -> CliResult<u8> {
    let v = parse_cell(value, column, row)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(CliError::data(format!("row {row}: column `{column}` must be 0 or 1, found {v}")))
    }
}

/// Loads one cohort. Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, mapping: &ColumnMapping, label: Study) -> CliResult<StudySample> {
    load(path, mapping, label, true).map(|(s, _)| s)
}

/// Loads the target cohort, which may carry covariates only. Missing
/// instrument, treatment, and outcome columns are filled with zeros; the flag
/// reports whether all three were present.
pub fn load_target_csv(path: &Path, mapping: &ColumnMapping) -> CliResult<(StudySample, bool)> {
    load(path, mapping, Study::A, false)
}

fn load(path: &Path, mapping: &ColumnMapping, label: Study, require_outcomes: bool) -> CliResult<(StudySample, bool)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("{}: mapped column `{name}` not found in header", path.display())))
    };
    let has = |name: &str| headers.iter().any(|h| h == name);
    let full = require_outcomes || (has(&mapping.instrument) && has(&mapping.treatment) && has(&mapping.outcome));
    let (zi, di, yi) = if full {
        (find(&mapping.instrument)?, find(&mapping.treatment)?, find(&mapping.outcome)?)
    } else {
        (usize::MAX, usize::MAX, usize::MAX)
    };
    let xi: Vec<usize> = mapping.covariates.iter().map(|c| find(c)).collect::<CliResult<_>>()?;

    let (mut z, mut d, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::data(format!("{}: row {row}: {e}", path.display())))?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        if full {
            z.push(parse_binary(cell(zi), &mapping.instrument, row)?);
            d.push(parse_binary(cell(di), &mapping.treatment, row)?);
            y.push(parse_cell(cell(yi), &mapping.outcome, row)?);
        } else {
            z.push(0);
            d.push(0);
            y.push(0.0);
        }
        for (&i, name) in xi.iter().zip(&mapping.covariates) {
            x.push(parse_cell(cell(i), name, row)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    let covariates = Matrix::from_vec(n, xi.len(), x).map_err(CliError::from)?;
    let sample = StudySample::new(covariates, mapping.covariates.clone(), z, d, y, label)
        .map_err(|e| CliError::data(format!("{}: {}", path.display(), e.message())))?;
    Ok((sample, full))
}

/// Writes covariates, then `Z`, `D`, `Y`. Floats use the shortest text that
/// parses back to the same value.
pub fn write_csv(sample: &StudySample, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    let mut header: Vec<String> = sample.covariate_names().to_vec();
    header.extend(["Z".to_string(), "D".to_string(), "Y".to_string()]);
    let io = |e: csv::Error| CliError::data(format!("cannot write {}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for i in 0..sample.len() {
        let mut rec: Vec<String> = sample.covariates().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(sample.instrument()[i].to_string());
        rec.push(sample.treatment()[i].to_string());
        rec.push(sample.outcome()[i].to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
