use std::path::Path;

use super::design::{code, Coding, N_TERMS};
use super::ols::{fit_ols, OlsFit};
use crate::error::{Error, Result};
use crate::lexicon::{MeasureSet, ObservationTable};
use crate::persona::TraitCell;

/// One fitted (model, measure) regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub model_id: String,
    pub measure: String,
    pub fit: OlsFit,
}

/// A (model, measure) pair that could not be fitted, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFit {
    pub model_id: String,
    pub measure: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSet {
    pub fits: Vec<RegressionFit>,
    pub skipped: Vec<SkippedFit>,
}

impl FitSet {
    pub fn get(&self, model_id: &str, measure: &str) -> Option<&RegressionFit> {
        self.fits
            .iter()
            .find(|f| f.model_id == model_id && f.measure == measure)
    }

    pub fn skipped(&self, model_id: &str, measure: &str) -> Option<&SkippedFit> {
        self.skipped
            .iter()
            .find(|s| s.model_id == model_id && s.measure == measure)
    }

    /// Model ids in first-appearance order.
    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let ids = self
            .fits
            .iter()
            .map(|f| &f.model_id)
            .chain(self.skipped.iter().map(|s| &s.model_id));
        for id in ids {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(fits_header())?;
        for f in &self.fits {
            let o = &f.fit;
            let mut rec = vec![
                f.model_id.clone(),
                f.measure.clone(),
                o.n.to_string(),
                o.df.to_string(),
                o.r2.to_string(),
            ];
            for block in [&o.coefficients, &o.std_errors, &o.t_stats, &o.p_values] {
                rec.extend(block.iter().map(f64::to_string));
            }
            rec.push(String::new());
            w.write_record(&rec)?;
        }
        for s in &self.skipped {
            let mut rec = vec![s.model_id.clone(), s.measure.clone()];
            rec.extend(std::iter::repeat_n(String::new(), 3 + 4 * N_TERMS));
            rec.push(s.reason.clone());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != fits_header() {
            return Err(Error::Config(format!(
                "{}: unexpected fits header",
                path.display()
            )));
        }
        let mut set = FitSet::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || {
                Error::Config(format!(
                    "{}: row {}: malformed fit row",
                    path.display(),
                    i + 2
                ))
            };
            let reason = &rec[rec.len() - 1];
            if !reason.is_empty() {
                set.skipped.push(SkippedFit {
                    model_id: rec[0].to_string(),
                    measure: rec[1].to_string(),
                    reason: reason.to_string(),
                });
                continue;
            }
            let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad());
            let block = |start: usize| -> Result<[f64; N_TERMS]> {
                let mut out = [0.0; N_TERMS];
                for (j, v) in out.iter_mut().enumerate() {
                    *v = num(start + j)?;
                }
                Ok(out)
            };
            set.fits.push(RegressionFit {
                model_id: rec[0].to_string(),
                measure: rec[1].to_string(),
                fit: OlsFit {
                    n: rec[2].parse().map_err(|_| bad())?,
                    df: rec[3].parse().map_err(|_| bad())?,
                    r2: num(4)?,
                    coefficients: block(5)?,
                    std_errors: block(5 + N_TERMS)?,
                    t_stats: block(5 + 2 * N_TERMS)?,
                    p_values: block(5 + 3 * N_TERMS)?,
                    residuals: Vec::new(),
                },
            });
        }
        Ok(set)
    }
}

fn fits_header() -> Vec<String> {
    let mut h: Vec<String> = ["model", "measure", "n", "df", "r2"]
        .map(String::from)
        .to_vec();
    for prefix in ["b", "se", "t", "p"] {
        h.extend((0..N_TERMS).map(|j| format!("{prefix}{j}")));
    }
    h.push("skipped_reason".into());
    h
}

/// Fits every measure separately for every model in the table.
pub fn fit_all(table: &ObservationTable, measures: &MeasureSet, coding: Coding) -> Result<FitSet> {
    let columns = measures
        .names()
        .map(|m| {
            table
                .measure_index(m)
                .map(|i| (m.to_string(), i))
                .ok_or_else(|| Error::Config(format!("measure {m} not in observation table")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut models: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
    }
    let mut set = FitSet::default();
    for model in models {
        let rows = table
            .rows
            .iter()
            .filter(|r| r.model_id == model)
            .map(|r| Ok((code(TraitCell::from_id(&r.persona_id)?, coding), r)))
            .collect::<Result<Vec<_>>>()?;
        for (measure, col) in &columns {
            let obs: Vec<_> = rows.iter().map(|(d, r)| (*d, r.values[*col])).collect();
            match fit_ols(&obs) {
                Ok(fit) => set.fits.push(RegressionFit {
                    model_id: model.to_string(),
                    measure: measure.clone(),
                    fit,
                }),
                Err(
                    e @ (Error::SingularDesign { .. }
                    | Error::DegenerateResponse
                    | Error::InsufficientData(_)),
                ) => set.skipped.push(SkippedFit {
                    model_id: model.to_string(),
                    measure: measure.clone(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    if set.fits.is_empty() {
        return Err(Error::EmptyResult(if set.skipped.is_empty() {
            "observation table has no rows".into()
        } else {
            format!("all {} fits were skipped", set.skipped.len())
        }));
    }
    Ok(set)
}
