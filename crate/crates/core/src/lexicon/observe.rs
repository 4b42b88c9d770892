use std::path::Path;
use std::str::FromStr;

use super::{CategoryProfile, Lexicon, MeasureSet, TextCounts};
use crate::error::{Error, Result};
use crate::session::Transcript;

/// Unit of observation for the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// One observation per agent response.
    #[default]
    Response,
    /// One observation per transcript, pooling token and hit counts.
    Session,
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(Unit::Response),
            "session" => Ok(Unit::Session),
            other => Err(Error::InvalidArgument(format!(
                "unit must be response or session, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub persona_id: String,
    pub model_id: String,
    pub session_index: usize,
    /// 1-based exchange number; `None` for session-level observations.
    pub turn: Option<usize>,
    pub profile: CategoryProfile,
}

/// Measures every transcript at the requested unit.
pub fn profile_transcripts(
    transcripts: &[Transcript],
    lexicon: &Lexicon,
    measures: &MeasureSet,
    unit: Unit,
) -> Result<Vec<Observation>> {
    if transcripts.is_empty() {
        return Err(Error::InvalidArgument("no transcripts to profile".into()));
    }
    measures.validate(lexicon)?;
    let mut out = Vec::new();
    for t in transcripts {
        let observation = |turn, counts: &TextCounts| Observation {
            persona_id: t.persona_id.clone(),
            model_id: t.model_id.clone(),
            session_index: t.session_index,
            turn,
            profile: counts.to_profile(lexicon),
        };
        match unit {
            Unit::Response => {
                for (i, response) in t.responses().enumerate() {
                    out.push(observation(
                        Some(i + 1),
                        &TextCounts::count(response, lexicon),
                    ));
                }
            }
            Unit::Session => {
                let mut pooled = TextCounts::empty(lexicon);
                for response in t.responses() {
                    pooled.merge(&TextCounts::count(response, lexicon));
                }
                out.push(observation(None, &pooled));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub model_id: String,
    pub persona_id: String,
    pub session_index: usize,
    pub turn: Option<usize>,
    pub word_count: u64,
    /// Aligned with [`ObservationTable::measures`].
    pub values: Vec<f64>,
}

/// Flat observation table, the interchange format between the analysis and
/// fitting stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub measures: Vec<String>,
    pub rows: Vec<ObservationRow>,
}

const FIXED_COLUMNS: [&str; 5] = ["model", "persona", "session", "turn", "word_count"];

impl ObservationTable {
    pub fn from_observations(observations: &[Observation], measures: &MeasureSet) -> Result<Self> {
        let names: Vec<String> = measures.names().map(str::to_string).collect();
        let mut rows = Vec::with_capacity(observations.len());
        for o in observations {
            let values = names
                .iter()
                .map(|n| {
                    o.profile
                        .value(n)
                        .ok_or_else(|| Error::Config(format!("measure {n} missing from profile")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(ObservationRow {
                model_id: o.model_id.clone(),
                persona_id: o.persona_id.clone(),
                session_index: o.session_index,
                turn: o.turn,
                word_count: o.profile.word_count,
                values,
            });
        }
        Ok(ObservationTable {
            measures: names,
            rows,
        })
    }

    pub fn measure_index(&self, name: &str) -> Option<usize> {
        self.measures.iter().position(|m| m == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<&str> = FIXED_COLUMNS
            .iter()
            .copied()
            .chain(self.measures.iter().map(String::as_str))
            .collect();
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.model_id.clone(),
                r.persona_id.clone(),
                r.session_index.to_string(),
                r.turn.map(|t| t.to_string()).unwrap_or_default(),
                r.word_count.to_string(),
            ];
            rec.extend(r.values.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < FIXED_COLUMNS.len()
            || headers.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b)
        {
            return Err(Error::Config(format!(
                "{}: observation CSV must start with columns {}",
                path.display(),
                FIXED_COLUMNS.join(",")
            )));
        }
        let measures: Vec<String> = headers
            .iter()
            .skip(FIXED_COLUMNS.len())
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| {
                Error::Config(format!("{}: row {}: bad {what}", path.display(), i + 2))
            };
            let values = rec
                .iter()
                .skip(FIXED_COLUMNS.len())
                .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != measures.len() {
                return Err(bad("column count"));
            }
            rows.push(ObservationRow {
                model_id: rec[0].to_string(),
                persona_id: rec[1].to_string(),
                session_index: rec[2].parse().map_err(|_| bad("session"))?,
                turn: match &rec[3] {
                    "" => None,
                    t => Some(t.parse().map_err(|_| bad("turn"))?),
                },
                word_count: rec[4].parse().map_err(|_| bad("word_count"))?,
                values,
            });
        }
        Ok(ObservationTable { measures, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Exchange;

    fn transcript(responses: &[&str]) -> Transcript {
        Transcript {
            persona_id: "opt-auth-ana".into(),
            model_id: "m".into(),
            session_index: 0,
            seed: 0,
            exchanges: responses
                .iter()
                .map(|r| Exchange {
                    donor: "q".into(),
                    agent: r.to_string(),
                })
                .collect(),
            injections: vec![],
            drift: vec![],
        }
    }

    fn x_lex() -> Lexicon {
        Lexicon::from_words(&["x"], [("hit", "x")]).unwrap()
    }

    #[test]
    fn session_unit_pools_counts() {
        let ten = format!("hit{}", " pad".repeat(9));
        let thirty = "pad ".repeat(30);
        let t = transcript(&[&ten, &thirty]);
        let m = MeasureSet::new(["x"]).unwrap();
        let obs =
            profile_transcripts(std::slice::from_ref(&t), &x_lex(), &m, Unit::Session).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].profile.percentages["x"], 2.5);
        assert_eq!(obs[0].turn, None);
        let per = profile_transcripts(&[t], &x_lex(), &m, Unit::Response).unwrap();
        assert_eq!(per.len(), 2);
        assert_eq!(per[0].profile.percentages["x"], 10.0);
        assert_eq!(per[1].turn, Some(2));
    }

    #[test]
    fn empty_input_rejected() {
        let m = MeasureSet::new(["x"]).unwrap();
        assert!(profile_transcripts(&[], &x_lex(), &m, Unit::Response).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let m = MeasureSet::new(["x"]).unwrap();
        let t = transcript(&["hit pad pad", "pad"]);
        let obs = profile_transcripts(&[t], &x_lex(), &m, Unit::Response).unwrap();
        let table = ObservationTable::from_observations(&obs, &m).unwrap();
        table.write_csv(&path).unwrap();
        assert_eq!(ObservationTable::read_csv(&path).unwrap(), table);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("model,persona,session,turn,word_count,x\n"));
    }

    #[test]
    fn unit_parsing() {
        assert_eq!("response".parse::<Unit>().unwrap(), Unit::Response);
        assert_eq!("session".parse::<Unit>().unwrap(), Unit::Session);
        assert!("turn".parse::<Unit>().is_err());
    }
}
