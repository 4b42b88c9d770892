//! Coefficient tables in the factor-group layout.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lexicon::MeasureSet;
use crate::persona::Factor;
use crate::stats::{term_involves, FitSet, N_TERMS};

const STRONG: f64 = 0.01;
const WEAK: f64 = 0.05;

/// Significance marker: "**" below 0.01, "*" below 0.05, "" otherwise.
pub fn star(p: f64) -> Result<&'static str> {
    star_with(p, STRONG, WEAK)
}

fn star_with(p: f64, strong: f64, weak: f64) -> Result<&'static str> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p-value must be in (0, 1], got {p}"
        )));
    }
    Ok(if p < strong {
        "**"
    } else if p < weak {
        "*"
    } else {
        ""
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowGroup {
    pub label: String,
    /// When set, only coefficients involving this factor are shown.
    pub factor: Option<Factor>,
    pub measures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportLayout {
    pub groups: Vec<RowGroup>,
    pub strong: f64,
    pub weak: f64,
}

const TABLE_AUTHORITY: [&str; 6] = [
    "clout",
    "authentic",
    "ppron",
    "certitude",
    "allnone",
    "assent",
];
const TABLE_ATTITUDE: [&str; 5] = ["tone", "affect", "tone_pos", "tone_neg", "emo_anx"];
const TABLE_REASONING: [&str; 7] = [
    "cognition",
    "analytic",
    "authentic",
    "quantity",
    "number",
    "emotion",
    "affect",
];

impl ReportLayout {
    fn with_groups(groups: Vec<RowGroup>) -> Self {
        ReportLayout {
            groups,
            strong: STRONG,
            weak: WEAK,
        }
    }

    /// Rows grouped by trait dimension, showing only the coefficients that
    /// involve that dimension.
    pub fn table() -> Self {
        let group = |factor: Factor, names: &[&str]| RowGroup {
            label: factor.name().to_string(),
            factor: Some(factor),
            measures: names.iter().map(|s| s.to_string()).collect(),
        };
        Self::with_groups(vec![
            group(Factor::Authority, &TABLE_AUTHORITY),
            group(Factor::Attitude, &TABLE_ATTITUDE),
            group(Factor::Reasoning, &TABLE_REASONING),
        ])
    }

    /// Every default measure under its dimension, all coefficients shown.
    pub fn full() -> Self {
        Self::with_groups(
            MeasureSet::default_groups()
                .into_iter()
                .map(|(f, names)| RowGroup {
                    label: f.name().to_string(),
                    factor: None,
                    measures: names.into_iter().map(String::from).collect(),
                })
                .collect(),
        )
    }

    /// One ungrouped row per measure, all coefficients shown.
    pub fn flat<S: AsRef<str>>(measures: impl IntoIterator<Item = S>) -> Self {
        Self::with_groups(vec![RowGroup {
            label: String::new(),
            factor: None,
            measures: measures
                .into_iter()
                .map(|s| s.as_ref().to_string())
                .collect(),
        }])
    }

    /// `default`, `full`, or `flat` (every measure present in `fits`).
    pub fn named(name: &str, fits: &FitSet) -> Result<Self> {
        match name {
            "default" | "table" => Ok(Self::table()),
            "full" => Ok(Self::full()),
            "flat" => {
                let mut names: Vec<&str> = Vec::new();
                let all = fits
                    .fits
                    .iter()
                    .map(|f| f.measure.as_str())
                    .chain(fits.skipped.iter().map(|s| s.measure.as_str()));
                for m in all {
                    if !names.contains(&m) {
                        names.push(m);
                    }
                }
                Ok(Self::flat(names))
            }
            other => Err(Error::InvalidArgument(format!(
                "layout must be default, full or flat, got {other:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.strong && self.strong < self.weak && self.weak <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "star thresholds must satisfy 0 < {} < {} <= 1",
                self.strong, self.weak
            )));
        }
        if self.groups.iter().all(|g| g.measures.is_empty()) {
            return Err(Error::Report("layout has no rows".into()));
        }
        Ok(())
    }

    fn shows(group: &RowGroup, j: usize) -> bool {
        group.factor.is_none_or(|f| term_involves(j, f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Text,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Format::Markdown),
            "txt" | "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!(
                "format must be md, txt or csv, got {other:?}"
            ))),
        }
    }
}

/// Label as printed in the table: "tone_pos" becomes "Tone_Pos".
pub fn display_name(measure: &str) -> String {
    measure
        .split('_')
        .map(|part| {
            let mut c = part.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect::<String>())
                .unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join("_")
}

enum Cell {
    Fit {
        r2: f64,
        beta: [Option<(f64, f64)>; N_TERMS],
    },
    Skipped(String),
}

struct Row<'a> {
    group: &'a RowGroup,
    first_in_group: bool,
    measure: &'a str,
    cells: Vec<Cell>,
}

fn collect_rows<'a>(
    fits: &FitSet,
    layout: &'a ReportLayout,
    models: &[String],
) -> Result<Vec<Row<'a>>> {
    let mut rows = Vec::new();
    for group in &layout.groups {
        for (i, measure) in group.measures.iter().enumerate() {
            let mut cells = Vec::with_capacity(models.len());
            for model in models {
                if let Some(f) = fits.get(model, measure) {
                    let mut beta = [None; N_TERMS];
                    for (j, slot) in beta.iter_mut().enumerate().skip(1) {
                        if ReportLayout::shows(group, j) {
                            *slot = Some((f.fit.coefficients[j], f.fit.p_values[j]));
                        }
                    }
                    cells.push(Cell::Fit { r2: f.fit.r2, beta });
                } else if let Some(s) = fits.skipped(model, measure) {
                    cells.push(Cell::Skipped(s.reason.clone()));
                } else {
                    return Err(Error::Report(format!(
                        "no fit for measure {measure} under model {model}"
                    )));
                }
            }
            rows.push(Row {
                group,
                first_in_group: i == 0,
                measure,
                cells,
            });
        }
    }
    Ok(rows)
}

fn beta_text(b: f64, p: f64, layout: &ReportLayout) -> Result<String> {
    let s = star_with(p, layout.strong, layout.weak)?;
    Ok(if s.is_empty() {
        "-".into()
    } else {
        format!("{s}{b:.3}")
    })
}

/// Renders the layout over every model in `fits`, one column block per model.
pub fn render_table(fits: &FitSet, layout: &ReportLayout, format: Format) -> Result<String> {
    layout.validate()?;
    let models = fits.models();
    if models.is_empty() {
        return Err(Error::Report("no fits to report".into()));
    }
    let rows = collect_rows(fits, layout, &models)?;
    match format {
        Format::Csv => render_csv(&rows, &models),
        Format::Markdown | Format::Text => {
            let mut grid: Vec<Vec<String>> = Vec::new();
            let mut header = vec!["Group".to_string(), "Category".to_string()];
            for m in &models {
                header.push(format!("{m} R²"));
                header.extend((1..N_TERMS).map(|j| format!("β{j}")));
            }
            for row in &rows {
                let mut line = vec![
                    if row.first_in_group {
                        row.group.label.clone()
                    } else {
                        String::new()
                    },
                    display_name(row.measure),
                ];
                for cell in &row.cells {
                    match cell {
                        Cell::Fit { r2, beta } => {
                            line.push(format!("{r2:.3}"));
                            for b in &beta[1..] {
                                line.push(match b {
                                    Some((b, p)) => beta_text(*b, *p, layout)?,
                                    None => String::new(),
                                });
                            }
                        }
                        Cell::Skipped(_) => {
                            line.extend(std::iter::repeat_n("n/a".to_string(), N_TERMS));
                        }
                    }
                }
                grid.push(line);
            }
            let mut out = if format == Format::Markdown {
                markdown(&header, &grid)
            } else {
                aligned(&header, &grid)
            };
            out.push('\n');
            let _ = writeln!(
                out,
                "* p < {}; ** p < {}; - not significant.",
                layout.weak, layout.strong
            );
            for (model, n) in distinguishing_count(fits) {
                let _ = writeln!(out, "Distinguishing measures for {model}: {n}");
            }
            let skipped: Vec<_> = rows
                .iter()
                .flat_map(|r| {
                    r.cells
                        .iter()
                        .zip(&models)
                        .map(move |(c, m)| (r.measure, m, c))
                })
                .filter_map(|(measure, m, c)| match c {
                    Cell::Skipped(reason) => Some(format!("{m}/{measure}: {reason}")),
                    Cell::Fit { .. } => None,
                })
                .collect();
            for s in skipped {
                let _ = writeln!(out, "Skipped {s}");
            }
            Ok(out)
        }
    }
}

fn markdown(header: &[String], grid: &[Vec<String>]) -> String {
    let mut out = String::new();
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header));
    out.push_str(&line(&vec!["---".to_string(); header.len()]));
    for row in grid {
        out.push_str(&line(row));
    }
    out
}

fn aligned(header: &[String], grid: &[Vec<String>]) -> String {
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = header.iter().map(|h| width(h)).collect();
    for row in grid {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(width(c));
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(grid.iter().map(Vec::as_slice)) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - width(c))))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn render_csv(rows: &[Row], models: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["group", "measure", "model", "r2"]
        .map(String::from)
        .to_vec();
    header.extend((1..N_TERMS).map(|j| format!("b{j}")));
    header.extend((1..N_TERMS).map(|j| format!("p{j}")));
    header.push("skipped_reason".into());
    w.write_record(&header)?;
    for row in rows {
        for (cell, model) in row.cells.iter().zip(models) {
            let mut rec = vec![
                row.group.label.clone(),
                row.measure.to_string(),
                model.clone(),
            ];
            match cell {
                Cell::Fit { r2, beta } => {
                    rec.push(r2.to_string());
                    let shown = |f: fn(&(f64, f64)) -> f64| {
                        beta[1..].iter().map(move |b| {
                            b.as_ref().map(f).map(|v| v.to_string()).unwrap_or_default()
                        })
                    };
                    rec.extend(shown(|b| b.0));
                    rec.extend(shown(|b| b.1));
                    rec.push(String::new());
                }
                Cell::Skipped(reason) => {
                    rec.extend(std::iter::repeat_n(String::new(), 1 + 2 * (N_TERMS - 1)));
                    rec.push(reason.clone());
                }
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Per model, the number of distinct measures with at least one significant
/// (p < 0.05) coefficient among β₁…β₇.
pub fn distinguishing_count(fits: &FitSet) -> Vec<(String, usize)> {
    fits.models()
        .into_iter()
        .map(|model| {
            let mut measures: Vec<&str> = fits
                .fits
                .iter()
                .filter(|f| f.model_id == model && f.fit.p_values[1..].iter().any(|p| *p < WEAK))
                .map(|f| f.measure.as_str())
                .collect();
            measures.sort_unstable();
            measures.dedup();
            (model, measures.len())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{OlsFit, RegressionFit, SkippedFit};

    fn fit(model: &str, measure: &str, r2: f64, b: [f64; 8], p: [f64; 8]) -> RegressionFit {
        RegressionFit {
            model_id: model.into(),
            measure: measure.into(),
            fit: OlsFit {
                n: 800,
                df: 792,
                coefficients: b,
                std_errors: [0.1; 8],
                t_stats: [0.0; 8],
                p_values: p,
                r2,
                residuals: vec![],
            },
        }
    }

    fn assent() -> FitSet {
        let mut b = [0.0; 8];
        let mut p = [0.5; 8];
        b[2] = 0.211;
        p[2] = 0.004;
        b[4] = 0.217;
        p[4] = 0.002;
        FitSet {
            fits: vec![fit("gpt35", "assent", 0.987, b, p)],
            skipped: vec![],
        }
    }

    #[test]
    fn star_rule() {
        assert_eq!(star(0.005).unwrap(), "**");
        assert_eq!(star(0.03).unwrap(), "*");
        assert_eq!(star(0.5).unwrap(), "");
        assert_eq!(star(0.05).unwrap(), "");
        assert_eq!(star(0.01).unwrap(), "*");
        assert_eq!(star(1.0).unwrap(), "");
        assert!(star(0.0).is_err());
        assert!(star(1.5).is_err());
        assert!(star(f64::NAN).is_err());
    }

    #[test]
    fn assent_row_cells() {
        let layout = ReportLayout::flat(["assent"]);
        let md = render_table(&assent(), &layout, Format::Markdown).unwrap();
        let row = md.lines().find(|l| l.contains("Assent")).unwrap();
        let cells: Vec<&str> = row.split('|').map(str::trim).collect();
        assert_eq!(
            &cells[3..11],
            ["0.987", "-", "**0.211", "-", "**0.217", "-", "-", "-"]
        );
    }

    #[test]
    fn table_layout_blanks_unrelated_terms() {
        let mut set = assent();
        for m in TABLE_AUTHORITY
            .iter()
            .chain(&TABLE_ATTITUDE)
            .chain(&TABLE_REASONING)
        {
            if *m != "assent" && set.get("gpt35", m).is_none() {
                set.fits.push(fit("gpt35", m, 0.1, [0.0; 8], [0.9; 8]));
            }
        }
        let txt = render_table(&set, &ReportLayout::table(), Format::Markdown).unwrap();
        let row = txt.lines().find(|l| l.contains("Assent")).unwrap();
        let cells: Vec<&str> = row.split('|').map(str::trim).collect();
        assert_eq!(
            &cells[3..11],
            ["0.987", "", "**0.211", "", "**0.217", "", "-", "-"]
        );
        // Authentic and Affect each appear under two groups.
        assert_eq!(txt.matches("| Affect |").count(), 2);
    }

    #[test]
    fn missing_cell_is_named() {
        let err = render_table(
            &assent(),
            &ReportLayout::flat(["assent", "clout"]),
            Format::Text,
        )
        .unwrap_err();
        assert!(err.to_string().contains("clout"), "{err}");
    }

    #[test]
    fn skipped_cells_render_as_na() {
        let mut set = assent();
        set.skipped.push(SkippedFit {
            model_id: "gpt35".into(),
            measure: "clout".into(),
            reason: "degenerate response: outcome is constant".into(),
        });
        let txt =
            render_table(&set, &ReportLayout::flat(["assent", "clout"]), Format::Text).unwrap();
        assert!(txt
            .lines()
            .any(|l| l.contains("Clout") && l.contains("n/a")));
        assert!(txt.contains("Skipped gpt35/clout"));
    }

    #[test]
    fn csv_carries_the_rendered_numbers() {
        let csv = render_table(&assent(), &ReportLayout::flat(["assent"]), Format::Csv).unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        let rec = rdr.records().next().unwrap().unwrap();
        assert_eq!(&rec[2], "gpt35");
        assert_eq!(format!("{:.3}", rec[3].parse::<f64>().unwrap()), "0.987");
        assert_eq!(format!("{:.3}", rec[5].parse::<f64>().unwrap()), "0.211");
    }

    #[test]
    fn counting_deduplicates_and_handles_empty() {
        let mut set = assent();
        set.fits.push(fit("gpt4", "tone", 0.2, [0.0; 8], [0.9; 8]));
        assert_eq!(
            distinguishing_count(&set),
            [("gpt35".into(), 1), ("gpt4".into(), 0)]
        );
        // The intercept does not count.
        let mut p = [0.9; 8];
        p[0] = 1e-9;
        let only_intercept = FitSet {
            fits: vec![fit("m", "x", 0.0, [0.0; 8], p)],
            skipped: vec![],
        };
        assert_eq!(distinguishing_count(&only_intercept), [("m".into(), 0)]);
    }

    #[test]
    fn display_names() {
        assert_eq!(display_name("tone_pos"), "Tone_Pos");
        assert_eq!(display_name("emo_anx"), "Emo_Anx");
        assert_eq!(display_name("allnone"), "Allnone");
    }

    #[test]
    fn thresholds_must_decrease() {
        let mut l = ReportLayout::table();
        l.strong = 0.05;
        assert!(l.validate().is_err());
    }
}
