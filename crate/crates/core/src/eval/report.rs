//! CSV and SVG output for evaluation results.
//!
//! * `competence.csv`: `level,seen,<model>...`
//! * `completion.csv`: `level,seen,<model>...[,human]`
//! * `histogram.csv`: `model,level,scope,moves,count,normalized`, where
//!   `scope` is `within_limit` (completions under the move limit) or `all`
//!   (every completion under the step cap), and `normalized` divides by the
//!   number of completions in that scope
//! * `completion.svg`: grouped bars of completion rate per level
//!
//! Missing values are left empty. Output depends only on the inputs.

use super::{EvalError, ModelEval};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// External per-level completion rates, e.g. from human players.
///
/// Accepted headers: `level,attempts,completions` or `level,completion`.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanData {
    pub completion: BTreeMap<u32, f64>,
}

impl HumanData {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| EvalError::Human(e.to_string()))?
            .iter()
            .map(str::to_lowercase)
            .collect();
        let counts = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["level", "attempts", "completions"] => true,
            ["level", "completion"] => false,
            _ => {
                return Err(EvalError::Human(format!(
                    "header `{}` is neither `level,attempts,completions` nor `level,completion`",
                    header.join(",")
                )))
            }
        };
        let mut completion = BTreeMap::new();
        let mut problems = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    problems.push(format!("row {line}: {e}"));
                    continue;
                }
            };
            let level = rec.get(0).and_then(|s| s.parse::<u32>().ok());
            let rate = if counts {
                match (rec.get(1).and_then(|s| s.parse::<u64>().ok()), rec.get(2).and_then(|s| s.parse::<u64>().ok())) {
                    (Some(a), Some(c)) if a > 0 && c <= a => Some(c as f64 / a as f64),
                    _ => None,
                }
            } else {
                rec.get(1).and_then(|s| s.parse::<f64>().ok()).filter(|r| (0.0..=1.0).contains(r))
            };
            match (level, rate) {
                (Some(l), Some(r)) => {
                    if completion.insert(l, r).is_some() {
                        problems.push(format!("row {line}: level {l} repeated"));
                    }
                }
                _ => problems.push(format!("row {line}: `{}`", rec.iter().collect::<Vec<_>>().join(","))),
            }
        }
        if !problems.is_empty() {
            return Err(EvalError::Human(format!("malformed rows: {}", problems.join("; "))));
        }
        Ok(HumanData { completion })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub competence: PathBuf,
    pub completion: PathBuf,
    pub histogram: PathBuf,
    pub svg: Option<PathBuf>,
}

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn lookup(m: &ModelEval, level: u32) -> Option<&super::LevelEval> {
    m.levels.iter().find(|l| l.level == level)
}

fn csv_name(name: &str) -> String {
    if name.contains([',', '"', '\n']) {
        format!("\"{}\"", name.replace('"', "\"\""))
    } else {
        name.to_string()
    }
}

/// Writes the report files into `out_dir`. Models with a repeated name are
/// kept only on first appearance.
pub fn emit_report(
    models: &[ModelEval],
    human: Option<&HumanData>,
    out_dir: &Path,
    svg: bool,
) -> Result<ReportFiles, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let mut seen_names = BTreeSet::new();
    let models: Vec<&ModelEval> = models.iter().filter(|m| seen_names.insert(m.name.clone())).collect();
    let mut levels: BTreeMap<u32, bool> = BTreeMap::new();
    for m in &models {
        for l in &m.levels {
            let seen = levels.entry(l.level).or_insert(false);
            *seen |= l.seen;
        }
    }
    let header = |extra: Option<&str>| {
        let mut h = String::from("level,seen");
        for m in &models {
            h.push(',');
            h.push_str(&csv_name(&m.name));
        }
        if let Some(e) = extra {
            h.push(',');
            h.push_str(e);
        }
        h.push('\n');
        h
    };

    let mut competence = header(None);
    let mut completion = header(human.map(|_| "human"));
    for (&level, &seen) in &levels {
        let _ = write!(competence, "{level},{seen}");
        let _ = write!(completion, "{level},{seen}");
        for m in &models {
            let l = lookup(m, level);
            let _ = write!(competence, ",{}", fmt(l.and_then(|l| l.competence)));
            let _ = write!(completion, ",{}", fmt(l.map(|l| l.completion_rate)));
        }
        if let Some(h) = human {
            let _ = write!(completion, ",{}", fmt(h.completion.get(&level).copied()));
        }
        competence.push('\n');
        completion.push('\n');
    }

    let mut histogram = String::from("model,level,scope,moves,count,normalized\n");
    for m in &models {
        for l in &m.levels {
            for (scope, limit) in [("within_limit", Some(l.move_limit)), ("all", None)] {
                let h = l.histogram(limit);
                let total: u32 = h.iter().sum();
                for (moves, &count) in h.iter().enumerate() {
                    let norm = if total > 0 { Some(f64::from(count) / f64::from(total)) } else { None };
                    let _ = writeln!(
                        histogram,
                        "{},{},{scope},{moves},{count},{}",
                        csv_name(&m.name),
                        l.level,
                        fmt(norm)
                    );
                }
            }
        }
    }

    let files = ReportFiles {
        competence: out_dir.join("competence.csv"),
        completion: out_dir.join("completion.csv"),
        histogram: out_dir.join("histogram.csv"),
        svg: svg.then(|| out_dir.join("completion.svg")),
    };
    std::fs::write(&files.competence, competence)?;
    std::fs::write(&files.completion, completion)?;
    std::fs::write(&files.histogram, histogram)?;
    if let Some(path) = &files.svg {
        let mut series: Vec<(String, Vec<Option<f64>>)> = models
            .iter()
            .map(|m| (m.name.clone(), levels.keys().map(|&l| lookup(m, l).map(|e| e.completion_rate)).collect()))
            .collect();
        if let Some(h) = human {
            series.push(("human".into(), levels.keys().map(|l| h.completion.get(l).copied()).collect()));
        }
        std::fs::write(path, bar_chart(&levels.keys().copied().collect::<Vec<_>>(), &series))?;
    }
    Ok(files)
}

const PALETTE: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bar_chart(levels: &[u32], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (left, top, plot_h) = (50.0, 20.0, 200.0);
    let group_w = 20.0 + 12.0 * series.len() as f64;
    let width = left + group_w * levels.len() as f64 + 140.0;
    let height = top + plot_h + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    for k in 0..=4 {
        let y = top + plot_h * (1.0 - k as f64 / 4.0);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"##,
            left + group_w * levels.len() as f64,
            left - 4.0,
            y + 4.0,
            k as f64 / 4.0
        );
    }
    for (gi, level) in levels.iter().enumerate() {
        let gx = left + group_w * gi as f64 + 10.0;
        for (si, (_, values)) in series.iter().enumerate() {
            if let Some(v) = values[gi] {
                let h = plot_h * v.clamp(0.0, 1.0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="10" height="{h:.1}" fill="{}"/>"#,
                    gx + 12.0 * si as f64,
                    top + plot_h - h,
                    PALETTE[si % PALETTE.len()]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{level}</text>"#,
            gx + 6.0 * series.len() as f64,
            top + plot_h + 15.0
        );
    }
    let lx = left + group_w * levels.len() as f64 + 15.0;
    for (si, (name, _)) in series.iter().enumerate() {
        let y = top + 15.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{y:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[si % PALETTE.len()],
            lx + 14.0,
            y + 9.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">level</text>"#,
        left + group_w * levels.len() as f64 / 2.0,
        height - 8.0
    );
    s.push_str("</svg>\n");
    s
}
