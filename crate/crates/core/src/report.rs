//! Cross-run comparison tables, line charts and the improvement summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{read_metrics, MetricsRow, CONFIG_FILE, METRICS_FILE};
use crate::types::{Combo, RunConfig, TaskKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("baseline mean must be positive (got {0})")]
    NonPositiveBaseline(f64),
    #[error("no run directories given")]
    NoRuns,
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("inconsistent runs: {0}")]
    Inconsistent(String),
}

/// Percentage change of `achieved_mean` over `baseline_mean`.
pub fn improvement(baseline_mean: f64, achieved_mean: f64) -> Result<f64, ReportError> {
    if baseline_mean <= 0.0 || baseline_mean.is_nan() {
        return Err(ReportError::NonPositiveBaseline(baseline_mean));
    }
    Ok(100.0 * (achieved_mean - baseline_mean) / baseline_mean)
}

/// Two-decimal rendering used in reports.
pub fn format_percent(value: f64) -> String {
    let s = format!("{value:.2}");
    if s == "-0.00" {
        "0.00".to_owned()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mean,
    Max,
    Similarity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mean, Metric::Max, Metric::Similarity];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mean => "mean",
            Metric::Max => "max",
            Metric::Similarity => "similarity",
        }
    }

    fn pick(self, row: &MetricsRow) -> Option<f64> {
        match self {
            Metric::Mean => Some(row.mean),
            Metric::Max => Some(row.max),
            Metric::Similarity => row.similarity,
        }
    }
}

/// A finished run as read back from its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub metrics: Vec<MetricsRow>,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        let config_path = dir.join(CONFIG_FILE);
        let read_err = |path: &Path, message: String| ReportError::Read {
            path: path.to_owned(),
            message,
        };
        let text = fs::read_to_string(&config_path).map_err(|e| read_err(&config_path, e.to_string()))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| read_err(&config_path, e.to_string()))?;
        let metrics_path = dir.join(METRICS_FILE);
        let metrics = read_metrics(&metrics_path).map_err(|e| read_err(&metrics_path, e.to_string()))?;
        Ok(Self {
            dir: dir.to_owned(),
            config,
            metrics,
        })
    }

    pub fn labels(&self) -> Vec<&str> {
        self.metrics.iter().map(|r| r.label.as_str()).collect()
    }

    fn baseline_mean(&self) -> Option<f64> {
        self.metrics.iter().find(|r| r.label == "Sm").map(|r| r.mean)
    }

    /// Generated batch with the highest mean; earliest wins ties.
    pub fn best_iteration(&self) -> Option<&MetricsRow> {
        self.metrics.iter().filter(|r| r.label != "Sm" && r.label != "Sf").fold(
            None,
            |best: Option<&MetricsRow>, row| match best {
                Some(b) if b.mean >= row.mean => Some(b),
                _ => Some(row),
            },
        )
    }
}

/// One metric across runs sharing a label axis (`Sm`, `Sf`, `0`, `1`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSeries {
    pub metric: Metric,
    pub labels: Vec<String>,
    pub columns: Vec<(Combo, Vec<Option<f64>>)>,
}

impl ComparisonSeries {
    pub fn new(runs: &[RunSummary], metric: Metric) -> Self {
        let labels = runs
            .first()
            .map(|r| r.labels().into_iter().map(str::to_owned).collect())
            .unwrap_or_default();
        let columns = runs
            .iter()
            .map(|r| (r.config.combo, r.metrics.iter().map(|row| metric.pick(row)).collect()))
            .collect();
        Self {
            metric,
            labels,
            columns,
        }
    }

    /// Rows are labels, columns are combos; values to three decimals, blank when absent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for (combo, _) in &self.columns {
            out.push(',');
            out.push_str(combo.as_str());
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(label);
            for (_, values) in &self.columns {
                out.push(',');
                if let Some(v) = values[i] {
                    let _ = write!(out, "{v:.3}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Self-contained SVG line chart; absent values break the line.
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 420.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 120.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 50.0;
        let plot_w = W - LEFT - RIGHT;
        let plot_h = H - TOP - BOTTOM;
        let n = self.labels.len();
        let x_at = |i: usize| {
            if n <= 1 {
                LEFT + plot_w / 2.0
            } else {
                LEFT + plot_w * i as f64 / (n - 1) as f64
            }
        };
        let y_at = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{} score per batch</text>"#,
            LEFT + plot_w / 2.0,
            self.metric.name()
        );
        for tick in 0..=5 {
            let v = tick as f64 / 5.0;
            let y = y_at(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
                LEFT - 8.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333333"/>"##,
            TOP + plot_h,
            LEFT + plot_w,
            TOP + plot_h
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{:.2}" stroke="#333333"/>"##,
            TOP + plot_h
        );
        for (i, label) in self.labels.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                x_at(i),
                TOP + plot_h + 18.0,
                escape(label)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">batch</text>"#,
            LEFT + plot_w / 2.0,
            H - 10.0
        );

        for (k, (combo, values)) in self.columns.iter().enumerate() {
            let colour = combo_colour(*combo);
            let _ = writeln!(svg, r#"<g class="series" data-combo="{combo}">"#);
            for segment in segments(values) {
                let points: Vec<String> = segment
                    .iter()
                    .map(|&(i, v)| format!("{:.2},{:.2}", x_at(i), y_at(v)))
                    .collect();
                if points.len() > 1 {
                    let _ = writeln!(
                        svg,
                        r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                        points.join(" ")
                    );
                }
                for &(i, v) in &segment {
                    let _ = writeln!(
                        svg,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                        x_at(i),
                        y_at(v)
                    );
                }
            }
            let ly = TOP + 10.0 + 20.0 * k as f64;
            let lx = LEFT + plot_w + 16.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{combo}</text>"#, lx + 26.0, ly + 4.0);
            svg.push_str("</g>\n");
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Splits a series into runs of consecutive present values.
fn segments(values: &[Option<f64>]) -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) => current.push((i, *v)),
            None if !current.is_empty() => out.push(std::mem::take(&mut current)),
            None => {}
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn combo_colour(combo: Combo) -> &'static str {
    match combo {
        Combo::FaPa => "#1f77b4",
        Combo::FbPa => "#ff7f0e",
        Combo::FaPb => "#2ca02c",
        Combo::FbPb => "#d62728",
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Per-combo best iteration and improvement of its mean over the manual pool.
pub fn summary_text(runs: &[RunSummary]) -> String {
    let mut out = String::new();
    if let Some(first) = runs.first() {
        let _ = writeln!(out, "task: {}", first.config.task);
        let _ = writeln!(out, "iterations: {}", first.config.iterations);
        out.push('\n');
    }
    for run in runs {
        let combo = run.config.combo;
        let baseline = run.baseline_mean();
        let base_text = baseline.map_or_else(|| "n/a".to_owned(), |b| format!("{b:.3}"));
        match run.best_iteration() {
            None => {
                let _ = writeln!(out, "{combo}: Sm mean {base_text}; no generated batches");
            }
            Some(best) => {
                let gain = baseline
                    .and_then(|b| improvement(b, best.mean).ok())
                    .map_or_else(|| "n/a".to_owned(), |p| format!("{}%", format_percent(p)));
                let _ = writeln!(
                    out,
                    "{combo}: Sm mean {base_text}; best iteration {} with mean {:.3}; improvement vs Sm {gain}",
                    best.label, best.mean
                );
            }
        }
    }
    out
}

fn check_consistent(runs: &[RunSummary]) -> Result<(), ReportError> {
    let first = runs.first().ok_or(ReportError::NoRuns)?;
    let task: TaskKind = first.config.task;
    let iterations = first.config.iterations;
    let mut combos = Vec::new();
    for run in runs {
        let dir = run.dir.display();
        if run.config.task != task {
            return Err(ReportError::Inconsistent(format!(
                "{dir} is a {} run, expected {task}",
                run.config.task
            )));
        }
        if run.config.iterations != iterations {
            return Err(ReportError::Inconsistent(format!(
                "{dir} has {} iterations, expected {iterations}",
                run.config.iterations
            )));
        }
        let expected: Vec<String> = ["Sm".to_owned(), "Sf".to_owned()]
            .into_iter()
            .chain((0..iterations).map(|i| i.to_string()))
            .collect();
        if run.labels() != expected {
            return Err(ReportError::Inconsistent(format!(
                "{dir} is incomplete: rows {:?}, expected {:?}",
                run.labels(),
                expected
            )));
        }
        if combos.contains(&run.config.combo) {
            return Err(ReportError::Inconsistent(format!(
                "combo {} appears more than once",
                run.config.combo
            )));
        }
        combos.push(run.config.combo);
    }
    Ok(())
}

/// Writes `mean.csv`, `max.csv`, `similarity.csv`, one SVG chart per metric
/// and `summary.txt` into `out_dir`. Returns the paths written.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let runs = run_dirs
        .iter()
        .map(|d| RunSummary::load(d))
        .collect::<Result<Vec<_>, _>>()?;
    check_consistent(&runs)?;

    fs::create_dir_all(out_dir).map_err(|source| ReportError::Write {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    let mut write = |name: String, contents: String| -> Result<(), ReportError> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|source| ReportError::Write {
            path: path.clone(),
            source,
        })?;
        written.push(path);
        Ok(())
    };
    for metric in Metric::ALL {
        let series = ComparisonSeries::new(&runs, metric);
        write(format!("{}.csv", metric.name()), series.to_csv())?;
        write(format!("{}.svg", metric.name()), series.to_svg())?;
    }
    write("summary.txt".to_owned(), summary_text(&runs))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(label: &str, mean: f64, similarity: Option<f64>) -> MetricsRow {
        MetricsRow {
            label: label.into(),
            mean,
            max: mean + 0.1,
            similarity,
        }
    }

    fn run(combo: Combo, rows: Vec<MetricsRow>) -> RunSummary {
        let mut config = RunConfig::new(TaskKind::QuestionAnswering, combo, 1);
        config.iterations = rows.len().saturating_sub(2) as u32;
        RunSummary {
            dir: PathBuf::from(combo.as_str()),
            config,
            metrics: rows,
        }
    }

    #[test]
    fn improvement_reproduces_reported_gain() {
        let gain = improvement(0.258, 0.526).unwrap();
        assert!((103.85..=103.90).contains(&gain), "{gain}");
        assert_eq!(format_percent(gain), "103.88");
    }

    #[test]
    fn improvement_edge_cases() {
        assert_eq!(format_percent(improvement(0.5, 0.5).unwrap()), "0.00");
        assert_eq!(format_percent(improvement(0.2, 0.1).unwrap()), "-50.00");
        assert!(improvement(0.0, 0.3).is_err());
        assert!(improvement(-0.1, 0.3).is_err());
    }

    #[test]
    fn csv_blank_for_absent() {
        let runs = [run(
            Combo::FaPb,
            vec![
                row("Sm", 0.25, Some(0.4)),
                row("Sf", 0.3, None),
                row("0", 0.35, Some(0.5)),
            ],
        )];
        let csv = ComparisonSeries::new(&runs, Metric::Similarity).to_csv();
        assert_eq!(csv, "label,faPb\nSm,0.400\nSf,\n0,0.500\n");
        let csv = ComparisonSeries::new(&runs, Metric::Mean).to_csv();
        assert_eq!(csv, "label,faPb\nSm,0.250\nSf,0.300\n0,0.350\n");
    }

    #[test]
    fn svg_breaks_line_at_gap() {
        let runs = [run(
            Combo::FbPb,
            vec![
                row("Sm", 0.2, Some(0.4)),
                row("Sf", 0.2, Some(0.5)),
                row("0", 0.3, None),
                row("1", 0.3, Some(0.2)),
                row("2", 0.3, Some(0.3)),
            ],
        )];
        let svg = ComparisonSeries::new(&runs, Metric::Similarity).to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn best_iteration_prefers_earliest_tie() {
        let r = run(
            Combo::FaPa,
            vec![
                row("Sm", 0.9, None),
                row("Sf", 0.95, None),
                row("0", 0.4, None),
                row("1", 0.5, None),
                row("2", 0.5, None),
            ],
        );
        assert_eq!(r.best_iteration().unwrap().label, "1");
        let text = summary_text(&[r]);
        assert!(
            text.contains("faPa: Sm mean 0.900; best iteration 1 with mean 0.500; improvement vs Sm -44.44%"),
            "{text}"
        );
    }

    #[test]
    fn inconsistent_runs_rejected() {
        let a = run(
            Combo::FaPa,
            vec![row("Sm", 0.1, None), row("Sf", 0.1, None), row("0", 0.1, None)],
        );
        let b = run(Combo::FaPb, vec![row("Sm", 0.1, None), row("Sf", 0.1, None)]);
        assert!(matches!(
            check_consistent(&[a.clone(), b]),
            Err(ReportError::Inconsistent(_))
        ));
        assert!(matches!(
            check_consistent(&[a.clone(), a.clone()]),
            Err(ReportError::Inconsistent(_))
        ));
        let mut c = run(Combo::FbPb, a.metrics.clone());
        c.config.task = TaskKind::Summarisation;
        assert!(matches!(
            check_consistent(&[a.clone(), c]),
            Err(ReportError::Inconsistent(_))
        ));
        assert!(check_consistent(&[a]).is_ok());
        assert!(matches!(check_consistent(&[]), Err(ReportError::NoRuns)));
    }

    proptest! {
        #[test]
        fn improvement_roundtrip(base in 0.01f64..1.0, p in -99.0f64..500.0) {
            let achieved = base * (1.0 + p / 100.0);
            let got = improvement(base, achieved).unwrap();
            prop_assert!((got - p).abs() < 0.005);
        }
    }
}
