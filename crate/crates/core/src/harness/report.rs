//! Result JSON, frontier CSV and the Pareto-plane SVG.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::pareto::{ParetoFrontier, ParetoModel};
use crate::solver::RankedResult;

/// Bumped on any breaking change to the result JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Run facts that go into the result JSON besides the models.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunInfo {
    pub variables: Vec<String>,
    pub target: String,
    pub seed: u64,
    pub oracle: String,
    pub partial: bool,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Wall-clock facts; everything outside this field is deterministic.
    pub elapsed_secs: f64,
    pub config: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

fn model_json(m: &ParetoModel, names: &[String]) -> Value {
    json!({
        "complexity_bits": m.score.complexity_bits,
        "medl_bits": m.score.medl_bits,
        "infix": m.expr.to_infix(names),
        "rpn": m.expr.to_rpn(names),
        "params": m.expr.params(),
        "provenance": m.provenance,
    })
}

pub fn result_json(frontier: &ParetoFrontier, ranked: &RankedResult, info: &RunInfo) -> Value {
    let names = &info.variables;
    let ranked_json: Vec<Value> = ranked
        .ranked
        .iter()
        .map(|r| {
            let mut v = model_json(&r.model, names);
            v["heldout_medl_bits"] = json!(r.heldout_medl_bits);
            v
        })
        .collect();
    json!({
        "schema": "paretosr.result",
        "version": SCHEMA_VERSION,
        "variables": names,
        "target": info.target,
        "seed": info.seed,
        "oracle": info.oracle,
        "partial": info.partial,
        "rows": { "train": info.train_rows, "test": info.test_rows },
        "config": info.config,
        "frontier": frontier.models().iter().map(|m| model_json(m, names)).collect::<Vec<_>>(),
        "ranked": ranked_json,
        "top": ranked.top,
        "success": ranked.success,
        "max_relative_error": ranked.max_relative_error,
        "timing": { "elapsed_secs": info.elapsed_secs },
    })
}

pub fn frontier_csv(frontier: &ParetoFrontier, names: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["complexity_bits", "medl_bits", "infix"]).expect("in-memory write");
    for m in frontier.models() {
        w.write_record([
            m.score.complexity_bits.to_string(),
            m.score.medl_bits.to_string(),
            m.expr.to_infix(names),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Scatter of the frontier on (complexity, MEDL) with a staircase through
/// the points and one label per model.
pub fn frontier_svg(frontier: &ParetoFrontier, names: &[String]) -> String {
    let pts: Vec<(f64, f64, String)> = frontier
        .models()
        .iter()
        .map(|m| (m.score.complexity_bits, m.score.medl_bits, m.expr.to_infix(names)))
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if lo.is_finite() {
            let pad = ((hi - lo) * 0.05).max(1.0);
            (lo - pad, hi + pad)
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, bottom, top) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">complexity (bits)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">mean error description length (bits)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{v:.1}</text>"#, sx(v), bottom + 15.0);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 5.0, sy(v) + 4.0);
    }
    if pts.len() > 1 {
        let mut d = format!("M{:.1} {:.1}", sx(pts[0].0), sy(pts[0].1));
        for w in pts.windows(2) {
            let _ = write!(d, " L{:.1} {:.1} L{:.1} {:.1}", sx(w[1].0), sy(w[0].1), sx(w[1].0), sy(w[1].1));
        }
        let _ = writeln!(s, r##"<path d="{d}" stroke="#7a9cc6" fill="none"/>"##);
    }
    for (x, y, label) in &pts {
        let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#c0392b"/>"##, sx(*x), sy(*y));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, sx(*x) + 6.0, sy(*y) - 6.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

/// Writes `<prefix>.json`, `<prefix>.csv` and `<prefix>.svg`.
pub fn emit_report(frontier: &ParetoFrontier, ranked: &RankedResult, info: &RunInfo, prefix: &Path) -> io::Result<ReportFiles> {
    if frontier.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty frontier"));
    }
    let files = ReportFiles {
        json: with_suffix(prefix, ".json"),
        csv: with_suffix(prefix, ".csv"),
        svg: with_suffix(prefix, ".svg"),
    };
    let body = serde_json::to_string_pretty(&result_json(frontier, ranked, info)).map_err(io::Error::other)?;
    fs::write(&files.json, body + "\n")?;
    fs::write(&files.csv, frontier_csv(frontier, &info.variables))?;
    fs::write(&files.svg, frontier_svg(frontier, &info.variables))?;
    Ok(files)
}

/// Writes `<prefix>.trace.json`.
pub fn write_trace(trace: &[Value], prefix: &Path) -> io::Result<PathBuf> {
    let path = with_suffix(prefix, ".trace.json");
    let body = json!({ "schema": "paretosr.trace", "version": SCHEMA_VERSION, "events": trace });
    fs::write(&path, serde_json::to_string_pretty(&body).map_err(io::Error::other)? + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{BasisSet, Expression};
    use crate::mdl::ModelScore;
    use crate::solver::rank_and_verify;

    fn frontier(items: &[(&str, f64, f64)]) -> ParetoFrontier {
        let b = BasisSet::with_variables(["x", "y"]).unwrap();
        ParetoFrontier::from_models(items.iter().map(|&(t, c, m)| {
            ParetoModel::new(Expression::parse_infix(t, &b).unwrap(), ModelScore::new(c, m), "test")
        }))
    }

    fn names() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn well_formed(svg: &str) {
        let mut r = quick_xml::Reader::from_str(svg);
        loop {
            match r.read_event() {
                Ok(quick_xml::events::Event::Eof) => break,
                Ok(_) => {}
                Err(e) => panic!("invalid xml: {e}"),
            }
        }
    }

    #[test]
    fn svg_labels_every_point() {
        let f = frontier(&[("x", 2.0, 20.0), ("x*y", 6.0, 10.0), ("x*y+[1/3]", 12.0, 3.0)]);
        let svg = frontier_svg(&f, &names());
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(">x*y+[1/3]</text>"));
        well_formed(&svg);
    }

    #[test]
    fn single_point_svg_is_valid() {
        let svg = frontier_svg(&frontier(&[("x", 2.0, 1.0)]), &names());
        assert_eq!(svg.matches("<circle").count(), 1);
        well_formed(&svg);
    }

    #[test]
    fn markup_is_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn csv_has_one_row_per_model() {
        let f = frontier(&[("x", 2.0, 20.0), ("x*y", 6.0, 10.0)]);
        let text = frontier_csv(&f, &names());
        assert_eq!(text.lines().count(), 1 + f.len());
        assert!(text.starts_with("complexity_bits,medl_bits,infix\n"));
    }

    #[test]
    fn files_are_written() {
        let f = frontier(&[("x", 2.0, 20.0), ("x*y", 6.0, 10.0)]);
        let t = crate::data::DataTable::new(names(), (0..30).map(|i| (vec![i as f64, 1.0], i as f64))).unwrap().0;
        let ranked = rank_and_verify(&f, &t, None, &Default::default());
        let dir = tempfile::tempdir().unwrap();
        let info = RunInfo { variables: names(), target: "f".into(), ..Default::default() };
        let files = emit_report(&f, &ranked, &info, &dir.path().join("run")).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(&files.json).unwrap()).unwrap();
        assert_eq!(v["version"], SCHEMA_VERSION);
        assert_eq!(v["frontier"].as_array().unwrap().len(), 2);
        assert_eq!(v["frontier"][1]["rpn"], "x y *");
        assert!(files.csv.exists() && files.svg.exists());
        assert!(emit_report(&ParetoFrontier::new(), &ranked, &info, &dir.path().join("e")).is_err());
        assert!(emit_report(&f, &ranked, &info, Path::new("/nonexistent/dir/run")).is_err());
    }
}
