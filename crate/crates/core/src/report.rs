//! CSV and SVG rendering of ROC curves and per-condition means. Nothing
//! here computes metrics; inputs are curves and values produced elsewhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::roc::RocCurve;
use crate::tensorio::{Condition, TrialSpec};
use crate::{Error, Result};

fn sink_err(e: std::io::Error) -> Error {
    Error::Stream { offset: 0, source: e }
}

/// `threshold,fpr,tpr` rows, one per curve point. The `(0, 0)` and `(1, 1)`
/// endpoints carry thresholds `inf` and `-inf`.
pub fn write_roc_csv<W: Write>(mut sink: W, curve: &RocCurve) -> Result<()> {
    writeln!(sink, "threshold,fpr,tpr").map_err(sink_err)?;
    let last = curve.points.len().saturating_sub(1);
    for (i, (fpr, tpr)) in curve.points.iter().enumerate() {
        let threshold = match i {
            0 => f64::INFINITY,
            i if i == last => f64::NEG_INFINITY,
            i => curve.thresholds[i - 1],
        };
        writeln!(sink, "{threshold},{fpr},{tpr}").map_err(sink_err)?;
    }
    Ok(())
}

/// Reads a curve written by [`write_roc_csv`]. Returns `(fpr, tpr)` pairs.
pub fn read_roc_csv<R: BufRead>(source: R) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.map_err(sink_err)?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            cols.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("ROC CSV line {}: bad column {i}", n + 1)))
        };
        if cols.len() != 3 {
            return Err(Error::Format(format!("ROC CSV line {}: expected 3 columns", n + 1)));
        }
        out.push((parse(1)?, parse(2)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub label: String,
    pub auc: f64,
    pub mean_trial_auc: f64,
    pub n_trials: usize,
}

pub fn write_auc_summary<W: Write>(mut sink: W, rows: &[AucRow]) -> Result<()> {
    writeln!(sink, "label,auc,mean_trial_auc,n_trials").map_err(sink_err)?;
    for r in rows {
        writeln!(sink, "{},{},{},{}", r.label, r.auc, r.mean_trial_auc, r.n_trials).map_err(sink_err)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMean {
    pub condition: Condition,
    pub mean: f64,
    pub n: usize,
}

/// Mean of a per-trial value within each condition. Trials without a value
/// are skipped.
pub fn condition_means(trials: &[TrialSpec], values: &BTreeMap<String, f64>) -> Vec<ConditionMean> {
    let mut acc = [(0.0, 0usize); 4];
    for t in trials {
        if let Some(v) = values.get(&t.trial_id) {
            let slot = &mut acc[t.condition.index()];
            slot.0 += v;
            slot.1 += 1;
        }
    }
    Condition::ALL
        .iter()
        .zip(acc)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(&condition, (sum, n))| ConditionMean {
            condition,
            mean: sum / n as f64,
            n,
        })
        .collect()
}

pub fn write_condition_means<W: Write>(mut sink: W, means: &[ConditionMean]) -> Result<()> {
    writeln!(sink, "condition,mean,n").map_err(sink_err)?;
    for m in means {
        writeln!(sink, "{},{},{}", m.condition, m.mean, m.n).map_err(sink_err)?;
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// ROC overlay on the unit square with the chance diagonal.
pub fn roc_svg(curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let (size, pad) = (400.0, 40.0);
    let x = |v: f64| pad + v * size;
    let y = |v: f64| pad + (1.0 - v) * size;
    let mut s = String::new();
    let total = size + 2.0 * pad;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(f, t)| format!("{:.2},{:.2}", x(*f), y(*t))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            x(0.55),
            y(0.3) + 16.0 * i as f64,
            escape(label)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#, x(0.5), total - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">true positive rate</text>"#,
        y(0.5),
        y(0.5)
    );
    s.push_str("</svg>\n");
    s
}

/// Vertical bar chart with the value printed above each bar.
pub fn bar_svg(title: &str, bars: &[(String, f64)]) -> String {
    let (bar_w, gap, height, pad) = (60.0, 20.0, 300.0, 40.0);
    let width = pad * 2.0 + bars.len() as f64 * (bar_w + gap);
    let top = bars.iter().map(|b| b.1).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="12">"#,
        height + 2.0 * pad + 20.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (v.max(0.0) / top) * height;
        let x0 = pad + i as f64 * (bar_w + gap);
        let base = pad + height;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{x0}" y="{}" width="{bar_w}" height="{h}" fill="{color}"/>"#, base - h);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.3}</text>"#, x0 + bar_w / 2.0, base - h - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x0 + bar_w / 2.0, base + 16.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_csv_roundtrip() {
        let curve = RocCurve {
            thresholds: vec![0.5],
            points: vec![(0.0, 0.0), (0.25, 0.5), (1.0, 1.0)],
            auc: 0.625,
        };
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &curve).unwrap();
        assert_eq!(
            String::from_utf8_lossy(&buf),
            "threshold,fpr,tpr\ninf,0,0\n0.5,0.25,0.5\n-inf,1,1\n"
        );
        assert_eq!(read_roc_csv(buf.as_slice()).unwrap(), curve.points);
        assert!(read_roc_csv("h\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = roc_svg(&[("a<b".into(), vec![(0.0, 0.0), (1.0, 1.0)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        let bars = bar_svg("rt", &[("x".into(), 1.0), ("y".into(), 0.5)]);
        assert_eq!(bars.matches("<rect").count(), 2);
    }
}
