//! CSV tables and SVG line plots.

use std::fmt::Write as _;

use cryocare_core::downstream::DetectionReport;
use cryocare_core::metrics::FscCurve;
use cryocare_core::nn::TrainHistory;

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn fsc_csv(c: &FscCurve) -> String {
    to_csv(
        &["frequency", "correlation", "n_samples"],
        (0..c.len()).map(|i| {
            vec![
                c.frequency[i].to_string(),
                c.correlation[i].to_string(),
                c.n_samples[i].to_string(),
            ]
        }),
    )
}

pub fn detections_csv(r: &DetectionReport) -> String {
    to_csv(
        &["min_size", "TP", "FP", "FN", "precision", "recall"],
        r.entries.iter().map(|e| {
            vec![
                e.min_size.to_string(),
                e.tp.to_string(),
                e.fp.to_string(),
                e.fn_.to_string(),
                e.precision.to_string(),
                e.recall.to_string(),
            ]
        }),
    )
}

pub fn history_csv(h: &TrainHistory) -> String {
    let initial = std::iter::once(vec!["0".into(), String::new(), h.initial_val_loss.to_string()]);
    let epochs = h
        .train_loss
        .iter()
        .zip(&h.val_loss)
        .enumerate()
        .map(|(i, (t, v))| vec![(i + 1).to_string(), t.to_string(), v.to_string()]);
    to_csv(&["epoch", "train_loss", "val_loss"], initial.chain(epochs))
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Two-axis line plot with a legend. Axis ranges cover all points.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (480.0, 320.0, 50.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(xv), h - m + 15.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, m - 4.0, py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{c}" text-anchor="middle" transform="rotate(-90 14 {c})">{}</text>"#,
        escape(y_label),
        c = h / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.1} {:.1}", if j == 0 { 'M' } else { 'L' }, px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let ly = m + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{a}" y1="{ly}" x2="{b}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{c}" y="{}">{}</text>"#,
            ly + 4.0,
            escape(ser.label),
            a = w - m - 110.0,
            b = w - m - 90.0,
            c = w - m - 85.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn fsc_plot(curves: &[(&str, &FscCurve)]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|(label, c)| Series {
            label,
            points: c.frequency.iter().copied().zip(c.correlation.iter().copied()).collect(),
        })
        .collect();
    line_plot("Fourier shell correlation", "spatial frequency (1/voxel)", "FSC", &series)
}

pub fn pr_plot(reports: &[(&str, &DetectionReport)]) -> String {
    let series: Vec<Series> = reports
        .iter()
        .map(|(label, r)| Series {
            label,
            points: r.entries.iter().map(|e| (e.recall, e.precision)).collect(),
        })
        .collect();
    line_plot("Detections over size thresholds", "recall", "precision", &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cryocare_core::downstream::{DetectionScore, MATCHING_CRITERION};

    #[test]
    fn fsc_table_layout() {
        let c = FscCurve {
            frequency: vec![0.0, 0.25],
            correlation: vec![1.0, 0.5],
            n_samples: vec![1, 6],
        };
        assert_eq!(fsc_csv(&c), "frequency,correlation,n_samples\n0,1,1\n0.25,0.5,6\n");
    }

    #[test]
    fn detection_table_layout() {
        let r = DetectionReport {
            criterion: MATCHING_CRITERION,
            entries: vec![DetectionScore {
                min_size: 10,
                tp: 3,
                fp: 1,
                fn_: 2,
                precision: 0.75,
                recall: 0.6,
            }],
        };
        assert_eq!(detections_csv(&r), "min_size,TP,FP,FN,precision,recall\n10,3,1,2,0.75,0.6\n");
    }

    #[test]
    fn plot_has_one_path_per_series_plus_axes() {
        let svg = line_plot(
            "t",
            "x",
            "y",
            &[
                Series { label: "a", points: vec![(0.0, 0.0), (1.0, 1.0)] },
                Series { label: "b<c", points: vec![(0.0, 1.0), (1.0, 0.5)] },
            ],
        );
        assert_eq!(svg.matches("<path").count(), 3);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
