//! Figure and table data for the write-up, plus optional SVG renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use proed_core::trend::{fit_csv, profile_csv, series_points, SeasonalEntry, SeriesFit, TrendReport};

use crate::commands::{curve_rows, read_curves, read_trend};
use crate::workspace::{artifact_digest, short, Workspace};

pub const FIGURE1: &str = "figure1_linear_fit.csv";
pub const FIGURE2: &str = "figure2_polynomial_fit.csv";
pub const FIGURE3: &str = "figure3_seasonal_profile.csv";
pub const TABLE1: &str = "table1_error_curves.csv";
pub const TABLE1_HEADER: &str = "run,epoch,train_error,val_error";

pub struct ReportArgs {
    pub out: Option<PathBuf>,
    pub force: bool,
    pub svg: bool,
}

pub fn report(ws: &Workspace, args: &ReportArgs) -> Result<String> {
    let (trend_text, trend) = read_trend(ws)?;
    let curves = read_curves(ws)?;

    let mut inputs = vec![("trend".to_string(), artifact_digest(&trend_text))];
    inputs.extend(curves.iter().map(|(run, text)| (format!("runs/{run}"), artifact_digest(text))));
    let mismatched: Vec<String> = inputs
        .iter()
        .filter(|(_, d)| d.as_deref() != Some(ws.digest.as_str()))
        .map(|(name, d)| format!("{name} ({})", d.as_deref().map(short).unwrap_or("no digest")))
        .collect();
    if !mismatched.is_empty() {
        if !args.force {
            bail!(
                "inputs were produced under a different config than the current one ({}): {}; rerun those stages or pass --force",
                short(&ws.digest),
                mismatched.join(", ")
            );
        }
        log::warn!("mixing artifacts from different configs: {}", mismatched.join(", "));
    }

    let out = args.out.as_deref().map(|p| ws.resolve(p)).unwrap_or_else(|| ws.reports_dir());
    let d = Some(ws.digest.as_str());
    ws.write_text(&out.join(FIGURE1), &fit_csv(&trend.aggregates, &trend.linear, d))?;
    ws.write_text(&out.join(FIGURE2), &fit_csv(&trend.aggregates, &trend.polynomial, d))?;
    ws.write_text(&out.join(FIGURE3), &profile_csv(&trend.seasonal, d))?;
    ws.write_text(&out.join(TABLE1), &table1(&ws.digest, &curves))?;
    let mut written = vec![FIGURE1, FIGURE2, FIGURE3, TABLE1];
    if args.svg {
        write_svgs(ws, &out, &trend)?;
        written.extend(["figure1_linear_fit.svg", "figure2_polynomial_fit.svg", "figure3_seasonal_profile.svg"]);
    }
    Ok(format!("report: wrote {} to {}", written.join(", "), ws.relative(&out)))
}

fn table1(digest: &str, curves: &[(String, String)]) -> String {
    let mut out = proed_core::io::digest_line(digest);
    out.push_str(TABLE1_HEADER);
    out.push('\n');
    for (run, text) in curves {
        for row in curve_rows(text) {
            let _ = writeln!(out, "{run},{row}");
        }
    }
    out
}

fn write_svgs(ws: &Workspace, out: &Path, t: &TrendReport) -> Result<()> {
    let points = series_points(&t.aggregates);
    let label = t.aggregates.first().map(|a| a.month.to_string()).unwrap_or_default();
    ws.write_text(&out.join("figure1_linear_fit.svg"), &fit_svg("Linear fit", &label, &points, &t.linear))?;
    let title = format!("Degree-{} polynomial fit", t.polynomial.degree());
    ws.write_text(&out.join("figure2_polynomial_fit.svg"), &fit_svg(&title, &label, &points, &t.polynomial))?;
    ws.write_text(&out.join("figure3_seasonal_profile.svg"), &profile_svg(&t.seasonal))?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        PAD + (x - self.x0) / span * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - PAD - (y - self.y0) / span * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>", W / 2.0, escape(title));
    s
}

fn axes(s: &mut String, f: &Frame, x_label: &str) {
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - PAD, W - PAD, H - PAD);
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>", H - PAD);
    for (y, anchor) in [(f.y0, H - PAD), (f.y1, PAD)] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{y:.1}</text>", PAD - 4.0, anchor + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>", W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">% Pro-ED</text>", H / 2.0, H / 2.0);
}

fn fit_svg(title: &str, first_month: &str, points: &[(f64, f64)], fit: &SeriesFit) -> String {
    let x1 = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let curve: Vec<(f64, f64)> = (0..=200).map(|i| {
        let x = x1 * f64::from(i) / 200.0;
        (x, fit.predict(x))
    }).collect();
    let ys = points.iter().map(|p| p.1).chain(curve.iter().map(|p| p.1));
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let f = Frame { x0: 0.0, x1, y0: lo.min(0.0), y1: hi.max(lo + 1.0) };
    let mut s = svg_open(title);
    axes(&mut s, &f, &format!("months since {first_month}"));
    let path: Vec<String> = curve.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"crimson\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>", f.px(x), f.py(y));
    }
    s.push_str("</svg>\n");
    s
}

fn profile_svg(profile: &[Option<SeasonalEntry>; 12]) -> String {
    const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
    let hi = profile.iter().flatten().map(|e| e.mean_percent).fold(1.0, f64::max);
    let f = Frame { x0: 0.0, x1: 12.0, y0: 0.0, y1: hi };
    let mut s = svg_open("Seasonal profile");
    axes(&mut s, &f, "calendar month");
    let bw = (W - 2.0 * PAD) / 12.0;
    for (i, e) in profile.iter().enumerate() {
        let x = f.px(i as f64);
        if let Some(e) = e {
            let top = f.py(e.mean_percent);
            let _ = writeln!(s, "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>", x + 4.0, bw - 8.0, H - PAD - top);
        }
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>", x + bw / 2.0, H - PAD + 14.0, MONTHS[i]);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
