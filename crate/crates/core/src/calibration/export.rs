//! CSV tables and standalone SVG figures for calibration reports.

use std::fmt::Write;

use super::ambiguity::AmbiguityMap;
use super::sbc::SbcReport;
use super::sweep::SweepReport;

pub fn ranks_csv(report: &SbcReport) -> String {
    let mut out = String::from("case,rank,normalized_rank\n");
    for (i, (r, nr)) in report.ranks.iter().zip(&report.normalized_ranks).enumerate() {
        let _ = writeln!(out, "{i},{r},{nr}");
    }
    out
}

pub fn histogram_csv(report: &SbcReport) -> String {
    let mut out = String::from(
        "bin,lower_edge,upper_edge,count,density,probability,band_lower,band_upper,band_lower_density,band_upper_density\n",
    );
    let b = report.bins as f64;
    for i in 0..report.bins {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{},{}",
            i as f64 / b,
            (i + 1) as f64 / b,
            report.histogram[i],
            report.densities[i],
            report.bin_probabilities[i],
            report.band.lower[i],
            report.band.upper[i],
            report.band.lower_density[i],
            report.band.upper_density[i],
        );
    }
    out
}

pub fn ambiguity_csv(map: &AmbiguityMap) -> String {
    let mut out = String::from("coordinate,variance\n");
    for (i, v) in map.per_coordinate_variance.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "sigma,intrinsic_mean_var,intrinsic_se,total_mean_var,total_se,excess,excess_se,intrinsic_shift_se\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sigma,
            r.intrinsic_mean_var,
            r.intrinsic_se,
            r.total_mean_var,
            r.total_se,
            r.excess,
            r.excess_se,
            r.intrinsic_shift_se
        );
    }
    out
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace("--", "- -")
}

fn svg_open(title: &str, comment: &str) -> String {
    let mut s = String::new();
    if !comment.is_empty() {
        let _ = writeln!(s, "<!--\n{}\n-->", escape(comment));
    }
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

/// Rank-density histogram with the uniform line and the per-bin band.
/// `comment` is embedded verbatim as a leading XML comment.
pub fn histogram_svg(report: &SbcReport, title: &str, comment: &str) -> String {
    let mut s = svg_open(title, comment);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let top = report
        .densities
        .iter()
        .chain(&report.band.upper_density)
        .cloned()
        .fold(1.5, f64::max)
        * 1.1;
    let y_of = |d: f64| HEIGHT - MARGIN - plot_h * d / top;
    let bw = plot_w / report.bins as f64;
    for i in 0..report.bins {
        let x = MARGIN + i as f64 * bw;
        let (lo, hi) = (report.band.lower_density[i], report.band.upper_density[i]);
        let _ = writeln!(
            s,
            "<rect class=\"band\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"#cccccc\" data-lower=\"{lo}\" data-upper=\"{hi}\"/>",
            y_of(hi),
            y_of(lo) - y_of(hi)
        );
    }
    for (i, &d) in report.densities.iter().enumerate() {
        let x = MARGIN + i as f64 * bw;
        let _ = writeln!(
            s,
            "<rect class=\"bar\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4472c4\" fill-opacity=\"0.8\" data-count=\"{}\" data-density=\"{d}\"/>",
            x + 1.0,
            y_of(d),
            (bw - 2.0).max(0.5),
            HEIGHT - MARGIN - y_of(d),
            report.histogram[i]
        );
    }
    let _ = writeln!(
        s,
        "<line class=\"uniform\" x1=\"{MARGIN}\" y1=\"{0:.2}\" x2=\"{1}\" y2=\"{0:.2}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>",
        y_of(1.0),
        WIDTH - MARGIN
    );
    axes(&mut s, "normalized rank", "density");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">chi2 p = {:.4}</text>",
        WIDTH - MARGIN,
        MARGIN - 4.0,
        report.chi_square.p_value
    );
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{x_label}</text>",
        WIDTH / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 12 {})\">{y_label}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
}

/// Intrinsic and total mean variance against σ, with ±1 standard-error bars.
pub fn sweep_svg(report: &SweepReport, title: &str, comment: &str) -> String {
    let mut s = svg_open(title, comment);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let xmax = report.rows.iter().map(|r| r.sigma).fold(0.0, f64::max).max(1e-12);
    let ymax = report
        .rows
        .iter()
        .map(|r| (r.total_mean_var + r.total_se).max(r.intrinsic_mean_var + r.intrinsic_se))
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.1;
    let px = |x: f64| MARGIN + plot_w * x / xmax;
    let py = |y: f64| HEIGHT - MARGIN - plot_h * y / ymax;
    let series: [(&str, &str, fn(&super::sweep::SweepRow) -> (f64, f64)); 2] = [
        ("intrinsic", "#2e7d32", |r| (r.intrinsic_mean_var, r.intrinsic_se)),
        ("total", "#c62828", |r| (r.total_mean_var, r.total_se)),
    ];
    for (name, colour, get) in series {
        let points: Vec<String> = report
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.sigma), py(get(r).0)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"{name}\" points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            points.join(" ")
        );
        for r in &report.rows {
            let (m, se) = get(r);
            let _ = writeln!(
                s,
                "<circle class=\"{name}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{colour}\" data-sigma=\"{}\" data-value=\"{m}\" data-se=\"{se}\"/>",
                px(r.sigma),
                py(m),
                r.sigma
            );
            let _ = writeln!(
                s,
                "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"{colour}\"/>",
                px(r.sigma),
                py(m - se),
                py(m + se)
            );
        }
    }
    axes(&mut s, "k-space noise sigma", "mean per-pixel null variance");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::sbc::report_from_ranks;
    use crate::calibration::TestStatistic;

    fn report() -> SbcReport {
        report_from_ranks(TestStatistic::L2Norm, (0..=40).map(|i| i * 5).collect(), 200, 20, 0)
    }

    #[test]
    fn csv_shapes() {
        let rep = report();
        assert_eq!(ranks_csv(&rep).lines().count(), 42);
        let hist = histogram_csv(&rep);
        assert_eq!(hist.lines().count(), 21);
        assert!(hist.lines().nth(1).unwrap().starts_with("0,0,0.05,"));
    }

    #[test]
    fn svg_has_bars_band_and_uniform_line() {
        let svg = histogram_svg(&report(), "l2 <norm>", "config_hash: abc -- x");
        assert!(svg.starts_with("<!--"));
        assert_eq!(svg.matches("class=\"bar\"").count(), 20);
        assert_eq!(svg.matches("class=\"band\"").count(), 20);
        assert!(svg.contains("class=\"uniform\""));
        assert!(svg.contains("l2 &lt;norm&gt;"));
        assert!(!svg[4..svg.find("-->").unwrap()].contains("--"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
