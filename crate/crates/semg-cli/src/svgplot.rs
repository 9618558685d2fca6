//! Dependency-free SVG emission for the evaluation plots.

use semg_core::eval::MatchMetrics;
use semg_core::signal::SpikeTrain;

fn header(width: u32, height: u32) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
}

fn text(x: f64, y: f64, size: u32, content: &str) -> String {
    format!("<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"{size}\" font-family=\"sans-serif\">{content}</text>\n")
}

/// Raster of matched train pairs: reference ticks above, online ticks below,
/// one row per matched MU.
pub fn raster(
    pairs: &[(SpikeTrain, SpikeTrain)],
    total_samples: usize,
    sample_rate: f64,
) -> String {
    let width = 900u32;
    let row_h = 26.0;
    let margin = 60.0;
    let height = (pairs.len() as f64 * row_h + 60.0) as u32;
    let mut svg = header(width, height);
    let x_of = |t: usize| {
        margin + (t as f64 / total_samples.max(1) as f64) * (width as f64 - margin - 20.0)
    };
    for (row, (reference, online)) in pairs.iter().enumerate() {
        let y0 = 20.0 + row as f64 * row_h;
        svg.push_str(&text(
            4.0,
            y0 + 14.0,
            11,
            &format!("MU {}", reference.mu_id),
        ));
        for &t in reference.firing_samples() {
            let x = x_of(t);
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#c22\" stroke-width=\"1\"/>\n",
                y0, y0 + 9.0
            ));
        }
        for &t in online.firing_samples() {
            let x = x_of(t);
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#24c\" stroke-width=\"1\"/>\n",
                y0 + 11.0, y0 + 20.0
            ));
        }
    }
    let secs = total_samples as f64 / sample_rate;
    svg.push_str(&text(
        margin,
        pairs.len() as f64 * row_h + 45.0,
        12,
        &format!("0 to {secs:.1} s; reference red (top), online blue (bottom)"),
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Scatter of matching rate against composite decomposability index.
pub fn mr_vs_cdi(points: &[(f64, f64)]) -> String {
    let (width, height) = (520u32, 420u32);
    let (ml, mb) = (60.0, 40.0);
    let pw = width as f64 - ml - 20.0;
    let ph = height as f64 - mb - 20.0;
    let max_cdi = points.iter().map(|p| p.0).fold(1.0f64, f64::max) * 1.05;
    let mut svg = header(width, height);
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"20\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#888\"/>\n"
    ));
    for &(cdi, mr) in points {
        let x = ml + (cdi / max_cdi) * pw;
        let y = 20.0 + (1.0 - mr.clamp(0.0, 1.0)) * ph;
        svg.push_str(&format!(
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3.5\" fill=\"#24c\" fill-opacity=\"0.7\"/>\n"
        ));
    }
    svg.push_str(&text(
        ml + pw / 2.0 - 80.0,
        height as f64 - 8.0,
        12,
        "composite decomposability index",
    ));
    svg.push_str(&text(8.0, 16.0, 12, "matching rate"));
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars of mean MR / FDR / FNR for one or more labelled runs.
pub fn metric_bars(groups: &[(String, MatchMetrics)]) -> String {
    let (width, height) = (640u32, 360u32);
    let mb = 50.0;
    let ph = height as f64 - mb - 30.0;
    let mut svg = header(width, height);
    let colors = ["#24c", "#c22", "#292"];
    let labels = ["MR", "FDR", "FNR"];
    let group_w = (width as f64 - 80.0) / groups.len().max(1) as f64;
    for (gi, (name, m)) in groups.iter().enumerate() {
        let values = [m.mean_mr, m.mean_fdr, m.mean_fnr];
        let x0 = 60.0 + gi as f64 * group_w;
        for (bi, (&v, color)) in values.iter().zip(&colors).enumerate() {
            let bw = group_w / 4.0;
            let h = v.clamp(0.0, 1.0) * ph;
            let x = x0 + bi as f64 * bw;
            let y = 30.0 + ph - h;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{color}\"/>\n",
                bw * 0.8
            ));
            svg.push_str(&text(x, 30.0 + ph + 14.0, 10, labels[bi]));
        }
        svg.push_str(&text(x0, height as f64 - 10.0, 12, name));
    }
    svg.push_str("</svg>\n");
    svg
}
