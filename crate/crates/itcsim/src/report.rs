//! Static report rendering: a fixed-precision text table of the performance
//! summaries and an SVG of per-method point-estimate histograms. Output is a
//! pure function of the inputs, so reports are byte-reproducible.

use std::fmt::Write;

use crate::estimators::Method;
use crate::harness::{PerformanceSummary, ReplicateRow};

const METHOD_COLORS: [(Method, &str); 3] = [
    (Method::Bucher, "#4c72b0"),
    (Method::Maic, "#dd8452"),
    (Method::Gcomp, "#55a868"),
];

fn fmt3(v: f64) -> String {
    if v.is_nan() {
        "   nan".to_string()
    } else {
        format!("{v:6.3}")
    }
}

/// Renders the performance table: one row per method, each measure followed
/// by its Monte Carlo standard error in parentheses, three decimals each.
pub fn render_text(summaries: &[PerformanceSummary], seed: u64, truth: f64) -> String {
    let mut out = String::new();
    writeln!(out, "itcsim performance report").unwrap();
    writeln!(
        out,
        "seed={seed} version={} truth={truth:.3}",
        crate::ENGINE_VERSION
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<8} {:>16} {:>16} {:>16} {:>8}",
        "method", "bias (mcse)", "mse (mcse)", "coverage (mcse)", "n_valid"
    )
    .unwrap();
    for summary in summaries {
        writeln!(
            out,
            "{:<8} {:>6} ({:>6}) {:>6} ({:>6}) {:>6} ({:>6}) {:>8}",
            summary.method,
            fmt3(summary.bias).trim(),
            fmt3(summary.bias_mcse).trim(),
            fmt3(summary.mse).trim(),
            fmt3(summary.mse_mcse).trim(),
            fmt3(summary.coverage).trim(),
            fmt3(summary.coverage_mcse).trim(),
            summary.n_valid
        )
        .unwrap();
    }
    out
}

struct Strip {
    method: Method,
    color: &'static str,
    counts: Vec<usize>,
    n: usize,
}

/// Renders per-method histograms of the point estimates as one SVG document.
pub fn render_svg(rows: &[ReplicateRow], seed: u64, truth: f64) -> String {
    const BINS: usize = 40;
    const WIDTH: f64 = 880.0;
    const LEFT: f64 = 90.0;
    const RIGHT: f64 = 30.0;
    const TOP: f64 = 46.0;
    const STRIP_H: f64 = 84.0;
    const GAP: f64 = 16.0;
    const AXIS_H: f64 = 34.0;

    let mut values: Vec<(Method, f64)> = Vec::new();
    for row in rows {
        if row.valid && row.delta_hat.is_finite() {
            if let Some(method) = Method::parse(&row.method) {
                values.push((method, row.delta_hat));
            }
        }
    }

    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(*v), hi.max(*v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        lo = -1.0;
        hi = 1.0;
    }
    lo = lo.min(truth);
    hi = hi.max(truth);
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    let strips: Vec<Strip> = METHOD_COLORS
        .iter()
        .map(|&(method, color)| {
            let mut counts = vec![0usize; BINS];
            let mut n = 0;
            for (m, v) in &values {
                if *m == method {
                    let frac = (v - lo) / (hi - lo);
                    let bin = ((frac * BINS as f64) as usize).min(BINS - 1);
                    counts[bin] += 1;
                    n += 1;
                }
            }
            Strip {
                method,
                color,
                counts,
                n,
            }
        })
        .collect();

    let plot_w = WIDTH - LEFT - RIGHT;
    let height = TOP + strips.len() as f64 * (STRIP_H + GAP) + AXIS_H;
    let x_of = |v: f64| LEFT + (v - lo) / (hi - lo) * plot_w;

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH} {height:.0}\">"
    )
    .unwrap();
    writeln!(
        svg,
        "<desc>itcsim report seed={seed} version={} truth={truth:.6}</desc>",
        crate::ENGINE_VERSION
    )
    .unwrap();
    writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{height:.0}\" fill=\"white\"/>"
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{LEFT}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" fill=\"#222\">Point estimates of the marginal treatment effect (A vs B)</text>"
    )
    .unwrap();

    for (idx, strip) in strips.iter().enumerate() {
        let y0 = TOP + idx as f64 * (STRIP_H + GAP);
        let base = y0 + STRIP_H;
        let max_count = strip.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#222\" text-anchor=\"end\">{} (n={})</text>",
            LEFT - 10.0,
            y0 + STRIP_H / 2.0,
            strip.method,
            strip.n
        )
        .unwrap();
        let bin_w = plot_w / BINS as f64;
        for (b, count) in strip.counts.iter().enumerate() {
            if *count == 0 {
                continue;
            }
            let h = (*count as f64 / max_count) * (STRIP_H - 8.0);
            writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.85\"/>",
                LEFT + b as f64 * bin_w,
                base - h,
                bin_w.max(1.0) - 0.5,
                h,
                strip.color
            )
            .unwrap();
        }
        writeln!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{base:.1}\" x2=\"{:.1}\" y2=\"{base:.1}\" stroke=\"#999\" stroke-width=\"1\"/>",
            LEFT + plot_w
        )
        .unwrap();
    }

    // truth marker across all strips
    let tx = x_of(truth);
    writeln!(
        svg,
        "<line x1=\"{tx:.2}\" y1=\"{TOP}\" x2=\"{tx:.2}\" y2=\"{:.1}\" stroke=\"#b03030\" stroke-width=\"1.2\" stroke-dasharray=\"5 4\"/>",
        TOP + strips.len() as f64 * (STRIP_H + GAP) - GAP
    )
    .unwrap();

    // x axis ticks
    let axis_y = TOP + strips.len() as f64 * (STRIP_H + GAP) - GAP + 6.0;
    for i in 0..=5 {
        let v = lo + (hi - lo) * i as f64 / 5.0;
        let x = x_of(v);
        writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{axis_y:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"#555\" stroke-width=\"1\"/>",
            axis_y + 5.0
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\" text-anchor=\"middle\">{v:.2}</text>",
            axis_y + 19.0
        )
        .unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    svg
}
