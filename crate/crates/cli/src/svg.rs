//! Minimal line plots as standalone SVG documents. No timestamps or other
//! run-dependent metadata, so identical data gives identical files.

use std::fmt::Write;

use consensus_core::dynamics::Trajectory;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
/// At most this many agent curves are drawn.
const MAX_CURVES: usize = 100;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
}

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let mut it = series.iter().flat_map(|s| s.points.iter());
    let &(x0, y0) = it.next()?;
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (x0, x0, y0, y0);
    for &(x, y) in it {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi == y_lo {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    Some((x_lo, x_hi, y_lo, y_hi))
}

fn tick_label(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        format!("{}", (x * 1e4).round() / 1e4)
    } else {
        format!("{x:.2e}")
    }
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );

    if let Some((x_lo, x_hi, y_lo, y_hi)) = bounds(series) {
        let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;
        for k in 0..=4 {
            let fx = x_lo + (x_hi - x_lo) * k as f64 / 4.0;
            let fy = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(fx),
                TOP + plot_h + 18.0,
                tick_label(fx)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(fy) + 4.0,
                tick_label(fy)
            );
        }
        for s in series {
            if s.points.is_empty() {
                continue;
            }
            let mut path = String::new();
            for (k, &(x, y)) in s.points.iter().enumerate() {
                let _ = write!(path, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, sx(x), sy(y));
            }
            let _ = writeln!(
                out,
                r#"<path d="{path}" fill="none" stroke="{}" stroke-width="1"><title>{}</title></path>"#,
                s.color,
                escape(&s.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn palette(k: usize, total: usize) -> String {
    let hue = 360.0 * k as f64 / total.max(1) as f64;
    format!("hsl({hue:.1},70%,40%)")
}

/// Every agent's state against time.
pub fn states_plot(title: &str, traj: &Trajectory, indices: &[usize]) -> String {
    let n = traj.n_agents();
    let shown: Vec<usize> = if n <= MAX_CURVES {
        (0..n).collect()
    } else {
        (0..MAX_CURVES).map(|k| k * n / MAX_CURVES).collect()
    };
    let series: Vec<Series> = shown
        .iter()
        .enumerate()
        .map(|(c, &i)| Series {
            label: format!("y_{}", i + 1),
            points: indices.iter().map(|&k| (traj.times[k], traj.states[k][i])).collect(),
            color: palette(c, shown.len()),
        })
        .collect();
    line_plot(title, "t", "y_i(t)", &series)
}

/// `log10 Var_v` (and `log10 Var_P` when tracked) against time. Samples at
/// or below zero are skipped.
pub fn variance_plot(title: &str, traj: &Trajectory, indices: &[usize]) -> String {
    let log_points = |f: &dyn Fn(usize) -> Option<f64>| -> Vec<(f64, f64)> {
        indices
            .iter()
            .filter_map(|&k| f(k).filter(|&v| v > 0.0).map(|v| (traj.times[k], v.log10())))
            .collect()
    };
    let mut series = vec![Series {
        label: "log10 Var_v".into(),
        points: log_points(&|k| Some(traj.monitors[k].var_v)),
        color: "#1f4e9c".into(),
    }];
    if traj.has_var_p() {
        series.push(Series {
            label: "log10 Var_P".into(),
            points: log_points(&|k| traj.monitors[k].var_p),
            color: "#b3431b".into(),
        });
    }
    line_plot(title, "t", "log10 variance", &series)
}
