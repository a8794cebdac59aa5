//! Sweep results: CSV persistence and SVG convergence plots.
//!
//! The CSV schema is frozen; tools downstream key on the exact header. Plots
//! are written directly as SVG (log-linear axes: data size against error) with
//! one series per seed, the per-budget median, and a fitted theory overlay.

use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("csv line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("csv line {line}, column `{column}`: cannot parse `{value}`")]
    Parse { line: usize, column: &'static str, value: String },
    #[error("no rows")]
    Empty,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "N_train",
    "budget",
    "L",
    "err_hs_rel",
    "err_op_rel",
    "sampled_err",
    "gamma_hat",
    "seed",
    "wall_time",
    "note",
];

/// One sweep point. Unavailable metrics are NaN (written as `nan`); `note`
/// is empty on success and carries the error text when a run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_train: u64,
    pub budget: f64,
    pub levels: usize,
    pub err_hs_rel: f64,
    pub err_op_rel: f64,
    pub sampled_err: f64,
    pub gamma_hat: f64,
    pub seed: u64,
    pub wall_time: f64,
    pub note: String,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

fn sanitize_note(note: &str) -> String {
    note.chars().map(|c| if c == ',' || c == '\n' || c == '\r' { ';' } else { c }).collect()
}

pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n_train,
            fmt_f64(r.budget),
            r.levels,
            fmt_f64(r.err_hs_rel),
            fmt_f64(r.err_op_rel),
            fmt_f64(r.sampled_err),
            fmt_f64(r.gamma_hat),
            r.seed,
            fmt_f64(r.wall_time),
            sanitize_note(&r.note),
        );
    }
    out
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRow>, ReportError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let expected = CSV_COLUMNS.join(",");
    if header.trim_end() != expected {
        return Err(ReportError::HeaderMismatch { expected, found: header.to_string() });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(CSV_COLUMNS.len(), ',').collect();
        if fields.len() != CSV_COLUMNS.len() {
            return Err(ReportError::FieldCount {
                line: line_no,
                expected: CSV_COLUMNS.len(),
                found: fields.len(),
            });
        }
        fn parse<T: std::str::FromStr>(
            line: usize,
            column: &'static str,
            value: &str,
        ) -> Result<T, ReportError> {
            value
                .trim()
                .parse()
                .map_err(|_| ReportError::Parse { line, column, value: value.to_string() })
        }
        rows.push(SweepRow {
            n_train: parse(line_no, "N_train", fields[0])?,
            budget: parse(line_no, "budget", fields[1])?,
            levels: parse(line_no, "L", fields[2])?,
            err_hs_rel: parse(line_no, "err_hs_rel", fields[3])?,
            err_op_rel: parse(line_no, "err_op_rel", fields[4])?,
            sampled_err: parse(line_no, "sampled_err", fields[5])?,
            gamma_hat: parse(line_no, "gamma_hat", fields[6])?,
            seed: parse(line_no, "seed", fields[7])?,
            wall_time: parse(line_no, "wall_time", fields[8])?,
            note: fields[9].to_string(),
        });
    }
    Ok(rows)
}

/// Per-budget medians of the finite error rows, ordered by budget.
pub fn median_by_budget(rows: &[SweepRow]) -> Vec<(f64, u64, f64)> {
    let mut budgets: Vec<f64> = rows
        .iter()
        .filter(|r| r.note.is_empty() && r.err_hs_rel.is_finite())
        .map(|r| r.budget)
        .collect();
    budgets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    budgets.dedup();
    budgets
        .iter()
        .map(|&b| {
            let mut errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.budget == b && r.note.is_empty() && r.err_hs_rel.is_finite())
                .map(|r| r.err_hs_rel)
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ns: Vec<u64> = rows.iter().filter(|r| r.budget == b).map(|r| r.n_train).collect();
            ns.sort_unstable();
            (b, ns[ns.len() / 2], errs[errs.len() / 2])
        })
        .collect()
}

/// Fit the overlay constant: median of `N / shape(err, gamma)` over rows where
/// the shape is defined. Returns the constant and the gamma used.
pub fn fit_theory_constant(rows: &[SweepRow]) -> Option<(f64, f64)> {
    let gammas: Vec<f64> = rows
        .iter()
        .filter(|r| r.gamma_hat.is_finite() && r.gamma_hat > 0.0 && r.gamma_hat <= 1.0)
        .map(|r| r.gamma_hat)
        .collect();
    let gamma = if gammas.is_empty() {
        1.0
    } else {
        let mut g = gammas;
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        g[g.len() / 2]
    };
    let mut ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.note.is_empty())
        .filter_map(|r| {
            let shape = crate::theory::n_theory(r.err_hs_rel, gamma, 1.0).ok()?;
            Some(r.n_train as f64 / shape)
        })
        .collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some((ratios[ratios.len() / 2], gamma))
}

const PLOT_W: f64 = 800.0;
const PLOT_H: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] =
    ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c", "#dc7ec0", "#82c6e2"];

/// Render the convergence plot: x = training pairs (linear), y = relative
/// error (log). One polyline per seed, the per-budget median in black, and the
/// fitted theory curve dashed.
pub fn render_sweep_svg(rows: &[SweepRow]) -> Result<String, ReportError> {
    let usable: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.note.is_empty() && r.err_hs_rel.is_finite() && r.err_hs_rel > 0.0)
        .collect();
    if usable.is_empty() {
        return Err(ReportError::Empty);
    }
    let x_min = usable.iter().map(|r| r.n_train).min().unwrap() as f64;
    let x_max = usable.iter().map(|r| r.n_train).max().unwrap() as f64;
    let x_span = (x_max - x_min).max(1.0);
    let (x_lo, x_hi) = (x_min - 0.05 * x_span, x_max + 0.05 * x_span);
    let y_min_log = usable.iter().map(|r| r.err_hs_rel.log10()).fold(f64::INFINITY, f64::min);
    let y_max_log = usable.iter().map(|r| r.err_hs_rel.log10()).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = (y_min_log.floor() - 0.2, y_max_log.ceil() + 0.2);

    let to_x = |n: f64| MARGIN_L + (n - x_lo) / (x_hi - x_lo) * (PLOT_W - MARGIN_L - MARGIN_R);
    let to_y =
        |e: f64| PLOT_H - MARGIN_B - (e.log10() - y_lo) / (y_hi - y_lo) * (PLOT_H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">relative error vs training pairs</text>"#,
        PLOT_W / 2.0
    );

    // axes
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        PLOT_H - MARGIN_B,
        PLOT_W - MARGIN_R,
        PLOT_H - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.1}" stroke="black"/>"#,
        PLOT_H - MARGIN_B
    );
    // x ticks
    for i in 0..=4 {
        let n = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let x = to_x(n);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            PLOT_H - MARGIN_B,
            PLOT_H - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.0}</text>"#,
            PLOT_H - MARGIN_B + 18.0,
            n
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">training pairs N</text>"#,
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 12.0
    );
    // y ticks per decade
    let mut dec = y_lo.ceil() as i64;
    while (dec as f64) <= y_hi {
        let y = to_y(10f64.powi(dec as i32));
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{MARGIN_L}" y2="{y:.1}" stroke="black"/>"#,
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">1e{dec}</text>"#,
            MARGIN_L - 8.0,
            y + 4.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            PLOT_W - MARGIN_R
        );
        dec += 1;
    }
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">err_hs_rel</text>"#,
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0
    );

    // per-seed series
    let mut seeds: Vec<u64> = usable.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for (si, &seed) in seeds.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = usable
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| (r.n_train as f64, r.err_hs_rel))
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if pts.len() >= 2 {
            let path: Vec<String> =
                pts.iter().map(|&(n, e)| format!("{:.1},{:.1}", to_x(n), to_y(e))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" opacity="0.55"/>"#,
                path.join(" ")
            );
        }
        for &(n, e) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                to_x(n),
                to_y(e)
            );
        }
    }

    // median series
    let med: Vec<(f64, u64, f64)> = median_by_budget(rows);
    if med.len() >= 2 {
        let path: Vec<String> =
            med.iter().map(|&(_, n, e)| format!("{:.1},{:.1}", to_x(n as f64), to_y(e))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
            path.join(" ")
        );
    }

    // theory overlay: parametrized by accuracy, x = C0 * shape(eps, gamma)
    if let Some((c0, gamma)) = fit_theory_constant(rows) {
        let e_lo = usable.iter().map(|r| r.err_hs_rel).fold(f64::INFINITY, f64::min);
        let e_hi = usable
            .iter()
            .map(|r| r.err_hs_rel)
            .fold(0.0f64, f64::max)
            .min(0.9 * (-1.0f64).exp());
        if e_lo < e_hi {
            let mut pts = Vec::new();
            for i in 0..=60 {
                let t = i as f64 / 60.0;
                let eps = e_lo * (e_hi / e_lo).powf(t);
                if let Ok(shape) = crate::theory::n_theory(eps, gamma, c0) {
                    if shape >= x_lo && shape <= x_hi {
                        pts.push(format!("{:.1},{:.1}", to_x(shape), to_y(eps)));
                    }
                }
            }
            if pts.len() >= 2 {
                let _ = writeln!(
                    svg,
                    r##"<polyline points="{}" fill="none" stroke="#666666" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
                    pts.join(" ")
                );
                let _ = writeln!(
                    svg,
                    r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="#666666">theory shape (fitted C0={c0:.3e})</text>"##,
                    MARGIN_L + 10.0,
                    MARGIN_T + 14.0
                );
            }
        }
    }

    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}
