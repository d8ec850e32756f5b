//! Static scatter of success rate against per-plan latency, one panel per
//! environment, sweep points as circles and the reference as a diamond.

use std::fmt::Write as _;

use super::AggregateRow;
use crate::env::EnvId;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;

pub fn pareto_svg(rows: &[AggregateRow], reference: &str, sweep: &str) -> String {
    let envs: Vec<EnvId> = EnvId::ALL.into_iter().filter(|e| rows.iter().any(|r| r.env == *e)).collect();
    let timed: Vec<&AggregateRow> = rows.iter().filter(|r| r.ms_per_plan.is_some_and(|m| m > 0.0)).collect();
    let (lo, hi) = timed
        .iter()
        .map(|r| r.ms_per_plan.unwrap().log10())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo.is_finite() { (lo.floor(), hi.ceil().max(lo.floor() + 1.0)) } else { (0.0, 1.0) };
    let width = PANEL_W * envs.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" font-family="sans-serif" font-size="11">"#);
    for (i, env) in envs.iter().enumerate() {
        let x0 = i as f64 * PANEL_W + MARGIN;
        let (pw, ph) = (PANEL_W - MARGIN - 12.0, PANEL_H - 2.0 * MARGIN);
        let y0 = MARGIN;
        let px = |ms: f64| x0 + (ms.log10() - lo) / (hi - lo) * pw;
        let py = |succ: f64| y0 + (1.0 - succ / 100.0) * ph;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#, x0 + pw / 2.0, y0 - 14.0, env.name());
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for d in (lo as i64)..=(hi as i64) {
            let x = px(10f64.powi(d as i32));
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">1e{d}</text>"#, y0 + ph + 14.0);
        }
        for pct in [0, 50, 100] {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{pct}</text>"#, x0 - 4.0, py(pct as f64) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">ms / plan</text>"#, x0 + pw / 2.0, y0 + ph + 30.0);
        for r in timed.iter().filter(|r| r.env == *env) {
            let (x, y) = (px(r.ms_per_plan.unwrap()), py(r.success_rate));
            if r.method == reference {
                let _ = writeln!(s, r#"<path d="M {x} {} L {} {y} L {x} {} L {} {y} Z" fill="crimson"><title>{} {:.1}%</title></path>"#, y - 7.0, x + 7.0, y + 7.0, x - 7.0, r.method, r.success_rate);
            } else if r.method == sweep {
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="4" fill="steelblue"><title>{} {} {:.1}%</title></circle>"#, r.method, r.variant, r.success_rate);
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
