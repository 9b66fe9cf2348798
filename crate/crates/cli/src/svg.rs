//! Static SVG line plots; just enough for reference-versus-actual figures.

use std::fmt::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

/// Filled circle drawn under the series (obstacles).
#[derive(Clone, Copy, Debug)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
    pub discs: Vec<Disc>,
    /// Same scale on both axes.
    pub equal_aspect: bool,
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 50.0;

#[derive(Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn span(&self) -> f64 {
        self.hi - self.lo
    }

    fn padded(lo: f64, hi: f64) -> Self {
        if !(lo.is_finite() && hi.is_finite()) {
            return Range { lo: 0.0, hi: 1.0 };
        }
        let span = hi - lo;
        let pad = if span > 0.0 {
            0.05 * span
        } else {
            0.5f64.max(lo.abs() * 0.05)
        };
        Range {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn widen_to(&mut self, span: f64) {
        let mid = 0.5 * (self.lo + self.hi);
        self.lo = mid - 0.5 * span;
        self.hi = mid + 0.5 * span;
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    step * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    let s = format!("{v:.decimals$}");
    if s.starts_with("-") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, panel: &Panel, y_offset: f64) {
    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in panel.series.iter().flat_map(|s| s.points.iter()) {
        xlo = xlo.min(*x);
        xhi = xhi.max(*x);
        ylo = ylo.min(*y);
        yhi = yhi.max(*y);
    }
    for d in &panel.discs {
        xlo = xlo.min(d.cx - d.r);
        xhi = xhi.max(d.cx + d.r);
        ylo = ylo.min(d.cy - d.r);
        yhi = yhi.max(d.cy + d.r);
    }
    let mut xr = Range::padded(xlo, xhi);
    let mut yr = Range::padded(ylo, yhi);
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    if panel.equal_aspect {
        let per_px = (xr.span() / pw).max(yr.span() / ph);
        xr.widen_to(per_px * pw);
        yr.widen_to(per_px * ph);
    }
    let top = y_offset + MARGIN_T;
    let sx = |x: f64| MARGIN_L + (x - xr.lo) / xr.span() * pw;
    let sy = |y: f64| top + ph - (y - yr.lo) / yr.span() * ph;

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_L + pw / 2.0,
        y_offset + 22.0,
        escape(panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L:.1}" y="{top:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##
    );

    for (range, vertical) in [(xr, true), (yr, false)] {
        let step = nice_step(range.span());
        let mut v = (range.lo / step).ceil() * step;
        while v <= range.hi + 1e-9 * step {
            let label = fmt_tick(v, step);
            if vertical {
                let x = sx(v);
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.1}" y1="{top:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{label}</text>"##,
                    top + ph,
                    top + ph + 16.0
                );
            } else {
                let y = sy(v);
                let _ = writeln!(
                    out,
                    r##"<line x1="{MARGIN_L:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{label}</text>"##,
                    MARGIN_L + pw,
                    MARGIN_L - 6.0,
                    y + 4.0
                );
            }
            v += step;
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        MARGIN_L + pw / 2.0,
        top + ph + 38.0,
        escape(panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(panel.y_label)
    );

    for d in &panel.discs {
        let _ = writeln!(
            out,
            r##"<ellipse cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" fill="#aaa"/>"##,
            sx(d.cx),
            sy(d.cy),
            d.r / xr.span() * pw,
            d.r / yr.span() * ph
        );
    }
    for s in &panel.series {
        if s.points.is_empty() {
            continue;
        }
        let mut pts = String::with_capacity(s.points.len() * 16);
        for (x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.6"{dash} points="{}"/>"#,
            s.color,
            pts.trim_end()
        );
    }
    for (i, s) in panel.series.iter().enumerate() {
        let y = top + 14.0 + 16.0 * i as f64;
        let x = MARGIN_L + pw - 150.0;
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            x + 24.0,
            s.color,
            x + 30.0,
            y + 4.0,
            escape(s.label)
        );
    }
}

/// Renders panels stacked vertically into one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W:.0}" height="{height:.0}" viewBox="0 0 {PANEL_W:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    out
}
