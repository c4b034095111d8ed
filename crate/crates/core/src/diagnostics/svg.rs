use std::fmt::Write as _;

use super::landscape::LandscapeSlice;

const SIZE: f64 = 400.0;
const PAD: f64 = 40.0;

/// Standalone SVG: a polyline for 1-D slices, a heatmap for 2-D ones.
pub(crate) fn render(slice: &LandscapeSlice) -> String {
    let finite: Vec<f64> = slice.losses.iter().flatten().copied().collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = slice.grid.len();
    let total = SIZE + 2.0 * PAD;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let x_of = |i: usize| PAD + SIZE * i as f64 / (n.max(2) - 1) as f64;
    if slice.dims() == 1 {
        let mut points = String::new();
        for (i, l) in slice.losses.iter().enumerate() {
            if let Some(l) = l {
                let y = PAD + SIZE * (1.0 - (l - lo) / span);
                let _ = write!(points, "{:.2},{:.2} ", x_of(i), y);
            }
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            points.trim_end()
        );
    } else {
        let cell = SIZE / n as f64;
        for i in 0..n {
            for j in 0..n {
                let fill = match slice.at(i, j) {
                    Some(l) => {
                        let t = (l - lo) / span;
                        let r = (255.0 * t).round() as u8;
                        let b = (255.0 * (1.0 - t)).round() as u8;
                        format!("rgb({r},64,{b})")
                    }
                    None => "gray".to_string(),
                };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    PAD + cell * i as f64,
                    PAD + cell * (n - 1 - j) as f64,
                    cell,
                    cell
                );
            }
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{:.0}" font-family="sans-serif" font-size="12">loss {lo:.4} .. {hi:.4}, scale {}</text>"#,
        PAD / 2.0,
        slice.scale
    );
    out.push_str("</svg>\n");
    out
}
