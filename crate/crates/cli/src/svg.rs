//! Static scatter plots: real data in gray, one color per component, and
//! large outlined markers for the component-mean generations.

use std::fmt::Write as _;

use slogan_core::numerics::Mat;

const SIZE: f64 = 600.0;
const PAD: f64 = 20.0;
/// Real points beyond this are thinned by striding.
const MAX_REAL: usize = 5000;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub struct Scatter<'a> {
    pub real: Option<&'a Mat>,
    /// Generated samples per component.
    pub components: &'a [Mat],
    /// `G(μ_c)` rows, drawn last.
    pub means: Option<&'a Mat>,
}

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit<'a>(mats: impl Iterator<Item = &'a Mat>) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in mats {
            for i in 0..m.rows() {
                for j in 0..2 {
                    let v = m.get(i, j);
                    if v.is_finite() {
                        lo[j] = lo[j].min(v);
                        hi[j] = hi[j].max(v);
                    }
                }
            }
        }
        if !lo[0].is_finite() {
            return Frame { lo: [-1.0, -1.0], scale: (SIZE - 2.0 * PAD) / 2.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        Frame { lo, scale: (SIZE - 2.0 * PAD) / span }
    }

    fn xy(&self, p: &[f64]) -> (f64, f64) {
        (PAD + (p[0] - self.lo[0]) * self.scale, SIZE - PAD - (p[1] - self.lo[1]) * self.scale)
    }
}

/// Renders the plot. Only the first two columns are drawn.
pub fn scatter(plot: &Scatter) -> String {
    let all = plot.real.into_iter().chain(plot.components.iter()).chain(plot.means).filter(|m| m.cols() >= 2);
    let frame = Frame::fit(all);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut dots = |m: &Mat, stride: usize, r: f64, fill: &str, opacity: f64| {
        let _ = writeln!(s, r#"<g fill="{fill}" fill-opacity="{opacity}">"#);
        for i in (0..m.rows()).step_by(stride.max(1)) {
            let (x, y) = frame.xy(m.row(i));
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}"/>"#);
            }
        }
        let _ = writeln!(s, "</g>");
    };
    if let Some(real) = plot.real.filter(|m| m.cols() >= 2) {
        dots(real, real.rows().div_ceil(MAX_REAL), 1.5, "#b0b0b0", 0.5);
    }
    for (c, m) in plot.components.iter().enumerate().filter(|(_, m)| m.cols() >= 2) {
        dots(m, 1, 2.0, PALETTE[c % PALETTE.len()], 0.7);
    }
    if let Some(means) = plot.means.filter(|m| m.cols() >= 2) {
        for i in 0..means.rows() {
            let (x, y) = frame.xy(means.row(i));
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="7" fill="{}" stroke="black" stroke-width="2.5"/>"#,
                    PALETTE[i % PALETTE.len()]
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
