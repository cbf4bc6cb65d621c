//! Matching-line plot of an alignment: two timelines, one line per matched frame.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const MARGIN: f64 = 40.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 190.0;

fn x_of(i: usize, len: usize) -> f64 {
    if len <= 1 {
        return WIDTH / 2.0;
    }
    MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (len - 1) as f64
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Source frames on the upper timeline, target frames on the lower one; a
/// line joins source frame `i` to `nn[i]` for every `every`-th `i`.
pub fn matching_lines(source: &str, target: &str, nn: &[usize], target_len: usize, every: usize) -> String {
    let every = every.max(1);
    let mut s = String::new();
    let h = BOTTOM + 40.0;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{h}" viewBox="0 0 {WIDTH} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (y, label, len) in [(TOP, source, nn.len()), (BOTTOM, target, target_len)] {
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-width="2"/>"#,
            WIDTH - MARGIN
        );
        let ty = if y == TOP { y - 15.0 } else { y + 28.0 };
        let _ =
            writeln!(s, r#"<text x="{MARGIN}" y="{ty}" font-family="sans-serif" font-size="13">{} ({len} frames)</text>"#, escape(label));
        for i in 0..len {
            let x = x_of(i, len);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y}" r="2" fill="black"/>"#);
        }
    }
    for (i, &j) in nn.iter().enumerate().step_by(every) {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{BOTTOM}" stroke="steelblue" stroke-width="1" stroke-opacity="0.7"/>"#,
            x_of(i, nn.len()),
            x_of(j, target_len)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_per_sampled_frame() {
        let svg = matching_lines("a", "b", &[0, 1, 1, 3], 4, 1);
        assert_eq!(svg.matches("stroke=\"steelblue\"").count(), 4);
        let svg = matching_lines("a", "b", &[0, 1, 1, 3], 4, 3);
        assert_eq!(svg.matches("stroke=\"steelblue\"").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn labels_are_escaped() {
        assert!(matching_lines("a<b", "c&d", &[0], 1, 1).contains("a&lt;b"));
    }
}
