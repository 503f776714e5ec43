//! Hand-rolled SVG emission: stacked-area importance snapshots with an
//! attention overlay, and per-group attention line charts. Output is
//! deterministic byte-for-byte: fixed float precision, fixed palette,
//! fixed element order.

use std::fmt::Write as _;
use std::path::Path;

use super::InterpretationSnapshot;
use crate::error::{Error, Result};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#2d6a4f", "#e76f51", "#457b9d", "#b5838d", "#6d597a", "#f4a261", "#1d3557", "#90a955",
    "#bc4749", "#5e548e",
];

fn plot_w() -> f64 {
    WIDTH - MARGIN_L - MARGIN_R
}

fn plot_h() -> f64 {
    HEIGHT - MARGIN_T - MARGIN_B
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    )
}

fn axes(x_label: &str, y_label: &str, y2_label: Option<&str>) -> String {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        fmt(x0),
        fmt(y0),
        fmt(x1),
        fmt(y0)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        fmt(x0),
        fmt(y0),
        fmt(x0),
        fmt(y1)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\">{}</text>",
        fmt((x0 + x1) / 2.0),
        fmt(HEIGHT - 12.0),
        x_label
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 16 {})\">{}</text>",
        fmt((y0 + y1) / 2.0),
        fmt((y0 + y1) / 2.0),
        y_label
    );
    if let Some(label) = y2_label {
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            fmt(x1),
            fmt(y0),
            fmt(x1),
            fmt(y1)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#b8860b\" transform=\"rotate(90 {} {})\">{}</text>",
            fmt(x1 + 38.0),
            fmt((y0 + y1) / 2.0),
            fmt(x1 + 38.0),
            fmt((y0 + y1) / 2.0),
            label
        );
    }
    s
}

fn x_ticks(k: usize) -> String {
    let mut s = String::new();
    let n_ticks = 6.min(k);
    for i in 0..n_ticks {
        let idx = i * (k - 1) / (n_ticks - 1).max(1);
        let x = MARGIN_L + plot_w() * idx as f64 / (k - 1).max(1) as f64;
        let label = idx as i64 - k as i64;
        let y0 = HEIGHT - MARGIN_B;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            fmt(x),
            fmt(y0),
            fmt(x),
            fmt(y0 + 5.0)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333333\">{}</text>",
            fmt(x),
            fmt(y0 + 18.0),
            label
        );
    }
    s
}

fn legend_entry(s: &mut String, i: usize, color: &str, label: &str) {
    let x = WIDTH - MARGIN_R + 14.0;
    let y = MARGIN_T + 16.0 + 20.0 * i as f64;
    let _ = writeln!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
        fmt(x),
        fmt(y - 10.0),
        color
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#333333\">{}</text>",
        fmt(x + 18.0),
        fmt(y),
        xml_escape(label)
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacked-area chart of the selected features' importance over the
/// relative encoder index, with the attention curve overlaid on a secondary
/// axis. Exactly one `<polyline>` (the attention) and one area `<path>` per
/// selected feature.
pub fn render_snapshot_svg(
    snapshot: &InterpretationSnapshot,
    feature_names: &[String],
    selected: &[String],
    path: &Path,
) -> Result<()> {
    let k = snapshot.encoder_length();
    if k < 2 {
        return Err(Error::data("snapshot too short to render"));
    }
    let mut columns = Vec::with_capacity(selected.len());
    for name in selected {
        let col = feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::data(format!("selected feature `{name}` not in catalog")))?;
        columns.push(col);
    }

    // cumulative stack per index
    let mut cum = vec![vec![0.0; k]; selected.len() + 1];
    for (layer, &col) in columns.iter().enumerate() {
        for idx in 0..k {
            cum[layer + 1][idx] = cum[layer][idx] + snapshot.importance.at(idx, col);
        }
    }
    let imp_max = cum[selected.len()]
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let attn_max = snapshot.attention.iter().cloned().fold(0.0f64, f64::max).max(1e-9);

    let x_at = |idx: usize| MARGIN_L + plot_w() * idx as f64 / (k - 1) as f64;
    let y_imp = |v: f64| MARGIN_T + plot_h() * (1.0 - v / (imp_max * 1.05));
    let y_attn = |v: f64| MARGIN_T + plot_h() * (1.0 - v / (attn_max * 1.05));

    let mut svg = header();
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"14\" text-anchor=\"middle\" fill=\"#333333\">{} at {}</text>\n",
        fmt(WIDTH / 2.0),
        xml_escape(&snapshot.site_id),
        snapshot.origin
    ));
    svg.push_str(&axes(
        "hours before prediction",
        "feature importance",
        Some("attention"),
    ));
    svg.push_str(&x_ticks(k));

    for (layer, name) in selected.iter().enumerate() {
        let color = PALETTE[layer % PALETTE.len()];
        let mut d = String::from("M");
        for idx in 0..k {
            let _ = write!(d, " {} {}", fmt(x_at(idx)), fmt(y_imp(cum[layer][idx])));
        }
        for idx in (0..k).rev() {
            let _ = write!(d, " L {} {}", fmt(x_at(idx)), fmt(y_imp(cum[layer + 1][idx])));
        }
        d.push_str(" Z");
        let _ = writeln!(
            svg,
            "<path class=\"area\" d=\"{}\" fill=\"{}\" fill-opacity=\"0.8\" stroke=\"none\"><title>{}</title></path>",
            d,
            color,
            xml_escape(name)
        );
    }

    let points: Vec<String> = (0..k)
        .map(|idx| format!("{},{}", fmt(x_at(idx)), fmt(y_attn(snapshot.attention[idx]))))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#b8860b\" stroke-width=\"2.5\"/>",
        points.join(" ")
    );

    for (i, name) in selected.iter().enumerate() {
        legend_entry(&mut svg, i, PALETTE[i % PALETTE.len()], name);
    }
    legend_entry(&mut svg, selected.len(), "#b8860b", "attention");
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// One attention polyline per group over the relative encoder index, with a
/// legend. The y-range covers every curve value.
pub fn render_group_attention_svg(curves: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::data("no curves to render"));
    }
    let k = curves[0].1.len();
    if k < 2 || curves.iter().any(|(_, c)| c.len() != k) {
        return Err(Error::data("curves must share an encoder length of at least 2"));
    }
    let y_max = curves
        .iter()
        .flat_map(|(_, c)| c.iter().cloned())
        .fold(0.0f64, f64::max)
        .max(1e-9);

    let x_at = |idx: usize| MARGIN_L + plot_w() * idx as f64 / (k - 1) as f64;
    let y_at = |v: f64| MARGIN_T + plot_h() * (1.0 - v / (y_max * 1.05));

    let mut svg = header();
    svg.push_str(&axes("hours before prediction", "mean attention", None));
    svg.push_str(&x_ticks(k));
    for (i, (group, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = (0..k)
            .map(|idx| format!("{},{}", fmt(x_at(idx)), fmt(y_at(curve[idx]))))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"><title>{}</title></polyline>",
            points.join(" "),
            color,
            xml_escape(group)
        );
    }
    for (i, (group, _)) in curves.iter().enumerate() {
        legend_entry(&mut svg, i, PALETTE[i % PALETTE.len()], group);
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::timeutil::UtcHour;

    fn snapshot(k: usize, m: usize) -> InterpretationSnapshot {
        let mut attention: Vec<f64> = (0..k).map(|i| 1.0 + (i as f64 * 0.9).sin().abs()).collect();
        let total: f64 = attention.iter().sum();
        attention.iter_mut().for_each(|a| *a /= total);
        let mut importance = Tensor::zeros(&[k, m]);
        for idx in 0..k {
            for j in 0..m {
                importance.set(idx, j, 1.0 / m as f64);
            }
        }
        InterpretationSnapshot {
            site_id: "SYN-001".to_string(),
            origin: UtcHour::from_ymdh(2014, 7, 15, 12).unwrap(),
            attention,
            importance,
        }
    }

    // minimal well-formedness check: tags balance and attributes are quoted
    fn assert_well_formed(svg: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = svg;
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unclosed tag") + start;
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("stray closing </{name}>"));
                assert_eq!(open, name, "mismatched tag");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name: String = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
            // attribute quotes balance
            assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in <{tag}>");
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn snapshot_svg_structure() {
        let s = snapshot(12, 4);
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let selected = vec!["f0".to_string(), "f2".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.svg");
        render_snapshot_svg(&s, &names, &selected, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<path class=\"area\"").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("hours before prediction"));
    }

    #[test]
    fn empty_selection_gives_attention_only_figure() {
        let s = snapshot(8, 3);
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.svg");
        render_snapshot_svg(&s, &names, &[], &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("<path class=\"area\"").count(), 0);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn rendering_is_deterministic_and_unknown_feature_errors() {
        let s = snapshot(10, 3);
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        render_snapshot_svg(&s, &names, &[names[1].clone()], &p1).unwrap();
        render_snapshot_svg(&s, &names, &[names[1].clone()], &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(render_snapshot_svg(&s, &names, &["nope".to_string()], &p1).is_err());
    }

    #[test]
    fn group_attention_svg_one_polyline_per_group() {
        let curves = vec![
            ("GRA".to_string(), vec![0.1, 0.3, 0.2, 0.4]),
            ("OSH".to_string(), vec![0.2, 0.2, 0.3, 0.3]),
            ("WET".to_string(), vec![0.4, 0.1, 0.1, 0.4]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("groups.svg");
        render_group_attention_svg(&curves, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<polyline").count(), 3);
        // y-range contains all curve values: the max value maps inside the plot
        let y_top: f64 = MARGIN_T;
        let y_bottom: f64 = HEIGHT - MARGIN_B;
        for (_, curve) in &curves {
            for &v in curve {
                let y = MARGIN_T + plot_h() * (1.0 - v / (0.4 * 1.05));
                assert!(y >= y_top - 1e-9 && y <= y_bottom + 1e-9);
            }
        }
        // determinism
        let p2 = dir.path().join("groups2.svg");
        render_group_attention_svg(&curves, &p2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&p2).unwrap());
    }
}
