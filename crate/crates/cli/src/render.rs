//! Static SVG plots of fly trajectories and pen strokes.

use std::fmt::Write as _;

use besim_core::fly::Chamber;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Maps world coordinates (y up) onto a canvas `width` pixels wide.
#[derive(Clone, Copy, Debug)]
struct View {
    min_x: f64,
    max_y: f64,
    scale: f64,
    width: f64,
    height: f64,
}

impl View {
    fn fit(min: (f64, f64), max: (f64, f64), width: f64) -> View {
        let pad = 0.05 * (max.0 - min.0).max(max.1 - min.1).max(1e-9);
        let (min_x, min_y, max_x, max_y) = (min.0 - pad, min.1 - pad, max.0 + pad, max.1 + pad);
        let scale = width / (max_x - min_x);
        View {
            min_x,
            max_y,
            scale,
            width,
            height: ((max_y - min_y) * scale).ceil(),
        }
    }

    fn point(&self, (x, y): (f64, f64)) -> String {
        format!("{:.2},{:.2}", (x - self.min_x) * self.scale, (self.max_y - y) * self.scale)
    }

    fn points(&self, pts: &[(f64, f64)]) -> String {
        pts.iter().map(|&p| self.point(p)).collect::<Vec<_>>().join(" ")
    }
}

fn open(view: &View) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = view.width,
        h = view.height
    )
}

fn empty_canvas(width: f64) -> String {
    log::warn!("nothing to draw; writing an empty canvas");
    let view = View {
        min_x: 0.0,
        max_y: 0.0,
        scale: 1.0,
        width,
        height: width,
    };
    open(&view) + "</svg>\n"
}

/// One colored polyline per agent over the chamber outline.
pub fn fly_svg(tracks: &[(u64, Vec<(f64, f64)>)], chamber: &Chamber, width: f64) -> String {
    if tracks.iter().all(|(_, t)| t.is_empty()) {
        return empty_canvas(width);
    }
    let outline = chamber.outline(128);
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in outline.iter().chain(tracks.iter().flat_map(|(_, t)| t)) {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let view = View::fit(lo, hi, width);
    let mut s = open(&view);
    let _ = writeln!(
        s,
        "<polygon class=\"chamber\" points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>",
        view.points(&outline)
    );
    for (i, (id, t)) in tracks.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            "<polyline data-agent=\"{id}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>",
            view.points(t),
            PALETTE[i % PALETTE.len()]
        );
    }
    s + "</svg>\n"
}

/// Visible pen paths of `(dx, dy, z)` rows. The pen starts at the origin
/// and row `i` moves it by `(dx, dy)`; the move is drawn when `z` is 1.
/// Consecutive drawn moves form one path.
pub fn stroke_paths(rows: &[[f64; 3]]) -> (Vec<(f64, f64)>, Vec<Vec<(f64, f64)>>) {
    let mut pos = (0.0, 0.0);
    let mut all = vec![pos];
    let mut paths: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut drawing = false;
    for r in rows {
        let next = (pos.0 + r[0], pos.1 + r[1]);
        if r[2] >= 0.5 {
            if !drawing {
                paths.push(vec![pos]);
                drawing = true;
            }
            paths.last_mut().expect("open path").push(next);
        } else {
            drawing = false;
        }
        all.push(next);
        pos = next;
    }
    (all, paths)
}

pub fn strokes_svg(rows: &[[f64; 3]], width: f64) -> String {
    if rows.is_empty() {
        return empty_canvas(width);
    }
    let (all, paths) = stroke_paths(rows);
    let lo = all.iter().fold((f64::INFINITY, f64::INFINITY), |a, p| (a.0.min(p.0), a.1.min(p.1)));
    let hi = all
        .iter()
        .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| (a.0.max(p.0), a.1.max(p.1)));
    let view = View::fit(lo, hi, width);
    let mut s = open(&view);
    for p in &paths {
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" stroke-linecap=\"round\"/>",
            view.points(p)
        );
    }
    s + "</svg>\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                pts.split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn invisible_strokes_draw_nothing() {
        let rows = vec![[1.0, 2.0, 0.0]; 20];
        assert!(polylines(&strokes_svg(&rows, 400.0)).is_empty());
    }

    #[test]
    fn straight_track_gives_one_polyline_with_its_endpoints() {
        let track: Vec<(f64, f64)> = (0..=10).map(|i| (-20.0 + 4.0 * i as f64, 10.0)).collect();
        let chamber = Chamber::Rect {
            width: 100.0,
            height: 100.0,
        };
        let svg = fly_svg(&[(0, track)], &chamber, 500.0);
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        // Canvas spans [-55, 55] in both axes at 500/110 px per mm.
        let k = 500.0 / 110.0;
        let (first, last) = (lines[0][0], *lines[0].last().unwrap());
        assert!((first.0 - 35.0 * k).abs() < 0.01 && (first.1 - 45.0 * k).abs() < 0.01);
        assert!((last.0 - 75.0 * k).abs() < 0.01 && (last.1 - 45.0 * k).abs() < 0.01);
    }

    #[test]
    fn empty_input_is_an_empty_canvas() {
        let svg = strokes_svg(&[], 300.0);
        assert!(svg.starts_with("<svg") && polylines(&svg).is_empty());
        assert!(polylines(&fly_svg(&[], &Chamber::default(), 300.0)).is_empty());
    }

    proptest! {
        #[test]
        fn one_path_per_visible_run(zs in proptest::collection::vec(any::<bool>(), 0..60)) {
            let rows: Vec<[f64; 3]> = zs
                .iter()
                .enumerate()
                .map(|(i, &z)| [1.0, (i % 3) as f64 - 1.0, z as u8 as f64])
                .collect();
            let runs = zs.iter().enumerate().filter(|&(i, &z)| z && (i == 0 || !zs[i - 1])).count();
            let svg = strokes_svg(&rows, 300.0);
            prop_assert_eq!(polylines(&svg).len(), runs);
            prop_assert_eq!(svg.clone(), strokes_svg(&rows, 300.0));
            let (_, paths) = stroke_paths(&rows);
            let drawn: usize = paths.iter().map(|p| p.len() - 1).sum();
            prop_assert_eq!(drawn, zs.iter().filter(|&&z| z).count());
        }
    }
}
