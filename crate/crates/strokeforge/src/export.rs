//! SVG and PNG exports of sketches, rasters and embeddings.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use strokeforge_core::raster::{absolute_points, RasterImage};
use strokeforge_core::stroke::{PenState, StrokeSequence};
use strokeforge_core::tsne::{mean_pairwise_distance, EmbeddingRun};

const STROKE_WIDTH: f64 = 2.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Pen-down runs of a sketch in absolute (denormalized) coordinates. A run
/// starts at any point whose predecessor lifted the pen and ends at the next
/// point that lifts it.
pub fn pen_runs(seq: &StrokeSequence, offset_scale: f32) -> Vec<Vec<(f64, f64)>> {
    let mut runs = Vec::new();
    let mut current = Vec::new();
    for p in absolute_points(seq, offset_scale) {
        current.push((p.x, p.y));
        if p.pen != PenState::Down {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

fn bounds(runs: &[Vec<(f64, f64)>]) -> (f64, f64, f64, f64) {
    let pts = runs.iter().flatten();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 0.0, 1.0, 1.0);
    }
    (x0, y0, x1, y1)
}

fn polylines(s: &mut String, runs: &[Vec<(f64, f64)>]) {
    for run in runs {
        s.push_str("<polyline points=\"");
        for (i, (x, y)) in run.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x:.3},{y:.3}");
        }
        s.push_str("\"/>\n");
    }
}

fn view_box(runs: &[Vec<(f64, f64)>]) -> (f64, f64, f64, f64) {
    let (x0, y0, x1, y1) = bounds(runs);
    let pad = STROKE_WIDTH;
    (x0 - pad, y0 - pad, (x1 - x0) + 2.0 * pad, (y1 - y0) + 2.0 * pad)
}

/// One polyline per pen-down run, stroke width 2, viewBox fitted to the
/// sketch's bounding box.
pub fn sketch_svg(seq: &StrokeSequence, offset_scale: f32) -> String {
    let runs = pen_runs(seq, offset_scale);
    let (x, y, w, h) = view_box(&runs);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{x:.3} {y:.3} {w:.3} {h:.3}\">\n\
         <g fill=\"none\" stroke=\"black\" stroke-width=\"{STROKE_WIDTH}\" stroke-linecap=\"round\" stroke-linejoin=\"round\">\n"
    );
    polylines(&mut s, &runs);
    s.push_str("</g>\n</svg>\n");
    s
}

/// Sketches laid out on a grid of `columns`, each in its own fitted cell.
pub fn grid_svg(seqs: &[StrokeSequence], offset_scale: f32, columns: usize) -> String {
    let cell = 100.0;
    let columns = columns.max(1);
    let rows = seqs.len().div_ceil(columns).max(1);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        cell * columns as f64,
        cell * rows as f64
    );
    for (i, seq) in seqs.iter().enumerate() {
        let runs = pen_runs(seq, offset_scale);
        let (x, y, w, h) = view_box(&runs);
        let _ = writeln!(
            s,
            "<svg x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" viewBox=\"{x:.3} {y:.3} {w:.3} {h:.3}\">\n\
             <g fill=\"none\" stroke=\"black\" stroke-width=\"{STROKE_WIDTH}\" vector-effect=\"non-scaling-stroke\">",
            cell * (i % columns) as f64,
            cell * (i / columns) as f64,
        );
        polylines(&mut s, &runs);
        s.push_str("</g>\n</svg>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot of a 2-D embedding, one color per label, with a legend.
/// `labels[i]` indexes `names`.
pub fn scatter_svg(points: &[[f64; 2]], labels: &[usize], names: &[String]) -> String {
    let size = 600.0;
    let margin = 20.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let map = |v: f64, lo: f64| margin + (v - lo) / span * (size - 2.0 * margin);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {size} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        size + 20.0 * names.len() as f64
    );
    for (p, &l) in points.iter().zip(labels) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            map(p[0], x0),
            map(p[1], y0),
            PALETTE[l % PALETTE.len()]
        );
    }
    for (i, name) in names.iter().enumerate() {
        let y = size + 20.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            "<circle cx=\"{margin}\" cy=\"{y}\" r=\"5\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>",
            PALETTE[i % PALETTE.len()],
            margin + 10.0,
            y + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpread {
    pub label: String,
    pub count: usize,
    /// Mean pairwise distance in the embedding; `None` below two points.
    pub mean_pairwise_distance: Option<f64>,
}

/// Per-label concentration of an embedding: smaller spread means the
/// population is more concentrated.
pub fn concentration(run: &EmbeddingRun, labels: &[usize], names: &[String]) -> Vec<ClassSpread> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| ClassSpread {
            label: name.clone(),
            count: labels.iter().filter(|&&l| l == i).count(),
            mean_pairwise_distance: mean_pairwise_distance(&run.points, labels, i),
        })
        .collect()
}

/// Grayscale PNG with ink black on white.
pub fn write_png(path: &Path, image: &RasterImage) -> anyhow::Result<()> {
    let size = image.size() as u32;
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, size, size);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header()?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| (255.0 * (1.0 - v)).round() as u8).collect();
    w.write_image_data(&bytes)?;
    w.finish()?;
    Ok(())
}
