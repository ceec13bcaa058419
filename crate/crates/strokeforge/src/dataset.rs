//! QuickDraw NDJSON ingestion and the on-disk sketch store.
//!
//! The store is a directory with `train.jsonl`, `test.jsonl`,
//! `validation.jsonl` (one `{"id", "points"}` object per line, offsets
//! already normalized) and a `manifest.json`.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use strokeforge_core::stroke::{split_dataset, DatasetSplit, PenState, SplitSizes, StrokeSequence};

use crate::error::InputError;

pub const MANIFEST: &str = "manifest.json";
pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "test.jsonl", "validation.jsonl"];

#[derive(Deserialize)]
struct QuickDrawLine {
    #[serde(default)]
    key_id: Option<serde_json::Value>,
    drawing: Vec<Vec<Vec<f64>>>,
}

/// Outcome of parsing one NDJSON file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    pub sequences: Vec<StrokeSequence>,
    pub malformed_lines: usize,
    pub empty_drawings: usize,
    pub too_long: usize,
    pub duplicate_ids: usize,
}

fn polylines(drawing: &[Vec<Vec<f64>>]) -> Option<Vec<Vec<(f32, f32)>>> {
    drawing
        .iter()
        .map(|stroke| {
            // [xs, ys] or [xs, ys, timestamps]
            if stroke.len() < 2 || stroke[0].len() != stroke[1].len() {
                return None;
            }
            Some(stroke[0].iter().zip(&stroke[1]).map(|(&x, &y)| (x as f32, y as f32)).collect())
        })
        .collect()
}

/// Parse QuickDraw `drawing` arrays of absolute polylines into stroke-5
/// sequences. Blank lines are ignored; anything else that does not parse is
/// counted and skipped, as are empty drawings and sketches longer than `s_max`.
pub fn parse_ndjson_str(text: &str, s_max: usize) -> ParseReport {
    let mut report = ParseReport::default();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Ok(rec) = serde_json::from_str::<QuickDrawLine>(line) else {
            report.malformed_lines += 1;
            continue;
        };
        let Some(strokes) = polylines(&rec.drawing) else {
            report.malformed_lines += 1;
            continue;
        };
        if strokes.iter().any(|s| s.iter().any(|(x, y)| !x.is_finite() || !y.is_finite())) {
            report.malformed_lines += 1;
            continue;
        }
        let id = match rec.key_id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(v)) => v.to_string(),
            _ => format!("line-{}", n + 1),
        };
        let Ok(seq) = StrokeSequence::from_polylines(id, &strokes) else {
            report.empty_drawings += 1;
            continue;
        };
        if seq.len() > s_max {
            report.too_long += 1;
            continue;
        }
        if !seen.insert(seq.source_id.clone()) {
            report.duplicate_ids += 1;
            continue;
        }
        report.sequences.push(seq);
    }
    report
}

pub fn parse_ndjson(path: &Path, s_max: usize) -> anyhow::Result<ParseReport> {
    let text = read_input(path)?;
    Ok(parse_ndjson_str(&text, s_max))
}

/// One QuickDraw-style NDJSON line (`key_id`, `word`, `drawing`) for a sketch,
/// with absolute coordinates recovered by cumulative sum.
pub fn to_quickdraw_line(seq: &StrokeSequence, word: &str) -> String {
    let mut drawing: Vec<[Vec<f64>; 2]> = Vec::new();
    let mut current = [Vec::new(), Vec::new()];
    for p in seq.to_absolute() {
        current[0].push(p.x);
        current[1].push(p.y);
        if p.pen != PenState::Down {
            drawing.push(std::mem::take(&mut current));
        }
    }
    if !current[0].is_empty() {
        drawing.push(current);
    }
    serde_json::json!({ "key_id": seq.source_id, "word": word, "drawing": drawing }).to_string()
}

pub(crate) fn read_input(path: &Path) -> anyhow::Result<String> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(InputError::Missing { path: path.to_path_buf() }.into())
        }
        Err(e) => Err(InputError::bad_file(path, e).into()),
    }
}

pub fn write_jsonl(path: &Path, seqs: &[StrokeSequence]) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `{"id", "points"}` per line file. Every point must be a valid
/// one-hot stroke-5 vector.
pub fn read_jsonl(path: &Path) -> anyhow::Result<Vec<StrokeSequence>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(InputError::Missing { path: path.to_path_buf() }.into())
        }
        Err(e) => return Err(e).with_context(|| format!("opening {}", path.display())),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: StrokeSequence = serde_json::from_str(&line)
            .map_err(|e| InputError::bad_file(path, format!("line {}: {e}", n + 1)))?;
        out.push(seq);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: PathBuf,
    pub s_max: usize,
    pub seed: u64,
    pub offset_scale: f32,
    pub splits: SplitSizes,
    pub parsed: usize,
    pub malformed_lines: usize,
    pub empty_drawings: usize,
    pub too_long: usize,
    pub duplicate_ids: usize,
}

/// Parse, split, normalize and write a store under `out`.
pub fn ingest(input: &Path, out: &Path, s_max: usize, sizes: SplitSizes, seed: u64) -> anyhow::Result<Manifest> {
    let report = parse_ndjson(input, s_max)?;
    if report.sequences.is_empty() {
        return Err(InputError::NoSketches {
            path: input.to_path_buf(),
            malformed: report.malformed_lines,
            empty: report.empty_drawings,
            too_long: report.too_long,
        }
        .into());
    }
    let split = split_dataset(&report.sequences, sizes, seed).map_err(|e| InputError::bad_file(input, e))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, seqs) in SPLIT_FILES.iter().zip([&split.train, &split.test, &split.validation]) {
        write_jsonl(&out.join(name), seqs)?;
    }
    let manifest = Manifest {
        source: input.to_path_buf(),
        s_max,
        seed,
        offset_scale: split.offset_scale,
        splits: sizes,
        parsed: report.sequences.len(),
        malformed_lines: report.malformed_lines,
        empty_drawings: report.empty_drawings,
        too_long: report.too_long,
        duplicate_ids: report.duplicate_ids,
    };
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = read_input(&path)?;
    Ok(serde_json::from_str(&text).map_err(|e| InputError::bad_file(&path, e))?)
}

/// Load a store written by [`ingest`].
pub fn load_store(dir: &Path) -> anyhow::Result<(DatasetSplit, Manifest)> {
    let manifest = read_manifest(dir)?;
    let [train, test, validation] = SPLIT_FILES.map(|f| read_jsonl(&dir.join(f)));
    let split = DatasetSplit { train: train?, test: test?, validation: validation?, offset_scale: manifest.offset_scale };
    Ok((split, manifest))
}
