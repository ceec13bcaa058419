//! Stroke-5 sketches: `(dx, dy, p1, p2, p3)` offsets with a one-hot pen state.
//!
//! A point's pen state describes what happens *after* the pen reaches it:
//! `p1` the pen stays down and draws to the next point, `p2` the pen lifts
//! (the current stroke ends), `p3` the sketch ends.
//!
//! The first point of a sequence is an offset from the origin, so absolute
//! coordinates are plain prefix sums and converting back is exact whenever
//! the offsets are integers.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::{seeded_rng, Error, Result};

/// Default cap on sequence length.
pub const DEFAULT_S_MAX: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenState {
    /// `p1`: keep drawing to the next point.
    Down,
    /// `p2`: lift the pen, the current stroke ends here.
    Lift,
    /// `p3`: the sketch ends here.
    End,
}

impl PenState {
    pub fn index(self) -> usize {
        match self {
            PenState::Down => 0,
            PenState::Lift => 1,
            PenState::End => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(PenState::Down),
            1 => Some(PenState::Lift),
            2 => Some(PenState::End),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stroke5Point {
    pub dx: f32,
    pub dy: f32,
    pub pen: PenState,
}

impl Stroke5Point {
    /// Decoder start token `(0, 0, 1, 0, 0)`.
    pub const START: Stroke5Point = Stroke5Point { dx: 0.0, dy: 0.0, pen: PenState::Down };
    /// Padding after the end of a sketch, `(0, 0, 0, 0, 1)`.
    pub const PAD: Stroke5Point = Stroke5Point { dx: 0.0, dy: 0.0, pen: PenState::End };

    pub fn new(dx: f32, dy: f32, pen: PenState) -> Self {
        Stroke5Point { dx, dy, pen }
    }

    pub fn to_array(self) -> [f32; 5] {
        let [p1, p2, p3] = self.pen.one_hot();
        [self.dx, self.dy, p1, p2, p3]
    }

    /// Parse `[dx, dy, p1, p2, p3]`; exactly one pen bit must be 1.
    pub fn from_array(v: [f32; 5]) -> Result<Self> {
        let bits = [v[2], v[3], v[4]];
        if bits.iter().any(|&b| b != 0.0 && b != 1.0) || bits.iter().sum::<f32>() != 1.0 {
            return Err(Error::data(format!("pen state {bits:?} is not one-hot")));
        }
        if !v[0].is_finite() || !v[1].is_finite() {
            return Err(Error::data("non-finite offset"));
        }
        let pen = PenState::from_index(bits.iter().position(|&b| b == 1.0).unwrap()).unwrap();
        Ok(Stroke5Point { dx: v[0], dy: v[1], pen })
    }
}

impl Serialize for Stroke5Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Stroke5Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let v = <[f32; 5]>::deserialize(d)?;
        Stroke5Point::from_array(v).map_err(serde::de::Error::custom)
    }
}

/// An absolute pen position with the pen state at that point. Coordinates
/// are f64 so summing f32 offsets is exact and differencing recovers them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbsolutePoint {
    pub x: f64,
    pub y: f64,
    pub pen: PenState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeSequence {
    #[serde(rename = "id")]
    pub source_id: String,
    pub points: Vec<Stroke5Point>,
}

impl StrokeSequence {
    pub fn new(source_id: impl Into<String>, points: Vec<Stroke5Point>) -> Self {
        StrokeSequence { source_id: source_id.into(), points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Build from absolute-coordinate polylines (one per stroke), the shape of
    /// a QuickDraw `drawing`. Empty polylines are ignored; a drawing with no
    /// points is an error.
    pub fn from_polylines(source_id: impl Into<String>, polylines: &[Vec<(f32, f32)>]) -> Result<Self> {
        let strokes: Vec<&Vec<(f32, f32)>> = polylines.iter().filter(|p| !p.is_empty()).collect();
        if strokes.is_empty() {
            return Err(Error::data("empty drawing"));
        }
        let mut abs = Vec::new();
        for (s, stroke) in strokes.iter().enumerate() {
            let last_stroke = s + 1 == strokes.len();
            for (i, &(x, y)) in stroke.iter().enumerate() {
                let pen = if i + 1 < stroke.len() {
                    PenState::Down
                } else if last_stroke {
                    PenState::End
                } else {
                    PenState::Lift
                };
                abs.push(AbsolutePoint { x: x as f64, y: y as f64, pen });
            }
        }
        Ok(Self::from_absolute(source_id, &abs))
    }

    /// Offsets between consecutive absolute points, the first taken from the origin.
    pub fn from_absolute(source_id: impl Into<String>, abs: &[AbsolutePoint]) -> Self {
        let mut prev = (0.0f64, 0.0f64);
        let points = abs
            .iter()
            .map(|p| {
                let pt = Stroke5Point::new((p.x - prev.0) as f32, (p.y - prev.1) as f32, p.pen);
                prev = (p.x, p.y);
                pt
            })
            .collect();
        StrokeSequence::new(source_id, points)
    }

    /// Absolute coordinates by cumulative sum from the origin.
    pub fn to_absolute(&self) -> Vec<AbsolutePoint> {
        let (mut x, mut y) = (0.0f64, 0.0f64);
        self.points
            .iter()
            .map(|p| {
                x += p.dx as f64;
                y += p.dy as f64;
                AbsolutePoint { x, y, pen: p.pen }
            })
            .collect()
    }

    /// True when the last point (and only the last point) ends the sketch.
    pub fn is_complete(&self) -> bool {
        match self.points.split_last() {
            Some((last, rest)) => last.pen == PenState::End && rest.iter().all(|p| p.pen != PenState::End),
            None => false,
        }
    }

    /// Check the invariants of a complete sketch of at most `s_max` points.
    pub fn validate(&self, s_max: usize) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::data(format!("sequence `{}` is empty", self.source_id)));
        }
        if self.points.len() > s_max {
            return Err(Error::data(format!(
                "sequence `{}` has {} points, more than S_max = {s_max}",
                self.source_id,
                self.points.len()
            )));
        }
        if !self.is_complete() {
            return Err(Error::data(format!(
                "sequence `{}` must end with exactly one end-of-sketch point",
                self.source_id
            )));
        }
        Ok(())
    }

    /// Index (0-based) of the first end-of-sketch point.
    pub fn stop_index(&self) -> Option<usize> {
        self.points.iter().position(|p| p.pen == PenState::End)
    }

    /// Copy with offsets multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| Stroke5Point::new(p.dx * factor, p.dy * factor, p.pen))
            .collect();
        StrokeSequence::new(self.source_id.clone(), points)
    }

    /// Points padded with `(0,0,0,0,1)` up to `s_max` rows.
    pub fn padded(&self, s_max: usize) -> Vec<Stroke5Point> {
        let mut out: Vec<Stroke5Point> = self.points.iter().copied().take(s_max).collect();
        out.resize(s_max, Stroke5Point::PAD);
        out
    }

    /// Same points in reverse order.
    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        StrokeSequence::new(self.source_id.clone(), points)
    }
}

/// Population standard deviation of every `dx` and `dy` in `sequences`.
pub fn offset_std(sequences: &[StrokeSequence]) -> Result<f32> {
    let values = sequences
        .iter()
        .flat_map(|s| s.points.iter())
        .flat_map(|p| [p.dx as f64, p.dy as f64]);
    let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return Err(Error::data("cannot normalize an empty set of sequences"));
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    let std = math::sqrt64(var);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::data("offsets have zero variance"));
    }
    Ok(std as f32)
}

/// Divide every offset by the standard deviation of all offsets in
/// `sequences`. Returns the normalized copies and the divisor.
pub fn normalize_offsets(sequences: &[StrokeSequence]) -> Result<(Vec<StrokeSequence>, f32)> {
    let scale = offset_std(sequences)?;
    Ok((apply_scale(sequences, scale), scale))
}

/// Divide offsets by an existing `scale`.
pub fn apply_scale(sequences: &[StrokeSequence], scale: f32) -> Vec<StrokeSequence> {
    sequences
        .iter()
        .map(|s| {
            let points = s
                .points
                .iter()
                .map(|p| Stroke5Point::new(p.dx / scale, p.dy / scale, p.pen))
                .collect();
            StrokeSequence::new(s.source_id.clone(), points)
        })
        .collect()
}

/// Undo [`apply_scale`].
pub fn denormalize(sequences: &[StrokeSequence], scale: f32) -> Vec<StrokeSequence> {
    sequences.iter().map(|s| s.scaled(scale)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

impl SplitSizes {
    /// 70,000 / 2,500 / 2,500.
    pub const FULL: SplitSizes = SplitSizes { train: 70_000, test: 2_500, validation: 2_500 };

    pub fn total(&self) -> usize {
        self.train + self.test + self.validation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<StrokeSequence>,
    pub test: Vec<StrokeSequence>,
    pub validation: Vec<StrokeSequence>,
    /// Divisor applied to every offset, computed from the training split.
    pub offset_scale: f32,
}

/// Shuffle with `seed`, cut into the requested sizes, then normalize every
/// split by the training split's offset standard deviation.
pub fn split_dataset(sequences: &[StrokeSequence], sizes: SplitSizes, seed: u64) -> Result<DatasetSplit> {
    if sizes.train == 0 {
        return Err(Error::data("training split must not be empty"));
    }
    if sequences.len() < sizes.total() {
        return Err(Error::data(format!(
            "need {} sequences ({} train + {} test + {} validation), have {}",
            sizes.total(),
            sizes.train,
            sizes.test,
            sizes.validation,
            sequences.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for s in sequences {
        if !seen.insert(s.source_id.as_str()) {
            return Err(Error::data(format!("duplicate source id `{}`", s.source_id)));
        }
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let pick = |range: core::ops::Range<usize>| -> Vec<StrokeSequence> {
        order[range].iter().map(|&i| sequences[i].clone()).collect()
    };
    let train_raw = pick(0..sizes.train);
    let test_raw = pick(sizes.train..sizes.train + sizes.test);
    let val_raw = pick(sizes.train + sizes.test..sizes.total());
    let (train, offset_scale) = normalize_offsets(&train_raw)?;
    Ok(DatasetSplit {
        train,
        test: apply_scale(&test_raw, offset_scale),
        validation: apply_scale(&val_raw, offset_scale),
        offset_scale,
    })
}

/// A sketch cut in two: the prefix is rendered for the convolutional decoder,
/// the suffix supplies the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CropPair {
    pub prefix: StrokeSequence,
    pub suffix: StrokeSequence,
}

impl CropPair {
    pub fn rejoin(&self) -> Vec<Stroke5Point> {
        let mut all = self.prefix.points.clone();
        all.extend_from_slice(&self.suffix.points);
        all
    }
}

/// Split at a point drawn uniformly from `1..len`.
pub fn random_crop(sequence: &StrokeSequence, rng: &mut impl Rng) -> Result<CropPair> {
    let n = sequence.len();
    if n < 2 {
        return Err(Error::data(format!("cannot crop a sequence of length {n}")));
    }
    let cut = rng.random_range(1..n);
    Ok(crop_at(sequence, cut))
}

pub fn crop_at(sequence: &StrokeSequence, cut: usize) -> CropPair {
    let (a, b) = sequence.points.split_at(cut);
    CropPair {
        prefix: StrokeSequence::new(sequence.source_id.clone(), a.to_vec()),
        suffix: StrokeSequence::new(sequence.source_id.clone(), b.to_vec()),
    }
}
