//! Text outputs: loss logs, confusion matrices and prediction files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use strokeforge_core::discriminator::{ConfusionMatrix, SketchClass};
use strokeforge_core::vae::LossRecord;

use crate::dataset::read_input;
use crate::error::InputError;

pub const LOSS_HEADER: &str = "step,L_S,L_P,L_KL,total";

/// CSV loss log, one line per training step.
pub struct LossLog<W: Write> {
    out: W,
}

impl<W: Write> LossLog<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{LOSS_HEADER}")?;
        Ok(LossLog { out })
    }

    pub fn record(&mut self, r: &LossRecord) -> std::io::Result<()> {
        writeln!(self.out, "{},{},{},{},{}", r.step, r.ls, r.lp, r.kl, r.total)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Row-normalized percentages as CSV. Rows with no samples are written with
/// empty cells.
pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut s = String::from("true,Sketch-RNN,Refined,Human,count\n");
    for class in SketchClass::ALL {
        let r = class.index();
        match m.percent_row(r) {
            Some(row) => {
                let _ = writeln!(s, "{},{:.4},{:.4},{:.4},{}", class.label(), row[0], row[1], row[2], m.row_total(r));
            }
            None => {
                let _ = writeln!(s, "{},,,,0", class.label());
            }
        }
    }
    s
}

/// Aligned percentage table, rows are the true class and columns the
/// prediction, followed by the mislead rate of each generated class.
pub fn confusion_table(m: &ConfusionMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>12}", "", "Sketch-RNN", "Refined", "Human");
    for class in SketchClass::ALL {
        let _ = write!(s, "{:<12}", class.label());
        match m.percent_row(class.index()) {
            Some(row) => {
                for v in row {
                    let _ = write!(s, "{:>11.1}%", v);
                }
                s.push('\n');
            }
            None => {
                let _ = writeln!(s, "{:>36}", "(no samples)");
            }
        }
    }
    for class in [SketchClass::SketchRnn, SketchClass::Refiner] {
        match m.mislead_rate(class) {
            Some(v) => {
                let _ = writeln!(s, "mislead rate {:<12}{:>6.1}%", class.label(), v);
            }
            None => {
                let _ = writeln!(s, "mislead rate {:<12}{:>7}", class.label(), "n/a");
            }
        }
    }
    s
}

/// Stored `(true, predicted)` pairs, one `true,predicted` line each using the
/// `sketch-rnn` / `refiner` / `human` names. A header line is allowed.
pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<(SketchClass, SketchClass)>> {
    let text = read_input(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("true")) {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(t, p)| Some((SketchClass::parse(t.trim())?, SketchClass::parse(p.trim())?)));
        match parsed {
            Some(pair) => out.push(pair),
            None => return Err(InputError::bad_file(path, format!("line {}: expected `true,predicted`", n + 1)).into()),
        }
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, pairs: &[(SketchClass, SketchClass)]) -> std::io::Result<()> {
    let name = |c: SketchClass| match c {
        SketchClass::SketchRnn => "sketch-rnn",
        SketchClass::Refiner => "refiner",
        SketchClass::Human => "human",
    };
    let mut s = String::from("true,predicted\n");
    for &(t, p) in pairs {
        let _ = writeln!(s, "{},{}", name(t), name(p));
    }
    std::fs::write(path, s)
}
