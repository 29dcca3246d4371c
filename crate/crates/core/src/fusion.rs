//! Score tables exchanged between branches, and score-level max fusion.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::datasets::{EmotionLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax};

pub const SCORE_HEADER: [&str; 6] = ["id", "label", "p_angry", "p_happy", "p_neutral", "p_sad"];

/// Row-sum tolerance for probability tables held in memory.
pub const PROB_SUM_TOL: f64 = 1e-6;
/// Extra slack when reading tables printed with 6 decimals.
const CSV_ROUNDING_SLACK: f64 = NUM_CLASSES as f64 * 0.5e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Unnormalised branch outputs (logits).
    Raw,
    Probability,
    /// Elementwise maximum of probability rows; not a distribution.
    Fused,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Raw => "raw",
            ScoreKind::Probability => "probability",
            ScoreKind::Fused => "fused",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreKind::Raw),
            "probability" => Ok(ScoreKind::Probability),
            "fused" => Ok(ScoreKind::Fused),
            _ => Err(Error::parse("score table", format!("unknown kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub label: EmotionLabel,
    pub scores: [f64; NUM_CLASSES],
}

/// Per-utterance class scores, sorted by id with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    kind: ScoreKind,
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn new(kind: ScoreKind, rows: Vec<ScoreRow>) -> Result<Self> {
        Self::with_tolerance(kind, rows, PROB_SUM_TOL)
    }

    fn with_tolerance(kind: ScoreKind, mut rows: Vec<ScoreRow>, tol: f64) -> Result<Self> {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = rows.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Data(format!(
                "duplicate id {:?} in score table",
                w[0].id
            )));
        }
        for r in &rows {
            if !r.label.is_canonical() {
                return Err(Error::Data(format!(
                    "row {:?}: label {} is outside the four-class task",
                    r.id, r.label
                )));
            }
            if r.scores.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "row {:?} has non-finite scores",
                    r.id
                )));
            }
            if kind == ScoreKind::Probability {
                let s: f64 = r.scores.iter().sum();
                if (s - 1.0).abs() > tol || r.scores.iter().any(|v| *v < 0.0) {
                    return Err(Error::Data(format!(
                        "row {:?} is not a probability distribution (sum {s})",
                        r.id
                    )));
                }
            }
        }
        Ok(Self { kind, rows })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("score table", e);
        writeln!(w, "# kind={}", self.kind).map_err(io)?;
        writeln!(w, "{}", SCORE_HEADER.join(",")).map_err(io)?;
        for r in &self.rows {
            write!(w, "{},{}", csv_field(&r.id), r.label).map_err(io)?;
            for s in r.scores {
                write!(w, ",{s:.6}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut first = String::new();
        reader
            .read_line(&mut first)
            .map_err(|e| Error::io("score table", e))?;
        let kind: ScoreKind = first
            .trim()
            .strip_prefix("# kind=")
            .ok_or_else(|| Error::parse("score table", "first line must be `# kind=<kind>`"))?
            .parse()?;
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != SCORE_HEADER {
            return Err(Error::parse(
                "score table header",
                format!("expected {SCORE_HEADER:?}, found {headers:?}"),
            ));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let ctx = format!("score table row {}", i + 1);
            if rec.len() != SCORE_HEADER.len() {
                return Err(Error::parse(ctx, format!("{} fields", rec.len())));
            }
            let mut scores = [0.0; NUM_CLASSES];
            for (c, s) in scores.iter_mut().enumerate() {
                *s = rec[2 + c]
                    .parse()
                    .map_err(|_| Error::parse(&ctx, format!("bad score {:?}", &rec[2 + c])))?;
            }
            rows.push(ScoreRow {
                id: rec[0].to_string(),
                label: rec[1].parse()?,
                scores,
            });
        }
        Self::with_tolerance(kind, rows, PROB_SUM_TOL + CSV_ROUNDING_SLACK)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Row-wise softmax of a raw table.
pub fn to_probabilities(t: &ScoreTable) -> Result<ScoreTable> {
    if t.kind != ScoreKind::Raw {
        return Err(Error::invalid(format!(
            "to_probabilities expects raw scores, table is {}",
            t.kind
        )));
    }
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let p =
                softmax(&r.scores).map_err(|e| Error::Numeric(format!("row {:?}: {e}", r.id)))?;
            Ok(ScoreRow {
                id: r.id.clone(),
                label: r.label,
                scores: p.try_into().expect("softmax keeps the length"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::new(ScoreKind::Probability, rows)
}

/// Per-class maximum of two probability (or already fused) tables with identical ids.
pub fn fuse_max(a: &ScoreTable, b: &ScoreTable) -> Result<ScoreTable> {
    for t in [a, b] {
        if t.kind == ScoreKind::Raw {
            return Err(Error::invalid(
                "fuse_max expects probability tables; apply to_probabilities first",
            ));
        }
    }
    let ids_a: BTreeSet<&str> = a.rows.iter().map(|r| r.id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.rows.iter().map(|r| r.id.as_str()).collect();
    if ids_a != ids_b {
        let diff: Vec<&str> = ids_a.symmetric_difference(&ids_b).copied().collect();
        return Err(Error::Data(format!(
            "score tables cover different ids; symmetric difference: {}",
            diff.join(", ")
        )));
    }
    // both tables are sorted by id
    let rows = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| {
            if ra.label != rb.label {
                return Err(Error::Data(format!(
                    "row {:?}: labels disagree ({} vs {})",
                    ra.id, ra.label, rb.label
                )));
            }
            let mut scores = [0.0; NUM_CLASSES];
            for (c, s) in scores.iter_mut().enumerate() {
                *s = ra.scores[c].max(rb.scores[c]);
            }
            Ok(ScoreRow {
                id: ra.id.clone(),
                label: ra.label,
                scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::new(ScoreKind::Fused, rows)
}

/// Predicted class per row (argmax; ties go to the lower class index).
pub fn decide(t: &ScoreTable) -> Vec<(String, EmotionLabel)> {
    t.rows
        .iter()
        .map(|r| {
            let c = argmax(&r.scores).expect("four scores");
            (r.id.clone(), EmotionLabel::CANONICAL[c])
        })
        .collect()
}
