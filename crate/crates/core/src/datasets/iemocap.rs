//! IEMOCAP metadata table with columns
//! `session,method,gender,emotion,n_annotators,agreement,path`.

use std::path::Path;

use serde::Deserialize;

use crate::datasets::Split;
use crate::error::{Error, Result};

pub const IEMOCAP_COLUMNS: [&str; 7] = [
    "session",
    "method",
    "gender",
    "emotion",
    "n_annotators",
    "agreement",
    "path",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElicitationMethod {
    Script,
    Impro,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IemocapRecord {
    pub session: u8,
    pub method: ElicitationMethod,
    /// `'M'` or `'F'`.
    pub gender: char,
    pub emotion: String,
    pub n_annotators: u32,
    pub agreement: u32,
    /// Relative to the corpus root.
    pub path: String,
}

impl IemocapRecord {
    /// Utterance id: file stem of `path`.
    pub fn utterance_id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.clone())
    }
}

#[derive(Deserialize)]
struct RawRow {
    session: String,
    method: String,
    gender: String,
    emotion: String,
    n_annotators: String,
    agreement: String,
    path: String,
}

fn validate(raw: RawRow, line: u64) -> Result<IemocapRecord> {
    let ctx = format!("IEMOCAP metadata line {line}");
    let int = |field: &str, v: &str| -> Result<u32> {
        v.trim()
            .parse()
            .map_err(|_| Error::parse(&ctx, format!("{field} {v:?} is not an integer")))
    };
    let session = int("session", &raw.session)?;
    if !(1..=5).contains(&session) {
        return Err(Error::parse(
            &ctx,
            format!("session {session} outside 1..=5"),
        ));
    }
    let method = match raw.method.trim() {
        "script" => ElicitationMethod::Script,
        "impro" => ElicitationMethod::Impro,
        m => {
            return Err(Error::parse(
                &ctx,
                format!("method {m:?} is not script/impro"),
            ))
        }
    };
    let gender = match raw.gender.trim() {
        "M" => 'M',
        "F" => 'F',
        g => return Err(Error::parse(&ctx, format!("gender {g:?} is not M/F"))),
    };
    let n_annotators = int("n_annotators", &raw.n_annotators)?;
    let agreement = int("agreement", &raw.agreement)?;
    if !(2..=4).contains(&agreement) {
        return Err(Error::parse(
            &ctx,
            format!("agreement {agreement} outside 2..=4"),
        ));
    }
    if agreement > n_annotators {
        return Err(Error::parse(
            &ctx,
            format!("agreement {agreement} exceeds n_annotators {n_annotators}"),
        ));
    }
    let path = raw.path.trim().to_string();
    if path.is_empty() {
        return Err(Error::parse(&ctx, "empty path"));
    }
    Ok(IemocapRecord {
        session: session as u8,
        method,
        gender,
        emotion: raw.emotion.trim().to_string(),
        n_annotators,
        agreement,
        path,
    })
}

/// Parses the metadata CSV; the header must list exactly the seven columns.
pub fn parse_iemocap_csv<R: std::io::Read>(reader: R) -> Result<Vec<IemocapRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers != IEMOCAP_COLUMNS {
        return Err(Error::parse(
            "IEMOCAP metadata header",
            format!("expected {IEMOCAP_COLUMNS:?}, found {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawRow>() {
        let line = out.len() as u64 + 2;
        out.push(validate(row?, line)?);
    }
    Ok(out)
}

pub fn read_iemocap_csv(path: &Path) -> Result<Vec<IemocapRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_iemocap_csv(file)
}

/// Session-held-out split: `held_out` goes to test, the rest to train.
/// The default held-out session is 5.
pub fn split_iemocap(records: &[IemocapRecord], held_out: u8) -> Vec<Split> {
    records
        .iter()
        .map(|r| {
            if r.session == held_out {
                Split::Test
            } else {
                Split::Train
            }
        })
        .collect()
}
