use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::iemocap::{read_iemocap_csv, split_iemocap};
use crate::datasets::label::{map_emotion_with, DatasetSource, EmotionLabel};
use crate::datasets::ravdess::parse_ravdess_filename;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] =
    ["id", "audio_path", "transcript", "label", "split", "source"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::parse("split", format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio_path: PathBuf,
    /// May be empty for speech-only runs.
    pub transcript: String,
    pub label: EmotionLabel,
    pub split: Split,
    pub source: DatasetSource,
}

#[derive(Serialize, Deserialize)]
struct Row {
    id: String,
    audio_path: String,
    transcript: String,
    label: String,
    split: String,
    source: String,
}

/// Utterance list with unique ids, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    rows: Vec<Utterance>,
}

impl Manifest {
    pub fn new(mut rows: Vec<Utterance>) -> Result<Self> {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = rows.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Data(format!("duplicate utterance id {:?}", w[0].id)));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Utterance] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.rows.iter().filter(move |u| u.split == split)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for u in &self.rows {
            w.serialize(Row {
                id: u.id.clone(),
                audio_path: u.audio_path.to_string_lossy().into_owned(),
                transcript: u.transcript.clone(),
                label: u.label.name().to_string(),
                split: u.split.name().to_string(),
                source: u.source.name().to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::io("manifest", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != MANIFEST_HEADER {
            return Err(Error::parse(
                "manifest header",
                format!("expected {MANIFEST_HEADER:?}, found {headers:?}"),
            ));
        }
        let mut rows = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            rows.push(Utterance {
                audio_path: PathBuf::from(&row.audio_path),
                transcript: row.transcript,
                label: row.label.parse()?,
                split: row.split.parse()?,
                source: row.source.parse()?,
                id: row.id,
            });
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

/// Options shared by the manifest builders.
#[derive(Debug, Clone)]
pub struct ManifestOptions {
    /// Map IEMOCAP `exc` onto happy.
    pub merge_excited: bool,
    /// Keep labels outside the four-class task.
    pub all_classes: bool,
    /// IEMOCAP rows below this agreement are dropped.
    pub min_agreement: u32,
    /// IEMOCAP session routed to the test split.
    pub test_session: u8,
    /// RAVDESS actors routed to the test split.
    pub ravdess_test_actors: Vec<u8>,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            merge_excited: true,
            all_classes: false,
            min_agreement: 2,
            test_session: 5,
            ravdess_test_actors: vec![21, 22, 23, 24],
        }
    }
}

fn audio_readable(path: &Path) -> bool {
    match hound::WavReader::open(path) {
        Ok(_) => true,
        Err(e) => {
            log::warn!("skipping unreadable audio {}: {e}", path.display());
            false
        }
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "wav") {
            out.push(path);
        }
    }
    Ok(())
}

/// Scans `dir` recursively for RAVDESS `.wav` files.
///
/// Transcripts come from the statement code. Fails when the directory holds
/// no candidate audio at all; a directory whose files are all outside the
/// label set yields an empty manifest and a warning.
pub fn build_ravdess_manifest(dir: &Path, opts: &ManifestOptions) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_wavs(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no .wav files under {}",
            dir.display()
        )));
    }
    let mut rows = Vec::new();
    let mut skipped_label = 0;
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let meta = match parse_ravdess_filename(&name) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let Some(label) = map_emotion_with(
            DatasetSource::Ravdess,
            &meta.emotion_code(),
            opts.merge_excited,
            opts.all_classes,
        ) else {
            skipped_label += 1;
            continue;
        };
        if !audio_readable(&path) {
            continue;
        }
        let split = if opts.ravdess_test_actors.contains(&meta.actor) {
            Split::Test
        } else {
            Split::Train
        };
        rows.push(Utterance {
            id: name.trim_end_matches(".wav").to_string(),
            audio_path: path,
            transcript: meta.statement_text().to_string(),
            label,
            split,
            source: DatasetSource::Ravdess,
        });
    }
    if rows.is_empty() {
        log::warn!(
            "RAVDESS manifest is empty: {skipped_label} file(s) had emotions outside the label set"
        );
    }
    Manifest::new(rows)
}

/// Reads `utterance_id<TAB>text` lines.
pub fn read_transcripts(path: &Path) -> Result<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| {
            Error::parse(
                format!("transcripts {} line {}", path.display(), i + 1),
                "expected `utterance_id<TAB>text`",
            )
        })?;
        out.insert(id.to_string(), body.to_string());
    }
    Ok(out)
}

/// Builds a manifest from the IEMOCAP metadata CSV, resolving paths against `root`.
pub fn build_iemocap_manifest(
    metadata: &Path,
    root: &Path,
    transcripts: Option<&Path>,
    opts: &ManifestOptions,
) -> Result<Manifest> {
    let records = read_iemocap_csv(metadata)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no rows", metadata.display())));
    }
    let texts = match transcripts {
        Some(p) => read_transcripts(p)?,
        None => Default::default(),
    };
    let splits = split_iemocap(&records, opts.test_session);
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (rec, split) in records.iter().zip(splits) {
        if rec.agreement < opts.min_agreement {
            continue;
        }
        let Some(label) = map_emotion_with(
            DatasetSource::Iemocap,
            &rec.emotion,
            opts.merge_excited,
            opts.all_classes,
        ) else {
            continue;
        };
        let audio_path = root.join(&rec.path);
        if !audio_readable(&audio_path) {
            continue;
        }
        let id = rec.utterance_id();
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!(
                "duplicate IEMOCAP utterance id {id:?}"
            )));
        }
        rows.push(Utterance {
            transcript: texts.get(&id).cloned().unwrap_or_default(),
            id,
            audio_path,
            label,
            split,
            source: DatasetSource::Iemocap,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("no IEMOCAP rows survived filtering".into()));
    }
    Manifest::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{write_wav_i16, Waveform};

    fn touch_wav(path: &Path) {
        write_wav_i16(path, &Waveform::new(vec![0.0; 800], 16000).unwrap()).unwrap();
    }

    #[test]
    fn csv_roundtrip_quotes_commas() {
        let m = Manifest::new(vec![Utterance {
            id: "b".into(),
            audio_path: "x/b.wav".into(),
            transcript: "well, \"fine\"".into(),
            label: EmotionLabel::Sad,
            split: Split::Test,
            source: DatasetSource::Synthetic,
        }])
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,audio_path,transcript,label,split,source\n"));
        assert!(text.contains("\"well, \"\"fine\"\"\""));
        assert_eq!(Manifest::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let u = Utterance {
            id: "a".into(),
            audio_path: "a.wav".into(),
            transcript: String::new(),
            label: EmotionLabel::Angry,
            split: Split::Train,
            source: DatasetSource::Synthetic,
        };
        assert!(Manifest::new(vec![u.clone(), u]).is_err());
    }

    #[test]
    fn ravdess_fearful_example_is_filtered_unless_all_classes() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("03-01-06-01-02-01-12.wav"));
        let m = build_ravdess_manifest(dir.path(), &ManifestOptions::default()).unwrap();
        assert!(m.is_empty());
        let opts = ManifestOptions {
            all_classes: true,
            ..Default::default()
        };
        let m = build_ravdess_manifest(dir.path(), &opts).unwrap();
        assert_eq!(m.len(), 1);
        let row = &m.rows()[0];
        assert_eq!(row.label, EmotionLabel::Fearful);
        assert_eq!(row.transcript, "Dogs are sitting by the door");
        assert_eq!(row.id, "03-01-06-01-02-01-12");
    }

    #[test]
    fn ravdess_empty_directory_fails_and_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_ravdess_manifest(dir.path(), &ManifestOptions::default()).is_err());
        for name in ["03-01-05-02-01-01-22.wav", "03-01-03-01-02-02-01.wav"] {
            touch_wav(&dir.path().join(name));
        }
        std::fs::write(dir.path().join("03-01-04-01-01-01-02.wav"), b"not audio").unwrap();
        let render = || {
            let mut buf = Vec::new();
            build_ravdess_manifest(dir.path(), &ManifestOptions::default())
                .unwrap()
                .write_csv(&mut buf)
                .unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let m = Manifest::read_csv(a.as_slice()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows()[0].split, Split::Train);
        assert_eq!(m.rows()[1].split, Split::Test);
    }

    #[test]
    fn iemocap_manifest_applies_map_split_and_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        let names = ["Ses01_a", "Ses05_b", "Ses02_c", "Ses03_d"];
        for n in names {
            touch_wav(&dir.path().join(format!("{n}.wav")));
        }
        let meta = dir.path().join("meta.csv");
        std::fs::write(
            &meta,
            "session,method,gender,emotion,n_annotators,agreement,path\n\
             1,script,M,ang,3,2,Ses01_a.wav\n\
             5,impro,F,sad,3,3,Ses05_b.wav\n\
             2,impro,F,exc,3,2,Ses02_c.wav\n\
             3,impro,M,fru,3,2,Ses03_d.wav\n",
        )
        .unwrap();
        let tx = dir.path().join("tx.tsv");
        std::fs::write(&tx, "Ses01_a\tI am furious, really\nSes05_b\tso sad\n").unwrap();
        let m = build_iemocap_manifest(&meta, dir.path(), Some(&tx), &ManifestOptions::default())
            .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.rows()[0].transcript, "I am furious, really");
        assert_eq!(m.rows()[1].label, EmotionLabel::Happy);
        assert_eq!(m.rows()[2].split, Split::Test);

        let no_merge = ManifestOptions {
            merge_excited: false,
            ..Default::default()
        };
        let m = build_iemocap_manifest(&meta, dir.path(), None, &no_merge).unwrap();
        assert_eq!(m.len(), 2);
    }
}
