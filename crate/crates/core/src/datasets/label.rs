use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of classes in the canonical four-emotion task.
pub const NUM_CLASSES: usize = 4;

/// Emotion label. The first four variants form the canonical task; the
/// others only appear in manifests built with `all_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Angry,
    Happy,
    Neutral,
    Sad,
    Calm,
    Fearful,
    Disgust,
    Surprised,
    Frustrated,
    Other,
}

impl EmotionLabel {
    pub const CANONICAL: [EmotionLabel; NUM_CLASSES] = [
        EmotionLabel::Angry,
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sad,
    ];

    const ALL: [EmotionLabel; 10] = [
        EmotionLabel::Angry,
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sad,
        EmotionLabel::Calm,
        EmotionLabel::Fearful,
        EmotionLabel::Disgust,
        EmotionLabel::Surprised,
        EmotionLabel::Frustrated,
        EmotionLabel::Other,
    ];

    /// Class index; 0..4 for canonical labels.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_canonical(self) -> bool {
        self.index() < NUM_CLASSES
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Calm => "calm",
            EmotionLabel::Fearful => "fearful",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Surprised => "surprised",
            EmotionLabel::Frustrated => "frustrated",
            EmotionLabel::Other => "other",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::parse("emotion label", format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSource {
    Ravdess,
    Iemocap,
    Synthetic,
}

impl DatasetSource {
    pub fn name(self) -> &'static str {
        match self {
            DatasetSource::Ravdess => "ravdess",
            DatasetSource::Iemocap => "iemocap",
            DatasetSource::Synthetic => "synthetic",
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ravdess" => Ok(DatasetSource::Ravdess),
            "iemocap" => Ok(DatasetSource::Iemocap),
            "synthetic" => Ok(DatasetSource::Synthetic),
            _ => Err(Error::parse(
                "dataset source",
                format!("unknown source {s:?}"),
            )),
        }
    }
}

/// Maps a dataset's emotion code onto a label.
///
/// Returns `None` for codes outside the four-class task (unless `all_classes`)
/// and for unknown codes, which are also logged.
pub fn map_emotion_with(
    source: DatasetSource,
    code: &str,
    merge_excited: bool,
    all_classes: bool,
) -> Option<EmotionLabel> {
    use EmotionLabel::*;
    let (label, canonical) = match (source, code) {
        (DatasetSource::Ravdess, "05") | (DatasetSource::Iemocap, "ang") => (Angry, true),
        (DatasetSource::Ravdess, "03") | (DatasetSource::Iemocap, "hap") => (Happy, true),
        (DatasetSource::Ravdess, "01") | (DatasetSource::Iemocap, "neu") => (Neutral, true),
        (DatasetSource::Ravdess, "04") | (DatasetSource::Iemocap, "sad") => (Sad, true),
        (DatasetSource::Iemocap, "exc") => (Happy, merge_excited),
        (DatasetSource::Ravdess, "02") => (Calm, false),
        (DatasetSource::Ravdess, "06") | (DatasetSource::Iemocap, "fea") => (Fearful, false),
        (DatasetSource::Ravdess, "07") | (DatasetSource::Iemocap, "dis") => (Disgust, false),
        (DatasetSource::Ravdess, "08") | (DatasetSource::Iemocap, "sur") => (Surprised, false),
        (DatasetSource::Iemocap, "fru") => (Frustrated, false),
        (DatasetSource::Iemocap, "oth") => (Other, false),
        (DatasetSource::Synthetic, name) => match name.parse::<EmotionLabel>() {
            Ok(l) => (l, l.is_canonical()),
            Err(_) => {
                log::warn!("unknown synthetic emotion {name:?}; skipping");
                return None;
            }
        },
        _ => {
            log::warn!("unknown {} emotion code {code:?}; skipping", source.name());
            return None;
        }
    };
    // unmerged `exc` has no label of its own, even with all classes kept
    let keep = canonical || (all_classes && !(source == DatasetSource::Iemocap && code == "exc"));
    keep.then_some(label)
}

/// Four-class mapping.
pub fn map_emotion(source: DatasetSource, code: &str, merge_excited: bool) -> Option<EmotionLabel> {
    map_emotion_with(source, code, merge_excited, false)
}
