//! RAVDESS filename identifiers, e.g. `03-01-06-01-02-01-12.wav`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    FullAv,
    VideoOnly,
    AudioOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocalChannel {
    Speech,
    Song,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RavdessEmotion {
    Neutral,
    Calm,
    Happy,
    Sad,
    Angry,
    Fearful,
    Disgust,
    Surprised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intensity {
    Normal,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
}

pub const STATEMENTS: [&str; 2] = [
    "Kids are talking by the door",
    "Dogs are sitting by the door",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RavdessMeta {
    pub modality: Modality,
    pub vocal_channel: VocalChannel,
    pub emotion: RavdessEmotion,
    pub intensity: Intensity,
    /// 1 or 2.
    pub statement: u8,
    /// 1 or 2.
    pub repetition: u8,
    /// 1..=24.
    pub actor: u8,
}

impl RavdessMeta {
    /// Odd-numbered actors are male, even-numbered female.
    pub fn actor_gender(&self) -> Gender {
        if self.actor % 2 == 1 {
            Gender::Male
        } else {
            Gender::Female
        }
    }

    /// Two-digit emotion code as used in filenames.
    pub fn emotion_code(&self) -> String {
        format!("{:02}", self.emotion as u8 + 1)
    }

    pub fn statement_text(&self) -> &'static str {
        STATEMENTS[usize::from(self.statement - 1)]
    }

    /// Filename for these identifiers, `.wav` extension included.
    pub fn render(&self) -> String {
        format!(
            "{:02}-{:02}-{:02}-{:02}-{:02}-{:02}-{:02}.wav",
            self.modality as u8 + 1,
            self.vocal_channel as u8 + 1,
            self.emotion as u8 + 1,
            self.intensity as u8 + 1,
            self.statement,
            self.repetition,
            self.actor
        )
    }
}

const FIELD_NAMES: [&str; 7] = [
    "modality",
    "vocal channel",
    "emotion",
    "intensity",
    "statement",
    "repetition",
    "actor",
];

fn out_of_range(name: &str, field: usize, value: u8) -> Error {
    Error::parse(
        format!("RAVDESS filename {name:?}"),
        format!(
            "field {} ({}) has out-of-range code {value:02}",
            field + 1,
            FIELD_NAMES[field]
        ),
    )
}

/// Decodes a RAVDESS base filename.
pub fn parse_ravdess_filename(name: &str) -> Result<RavdessMeta> {
    let ctx = || format!("RAVDESS filename {name:?}");
    let stem = name
        .strip_suffix(".wav")
        .ok_or_else(|| Error::parse(ctx(), "expected a .wav extension"))?;
    let fields: Vec<&str> = stem.split('-').collect();
    if fields.len() != 7 {
        return Err(Error::parse(
            ctx(),
            format!("expected 7 dash-separated fields, found {}", fields.len()),
        ));
    }
    let mut codes = [0u8; 7];
    let mut offset = 0;
    for (i, f) in fields.iter().enumerate() {
        if f.len() != 2 || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::parse(
                ctx(),
                format!(
                    "field {} ({}) at character {offset} must be two digits, found {f:?}",
                    i + 1,
                    FIELD_NAMES[i]
                ),
            ));
        }
        codes[i] = f.parse().expect("two ASCII digits");
        offset += f.len() + 1;
    }
    let pick = |i: usize, max: u8| -> Result<u8> {
        if (1..=max).contains(&codes[i]) {
            Ok(codes[i] - 1)
        } else {
            Err(out_of_range(name, i, codes[i]))
        }
    };
    let modality =
        [Modality::FullAv, Modality::VideoOnly, Modality::AudioOnly][usize::from(pick(0, 3)?)];
    let vocal_channel = [VocalChannel::Speech, VocalChannel::Song][usize::from(pick(1, 2)?)];
    let emotion = [
        RavdessEmotion::Neutral,
        RavdessEmotion::Calm,
        RavdessEmotion::Happy,
        RavdessEmotion::Sad,
        RavdessEmotion::Angry,
        RavdessEmotion::Fearful,
        RavdessEmotion::Disgust,
        RavdessEmotion::Surprised,
    ][usize::from(pick(2, 8)?)];
    let intensity = [Intensity::Normal, Intensity::Strong][usize::from(pick(3, 2)?)];
    let statement = pick(4, 2)? + 1;
    let repetition = pick(5, 2)? + 1;
    let actor = pick(6, 24)? + 1;
    if emotion == RavdessEmotion::Neutral && intensity == Intensity::Strong {
        return Err(Error::parse(
            ctx(),
            "invalid combination: there is no strong intensity for the 'neutral' emotion",
        ));
    }
    Ok(RavdessMeta {
        modality,
        vocal_channel,
        emotion,
        intensity,
        statement,
        repetition,
        actor,
    })
}
