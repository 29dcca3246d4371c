//! Dataset parsers and the unified utterance manifest.

mod iemocap;
mod label;
mod manifest;
mod ravdess;

pub use iemocap::{
    parse_iemocap_csv, read_iemocap_csv, split_iemocap, ElicitationMethod, IemocapRecord,
    IEMOCAP_COLUMNS,
};
pub use label::{map_emotion, map_emotion_with, DatasetSource, EmotionLabel, NUM_CLASSES};
pub use manifest::{
    build_iemocap_manifest, build_ravdess_manifest, read_transcripts, Manifest, ManifestOptions,
    Split, Utterance, MANIFEST_HEADER,
};
pub use ravdess::{
    parse_ravdess_filename, Gender, Intensity, Modality, RavdessEmotion, RavdessMeta, VocalChannel,
    STATEMENTS,
};
