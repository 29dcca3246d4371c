//! Mono WAV input/output.
//!
//! Only 16-bit integer PCM and 32-bit float mono files are accepted.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

fn wav_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e.to_string()))?,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!(
                    "unsupported encoding {fmt:?} {bits}-bit; only 16-bit PCM and 32-bit float are read"
                ),
            ))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM, clipping samples to [-1, 1].
pub fn write_wav_i16(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| wav_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_roundtrip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(
            (0..100).map(|i| (i as f64 * 0.1).sin() * 0.9).collect(),
            16000,
        )
        .unwrap();
        write_wav_i16(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), 100);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn float32_is_accepted_and_stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f32_path = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut wr = WavWriter::create(&f32_path, spec).unwrap();
        for s in [0.5f32, -0.25, 0.0] {
            wr.write_sample(s).unwrap();
        }
        wr.finalize().unwrap();
        assert_eq!(read_wav(&f32_path).unwrap().samples, vec![0.5, -0.25, 0.0]);

        let stereo = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            ..spec
        };
        let mut wr = WavWriter::create(&stereo, spec).unwrap();
        wr.write_sample(0.0f32).unwrap();
        wr.write_sample(0.0f32).unwrap();
        wr.finalize().unwrap();
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");
    }

    #[test]
    fn pcm24_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&path, spec).unwrap();
        wr.write_sample(0i32).unwrap();
        wr.finalize().unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("unsupported encoding"), "{err}");
    }
}
