//! Waveform handling and MFCC features for the speech branch.

mod mfcc;
mod wav;

pub use mfcc::{
    add_deltas, dct2, frame_count, frame_signal, hann, hz_to_mel, log_mel_energies, mel_to_hz,
    mfcc, power_spectra, MelFilterbank, MfccConfig,
};
pub use wav::{read_wav, write_wav_i16};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Rate every feature extractor in this crate expects.
pub const CANONICAL_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Linear-interpolation resampling. Adequate for feature extraction, no anti-aliasing.
    pub fn resample_linear(&self, target: u32) -> Result<Waveform> {
        if target == 0 {
            return Err(Error::invalid("target sample rate must be positive"));
        }
        if target == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), target);
        }
        let ratio = f64::from(self.sample_rate) / f64::from(target);
        let n_out = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = pos - lo as f64;
                self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac
            })
            .collect();
        Waveform::new(samples, target)
    }
}

/// Per-frame feature rows (`frames × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Matrix,
}

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        values.ensure_finite("feature matrix")?;
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_48k_to_16k_keeps_duration_and_shape() {
        let w = Waveform::new((0..4800).map(|i| i as f64 / 4800.0).collect(), 48000).unwrap();
        let r = w.resample_linear(16000).unwrap();
        assert_eq!(r.samples.len(), 1600);
        assert_eq!(r.sample_rate, 16000);
        // every third sample of a ramp
        assert!((r.samples[10] - 30.0 / 4800.0).abs() < 1e-12);
    }

    #[test]
    fn waveform_invariants() {
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
    }
}
