use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{FeatureMatrix, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub mel_filters: usize,
    pub num_ceps: usize,
    /// Append Δ and ΔΔ, tripling the dimension.
    pub include_deltas: bool,
    /// Floor applied to mel energies before the log.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            mel_filters: 26,
            num_ceps: 13,
            include_deltas: true,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(Error::invalid(format!(
                "need frame_ms >= hop_ms > 0, got {} / {}",
                self.frame_ms, self.hop_ms
            )));
        }
        if self.num_ceps == 0 || self.num_ceps > self.mel_filters {
            return Err(Error::invalid(format!(
                "need 0 < num_ceps <= mel_filters, got {} / {}",
                self.num_ceps, self.mel_filters
            )));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::invalid("log_floor must be positive"));
        }
        Ok(())
    }

    /// Window and hop length in samples at `sample_rate`.
    pub fn frame_lengths(&self, sample_rate: u32) -> (usize, usize) {
        let sr = f64::from(sample_rate);
        let win = (self.frame_ms * sr / 1000.0).round() as usize;
        let hop = (self.hop_ms * sr / 1000.0).round() as usize;
        (win.max(1), hop.max(1))
    }

    pub fn output_dim(&self) -> usize {
        if self.include_deltas {
            3 * self.num_ceps
        } else {
            self.num_ceps
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `floor((N − win) / hop) + 1`.
pub fn frame_count(n: usize, win: usize, hop: usize) -> usize {
    if n < win {
        0
    } else {
        (n - win) / hop + 1
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Splits `w` into Hann-windowed frames.
pub fn frame_signal(w: &Waveform, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (win, hop) = cfg.frame_lengths(w.sample_rate);
    if w.samples.len() < win {
        return Err(Error::invalid(format!(
            "waveform has {} samples; at least {win} ({} ms at {} Hz) are needed for one frame",
            w.samples.len(),
            cfg.frame_ms,
            w.sample_rate
        )));
    }
    let window = hann(win);
    let n = frame_count(w.samples.len(), win, hop);
    Ok((0..n)
        .map(|f| {
            w.samples[f * hop..f * hop + win]
                .iter()
                .zip(&window)
                .map(|(s, h)| s * h)
                .collect()
        })
        .collect())
}

/// Triangular mel filters over `fft_size / 2 + 1` bins, spaced evenly in mel from 0 Hz to Nyquist.
pub struct MelFilterbank {
    /// `filters × bins`.
    pub weights: Matrix,
    /// Centre frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(filters: usize, fft_size: usize, sample_rate: u32) -> Self {
        let sr = f64::from(sample_rate);
        let bins = fft_size / 2 + 1;
        let top = hz_to_mel(sr / 2.0);
        let edges: Vec<f64> = (0..filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (filters + 1) as f64))
            .collect();
        let mut weights = Matrix::zeros(filters, bins);
        for m in 0..filters {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sr / fft_size as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[(m, k)] = w;
            }
        }
        Self {
            weights,
            centers_hz: edges[1..=filters].to_vec(),
        }
    }
}

fn fft_size_for(win: usize) -> usize {
    win.next_power_of_two()
}

/// Power spectrum `|X_k|²` of each frame, zero-padded to the next power of two.
pub fn power_spectra(frames: &[Vec<f64>]) -> Matrix {
    let win = frames.first().map_or(1, Vec::len);
    let nfft = fft_size_for(win);
    let bins = nfft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut out = Matrix::zeros(frames.len(), bins);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for (f, frame) in frames.iter().enumerate() {
        for (b, s) in buf
            .iter_mut()
            .zip(frame.iter().chain(std::iter::repeat(&0.0)))
        {
            *b = Complex::new(*s, 0.0);
        }
        fft.process(&mut buf);
        for (o, c) in out.row_mut(f).iter_mut().zip(&buf[..bins]) {
            *o = c.norm_sqr();
        }
    }
    out
}

fn check_rate(w: &Waveform) -> Result<()> {
    if w.sample_rate != CANONICAL_RATE {
        return Err(Error::invalid(format!(
            "MFCC extraction expects {CANONICAL_RATE} Hz audio, got {} Hz (resample at ingestion)",
            w.sample_rate
        )));
    }
    Ok(())
}

/// Log mel-filterbank energies, `frames × mel_filters`.
pub fn log_mel_energies(w: &Waveform, cfg: &MfccConfig) -> Result<Matrix> {
    check_rate(w)?;
    let frames = frame_signal(w, cfg)?;
    let power = power_spectra(&frames);
    let nfft = (power.cols() - 1) * 2;
    let bank = MelFilterbank::new(cfg.mel_filters, nfft, w.sample_rate);
    let energies = power.matmul_t(&bank.weights)?;
    Ok(energies.map(|e| e.max(cfg.log_floor).ln()))
}

/// Orthonormal DCT-II of each row, keeping the first `keep` coefficients.
pub fn dct2(rows: &Matrix, keep: usize) -> Matrix {
    let m = rows.cols();
    let mut basis = Matrix::zeros(keep, m);
    for k in 0..keep {
        let s = if k == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        for n in 0..m {
            basis[(k, n)] = s * (PI * k as f64 * (2 * n + 1) as f64 / (2 * m) as f64).cos();
        }
    }
    rows.matmul_t(&basis).expect("basis width equals row width")
}

/// MFCCs per frame, with Δ and ΔΔ appended when configured.
pub fn mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let log_mel = log_mel_energies(w, cfg)?;
    let ceps = FeatureMatrix::new(dct2(&log_mel, cfg.num_ceps))?;
    if cfg.include_deltas {
        add_deltas(&ceps)
    } else {
        Ok(ceps)
    }
}

const DELTA_WINDOW: usize = 2;

/// Regression deltas over ±2 frames with edge replication.
fn deltas(m: &Matrix) -> Matrix {
    let t = m.rows();
    let denom = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Matrix::zeros(t, m.cols());
    for i in 0..t {
        for n in 1..=DELTA_WINDOW {
            let ahead = (i + n).min(t - 1);
            let behind = i.saturating_sub(n);
            for ((o, a), b) in out
                .row_mut(i)
                .iter_mut()
                .zip(m.row(ahead))
                .zip(m.row(behind))
            {
                *o += n as f64 * (a - b) / denom;
            }
        }
    }
    out
}

/// `[f | Δf | ΔΔf]`.
pub fn add_deltas(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.frames() == 0 {
        return Err(Error::invalid(
            "cannot compute deltas of an empty feature matrix",
        ));
    }
    let base = f.values();
    let d1 = deltas(base);
    let d2 = deltas(&d1);
    let dim = base.cols();
    let mut out = Matrix::zeros(base.rows(), 3 * dim);
    for r in 0..base.rows() {
        let row = out.row_mut(r);
        row[..dim].copy_from_slice(base.row(r));
        row[dim..2 * dim].copy_from_slice(d1.row(r));
        row[2 * dim..].copy_from_slice(d2.row(r));
    }
    FeatureMatrix::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, n: usize, amp: f64) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn frame_counts() {
        let cfg = MfccConfig::default();
        let w = Waveform::new(vec![0.1; 400], 16000).unwrap();
        assert_eq!(frame_signal(&w, &cfg).unwrap().len(), 1);
        let w = Waveform::new(vec![0.1; 1200], 16000).unwrap();
        assert_eq!(frame_signal(&w, &cfg).unwrap().len(), 6);
        let w = Waveform::new(vec![0.0; 1000], 16000).unwrap();
        assert!(frame_signal(&w, &cfg)
            .unwrap()
            .iter()
            .all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn too_short_waveform_names_minimum() {
        let w = Waveform::new(vec![0.0; 399], 16000).unwrap();
        let err = frame_signal(&w, &MfccConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("at least 400"), "{err}");
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let w = Waveform::new(vec![0.0; 48000], 48000).unwrap();
        assert!(mfcc(&w, &MfccConfig::default()).is_err());
    }

    #[test]
    fn silence_gives_constant_c0_and_zero_rest() {
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let f = mfcc(&w, &MfccConfig::default()).unwrap();
        assert_eq!(f.dim(), 39);
        let c0 = f.values()[(0, 0)];
        // orthonormal DCT of a constant ln(1e-10) vector over 26 filters
        let expected = (1e-10f64).ln() * 26f64.sqrt();
        assert!((c0 - expected).abs() < 1e-9);
        for row in f.values().iter_rows() {
            assert!((row[0] - c0).abs() < 1e-12);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn dimension_follows_delta_flag() {
        let w = sine(300.0, 3200, 0.5);
        let mut cfg = MfccConfig::default();
        assert_eq!(mfcc(&w, &cfg).unwrap().dim(), 39);
        cfg.include_deltas = false;
        assert_eq!(mfcc(&w, &cfg).unwrap().dim(), 13);
    }

    #[test]
    fn fft_power_matches_direct_dft() {
        let frame: Vec<f64> = (0..400)
            .map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0)
            .collect();
        let p = power_spectra(std::slice::from_ref(&frame));
        let nfft = 512;
        for k in [0usize, 1, 17, 100, 256] {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / nfft as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            let direct = re * re + im * im;
            assert!(
                (p[(0, k)] - direct).abs() <= 1e-9 * direct.max(1.0),
                "bin {k}"
            );
        }
    }

    #[test]
    fn tone_peaks_in_nearest_filter() {
        let cfg = MfccConfig::default();
        let w = sine(440.0, 16000, 1.0);
        let e = log_mel_energies(&w, &cfg).unwrap();
        let bank = MelFilterbank::new(cfg.mel_filters, 512, 16000);
        // reference: centre frequency nearest 440 Hz, found by linear scan
        let nearest = bank
            .centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        for row in e.iter_rows() {
            let peak = crate::numerics::argmax(row).unwrap();
            assert_eq!(peak, nearest);
        }
    }

    #[test]
    fn delta_edge_cases() {
        let constant = FeatureMatrix::new(Matrix::filled(7, 2, 3.0)).unwrap();
        let d = add_deltas(&constant).unwrap();
        assert_eq!(d.dim(), 6);
        assert!(d
            .values()
            .iter_rows()
            .all(|r| r[2..].iter().all(|v| *v == 0.0)));

        let single = FeatureMatrix::new(Matrix::from_rows(&[[1.0, -2.0]]).unwrap()).unwrap();
        let d = add_deltas(&single).unwrap();
        assert_eq!(d.values().row(0), &[1.0, -2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ramp_delta_equals_regression_slope() {
        let slopes = [0.5, -2.0];
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|t| slopes.iter().map(|s| s * t as f64 + 1.0).collect())
            .collect();
        let f = FeatureMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let d = add_deltas(&f).unwrap();
        // closed-form least-squares slope over a symmetric 5-point window
        let ts = [-2.0, -1.0, 0.0, 1.0, 2.0];
        for (c, s) in slopes.iter().enumerate() {
            let ys: Vec<f64> = ts.iter().map(|t| s * t).collect();
            let slope = ts.iter().zip(&ys).map(|(t, y)| t * y).sum::<f64>()
                / ts.iter().map(|t| t * t).sum::<f64>();
            for t in 2..10 {
                assert!((d.values()[(t, 2 + c)] - slope).abs() < 1e-12);
                // second derivative of a line vanishes away from the edges
                if (4..8).contains(&t) {
                    assert!(d.values()[(t, 4 + c)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deterministic_output() {
        let w = sine(523.0, 8000, 0.3);
        let cfg = MfccConfig::default();
        assert_eq!(mfcc(&w, &cfg).unwrap(), mfcc(&w, &cfg).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn n_frames_formula(n in 400usize..5000) {
            let w = Waveform::new(vec![0.01; n], 16000).unwrap();
            let frames = frame_signal(&w, &MfccConfig::default()).unwrap();
            prop_assert_eq!(frames.len(), (n - 400) / 160 + 1);
        }

        #[test]
        fn doubling_amplitude_shifts_only_c0(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..2400).map(|_| rng.random_range(-0.4..0.4)).collect();
            let cfg = MfccConfig { include_deltas: false, ..MfccConfig::default() };
            let a = mfcc(&Waveform::new(samples.clone(), 16000).unwrap(), &cfg).unwrap();
            let b = mfcc(&Waveform::new(samples.iter().map(|s| 2.0 * s).collect(), 16000).unwrap(), &cfg).unwrap();
            let shift = 4f64.ln() * 26f64.sqrt();
            for (ra, rb) in a.values().iter_rows().zip(b.values().iter_rows()) {
                prop_assert!((rb[0] - ra[0] - shift).abs() < 1e-9);
                for c in 1..13 {
                    prop_assert!((rb[c] - ra[c]).abs() < 1e-9);
                }
            }
        }
    }
}
