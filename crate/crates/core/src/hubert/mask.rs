//! Span masking of encoder inputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub span_len: usize,
    pub target_coverage: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            span_len: 10,
            target_coverage: 0.5,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.span_len == 0 {
            return Err(Error::invalid("mask span length must be at least 1"));
        }
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return Err(Error::invalid(format!(
                "mask coverage {} outside (0, 1]",
                self.target_coverage
            )));
        }
        Ok(())
    }
}

/// Frame mask built from spans of `span_len` frames.
///
/// Span starts are drawn without replacement from `0..=n−span_len` until the
/// masked fraction reaches the target. Sequences shorter than one span are
/// masked entirely.
pub fn make_masks(num_frames: usize, spec: &MaskSpec, seed: u64) -> Vec<bool> {
    let mut mask = vec![false; num_frames];
    if num_frames == 0 {
        return mask;
    }
    let mut starts: Vec<usize> = (0..=num_frames.saturating_sub(spec.span_len)).collect();
    starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = (spec.target_coverage * num_frames as f64).ceil() as usize;
    let mut covered = 0;
    for s in starts {
        if covered >= target {
            break;
        }
        for m in &mut mask[s..(s + spec.span_len).min(num_frames)] {
            if !*m {
                *m = true;
                covered += 1;
            }
        }
    }
    mask
}

pub fn coverage(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64
}
