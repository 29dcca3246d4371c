//! Pieces shared by the supervised training loops: early stopping, per-epoch
//! history and order-stable parallel gradient accumulation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best metric; keep these parameters.
    Improved,
    /// No improvement yet; `waited` evaluations since the best.
    Wait {
        waited: usize,
    },
    Stop,
}

/// Patience counter over a maximised metric.
///
/// The first observation is always an improvement; later ones must be
/// strictly greater than the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    waited: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        Ok(Self {
            patience,
            best: None,
            best_epoch: 0,
            waited: 0,
            seen: 0,
        })
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        self.seen += 1;
        match self.best {
            Some(b) if metric <= b => {
                self.waited += 1;
                log::debug!(
                    "early stopping counter: {} out of {}",
                    self.waited,
                    self.patience
                );
                if self.waited >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Wait {
                        waited: self.waited,
                    }
                }
            }
            _ => {
                self.best = Some(metric);
                self.best_epoch = self.seen;
                self.waited = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based index of the best observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,test_acc";

pub fn write_history<W: Write>(records: &[EpochRecord], mut w: W) -> Result<()> {
    let io = |e| Error::io("history", e);
    writeln!(w, "{HISTORY_HEADER}").map_err(io)?;
    for r in records {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_history(records: &[EpochRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(records, std::io::BufWriter::new(file))
}

/// Sums `(loss, flat gradient)` over `items`, evaluated in parallel.
///
/// Results are reduced in item order, so the sum does not depend on the
/// thread count.
pub fn batch_gradient<T, F>(items: &[T], num_params: usize, f: F) -> Result<(f64, Vec<f64>)>
where
    T: Sync,
    F: Fn(&T) -> Result<(f64, Vec<f64>)> + Sync,
{
    let parts: Vec<Result<(f64, Vec<f64>)>> = items.par_iter().map(&f).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; num_params];
    for part in parts {
        let (l, g) = part?;
        if g.len() != num_params {
            return Err(Error::shape(
                "batch gradient",
                format!("{} gradient entries for {num_params} parameters", g.len()),
            ));
        }
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("batch loss is {loss}")));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagnant_run_stops_after_patience() {
        let mut es = EarlyStopping::new(10).unwrap();
        let mut epochs = 0;
        loop {
            epochs += 1;
            if es.observe(0.5) == StopDecision::Stop {
                break;
            }
        }
        assert_eq!(epochs, 11);
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn improving_run_never_stops() {
        let mut es = EarlyStopping::new(10).unwrap();
        for e in 0..45 {
            assert_eq!(es.observe(e as f64), StopDecision::Improved);
        }
        assert_eq!(es.best_epoch(), 45);
    }

    #[test]
    fn counter_resets_on_improvement() {
        let mut es = EarlyStopping::new(2).unwrap();
        assert_eq!(es.observe(0.1), StopDecision::Improved);
        assert_eq!(es.observe(0.1), StopDecision::Wait { waited: 1 });
        assert_eq!(es.observe(0.2), StopDecision::Improved);
        assert_eq!(es.observe(0.0), StopDecision::Wait { waited: 1 });
        assert_eq!(es.observe(0.2), StopDecision::Stop);
        assert!(EarlyStopping::new(0).is_err());
    }

    #[test]
    fn history_format() {
        let mut buf = Vec::new();
        let r = EpochRecord {
            epoch: 1,
            train_loss: 1.25,
            train_acc: 0.5,
            test_acc: 0.25,
        };
        write_history(&[r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,train_acc,test_acc\n1,1.250000,0.500000,0.250000\n"
        );
    }

    #[test]
    fn batch_gradient_sums_in_order() {
        let items = [1.0, 2.0, 3.0];
        let (l, g) = batch_gradient(&items, 2, |x| Ok((*x, vec![*x, 2.0 * x]))).unwrap();
        assert_eq!(l, 6.0);
        assert_eq!(g, vec![6.0, 12.0]);
        assert!(batch_gradient(&items, 3, |x| Ok((*x, vec![*x]))).is_err());
    }
}
