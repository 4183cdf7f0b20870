use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::event_log::EventLog;
use crate::seeds;

/// `floor(n * fraction)`, kept within `1..n` so that both sides are non-empty.
pub fn train_size(n: usize, fraction: f64) -> usize {
    let raw = (n as f64 * fraction + 1e-9).floor() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Trace-level split: every prefix of a case stays on one side.
pub fn split_train_test(log: &EventLog, train_fraction: f64, seed: u64) -> Result<(EventLog, EventLog)> {
    if log.len() < 2 {
        return Err(Error::TooFewTraces(log.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut ids: Vec<&str> = log.case_ids().collect();
    ids.shuffle(&mut seeds::rng(seed, "train-test-split"));
    let cut = train_size(ids.len(), train_fraction);
    Ok((log.subset(ids[..cut].iter().copied()), log.subset(ids[cut..].iter().copied())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_convention() {
        assert_eq!(train_size(10, 0.8), 8);
        assert_eq!(train_size(73_153, 0.8), 58_522);
        assert_eq!(train_size(2, 0.8), 1);
        assert_eq!(train_size(2, 0.1), 1);
    }
}
