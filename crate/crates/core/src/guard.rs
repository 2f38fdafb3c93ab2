//! Zero-glance instrumentation.
//!
//! Every unlearning-side operation (generator training, erasure, recovery,
//! baselines) reports the content hashes of the rows it consumes. An audit
//! then checks that no forgotten-class training row was ever touched.
//! Evaluation reads test data through its own functions and reports nothing,
//! which is the whitelisted path.

use crate::data::LabeledDataset;
use std::collections::HashSet;
use std::sync::Mutex;

static CONSUMED: Mutex<Option<HashSet<u64>>> = Mutex::new(None);

fn with_log<R>(f: impl FnOnce(&mut HashSet<u64>) -> R) -> R {
    let mut guard = CONSUMED.lock().expect("guard log poisoned");
    f(guard.get_or_insert_with(HashSet::new))
}

/// Record the rows an unlearning operation is about to consume.
pub fn record_consumption(data: &LabeledDataset) {
    let hashes = data.row_hashes();
    with_log(|log| log.extend(hashes));
}

/// Hashes recorded so far that also appear in `rows`.
pub fn consumed_intersection(rows: &[u64]) -> Vec<u64> {
    with_log(|log| {
        let mut hit: Vec<u64> = rows.iter().copied().filter(|h| log.contains(h)).collect();
        hit.sort_unstable();
        hit
    })
}

pub fn consumed_len() -> usize {
    with_log(|log| log.len())
}

/// Clear the log (test isolation).
pub fn reset() {
    with_log(|log| log.clear());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    #[test]
    fn detector_sees_recorded_rows() {
        let data = make_blobs(2, 3, 4, 5.0, 0.1, 99).unwrap();
        let hashes = data.row_hashes();
        assert!(consumed_intersection(&hashes).is_empty());
        record_consumption(&data);
        assert_eq!(consumed_intersection(&hashes).len(), hashes.len());
    }
}
