use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::container::{Record, Split};
use crate::error::{Error, Result};
use crate::pose::Pose;

/// Gatekeeper for pose labels during training.
///
/// Real-domain labels are readable only for training ids whose labeled rank is
/// below `n_labeled`; every successful real read is recorded by id so a run can
/// prove how many distinct real labels it touched. Synthetic labels are always
/// readable and counted separately.
#[derive(Debug)]
pub struct LabelGuard {
    n_labeled: usize,
    real_ids: Mutex<BTreeSet<u32>>,
    real_reads: AtomicUsize,
    synthetic_reads: AtomicUsize,
    denied: AtomicUsize,
}

impl LabelGuard {
    pub fn new(n_labeled: usize) -> Self {
        LabelGuard {
            n_labeled,
            real_ids: Mutex::new(BTreeSet::new()),
            real_reads: AtomicUsize::new(0),
            synthetic_reads: AtomicUsize::new(0),
            denied: AtomicUsize::new(0),
        }
    }

    pub fn n_labeled(&self) -> usize {
        self.n_labeled
    }

    pub fn is_labeled(&self, rec: &Record) -> bool {
        rec.split == Split::Train && (rec.label_rank as usize) < self.n_labeled
    }

    /// The real-domain label of `rec`, or [`Error::LabelAccess`] if it is unlabeled.
    pub fn real_pose<'r>(&self, rec: &'r Record) -> Result<&'r Pose> {
        if !self.is_labeled(rec) {
            self.denied.fetch_add(1, Ordering::Relaxed);
            return Err(Error::LabelAccess { id: rec.id });
        }
        self.real_reads.fetch_add(1, Ordering::Relaxed);
        self.real_ids.lock().unwrap().insert(rec.id);
        Ok(rec.pose_unguarded())
    }

    /// The synthetic-domain label of a training record.
    pub fn synthetic_pose<'r>(&self, rec: &'r Record) -> Result<&'r Pose> {
        if rec.split != Split::Train {
            self.denied.fetch_add(1, Ordering::Relaxed);
            return Err(Error::LabelAccess { id: rec.id });
        }
        self.synthetic_reads.fetch_add(1, Ordering::Relaxed);
        Ok(rec.pose_unguarded())
    }

    /// Distinct ids whose real label has been read.
    pub fn distinct_real_ids(&self) -> usize {
        self.real_ids.lock().unwrap().len()
    }

    pub fn real_ids(&self) -> Vec<u32> {
        self.real_ids.lock().unwrap().iter().copied().collect()
    }

    pub fn real_reads(&self) -> usize {
        self.real_reads.load(Ordering::Relaxed)
    }

    pub fn synthetic_reads(&self) -> usize {
        self.synthetic_reads.load(Ordering::Relaxed)
    }

    /// Attempted reads that were refused.
    pub fn denied(&self) -> usize {
        self.denied.load(Ordering::Relaxed)
    }
}
