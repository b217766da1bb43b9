//! Confusion matrices and IoU with background exclusion.
//!
//! Dataset-level scores come from one matrix accumulated over every image
//! (micro aggregation), so the result does not depend on how images are
//! sharded or ordered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, LabelMap};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_ids: Vec<u8>,
    /// Row-major, `counts[t * n + p]` = pixels with truth `t` predicted `p`.
    counts: Vec<u64>,
    #[serde(skip, default = "empty_index")]
    index: Vec<Option<usize>>,
}

impl PartialEq for ConfusionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.class_ids == other.class_ids && self.counts == other.counts
    }
}

impl Eq for ConfusionMatrix {}

fn empty_index() -> Vec<Option<usize>> {
    Vec::new()
}

impl ConfusionMatrix {
    /// An all-zero matrix over `class_ids` (deduplicated and sorted).
    pub fn new(class_ids: impl IntoIterator<Item = u8>) -> Self {
        let mut class_ids: Vec<u8> = class_ids.into_iter().collect();
        class_ids.sort_unstable();
        class_ids.dedup();
        let n = class_ids.len();
        let mut cm = Self {
            class_ids,
            counts: vec![0; n * n],
            index: Vec::new(),
        };
        cm.rebuild_index();
        cm
    }

    fn rebuild_index(&mut self) {
        let mut index = vec![None; 256];
        for (i, &c) in self.class_ids.iter().enumerate() {
            index[c as usize] = Some(i);
        }
        self.index = index;
    }

    fn slot(&self, class_id: u8) -> Option<usize> {
        match self.index.get(class_id as usize) {
            Some(slot) => *slot,
            None => self.class_ids.iter().position(|&c| c == class_id),
        }
    }

    pub fn class_ids(&self) -> &[u8] {
        &self.class_ids
    }

    pub fn count(&self, truth: u8, pred: u8) -> u64 {
        match (self.slot(truth), self.slot(pred)) {
            (Some(t), Some(p)) => self.counts[t * self.class_ids.len() + p],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one truth/prediction pair. Pixels whose truth is `background_id`
    /// are skipped; predicted background on other pixels is a miss.
    pub fn accumulate(
        &mut self,
        truth: &LabelMap,
        pred: &LabelMap,
        background_id: u8,
    ) -> Result<()> {
        ensure_same_dims(truth.dims(), pred.dims())?;
        let n = self.class_ids.len();
        let mut delta = vec![0u64; n * n];
        for (&t, &p) in truth.labels().iter().zip(pred.labels()) {
            if t == background_id {
                continue;
            }
            let ti = self.slot(t).ok_or(Error::UnknownClass(t))?;
            let pi = self.slot(p).ok_or(Error::UnknownClass(p))?;
            delta[ti * n + pi] += 1;
        }
        for (c, d) in self.counts.iter_mut().zip(delta) {
            *c += d;
        }
        Ok(())
    }

    /// Elementwise sum. Both matrices must share the same class list.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_ids != other.class_ids {
            return Err(Error::InvalidConfig(
                "cannot merge confusion matrices over different classes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// (TP, FP, FN) for one class.
    pub fn outcome(&self, class_id: u8) -> (u64, u64, u64) {
        let Some(c) = self.slot(class_id) else {
            return (0, 0, 0);
        };
        let n = self.class_ids.len();
        let tp = self.counts[c * n + c];
        let predicted: u64 = (0..n).map(|t| self.counts[t * n + c]).sum();
        let actual: u64 = self.counts[c * n..(c + 1) * n].iter().sum();
        (tp, predicted - tp, actual - tp)
    }

    /// TP / (TP + FP + FN), or `None` when the class appears in neither
    /// truth nor prediction.
    pub fn iou(&self, class_id: u8) -> Option<f64> {
        let (tp, fp, fn_) = self.outcome(class_id);
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Unweighted mean of the defined IoUs, background excluded.
    pub fn miou(&self, background_id: u8) -> Result<f64> {
        let defined: Vec<f64> = self
            .class_ids
            .iter()
            .filter(|&&c| c != background_id)
            .filter_map(|&c| self.iou(c))
            .collect();
        if defined.is_empty() {
            return Err(Error::NoDefinedClasses);
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}
