//! Count-based maximum-likelihood warm-up of the toy policy from SD-DATA.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use crate::data::SdSample;
use crate::templates::{candidates, Slot};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub samples: usize,
    pub matched: usize,
    /// Samples whose rewrite is not one of the toy candidates.
    pub unmatched: usize,
    pub skipped: bool,
}

/// Slot whose candidate rewrite equals the sample's rewrite, lowest index first.
pub fn match_slot(sample: &SdSample) -> Option<usize> {
    candidates(&sample.context, &sample.query)
        .iter()
        .find(|c| c.slot != Slot::Unformatted && c.rewrite == sample.rewrite().trim())
        .map(|c| c.slot.index())
}

/// Sets every bucket's logits to `ln(count + 1)` of the retained rewrites.
/// Buckets without samples stay uniform. Empty SD-DATA leaves the policy unchanged.
pub fn mle_warmup(policy: &ToyPolicy, samples: &[SdSample]) -> (ToyPolicy, WarmupReport) {
    let mut report = WarmupReport {
        samples: samples.len(),
        matched: 0,
        unmatched: 0,
        skipped: false,
    };
    if samples.is_empty() {
        tracing::warn!("SD-DATA is empty; skipping warm-up");
        report.skipped = true;
        return (policy.clone(), report);
    }
    let mut counts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in samples {
        match match_slot(s) {
            Some(slot) => {
                let b = policy.bucket_of(&s.context, &s.query);
                counts.entry(b).or_insert_with(|| vec![0.0; policy.slots])[slot] += 1.0;
                report.matched += 1;
            }
            None => report.unmatched += 1,
        }
    }
    if report.unmatched > 0 {
        tracing::warn!(unmatched = report.unmatched, "SD-DATA rewrites outside the candidate space were ignored");
    }
    let mut warmed = policy.clone();
    for (b, c) in counts {
        for (z, n) in warmed.bucket_logits_mut(b).iter_mut().zip(c) {
            *z = (n + 1.0).ln();
        }
    }
    (warmed, report)
}
