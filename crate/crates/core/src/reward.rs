//! Rank-based rewards for rewrites.
//!
//! The default shaping is piecewise linear over two rank bands: ranks 1..=10
//! map affinely onto [2, 1] and ranks 11..=100 onto [1, 0) with rank 100
//! landing on 0. A format violation earns the (negative) format penalty
//! instead, and a gold passage outside the search depth earns 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::RankOutcome;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("invalid reward configuration: {0}")]
    Config(String),
    #[error("sparsity report needs at least one rank sample")]
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardVariant {
    PiecewiseLinear,
    ExponentialDecay,
    Reciprocal,
    DirectMrr3,
    DirectNdcg3,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 5] = [
        RewardVariant::PiecewiseLinear,
        RewardVariant::ExponentialDecay,
        RewardVariant::Reciprocal,
        RewardVariant::DirectMrr3,
        RewardVariant::DirectNdcg3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::PiecewiseLinear => "piecewise-linear",
            RewardVariant::ExponentialDecay => "exponential-decay",
            RewardVariant::Reciprocal => "reciprocal",
            RewardVariant::DirectMrr3 => "direct-mrr3",
            RewardVariant::DirectNdcg3 => "direct-ndcg3",
        }
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RewardVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| RewardError::Config(format!("unknown reward variant {s:?}")))
    }
}

/// Affine map from a closed rank interval onto a value interval.
/// `value_at_first` is the value at `first_rank`, `value_at_last` at `last_rank`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub first_rank: f64,
    pub last_rank: f64,
    pub value_at_first: f64,
    pub value_at_last: f64,
}

impl Band {
    pub fn map(&self, rank: f64) -> f64 {
        let t = (rank - self.first_rank) / (self.last_rank - self.first_rank);
        self.value_at_first - t * (self.value_at_first - self.value_at_last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub format_penalty: f64,
    /// Selected for ranks in `[first_rank, last_rank]`.
    pub top_band: Band,
    /// Selected for ranks in `(top_band.last_rank, last_rank]`.
    pub mid_band: Band,
    /// Cutoff of the direct-metric rewards.
    pub metric_cutoff: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            variant: RewardVariant::PiecewiseLinear,
            format_penalty: -0.1,
            top_band: Band {
                first_rank: 1.0,
                last_rank: 10.0,
                value_at_first: 2.0,
                value_at_last: 1.0,
            },
            mid_band: Band {
                first_rank: 10.0,
                last_rank: 100.0,
                value_at_first: 1.0,
                value_at_last: 0.0,
            },
            metric_cutoff: 3,
        }
    }
}

impl RewardConfig {
    pub fn with_variant(variant: RewardVariant) -> Self {
        RewardConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.format_penalty < 0.0) {
            return Err(RewardError::Config("format_penalty must be negative".into()));
        }
        let (t, m) = (self.top_band, self.mid_band);
        if !(t.first_rank >= 1.0 && t.first_rank < t.last_rank) {
            return Err(RewardError::Config("top band must be a non-empty rank interval starting at >= 1".into()));
        }
        if m.first_rank != t.last_rank || !(m.last_rank > m.first_rank) {
            return Err(RewardError::Config("mid band must start where the top band ends".into()));
        }
        if self.metric_cutoff == 0 {
            return Err(RewardError::Config("metric_cutoff must be at least 1".into()));
        }
        Ok(())
    }

    /// Piecewise-linear shaping over the two bands.
    pub fn rirs(&self, rank: RankOutcome) -> f64 {
        let Some(r) = rank.rank() else { return 0.0 };
        let r = r as f64;
        if r >= self.top_band.first_rank && r <= self.top_band.last_rank {
            self.top_band.map(r)
        } else if r > self.mid_band.first_rank && r <= self.mid_band.last_rank {
            self.mid_band.map(r)
        } else {
            0.0
        }
    }

    /// Shaped reward of the configured variant, ignoring format.
    pub fn shaped(&self, rank: RankOutcome) -> f64 {
        self.shaped_as(self.variant, rank)
    }

    pub fn shaped_as(&self, variant: RewardVariant, rank: RankOutcome) -> f64 {
        match variant {
            RewardVariant::PiecewiseLinear => self.rirs(rank),
            RewardVariant::ExponentialDecay | RewardVariant::Reciprocal => reward_variant(variant, rank),
            RewardVariant::DirectMrr3 | RewardVariant::DirectNdcg3 => {
                direct_metric_reward(variant, rank, self.metric_cutoff)
            }
        }
    }

    /// Shaped reward when the output is format-compliant, else the penalty.
    pub fn full_reward(&self, rank: RankOutcome, format_ok: bool) -> f64 {
        if format_ok {
            self.shaped(rank)
        } else {
            self.format_penalty
        }
    }

    pub fn outcome(&self, rank: RankOutcome, format_ok: bool) -> RewardOutcome {
        RewardOutcome {
            value: self.full_reward(rank, format_ok),
            rank,
            format_ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: f64,
    pub rank: RankOutcome,
    pub format_ok: bool,
}

/// `e^(1-rank)` or `1/rank`; 0 when the rank is absent.
pub fn reward_variant(variant: RewardVariant, rank: RankOutcome) -> f64 {
    let Some(r) = rank.rank() else { return 0.0 };
    match variant {
        RewardVariant::ExponentialDecay => (1.0 - r as f64).exp(),
        RewardVariant::Reciprocal => 1.0 / r as f64,
        _ => panic!("{} is not a closed-form rank variant", variant.name()),
    }
}

/// Single-gold MRR@k or binary NDCG@k.
pub fn direct_metric_reward(variant: RewardVariant, rank: RankOutcome, k: usize) -> f64 {
    match rank.rank() {
        Some(r) if r <= k => match variant {
            RewardVariant::DirectMrr3 => 1.0 / r as f64,
            RewardVariant::DirectNdcg3 => 1.0 / ((r + 1) as f64).log2(),
            _ => panic!("{} is not a direct-metric variant", variant.name()),
        },
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub variant: RewardVariant,
    pub zero_fraction: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Zero fraction, mean and population variance of each variant's reward over
/// the given ranks.
pub fn sparsity_report(
    config: &RewardConfig,
    ranks: &[RankOutcome],
    variants: &[RewardVariant],
) -> Result<Vec<SparsityRow>, RewardError> {
    if ranks.is_empty() {
        return Err(RewardError::NoSamples);
    }
    let n = ranks.len() as f64;
    Ok(variants
        .iter()
        .map(|&v| {
            let values: Vec<f64> = ranks.iter().map(|&r| config.shaped_as(v, r)).collect();
            let zeros = values.iter().filter(|&&x| x == 0.0).count();
            let mean = values.iter().sum::<f64>() / n;
            let variance = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            SparsityRow {
                variant: v,
                zero_fraction: zeros as f64 / n,
                mean,
                variance,
            }
        })
        .collect())
}

pub fn sparsity_csv(rows: &[SparsityRow]) -> String {
    let mut s = String::from("variant,zero_fraction,mean,variance\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.variant.name(), r.zero_fraction, r.mean, r.variance);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rank(r: usize) -> RankOutcome {
        RankOutcome::at(r)
    }

    #[test]
    fn rirs_endpoints_and_midpoint() {
        let c = RewardConfig::default();
        assert_eq!(c.rirs(rank(1)), 2.0);
        assert_eq!(c.rirs(rank(10)), 1.0);
        assert_eq!(c.rirs(rank(100)), 0.0);
        assert!((c.rirs(rank(55)) - 0.5).abs() < 1e-12);
        assert_eq!(c.rirs(rank(101)), 0.0);
        assert_eq!(c.rirs(RankOutcome::ABSENT), 0.0);
        assert!((c.rirs(rank(11)) - 89.0 / 90.0).abs() < 1e-12);
        assert!((c.rirs(rank(2)) - (2.0 - 1.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_variants() {
        assert_eq!(reward_variant(RewardVariant::ExponentialDecay, rank(1)), 1.0);
        assert_eq!(reward_variant(RewardVariant::Reciprocal, rank(4)), 0.25);
        assert!((reward_variant(RewardVariant::ExponentialDecay, rank(3)) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((reward_variant(RewardVariant::ExponentialDecay, rank(3)) - 0.1353).abs() < 1e-4);
        assert_eq!(reward_variant(RewardVariant::Reciprocal, RankOutcome::ABSENT), 0.0);
    }

    #[test]
    fn direct_metrics() {
        assert_eq!(direct_metric_reward(RewardVariant::DirectMrr3, rank(2), 3), 0.5);
        assert_eq!(direct_metric_reward(RewardVariant::DirectMrr3, rank(7), 3), 0.0);
        assert_eq!(direct_metric_reward(RewardVariant::DirectNdcg3, rank(3), 3), 0.5);
        assert_eq!(direct_metric_reward(RewardVariant::DirectNdcg3, rank(1), 3), 1.0);
    }

    #[test]
    fn full_reward_composition() {
        let c = RewardConfig::default();
        assert_eq!(c.full_reward(rank(1), true), 2.0);
        assert_eq!(c.full_reward(rank(1), false), -0.1);
        assert_eq!(c.full_reward(RankOutcome::ABSENT, false), -0.1);
        assert_eq!(c.full_reward(RankOutcome::ABSENT, true), 0.0);
        let o = c.outcome(RankOutcome::ABSENT, true);
        assert_eq!(o.value, 0.0);
    }

    #[test]
    fn sparsity_uniform_ranks() {
        let ranks: Vec<_> = (1..=1000).map(rank).collect();
        let rows = sparsity_report(
            &RewardConfig::default(),
            &ranks,
            &[RewardVariant::DirectMrr3, RewardVariant::PiecewiseLinear],
        )
        .unwrap();
        assert_eq!(rows[0].zero_fraction, 0.997);
        assert_eq!(rows[1].zero_fraction, 0.901);
    }

    #[test]
    fn sparsity_extremes() {
        let c = RewardConfig::default();
        let ones = vec![rank(1); 10];
        for row in sparsity_report(&c, &ones, &RewardVariant::ALL).unwrap() {
            assert_eq!(row.zero_fraction, 0.0);
            assert_eq!(row.variance, 0.0);
        }
        let absent = vec![RankOutcome::ABSENT; 10];
        for row in sparsity_report(&c, &absent, &RewardVariant::ALL).unwrap() {
            assert_eq!(row.zero_fraction, 1.0);
        }
        assert_eq!(sparsity_report(&c, &[], &RewardVariant::ALL), Err(RewardError::NoSamples));
    }

    #[test]
    fn csv_shape() {
        let rows = sparsity_report(&RewardConfig::default(), &[rank(1)], &[RewardVariant::Reciprocal]).unwrap();
        assert_eq!(sparsity_csv(&rows), "variant,zero_fraction,mean,variance\nreciprocal,0,1,0\n");
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig {
            format_penalty: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let mut gap = RewardConfig::default();
        gap.mid_band.first_rank = 12.0;
        assert!(gap.validate().is_err());
        assert_eq!("reciprocal".parse::<RewardVariant>().unwrap(), RewardVariant::Reciprocal);
        assert!("nope".parse::<RewardVariant>().is_err());
    }

    #[test]
    fn support_of_rirs() {
        let c = RewardConfig::default();
        for r in 1..=99 {
            assert!(c.rirs(rank(r)) > 0.0);
        }
        for r in 100..=300 {
            assert_eq!(c.rirs(rank(r)), 0.0);
        }
    }

    proptest! {
        #[test]
        fn monotone_for_every_variant(a in 1usize..300, b in 1usize..300) {
            let c = RewardConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for v in RewardVariant::ALL {
                prop_assert!(c.shaped_as(v, rank(lo)) >= c.shaped_as(v, rank(hi)));
            }
            if lo < hi && hi <= 100 {
                prop_assert!(c.rirs(rank(lo)) > c.rirs(rank(hi)));
            }
        }

        #[test]
        fn strictly_monotone_variants_preserve_ordering(ranks in proptest::collection::vec(1usize..100, 2..10)) {
            let c = RewardConfig::default();
            let order = |v: RewardVariant| {
                let mut idx: Vec<usize> = (0..ranks.len()).collect();
                idx.sort_by(|&i, &j| c.shaped_as(v, rank(ranks[j])).total_cmp(&c.shaped_as(v, rank(ranks[i]))).then(i.cmp(&j)));
                idx
            };
            let base = order(RewardVariant::PiecewiseLinear);
            prop_assert_eq!(&base, &order(RewardVariant::Reciprocal));
        }
    }
}
