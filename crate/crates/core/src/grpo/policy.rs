//! Categorical rewrite policies.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::data::{QueryInstance, Turn};
use crate::templates::{candidates, NUM_SLOTS};

/// Numerically stable `log_softmax(logits / temperature)`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

/// Exact `KL(p || q)` from log-probabilities.
pub fn kl_divergence(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}

/// A policy with a finite action space per instance, parameterized through logits.
pub trait CategoricalPolicy {
    fn num_actions(&self) -> usize;

    fn logits(&self, instance: &QueryInstance) -> Vec<f64>;

    /// The raw model output for an action.
    fn render(&self, instance: &QueryInstance, action: usize) -> String;

    fn log_probs(&self, instance: &QueryInstance, temperature: f64) -> Vec<f64> {
        log_softmax(&self.logits(instance), temperature)
    }

    fn log_prob(&self, instance: &QueryInstance, action: usize, temperature: f64) -> f64 {
        self.log_probs(instance, temperature)[action]
    }

    fn sample<R: Rng + ?Sized>(&self, instance: &QueryInstance, n: usize, temperature: f64, rng: &mut R) -> Vec<usize> {
        let probs: Vec<f64> = self.log_probs(instance, temperature).iter().map(|l| l.exp()).collect();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return a;
                    }
                }
                probs.len() - 1
            })
            .collect()
    }

    /// Highest-logit action; ties go to the lowest index.
    fn greedy(&self, instance: &QueryInstance) -> usize {
        let logits = self.logits(instance);
        let mut best = 0;
        for (a, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = a;
            }
        }
        best
    }
}

/// A categorical policy whose logits are differentiable in a flat parameter vector.
pub trait TrainablePolicy: CategoricalPolicy + Clone + Sync {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Adds `d loss / d params` to `grad` given `d loss / d logits(instance)`.
    fn backprop_logits(&self, instance: &QueryInstance, dlogits: &[f64], grad: &mut [f64]);

    /// Frozen copy used as the old or reference policy.
    fn snapshot(&self) -> Self {
        self.clone()
    }
}

/// Tabular softmax over template rewrites. Instances are hashed into
/// `buckets` feature buckets; each bucket owns one logit per template slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub buckets: usize,
    pub slots: usize,
    /// Row-major `buckets x slots`.
    pub logits: Vec<f64>,
}

impl ToyPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(buckets: usize) -> Self {
        assert!(buckets > 0, "need at least one bucket");
        ToyPolicy {
            buckets,
            slots: NUM_SLOTS,
            logits: vec![0.0; buckets * NUM_SLOTS],
        }
    }

    /// FNV-1a over the lowercased history and query words.
    pub fn bucket_of(&self, history: &[Turn], query: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |s: &str| {
            for w in s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
                for b in w.to_lowercase().bytes().chain(std::iter::once(b' ')) {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for t in history {
            feed(&t.query);
            feed(&t.answer);
        }
        feed(query);
        (h % self.buckets as u64) as usize
    }

    pub fn bucket(&self, instance: &QueryInstance) -> usize {
        self.bucket_of(&instance.history, &instance.current_query)
    }

    pub fn bucket_logits(&self, bucket: usize) -> &[f64] {
        &self.logits[bucket * self.slots..(bucket + 1) * self.slots]
    }

    pub fn bucket_logits_mut(&mut self, bucket: usize) -> &mut [f64] {
        &mut self.logits[bucket * self.slots..(bucket + 1) * self.slots]
    }
}

impl CategoricalPolicy for ToyPolicy {
    fn num_actions(&self) -> usize {
        self.slots
    }

    fn logits(&self, instance: &QueryInstance) -> Vec<f64> {
        self.bucket_logits(self.bucket(instance)).to_vec()
    }

    fn render(&self, instance: &QueryInstance, action: usize) -> String {
        candidates(&instance.history, &instance.current_query)[action].render()
    }
}

impl TrainablePolicy for ToyPolicy {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn backprop_logits(&self, instance: &QueryInstance, dlogits: &[f64], grad: &mut [f64]) {
        let b = self.bucket(instance);
        for (g, d) in grad[b * self.slots..(b + 1) * self.slots].iter_mut().zip(dlogits) {
            *g += d;
        }
    }
}
