//! Clipped group-relative surrogate with an exact KL penalty, and its gradient.

use serde::{Deserialize, Serialize};

use super::policy::{kl_divergence, log_softmax, CategoricalPolicy, TrainablePolicy};
use super::GrpoError;
use crate::data::QueryInstance;
use crate::retrieval::RankOutcome;

/// `n` rollouts for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub instance: QueryInstance,
    pub actions: Vec<usize>,
    pub rewrites: Vec<String>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Gold rank reached by each rewrite.
    pub ranks: Vec<RankOutcome>,
}

impl GroupRollout {
    fn check(&self) -> Result<(), GrpoError> {
        let n = self.actions.len();
        if n == 0 || self.old_log_probs.len() != n || self.advantages.len() != n {
            return Err(GrpoError::Invariant(format!(
                "group {}: {} actions, {} old log-probs, {} advantages",
                self.instance.key(),
                n,
                self.old_log_probs.len(),
                self.advantages.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub temperature: f64,
}

/// One `min(ρA, clip(ρ)A)` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateTerm {
    pub ratio: f64,
    pub advantage: f64,
    pub unclipped: f64,
    pub clipped: f64,
    pub value: f64,
    /// The term depends on θ locally (the clip is not binding).
    pub active: bool,
}

pub fn surrogate_term(ratio: f64, advantage: f64, clip_eps: f64) -> SurrogateTerm {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    let inside = (1.0 - clip_eps..=1.0 + clip_eps).contains(&ratio);
    SurrogateTerm {
        ratio,
        advantage,
        unclipped,
        clipped,
        value: unclipped.min(clipped),
        active: inside || unclipped <= clipped,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Mean exact `KL(π_θ || π_ref)` over groups.
    pub kl: f64,
    pub terms: Vec<Vec<SurrogateTerm>>,
}

/// Mean over groups of `-(1/n) Σ min(ρA, clip(ρ)A) + β KL`, with sequence-level
/// ratios `ρ = π_θ(a) / π_old(a)`. Probabilities are `softmax(logits / T)`.
pub fn grpo_loss<P: CategoricalPolicy>(
    policy: &P,
    reference: &P,
    groups: &[GroupRollout],
    cfg: &LossConfig,
) -> Result<LossOutput, GrpoError> {
    evaluate(policy, reference, groups, cfg, |_, _| {})
}

/// Loss plus `d loss / d params`.
pub fn grpo_loss_and_grad<P: TrainablePolicy>(
    policy: &P,
    reference: &P,
    groups: &[GroupRollout],
    cfg: &LossConfig,
) -> Result<(LossOutput, Vec<f64>), GrpoError> {
    let mut grad = vec![0.0; policy.params().len()];
    let out = evaluate(policy, reference, groups, cfg, |inst, dz| {
        policy.backprop_logits(inst, dz, &mut grad)
    })?;
    Ok((out, grad))
}

fn evaluate<P: CategoricalPolicy>(
    policy: &P,
    reference: &P,
    groups: &[GroupRollout],
    cfg: &LossConfig,
    mut backprop: impl FnMut(&QueryInstance, &[f64]),
) -> Result<LossOutput, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::Config("loss needs at least one group".into()));
    }
    let g_scale = 1.0 / groups.len() as f64;
    let t = cfg.temperature;
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut all_terms = Vec::with_capacity(groups.len());
    for group in groups {
        group.check()?;
        let n = group.actions.len() as f64;
        let lp = log_softmax(&policy.logits(&group.instance), t);
        let lq = log_softmax(&reference.logits(&group.instance), t);
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let mut dz = vec![0.0; lp.len()];
        let mut surrogate = 0.0;
        let mut terms = Vec::with_capacity(group.actions.len());
        for ((&a, &old), &adv) in group.actions.iter().zip(&group.old_log_probs).zip(&group.advantages) {
            let term = surrogate_term((lp[a] - old).exp(), adv, cfg.clip_eps);
            surrogate += term.value;
            if term.active && adv != 0.0 {
                // d(-ρA/n)/dz_j = -(A ρ / n) (δ_aj - p_j) / T
                let coef = -adv * term.ratio / n * g_scale / t;
                for (j, d) in dz.iter_mut().enumerate() {
                    *d += coef * ((j == a) as u8 as f64 - p[j]);
                }
            }
            terms.push(term);
        }
        let kl = kl_divergence(&lp, &lq);
        if cfg.kl_coef != 0.0 {
            let coef = cfg.kl_coef * g_scale / t;
            for (j, d) in dz.iter_mut().enumerate() {
                *d += coef * p[j] * (lp[j] - lq[j] - kl);
            }
        }
        backprop(&group.instance, &dz);
        loss += g_scale * (-surrogate / n + cfg.kl_coef * kl);
        kl_sum += kl;
        all_terms.push(terms);
    }
    Ok(LossOutput {
        loss,
        kl: kl_sum * g_scale,
        terms: all_terms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameters compared against finite differences.
    pub checked: Vec<usize>,
    /// Active parameters skipped because a ratio sits near a clip boundary.
    pub excluded: Vec<usize>,
}

/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-8;

/// Central finite differences over every parameter the groups touch,
/// compared to the analytic gradient as `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn gradient_check<P: TrainablePolicy>(
    policy: &P,
    reference: &P,
    groups: &[GroupRollout],
    cfg: &LossConfig,
    h: f64,
    margin: f64,
) -> Result<GradCheck, GrpoError> {
    let (out, analytic) = grpo_loss_and_grad(policy, reference, groups, cfg)?;
    let touched = |group: &GroupRollout| {
        let mut mask = vec![0.0; policy.params().len()];
        policy.backprop_logits(&group.instance, &vec![1.0; policy.num_actions()], &mut mask);
        mask
    };
    let mut active = vec![false; analytic.len()];
    let mut near = vec![false; analytic.len()];
    for (group, terms) in groups.iter().zip(&out.terms) {
        let boundary = terms.iter().any(|t| {
            (t.ratio - (1.0 + cfg.clip_eps)).abs() <= margin || (t.ratio - (1.0 - cfg.clip_eps)).abs() <= margin
        });
        for (i, m) in touched(group).iter().enumerate() {
            if *m != 0.0 {
                active[i] = true;
                near[i] |= boundary;
            }
        }
    }
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: Vec::new(),
        excluded: Vec::new(),
    };
    let mut probe = policy.clone();
    for i in 0..analytic.len() {
        if !active[i] {
            continue;
        }
        if near[i] {
            report.excluded.push(i);
            continue;
        }
        let base = probe.params()[i];
        probe.params_mut()[i] = base + h;
        let up = grpo_loss(&probe, reference, groups, cfg)?.loss;
        probe.params_mut()[i] = base - h;
        let down = grpo_loss(&probe, reference, groups, cfg)?.loss;
        probe.params_mut()[i] = base;
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked.push(i);
    }
    Ok(report)
}
