//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::Request;
use convsearch_cli::service::{router, ScoreResponse, ServiceState};
use convsearch_core::data::{load_sd_data, Corpus, Passage, QueryInstance};
use convsearch_core::distill::{filter_generations, save_sdpwu, source_instance, DistillConfig, Generations, RawOutput, TemplateGenerator};
use convsearch_core::format::{render_output, validate};
use convsearch_core::grpo::{
    compute_advantages, gradient_check, grpo_loss, grpo_loss_and_grad, write_log_jsonl, CategoricalPolicy, GroupRollout,
    LossConfig, ToyPolicy,
};
use convsearch_core::metrics::{mrr_at_k, ndcg_at_k, recall_at_k, Qrels, Run};
use convsearch_core::pipeline::{run_ablation, AblationReport, PipelineConfig};
use convsearch_core::retrieval::{
    rank_of_gold, tokenize, Bm25Params, DenseIndex, Embedder, HashEmbedder, IndexFile, InvertedIndex, RankOutcome,
    RankedList, RetrievalError, Retriever, ScoredPassage, TokenizerConfig, TruncationLimits,
};
use convsearch_core::reward::{sparsity_report, RewardConfig, RewardVariant};
use convsearch_core::scoring::score_output;
use convsearch_core::synthetic::{SyntheticBenchmark, DEFAULT_SEED};
use convsearch_core::templates::{candidates, NUM_SLOTS};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: got {a}, want {b}"))
}

// 1
fn reward_exactness() -> Check {
    let c = RewardConfig::default();
    let at = RankOutcome::at;
    close(c.rirs(at(1)), 2.0, 1e-12, "rirs(1)")?;
    close(c.rirs(at(10)), 1.0, 1e-12, "rirs(10)")?;
    close(c.rirs(at(100)), 0.0, 1e-12, "rirs(100)")?;
    close(c.rirs(at(55)), 0.5, 1e-12, "rirs(55)")?;
    for r in [RankOutcome::ABSENT, at(1), at(37), at(150)] {
        close(c.full_reward(r, false), -0.1, 1e-12, "format-invalid reward")?;
    }
    close(c.shaped_as(RewardVariant::ExponentialDecay, at(1)), 1.0, 1e-12, "exponential rank 1")?;
    close(c.shaped_as(RewardVariant::Reciprocal, at(4)), 0.25, 1e-12, "reciprocal rank 4")?;
    Ok("rirs 1/10/55/100, penalty, exponential, reciprocal".into())
}

// 2
fn reward_shape() -> Check {
    let c = RewardConfig::default();
    for v in RewardVariant::ALL {
        for r in 1..200 {
            let (a, b) = (c.shaped_as(v, RankOutcome::at(r)), c.shaped_as(v, RankOutcome::at(r + 1)));
            ensure(b <= a, || format!("{} increases from rank {r} to {}", v.name(), r + 1))?;
        }
    }
    let left = c.top_band.map(10.0);
    let right = c.mid_band.map(10.0);
    close(left, right, 1e-12, "band values at rank 10")?;
    let eps = 1e-9;
    close(c.top_band.map(10.0 - eps), c.mid_band.map(10.0 + eps), 1e-8, "limits around rank 10")?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let scale = rng.random_range(1.0..400.0);
        let absent = rng.random_range(0.0..0.5);
        let ranks: Vec<RankOutcome> = (0..200)
            .map(|_| {
                if rng.random::<f64>() < absent {
                    RankOutcome::ABSENT
                } else {
                    let u: f64 = rng.random();
                    RankOutcome::at(1 + (-scale * (1.0 - u).ln()) as usize)
                }
            })
            .collect();
        let rows = sparsity_report(&c, &ranks, &[RewardVariant::DirectMrr3, RewardVariant::PiecewiseLinear]).unwrap();
        ensure(rows[0].zero_fraction >= rows[1].zero_fraction, || {
            format!("trial {trial}: mrr3 zeros {} < rirs zeros {}", rows[0].zero_fraction, rows[1].zero_fraction)
        })?;
    }
    Ok("monotone for 5 variants over 1..200, continuous at 10, sparsity dominance on 1000 distributions".into())
}

// 3
fn advantage_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    let mut groups = 0;
    while groups < 10_000 {
        let rewards: Vec<f64> = (0..8)
            .map(|_| match rng.random_range(0..3) {
                0 => -0.1,
                1 => rng.random_range(0.0..2.0),
                _ => *[0.0, 1.0, 2.0].choose(&mut rng).unwrap(),
            })
            .collect();
        if rewards.iter().all(|r| *r == rewards[0]) {
            continue;
        }
        groups += 1;
        let a = compute_advantages(&rewards, 1e-6).map_err(|e| e.to_string())?;
        let mean = a.iter().sum::<f64>() / 8.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    ensure(worst_mean <= 1e-9, || format!("max |mean(A)| = {worst_mean:e}"))?;
    ensure(worst_std <= 1e-3, || format!("max |std(A)-1| = {worst_std:e}"))?;
    for v in [-0.1, 0.0, 1.3, 2.0] {
        let a = compute_advantages(&[v; 8], 1e-6).map_err(|e| e.to_string())?;
        ensure(a.iter().all(|x| *x == 0.0), || format!("constant group {v} gives {a:?}"))?;
    }
    Ok(format!("10000 groups, max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}"))
}

fn random_groups(rng: &mut ChaCha8Rng, old: &ToyPolicy, instances: &[QueryInstance], t: f64) -> Vec<GroupRollout> {
    (0..rng.random_range(1..5))
        .map(|_| {
            let inst = instances.choose(rng).unwrap().clone();
            let n = rng.random_range(2..9);
            let actions = old.sample(&inst, n, t, rng);
            let lp = old.log_probs(&inst, t);
            GroupRollout {
                old_log_probs: actions.iter().map(|&a| lp[a]).collect(),
                rewrites: vec![String::new(); n],
                rewards: vec![0.0; n],
                advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                ranks: vec![RankOutcome::ABSENT; n],
                actions,
                instance: inst,
            }
        })
        .collect()
}

fn random_policy(rng: &mut ChaCha8Rng, buckets: usize, scale: f64) -> ToyPolicy {
    let mut p = ToyPolicy::uniform(buckets);
    for x in &mut p.logits {
        *x = rng.random_range(-scale..scale);
    }
    p
}

// 4
fn gradient_correctness(instances: &[QueryInstance]) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut checked, mut excluded, mut clipped) = (0.0f64, 0, 0, 0);
    for case in 0..50 {
        let buckets = rng.random_range(2..8);
        let old = random_policy(&mut rng, buckets, 1.5);
        let mut cur = old.clone();
        for x in &mut cur.logits {
            *x += rng.random_range(-0.5..0.5);
        }
        let reference = random_policy(&mut rng, buckets, 1.5);
        let groups = random_groups(&mut rng, &old, instances, 0.7);
        let cfg = LossConfig {
            clip_eps: 0.2,
            kl_coef: [0.0, 0.001, 0.1][case % 3],
            temperature: 0.7,
        };
        let gc = gradient_check(&cur, &reference, &groups, &cfg, 1e-5, 1e-3).map_err(|e| e.to_string())?;
        worst = worst.max(gc.max_rel_error);
        checked += gc.checked.len();
        excluded += gc.excluded.len();
        let out = grpo_loss(&cur, &reference, &groups, &cfg).map_err(|e| e.to_string())?;
        clipped += out.terms.iter().flatten().filter(|t| !t.active).count();
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    ensure(checked > 0 && clipped > 0, || format!("degenerate: checked {checked}, clipped terms {clipped}"))?;

    for case in 0..10 {
        let p = random_policy(&mut rng, 4, 1.0);
        let mut groups = random_groups(&mut rng, &p, instances, 0.7);
        for g in &mut groups {
            let v = rng.random_range(-0.1..2.0);
            g.advantages = compute_advantages(&vec![v; g.actions.len()], 1e-6).map_err(|e| e.to_string())?;
        }
        // Either no KL term, or a reference equal to the policy.
        let (reference, kl_coef) = if case % 2 == 0 { (random_policy(&mut rng, 4, 1.0), 0.0) } else { (p.clone(), 0.001) };
        let cfg = LossConfig {
            clip_eps: 0.2,
            kl_coef,
            temperature: 0.7,
        };
        let (_, grad) = grpo_loss_and_grad(&p, &reference, &groups, &cfg).map_err(|e| e.to_string())?;
        ensure(grad.iter().all(|g| *g == 0.0), || format!("zero-advantage case {case} has gradient {grad:?}"))?;
    }
    Ok(format!(
        "50 cases, max rel err {worst:.2e}, {checked} params checked, {excluded} near clip excluded, {clipped} clipped terms"
    ))
}

const VOCAB: &[&str] = &[
    "river", "rivers", "bridge", "stone", "market", "harbor", "council", "festival", "lantern", "salt", "amber", "copper",
    "wool", "the", "of", "and", "founded", "founding", "town", "towns", "mill", "north", "south", "old", "ferry", "toll",
];

/// Exhaustive BM25: every document scored from its own token list.
fn bm25_oracle(docs: &[(String, Vec<String>)], p: Bm25Params, q: &[String], k: usize) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len() as u64).sum::<u64>() as f64 / n;
    let mut df: HashMap<&String, f64> = HashMap::new();
    for term in q {
        df.entry(term)
            .or_insert_with(|| docs.iter().filter(|(_, d)| d.contains(term)).count() as f64);
    }
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, toks)| {
            let mut s = 0.0;
            for term in q {
                let tf = toks.iter().filter(|t| *t == term).count() as f64;
                if tf > 0.0 {
                    let idf = ((n - df[term] + 0.5) / (df[term] + 0.5) + 1.0).ln();
                    s += idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * toks.len() as f64 / avgdl));
                }
            }
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn dense_oracle(corpus: &Corpus, e: &HashEmbedder, query: &str, k: usize) -> Vec<(String, f64)> {
    let q = e.embed_query(query);
    let mut scored: Vec<(String, f64)> = corpus
        .values()
        .map(|p| {
            let v = e.embed_passage(&p.text);
            let mut s = 0.0;
            for i in 0..v.len() {
                s += v[i] * q[i];
            }
            (p.id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn pairs(l: &RankedList) -> Vec<(String, f64)> {
    l.entries.iter().map(|e| (e.id.clone(), e.score)).collect()
}

// 5
fn retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (tok, lim) = (TokenizerConfig::default(), TruncationLimits::default());
    let mut ties = 0;
    for c in 0..20 {
        let n = rng.random_range(10..=500);
        let mut texts: Vec<String> = Vec::new();
        for i in 0..n {
            let text = if i % 9 == 8 {
                texts.choose(&mut rng).unwrap().clone()
            } else {
                let len = rng.random_range(1..40);
                (0..len).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
            };
            texts.push(text);
        }
        let corpus: Corpus = texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                let id = format!("c{c}p{:05}", (i * 7919) % 100_000);
                (id.clone(), Passage { id, text })
            })
            .collect();
        let docs: Vec<(String, Vec<String>)> =
            corpus.values().map(|p| (p.id.clone(), tokenize(&p.text, &tok, lim.passage_tokens))).collect();
        let params = if c % 2 == 0 { Bm25Params::TOPIOCQA } else { Bm25Params::QRECC };
        let sparse = InvertedIndex::build(&corpus, tok, lim, params).map_err(|e| e.to_string())?;
        let emb = HashEmbedder::new(32 + c, c as u64);
        let dense = DenseIndex::build(&corpus, emb).map_err(|e| e.to_string())?;
        for qn in 0..50 {
            let len = rng.random_range(1..6);
            let query = (0..len).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            let k = *[1, 3, 10, 100, n].choose(&mut rng).unwrap();
            let got = pairs(&sparse.retrieve(&query, k).map_err(|e| e.to_string())?);
            let want = bm25_oracle(&docs, params, &tokenize(&query, &tok, lim.query_tokens), k);
            ensure(got == want, || format!("corpus {c} query {qn} {query:?}: BM25 top-{k} differs"))?;
            ties += got.windows(2).filter(|w| w[0].1 == w[1].1).count();
            let got = pairs(&dense.retrieve(&query, k).map_err(|e| e.to_string())?);
            ensure(got == dense_oracle(&corpus, &emb, &query, k), || {
                format!("corpus {c} query {qn} {query:?}: dense top-{k} differs")
            })?;
        }
    }
    ensure(ties > 0, || "no score ties exercised".into())?;
    Ok(format!("20 corpora x 50 queries, BM25 and dense exact, {ties} tied neighbours"))
}

fn list(ids: &[String]) -> RankedList {
    RankedList {
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredPassage {
                id: id.clone(),
                score: -(i as f64),
            })
            .collect(),
    }
}

// 6
fn metric_oracle() -> Check {
    let one = |ids: &[&str], rel: &[&str]| -> (Run, Qrels) {
        (
            BTreeMap::from([("q".to_string(), list(&ids.iter().map(|s| s.to_string()).collect::<Vec<_>>()))]),
            BTreeMap::from([("q".to_string(), rel.iter().map(|s| s.to_string()).collect())]),
        )
    };
    let (run, q) = one(&["a", "g", "b"], &["g"]);
    let m = mrr_at_k(&run, &q, 3).map_err(|e| e.to_string())?;
    ensure(m == 0.5, || format!("gold rank 2: MRR@3 = {m}"))?;
    let (run, q) = one(&["a", "b", "g"], &["g"]);
    let n = ndcg_at_k(&run, &q, 3).map_err(|e| e.to_string())?;
    ensure(n == 0.5, || format!("gold rank 3: NDCG@3 = {n}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pool: Vec<String> = (0..40).map(|i| format!("d{i}")).collect();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut run = Run::new();
        let mut qrels = Qrels::new();
        let mut raw = Vec::new();
        for qn in 0..rng.random_range(1..20) {
            let mut ids = pool.clone();
            ids.shuffle(&mut rng);
            ids.truncate(rng.random_range(0..=pool.len()));
            let mut r = pool.clone();
            r.shuffle(&mut rng);
            let rel: BTreeSet<String> = r.into_iter().take(rng.random_range(1..4)).collect();
            run.insert(format!("q{qn}"), list(&ids));
            qrels.insert(format!("q{qn}"), rel.clone());
            raw.push((ids, rel));
        }
        let nq = raw.len() as f64;
        for (k, f) in [(3usize, 0), (3, 1), (10, 2), (100, 2)] {
            let want: f64 = raw
                .iter()
                .map(|(ids, rel)| {
                    let hits: Vec<usize> = (1..=ids.len().min(k)).filter(|r| rel.contains(&ids[r - 1])).collect();
                    match f {
                        0 => hits.first().map_or(0.0, |r| 1.0 / *r as f64),
                        1 => {
                            let g = |r: usize| std::f64::consts::LN_2 / ((r + 1) as f64).ln();
                            hits.iter().map(|&r| g(r)).sum::<f64>() / (1..=rel.len().min(k)).map(g).sum::<f64>()
                        }
                        _ => hits.len() as f64 / rel.len() as f64,
                    }
                })
                .sum::<f64>()
                / nq;
            let got = match f {
                0 => mrr_at_k(&run, &qrels, k),
                1 => ndcg_at_k(&run, &qrels, k),
                _ => recall_at_k(&run, &qrels, k),
            }
            .map_err(|e| e.to_string())?;
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("hand cases exact, 100 random runs max deviation {worst:.1e}"))
}

/// Puts the id named after `#` at rank 1 or 2 according to the query's first word.
struct Ladder;

impl Retriever for Ladder {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        let target = query.split('#').nth(1).unwrap_or("").trim().to_string();
        let ids: Vec<String> = match query.split_whitespace().next() {
            Some("first") => vec![target, "filler".into()],
            Some("second") => vec!["filler".into(), target],
            _ => vec!["filler".into()],
        };
        let mut l = list(&ids);
        l.entries.truncate(k);
        Ok(l)
    }
}

// 7
fn sdpwu_filter(instances: &[QueryInstance]) -> Check {
    let mut outputs = Vec::new();
    let mut expected = BTreeSet::new();
    for (i, inst) in instances.iter().take(40).enumerate() {
        let gold = inst.gold_passage_ids.iter().next().unwrap();
        let texts = [
            format!("no tags at all # {gold}"),
            render_output("near miss", &format!("second # {gold}")),
            render_output("gets it", &format!("first # {gold}")),
            render_output("off target", "nothing here"),
            format!("<rewrite>first # {gold}</rewrite><think>wrong order</think>"),
        ];
        for (sample, output) in texts.into_iter().enumerate() {
            if sample == 2 || (i % 4 == 0 && sample == 1) {
                // Every 4th instance also gets a second rank-1 output.
                let rewrite = if sample == 1 { format!("first again # {gold}") } else { format!("first # {gold}") };
                let output = if sample == 1 { render_output("again", &rewrite) } else { output };
                expected.insert((inst.key(), rewrite));
                outputs.push(RawOutput {
                    instance: inst.clone(),
                    sample,
                    output,
                });
                continue;
            }
            outputs.push(RawOutput {
                instance: inst.clone(),
                sample,
                output,
            });
        }
    }
    let generations = Generations {
        outputs,
        failed: Vec::new(),
    };
    let out = filter_generations(40, generations, &Ladder, &DistillConfig::default());
    let kept: BTreeSet<(String, String)> = out
        .samples
        .iter()
        .map(|s| (source_instance(s, instances).unwrap().key(), s.rewrite().to_string()))
        .collect();
    ensure(out.samples.len() == expected.len() && kept == expected, || {
        format!("retained {} samples, expected {}", out.samples.len(), expected.len())
    })?;
    ensure(out.report.dropped["format"] == 80 && out.report.dropped["not_rank1"] == 70, || {
        format!("drop counts {:?}", out.report.dropped)
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_sdpwu(&out, dir.path()).map_err(|e| e.to_string())?;
    let loaded = load_sd_data(&dir.path().join("sd_data.jsonl")).map_err(|e| e.to_string())?;
    let mut reverified = BTreeSet::new();
    for s in &loaded {
        ensure(validate(&render_output(s.reasoning(), s.rewrite())) == 1, || "persisted sample fails format".into())?;
        let inst = source_instance(s, instances).ok_or("persisted sample has no source instance")?;
        let r = rank_of_gold(&Ladder, s.rewrite(), &inst.gold_passage_ids, 100).map_err(|e| e.to_string())?;
        ensure(r.rank() == Some(1), || format!("persisted sample ranks {r:?}"))?;
        reverified.insert((inst.key(), s.rewrite().to_string()));
    }
    ensure(reverified == expected, || "persisted set differs".into())?;
    Ok(format!("{} outputs, {} rank-1 retained and re-verified from disk", 200, expected.len()))
}

fn ablation(bench: &SyntheticBenchmark, instances: &[QueryInstance]) -> Result<AblationReport, String> {
    let index = InvertedIndex::build(&bench.corpus, TokenizerConfig::default(), TruncationLimits::default(), Bm25Params::default())
        .map_err(|e| e.to_string())?;
    run_ablation(instances, &TemplateGenerator::new(7), &index, &PipelineConfig::default()).map_err(|e| e.to_string())
}

// 8
fn end_to_end(bench: &SyntheticBenchmark, instances: &[QueryInstance], keep: &mut Option<AblationReport>) -> Check {
    ensure(bench.corpus.len() == 500 && bench.sessions.len() == 100, || "benchmark size".into())?;
    let index = InvertedIndex::build(&bench.corpus, TokenizerConfig::default(), TruncationLimits::default(), Bm25Params::default())
        .map_err(|e| e.to_string())?;
    for inst in instances {
        let raw = rank_of_gold(&index, &inst.current_query, &inst.gold_passage_ids, 100).map_err(|e| e.to_string())?;
        ensure(raw.rank().is_none_or(|r| r > 10), || format!("{} raw rank {raw:?}", inst.key()))?;
        let best = (0..NUM_SLOTS)
            .filter_map(|s| {
                let c = &candidates(&inst.history, &inst.current_query)[s];
                rank_of_gold(&index, &c.rewrite, &inst.gold_passage_ids, 100).ok()?.rank()
            })
            .min();
        ensure(best == Some(1), || format!("{} best template rank {best:?}", inst.key()))?;
    }
    let r = ablation(bench, instances)?;
    let (raw, wu, rl, full) = (r.raw.mrr3, r.warmup_only.expected_mrr3, r.rl_only.expected_mrr3, r.full.expected_mrr3);
    let summary = format!(
        "MRR@3 raw {raw:.4} < warm-up {wu:.4} < rl {rl:.4} <= full {full:.4}; full rank1 {:.4} after {} steps",
        r.full.expected_rank1_rate,
        r.full_log.len()
    );
    *keep = Some(r.clone());
    ensure(raw < wu && wu < rl && rl <= full, || format!("ordering violated: {summary}"))?;
    ensure(r.full.expected_rank1_rate >= 0.9 && r.full_log.len() <= 200, || format!("rank-1 target missed: {summary}"))?;
    Ok(summary)
}

// 9
fn service_parity(bench: &SyntheticBenchmark, instances: &[QueryInstance]) -> Check {
    let sparse = InvertedIndex::build(&bench.corpus, TokenizerConfig::default(), TruncationLimits::default(), Bm25Params::default())
        .map_err(|e| e.to_string())?;
    let dense = DenseIndex::build(&bench.corpus, HashEmbedder::new(128, 9)).map_err(|e| e.to_string())?;
    let file = IndexFile::new(sparse, Some(dense));
    let configs = [RewardConfig::default(), RewardConfig::with_variant(RewardVariant::ExponentialDecay)];
    let states: Vec<Arc<ServiceState>> = configs
        .iter()
        .map(|c| {
            let s = Arc::new(ServiceState::new(*c, 100));
            s.install(file.clone());
            s
        })
        .collect();
    let ids: Vec<&String> = bench.corpus.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rt = tokio::runtime::Builder::new_current_thread().build().map_err(|e| e.to_string())?;
    let mut malformed = 0;
    for i in 0..1000 {
        let inst = instances.choose(&mut rng).unwrap();
        let cands = candidates(&inst.history, &inst.current_query);
        let base = cands.choose(&mut rng).unwrap().render();
        let output = match rng.random_range(0..6) {
            0 => base.replace("</rewrite>", ""),
            1 => format!("{base} trailing"),
            2 => render_output("r", &(0..4).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")),
            _ => base,
        };
        let gold: BTreeSet<String> = if rng.random_bool(0.8) {
            inst.gold_passage_ids.clone()
        } else {
            BTreeSet::from([ids.choose(&mut rng).unwrap().to_string()])
        };
        let dense = rng.random_bool(0.3);
        let depth = *[1usize, 3, 10, 50, 100, 200].choose(&mut rng).unwrap();
        let which = i % 2;
        let body = serde_json::json!({
            "context": inst.history,
            "query": inst.current_query,
            "output": output,
            "gold_ids": gold,
            "mode": if dense { "dense" } else { "sparse" },
            "depth": depth,
        });
        let req = Request::post("/score").body(Body::from(body.to_string())).map_err(|e| e.to_string())?;
        let resp: ScoreResponse = rt.block_on(async {
            let r = router(states[which].clone()).oneshot(req).await.unwrap();
            let b = axum::body::to_bytes(r.into_body(), usize::MAX).await.unwrap();
            serde_json::from_slice(&b).map_err(|e| format!("request {i}: {e}: {}", String::from_utf8_lossy(&b)))
        })?;
        let retriever: &dyn Retriever = if dense { file.dense.as_ref().unwrap() } else { &file.sparse };
        let local = score_output(retriever, &output, &gold, depth, &configs[which]);
        ensure(
            resp.format_ok == local.parsed.valid && resp.rank == local.rank.rank() && resp.reward.to_bits() == local.reward.to_bits(),
            || format!("request {i}: service {resp:?} vs library {local:?}"),
        )?;
        if !resp.format_ok {
            malformed += 1;
            ensure(resp.reward == configs[which].format_penalty && resp.rank.is_none(), || {
                format!("request {i}: malformed output scored {resp:?}")
            })?;
            if which == 0 {
                ensure(resp.reward == -0.1, || format!("request {i}: penalty {}", resp.reward))?;
            }
        }
    }
    ensure(malformed > 0, || "no malformed outputs generated".into())?;
    Ok(format!("1000 requests bit-identical, {malformed} malformed scored at the penalty"))
}

fn log_bytes(r: &AblationReport) -> Result<Vec<u8>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for (name, log) in [("rl", &r.rl_only_log), ("full", &r.full_log)] {
        let p = dir.path().join(name);
        write_log_jsonl(log, &p).map_err(|e| e.to_string())?;
        bytes.extend(std::fs::read(&p).map_err(|e| e.to_string())?);
    }
    Ok(bytes)
}

// 10
fn determinism(bench: &SyntheticBenchmark, instances: &[QueryInstance], first: Option<&AblationReport>) -> Check {
    let first = first.ok_or("criterion 8 produced no run to compare against")?;
    let second = ablation(bench, instances)?;
    let (a, b) = (log_bytes(first)?, log_bytes(&second)?);
    ensure(a == b, || "training logs differ between identical runs".into())?;
    ensure(*first == second, || "ablation reports differ".into())?;
    Ok(format!("{} log bytes identical across runs", a.len()))
}

fn main() {
    let bench = SyntheticBenchmark::generate(DEFAULT_SEED);
    let instances = bench.instances();
    let mut first_run = None;
    let mut failed = 0;
    let mut run = |id: u32, name: &str, limit_secs: Option<f64>, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let res = match (res, limit_secs) {
            (Ok(_), Some(l)) if secs > l => Err(format!("took {secs:.2}s, limit {l}s")),
            (r, _) => r,
        };
        let limit = limit_secs.map_or(String::new(), |l| format!(", limit {l}s"));
        let line = match &res {
            Ok(d) => format!("criterion {id:>2} PASS  {name}: {d} ({secs:.2}s{limit})"),
            Err(e) => {
                failed += 1;
                format!("criterion {id:>2} FAIL  {name}: {e} ({secs:.2}s{limit})")
            }
        };
        let _ = writeln!(std::io::stdout(), "{line}");
    };
    run(1, "reward exactness", Some(1.0), &mut reward_exactness);
    run(2, "reward shape", Some(5.0), &mut reward_shape);
    run(3, "advantage normalization", Some(5.0), &mut advantage_normalization);
    run(4, "gradient correctness", Some(30.0), &mut || gradient_correctness(&instances));
    run(5, "retrieval oracle equivalence", Some(60.0), &mut retrieval_oracle);
    run(6, "metric oracle equivalence", None, &mut metric_oracle);
    run(7, "self-distillation filter soundness", Some(10.0), &mut || sdpwu_filter(&instances));
    run(8, "end-to-end two-stage run", Some(300.0), &mut || end_to_end(&bench, &instances, &mut first_run));
    run(9, "service parity", Some(30.0), &mut || service_parity(&bench, &instances));
    run(10, "determinism", None, &mut || determinism(&bench, &instances, first_run.as_ref()));
    if failed > 0 {
        let _ = writeln!(std::io::stdout(), "acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    let _ = writeln!(std::io::stdout(), "acceptance: all 10 criteria passed");
}
