//! Ranking metrics over unobserved candidates and CTR metrics.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::{DatasetBundle, Example, Split, Task};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::model::{bce, sigmoid, Entry, Model};

/// Rank of one held-out positive among its candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingResult {
    /// 1-based; tied blocks receive their mean rank, so halves occur.
    pub rank: f64,
    pub candidates: usize,
}

/// Rank of `positive` among `positive` and `others`: one plus the number of
/// strictly higher scores plus half the number of ties.
pub fn rank_from_scores(positive: f64, others: &[f64]) -> Result<RankingResult> {
    if !positive.is_finite() || others.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("candidate scores"));
    }
    let mut higher = 0usize;
    let mut tied = 0usize;
    for &s in others {
        match s.partial_cmp(&positive) {
            Some(Ordering::Greater) => higher += 1,
            Some(Ordering::Equal) => tied += 1,
            _ => {}
        }
    }
    Ok(RankingResult {
        rank: 1.0 + higher as f64 + 0.5 * tied as f64,
        candidates: others.len() + 1,
    })
}

fn require_nonempty(results: &[RankingResult], name: &'static str) -> Result<()> {
    if results.is_empty() {
        Err(Error::UndefinedMetric(name))
    } else {
        Ok(())
    }
}

pub fn mrr(results: &[RankingResult]) -> Result<f64> {
    require_nonempty(results, "MRR of an empty result set")?;
    Ok(results.iter().map(|r| 1.0 / r.rank).sum::<f64>() / results.len() as f64)
}

/// Fraction of results ranked at or above `k`.
pub fn hit_rate_at(results: &[RankingResult], k: usize) -> Result<f64> {
    require_nonempty(results, "HR of an empty result set")?;
    let hits = results.iter().filter(|r| r.rank <= k as f64).count();
    Ok(hits as f64 / results.len() as f64)
}

/// NDCG with a single relevant item per list.
pub fn ndcg(results: &[RankingResult]) -> Result<f64> {
    require_nonempty(results, "NDCG of an empty result set")?;
    Ok(results
        .iter()
        .map(|r| 1.0 / (r.rank + 1.0).log2())
        .sum::<f64>()
        / results.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney rank sum, ties counted
/// one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Twice the positive rank sum, kept integral: a tied block occupying
    // 0-based positions [a, b) has mean 1-based rank (a + b + 1) / 2.
    let mut twice_rank_sum: u128 = 0;
    let mut a = 0;
    while a < order.len() {
        let mut b = a + 1;
        while b < order.len() && scores[order[b]] == scores[order[a]] {
            b += 1;
        }
        let positives = order[a..b].iter().filter(|&&i| labels[i] == 1).count() as u128;
        twice_rank_sum += positives * (a + b + 1) as u128;
        a = b;
    }
    let twice_u = twice_rank_sum - (pos as u128) * (pos as u128 + 1);
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
pub fn logloss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            expected: probs.len(),
            actual: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("logloss of an empty set"));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::NonFinite("probabilities"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce(p, y as f64))
        .sum();
    Ok(total / probs.len() as f64)
}

/// How candidate lists are built for ranking evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankingOptions {
    /// When ranking test positives, also drop the user's validation items.
    pub exclude_val: bool,
    /// Rank against a random subset of this many negatives instead of the
    /// full pool.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for RankingOptions {
    fn default() -> Self {
        RankingOptions {
            exclude_val: true,
            subsample: None,
            seed: 0,
        }
    }
}

/// Items that compete with `positive` for `user`: everything not observed
/// in the splits preceding `split`.
pub fn candidate_pool(
    bundle: &DatasetBundle,
    split: Split,
    user: u32,
    positive: u32,
    opts: &RankingOptions,
) -> Vec<u32> {
    let obs = &bundle.observed;
    let excluded = |item: u32| match split {
        Split::Train => false,
        Split::Val => obs.contains(Split::Train, user, item),
        Split::Test => {
            obs.contains(Split::Train, user, item)
                || (opts.exclude_val && obs.contains(Split::Val, user, item))
        }
    };
    (0..bundle.item_count() as u32)
        .filter(|&i| i != positive && !excluded(i))
        .collect()
}

/// Ranks one held-out interaction against its candidate pool.
pub fn rank_candidates(
    model: &Model,
    example: &Example,
    bundle: &DatasetBundle,
    split: Split,
    opts: &RankingOptions,
    stream: u64,
) -> Result<RankingResult> {
    let ia = example
        .interaction
        .ok_or_else(|| Error::Data("ranking needs a user/item pair".into()))?;
    let mut pool = candidate_pool(bundle, split, ia.user, ia.item, opts);
    if let Some(m) = opts.subsample {
        if m < pool.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[stream]));
            let picked = rand::seq::index::sample(&mut rng, pool.len(), m);
            pool = picked.into_iter().map(|k| pool[k]).collect();
        }
    }
    if model.feature_count() != bundle.feature_count() {
        return Err(Error::Dimension {
            expected: bundle.feature_count(),
            actual: model.feature_count(),
        });
    }

    let off = bundle.item_offset();
    let mut entries: Vec<Entry> = example.instance.entries[..off].to_vec();
    let mut score_item = |item: u32| {
        entries.truncate(off);
        entries.extend_from_slice(&bundle.item_entries[item as usize]);
        model.score(&entries)
    };
    let positive = score_item(ia.item);
    let others: Vec<f64> = pool.iter().map(|&i| score_item(i)).collect();
    rank_from_scores(positive, &others)
}

/// Ranks every example of `split`, one independent job per example.
pub fn evaluate_ranking(
    model: &Model,
    bundle: &DatasetBundle,
    split: Split,
    opts: &RankingOptions,
    exec: Execution,
) -> Result<Vec<RankingResult>> {
    let examples = bundle.split(split);
    exec.map_range(examples.len(), |i| {
        rank_candidates(model, &examples[i], bundle, split, opts, i as u64)
    })
    .into_iter()
    .collect()
}

/// Predicted click probabilities for a set of examples.
pub fn predict(model: &Model, examples: &[Example], exec: Execution) -> Result<Vec<f64>> {
    let n = model.feature_count();
    exec.map(examples, |ex| {
        ex.instance.validate(n)?;
        Ok(sigmoid(model.score(&ex.instance.entries)))
    })
    .into_iter()
    .collect()
}

/// Metric values of one evaluation run plus the provenance needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    pub split: Split,
    /// In display order.
    pub metrics: Vec<(String, f64)>,
    pub samples: usize,
    /// Mean candidate-list length (ranking only).
    pub mean_candidates: Option<f64>,
    pub seed: u64,
    pub config_digest: String,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task: {}", self.task);
        let _ = writeln!(out, "split: {}", self.split);
        let _ = writeln!(out, "samples: {}", self.samples);
        if let Some(c) = self.mean_candidates {
            let _ = writeln!(out, "mean candidates: {c:.2}");
        }
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "config digest: {}", self.config_digest);
        out.push('\n');
        for (name, value) in &self.metrics {
            let _ = writeln!(out, "{name:<8} {value:.6}");
        }
        out
    }

    /// `key=value` lines with full-precision metric values.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task={}", self.task);
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "samples={}", self.samples);
        if let Some(c) = self.mean_candidates {
            let _ = writeln!(out, "mean_candidates={c}");
        }
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "config_digest={}", self.config_digest);
        for (name, value) in &self.metrics {
            let _ = writeln!(out, "{name}={value}");
        }
        out
    }

    /// Writes `<stem>.txt` and `<stem>.kv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (ext, body) in [("txt", self.to_text()), ("kv", self.to_kv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// Hex SHA-256 of a configuration text.
pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Evaluates `model` on `split` with the task's metrics.
pub fn evaluate(
    model: &Model,
    bundle: &DatasetBundle,
    split: Split,
    opts: &RankingOptions,
    exec: Execution,
    config_digest: &str,
) -> Result<MetricsReport> {
    let examples = bundle.split(split);
    let (metrics, mean_candidates) = match bundle.task {
        Task::Ranking => {
            let results = evaluate_ranking(model, bundle, split, opts, exec)?;
            let mean_c = results.iter().map(|r| r.candidates as f64).sum::<f64>()
                / results.len().max(1) as f64;
            (
                vec![
                    ("MRR".to_string(), mrr(&results)?),
                    ("HR@10".to_string(), hit_rate_at(&results, 10)?),
                    ("NDCG".to_string(), ndcg(&results)?),
                ],
                Some(mean_c),
            )
        }
        Task::Ctr => {
            let probs = predict(model, examples, exec)?;
            let labels: Vec<u8> = examples.iter().map(|e| e.instance.label).collect();
            (
                vec![
                    ("AUC".to_string(), auc(&probs, &labels)?),
                    ("Logloss".to_string(), logloss(&probs, &labels)?),
                ],
                None,
            )
        }
    };
    Ok(MetricsReport {
        task: bundle.task,
        split,
        metrics,
        samples: examples.len(),
        mean_candidates,
        seed: opts.seed,
        config_digest: config_digest.to_string(),
    })
}
