//! Synthetic CTR data with planted pairwise structure.
//!
//! Every token carries a latent cluster. Fields are split into a user block
//! and an item block, and the ground-truth logit of an instance is
//!
//! ```text
//! bias + sum over (user slot a, item slot b) of A[c(a), c(b)]
//! ```
//!
//! with `A = +strength` on matching clusters and `-strength` otherwise, so
//! the signal lives entirely in pairwise cross-block interactions. Labels
//! are Bernoulli draws of `sigmoid(logit)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    split_sizes, DatasetBundle, Example, FieldSchema, FieldSpec, Side, SplitSize, SplitSpec, Task,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::model::{sigmoid, Entry, SparseInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub fields: usize,
    /// Leading fields forming the user block; the rest form the item block.
    pub user_fields: usize,
    /// Known tokens per field (each field also gets an unknown slot).
    pub tokens_per_field: usize,
    pub instances: usize,
    pub clusters: usize,
    /// Per-pair logit magnitude; 0 plants no signal.
    pub strength: f64,
    pub bias: f64,
    /// Probability that the user and item blocks share a cluster.
    pub match_rate: f64,
    /// Probability that a slot ignores its block's cluster and draws any
    /// token of the field.
    pub noise: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            fields: 12,
            user_fields: 6,
            tokens_per_field: 166,
            instances: 50_000,
            clusters: 4,
            strength: 0.25,
            bias: 0.0,
            match_rate: 0.5,
            noise: 0.25,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.fields < 2 || self.user_fields == 0 || self.user_fields >= self.fields {
            return bad("need at least one user field and one item field");
        }
        if self.clusters == 0 || self.tokens_per_field < self.clusters {
            return bad("every cluster needs at least one token per field");
        }
        if self.instances == 0 {
            return bad("instance count must be positive");
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.match_rate) || !unit(self.noise) {
            return bad("match_rate and noise must lie in [0, 1]");
        }
        if !(self.strength.is_finite() && self.bias.is_finite()) {
            return bad("strength and bias must be finite");
        }
        Ok(())
    }

    /// Ground-truth interaction between two tokens (by in-field position).
    pub fn pair_logit(
        &self,
        field_a: usize,
        token_a: usize,
        field_b: usize,
        token_b: usize,
    ) -> f64 {
        let cross = (field_a < self.user_fields) != (field_b < self.user_fields);
        if !cross {
            return 0.0;
        }
        if token_a % self.clusters == token_b % self.clusters {
            self.strength
        } else {
            -self.strength
        }
    }
}

/// A generated bundle plus the generator-side oracle values.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub bundle: DatasetBundle,
    /// Ground-truth logits aligned with `bundle.train`, `val`, `test`.
    pub logits: [Vec<f64>; 3],
    /// Expected AUC of the Bayes scorer over all instances.
    pub bayes_auc: f64,
    /// Expected AUC of the Bayes scorer on the validation split.
    pub bayes_val_auc: f64,
}

/// Population AUC of a scorer whose labels are Bernoulli(`probs`):
/// `sum_{i != j} p_i (1 - p_j) [s_i > s_j]` over the matching normaliser,
/// ties counted one half.
pub fn expected_auc(scores: &[f64], probs: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut below_neg = 0.0; // sum of (1 - p) over strictly lower scores
    let mut num = 0.0;
    let mut a = 0;
    while a < order.len() {
        let mut b = a + 1;
        while b < order.len() && scores[order[b]] == scores[order[a]] {
            b += 1;
        }
        let block = &order[a..b];
        let block_neg: f64 = block.iter().map(|&i| 1.0 - probs[i]).sum();
        for &i in block {
            let p = probs[i];
            // ties with the rest of the block, excluding i itself
            num += p * (below_neg + 0.5 * (block_neg - (1.0 - p)));
        }
        below_neg += block_neg;
        a = b;
    }
    let sp: f64 = probs.iter().sum();
    let sn: f64 = probs.iter().map(|p| 1.0 - p).sum();
    let self_pairs: f64 = probs.iter().map(|p| p * (1.0 - p)).sum();
    num / (sp * sn - self_pairs)
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let fields: Vec<FieldSpec> = (0..spec.fields)
        .map(|f| {
            let side = if f < spec.user_fields {
                Side::User
            } else {
                Side::Item
            };
            FieldSpec::new(&format!("f{f:02}"), side, 1)
        })
        .collect();
    let schema = FieldSchema::new(fields)?;
    let vocab = Vocabulary::from_blocks(
        schema
            .fields
            .iter()
            .map(|fs| {
                let tokens = (0..spec.tokens_per_field)
                    .map(|t| format!("t{t:03}"))
                    .collect();
                (fs.name.clone(), tokens)
            })
            .collect(),
    );
    // Token t of field f sits at index f * (tokens + 1) + 1 + t; the
    // vocabulary sorts tokens, and zero padding keeps that order numeric.
    let stride = spec.tokens_per_field + 1;
    let per_cluster = |c: usize| (spec.tokens_per_field - c).div_ceil(spec.clusters);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5157]));
    let draw = |rng: &mut ChaCha8Rng, cluster: usize| -> usize {
        if rng.gen::<f64>() < spec.noise {
            rng.gen_range(0..spec.tokens_per_field)
        } else {
            cluster + spec.clusters * rng.gen_range(0..per_cluster(cluster))
        }
    };

    let mut rows = Vec::with_capacity(spec.instances);
    let mut logits = Vec::with_capacity(spec.instances);
    let mut tokens = vec![0usize; spec.fields];
    for _ in 0..spec.instances {
        let cu = rng.gen_range(0..spec.clusters);
        let ci = if rng.gen::<f64>() < spec.match_rate || spec.clusters == 1 {
            cu
        } else {
            (cu + rng.gen_range(1..spec.clusters)) % spec.clusters
        };
        for (f, t) in tokens.iter_mut().enumerate() {
            *t = draw(&mut rng, if f < spec.user_fields { cu } else { ci });
        }
        let mut logit = spec.bias;
        for a in 0..spec.user_fields {
            for b in spec.user_fields..spec.fields {
                logit += spec.pair_logit(a, tokens[a], b, tokens[b]);
            }
        }
        let label = (rng.gen::<f64>() < sigmoid(logit)) as u8;
        let entries = tokens
            .iter()
            .enumerate()
            .map(|(f, &t)| Entry::new(f as u32, (f * stride + 1 + t) as u32, 1.0))
            .collect();
        rows.push(Example {
            instance: SparseInstance::new(entries, label),
            interaction: None,
        });
        logits.push(logit);
    }

    let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let bayes_auc = expected_auc(&logits, &probs);

    let splits = SplitSpec {
        val: SplitSize::Fraction(spec.val_fraction),
        test: SplitSize::Fraction(spec.test_fraction),
    };
    let (n_val, n_test) = split_sizes(spec.instances, &splits)?;
    let n_train = spec.instances - n_val - n_test;
    let test = rows.split_off(n_train + n_val);
    let val = rows.split_off(n_train);
    let test_logits = logits.split_off(n_train + n_val);
    let val_logits = logits.split_off(n_train);
    let val_probs: Vec<f64> = val_logits.iter().map(|&l| sigmoid(l)).collect();
    let bayes_val_auc = expected_auc(&val_logits, &val_probs);

    let bundle = DatasetBundle::new(
        Task::Ctr,
        schema,
        vocab,
        rows,
        val,
        test,
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
    )?;
    Ok(SyntheticData {
        bundle,
        logits: [logits, val_logits, test_logits],
        bayes_auc,
        bayes_val_auc,
    })
}
