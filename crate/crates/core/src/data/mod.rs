//! Dataset preparation: schema, vocabulary, k-core filtering, padding,
//! splits, negative sampling, and the processed-dataset container.

mod ingest;
mod io;
mod kcore;
mod schema;
mod split;
mod vocab;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

pub use ingest::{encode_record, preprocess, read_raw, RawRecord};
pub use io::{load_bundle, write_bundle, DatasetStats};
pub use kcore::k_core_filter;
pub use schema::{
    FieldSchema, FieldSpec, Filter, FilterOp, FilterValue, SchemaFile, Side, SplitSize, SplitSpec,
    Task,
};
pub use split::{make_splits, pad_multivalued, split_sizes, Splits};
pub use vocab::{build_vocab, TokenRecord, Vocabulary, UNKNOWN_TOKEN};

use crate::error::{Error, Result};
use crate::model::{Entry, SparseInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
}

/// An encoded row. Ranking rows carry the (user, item) pair they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub instance: SparseInstance,
    pub interaction: Option<Interaction>,
}

/// Per-user sorted item lists, one per split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservedSets {
    pub train: Vec<Vec<u32>>,
    pub val: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

impl ObservedSets {
    fn build(users: usize, train: &[Example], val: &[Example], test: &[Example]) -> Self {
        let collect = |rows: &[Example]| {
            let mut sets = vec![Vec::new(); users];
            for ia in rows.iter().filter_map(|e| e.interaction) {
                sets[ia.user as usize].push(ia.item);
            }
            for s in &mut sets {
                s.sort_unstable();
                s.dedup();
            }
            sets
        };
        ObservedSets {
            train: collect(train),
            val: collect(val),
            test: collect(test),
        }
    }

    pub fn split(&self, split: Split) -> &[Vec<u32>] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn contains(&self, split: Split, user: u32, item: u32) -> bool {
        self.split(split)
            .get(user as usize)
            .is_some_and(|s| s.binary_search(&item).is_ok())
    }

    /// Observed in any split.
    pub fn contains_any(&self, user: u32, item: u32) -> bool {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .any(|s| self.contains(s, user, item))
    }

    /// Distinct items observed for `user` across all splits.
    pub fn count_any(&self, user: u32) -> usize {
        let mut all: Vec<u32> = [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .flat_map(|s| {
                self.split(s)
                    .get(user as usize)
                    .into_iter()
                    .flatten()
                    .copied()
            })
            .collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }
}

/// A preprocessed dataset ready for training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub task: Task,
    pub schema: FieldSchema,
    pub vocab: Vocabulary,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Raw user ids by internal id (ranking only).
    pub users: Vec<String>,
    /// Raw item ids by internal id (ranking only).
    pub items: Vec<String>,
    /// Encoded item-side slots per item, used to build candidates.
    pub item_entries: Vec<Vec<Entry>>,
    /// Encoded non-item slots of each user's first interaction.
    pub user_entries: Vec<Vec<Entry>>,
    pub observed: ObservedSets,
}

impl DatasetBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: Task,
        schema: FieldSchema,
        vocab: Vocabulary,
        train: Vec<Example>,
        val: Vec<Example>,
        test: Vec<Example>,
        users: Vec<String>,
        items: Vec<String>,
        item_entries: Vec<Vec<Entry>>,
        user_entries: Vec<Vec<Entry>>,
    ) -> Result<Self> {
        let observed = ObservedSets::build(users.len(), &train, &val, &test);
        let bundle = DatasetBundle {
            task,
            schema,
            vocab,
            train,
            val,
            test,
            users,
            items,
            item_entries,
            user_entries,
            observed,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Ranking bundle with only a user-id and an item-id field. Users are
    /// named `u<n>` and items `i<n>`; every pair is a positive.
    pub fn from_id_pairs(
        n_users: usize,
        n_items: usize,
        train: &[(u32, u32)],
        val: &[(u32, u32)],
        test: &[(u32, u32)],
    ) -> Result<Self> {
        let schema = FieldSchema::new(vec![
            FieldSpec::new("user", Side::User, 1),
            FieldSpec::new("item", Side::Item, 1),
        ])?;
        let users: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
        let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let vocab = Vocabulary::from_blocks(vec![
            ("user".into(), users.clone()),
            ("item".into(), items.clone()),
        ]);
        let item_entries: Vec<Vec<Entry>> = items
            .iter()
            .map(|i| vec![Entry::new(1, vocab.lookup(1, i), 1.0)])
            .collect();
        let user_entries: Vec<Vec<Entry>> = users
            .iter()
            .map(|u| vec![Entry::new(0, vocab.lookup(0, u), 1.0)])
            .collect();
        let rows = |pairs: &[(u32, u32)]| -> Result<Vec<Example>> {
            pairs
                .iter()
                .map(|&(u, i)| {
                    if u as usize >= n_users || i as usize >= n_items {
                        return Err(Error::Data(format!("pair ({u}, {i}) out of range")));
                    }
                    let mut entries = user_entries[u as usize].clone();
                    entries.extend_from_slice(&item_entries[i as usize]);
                    Ok(Example {
                        instance: SparseInstance::new(entries, 1),
                        interaction: Some(Interaction { user: u, item: i }),
                    })
                })
                .collect()
        };
        DatasetBundle::new(
            Task::Ranking,
            schema,
            vocab,
            rows(train)?,
            rows(val)?,
            rows(test)?,
            users,
            items,
            item_entries,
            user_entries,
        )
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.vocab.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn item_offset(&self) -> usize {
        self.schema.item_offset()
    }

    /// Replaces the item-side slots of `example` with those of `item`.
    pub fn with_item(&self, example: &Example, item: u32, label: u8) -> SparseInstance {
        let off = self.item_offset();
        let mut entries = Vec::with_capacity(self.schema.width());
        entries.extend_from_slice(&example.instance.entries[..off]);
        entries.extend_from_slice(&self.item_entries[item as usize]);
        SparseInstance::new(entries, label)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab.len();
        let width = self.schema.width();
        for (name, rows) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for (r, ex) in rows.iter().enumerate() {
                ex.instance.validate(v)?;
                if ex.instance.entries.len() != width {
                    return Err(Error::Data(format!(
                        "{name} row {r} has {} slots, schema needs {width}",
                        ex.instance.entries.len()
                    )));
                }
                if ex.instance.label > 1 {
                    return Err(Error::Data(format!("{name} row {r}: label must be 0 or 1")));
                }
                match (self.task, ex.interaction) {
                    (Task::Ranking, None) => {
                        return Err(Error::Data(format!(
                            "{name} row {r} lacks a user/item pair"
                        )))
                    }
                    (_, Some(ia))
                        if ia.user as usize >= self.users.len()
                            || ia.item as usize >= self.items.len() =>
                    {
                        return Err(Error::Data(format!(
                            "{name} row {r}: user/item out of range"
                        )))
                    }
                    _ => {}
                }
            }
        }
        if self.task == Task::Ranking {
            let item_width = width - self.item_offset();
            if self.item_entries.len() != self.items.len()
                || self.item_entries.iter().any(|e| e.len() != item_width)
            {
                return Err(Error::Data(
                    "item feature table does not match schema".into(),
                ));
            }
            for entries in self.item_entries.iter().chain(&self.user_entries) {
                if let Some(e) = entries.iter().find(|e| e.index as usize >= v) {
                    return Err(Error::Lookup {
                        index: e.index as usize,
                        count: v,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Result of drawing negatives for one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub items: Vec<u32>,
    /// Set when the unobserved pool was smaller than requested and items
    /// were drawn with replacement.
    pub with_replacement: bool,
}

/// Draws `count` items the user has not interacted with in any split,
/// uniformly without replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    user: u32,
    count: usize,
    bundle: &DatasetBundle,
    rng: &mut R,
) -> Result<NegativeSample> {
    let n_items = bundle.item_count();
    let observed = bundle.observed.count_any(user);
    let pool = n_items.saturating_sub(observed);
    if count == 0 {
        return Ok(NegativeSample {
            items: Vec::new(),
            with_replacement: false,
        });
    }
    if pool == 0 {
        return Err(Error::Data(format!(
            "user {user} has observed every item; no negatives available"
        )));
    }
    let is_observed = |item: u32| bundle.observed.contains_any(user, item);

    if pool < count {
        let candidates: Vec<u32> = (0..n_items as u32).filter(|&i| !is_observed(i)).collect();
        let items = (0..count)
            .map(|_| candidates[rng.gen_range(0..candidates.len())])
            .collect();
        return Ok(NegativeSample {
            items,
            with_replacement: true,
        });
    }

    // Rejection sampling is cheap while the pool dominates the catalogue.
    if pool * 2 >= n_items {
        let mut items = Vec::with_capacity(count);
        while items.len() < count {
            let i = rng.gen_range(0..n_items as u32);
            if !is_observed(i) && !items.contains(&i) {
                items.push(i);
            }
        }
        return Ok(NegativeSample {
            items,
            with_replacement: false,
        });
    }

    let candidates: Vec<u32> = (0..n_items as u32).filter(|&i| !is_observed(i)).collect();
    let items = sample_indices(rng, candidates.len(), count)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    Ok(NegativeSample {
        items,
        with_replacement: false,
    })
}
