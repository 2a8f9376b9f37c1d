//! Raw delimited text to [`DatasetBundle`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::data::kcore::k_core_filter;
use crate::data::schema::{FieldSchema, SchemaFile, Task};
use crate::data::split::{make_splits, pad_multivalued};
use crate::data::vocab::{build_vocab, TokenRecord, Vocabulary};
use crate::data::{DatasetBundle, Example, Interaction};
use crate::error::{Error, Result};
use crate::model::{Entry, SparseInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// 1-based line in the source file.
    pub line: usize,
    pub user: Option<String>,
    pub item: Option<String>,
    pub label: u8,
    pub tokens: TokenRecord,
}

/// Reads a headered delimited file, applies the schema's row filters, and
/// tokenizes every declared field.
pub fn read_raw(schema: &SchemaFile, path: &Path) -> Result<Vec<RawRecord>> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::Config(
            "delimiter must be a single ASCII character".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("header lacks column '{name}'")))
    };
    let field_cols = schema
        .fields
        .iter()
        .map(|f| col(f.column()))
        .collect::<Result<Vec<_>>>()?;
    let filter_cols = schema
        .filters
        .iter()
        .map(|f| col(&f.column))
        .collect::<Result<Vec<_>>>()?;
    let user_col = schema.user_column.as_deref().map(col).transpose()?;
    let item_col = schema.item_column.as_deref().map(col).transpose()?;
    let label_col = match schema.task {
        Task::Ctr => schema.label_column.as_deref().map(col).transpose()?,
        Task::Ranking => None,
    };

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut keep = true;
        for (f, &c) in schema.filters.iter().zip(&filter_cols) {
            if !f.accepts(&row[c]).map_err(|m| parse_err(line, m))? {
                keep = false;
                break;
            }
        }
        if !keep {
            continue;
        }
        let id = |c: Option<usize>, what: &str| -> Result<Option<String>> {
            match c {
                None => Ok(None),
                Some(c) if row[c].trim().is_empty() => {
                    Err(parse_err(line, format!("empty {what} id")))
                }
                Some(c) => Ok(Some(row[c].trim().to_string())),
            }
        };
        let user = id(user_col, "user")?;
        let item = id(item_col, "item")?;
        let label = match label_col {
            None => 1,
            Some(c) => parse_label(&row[c])
                .ok_or_else(|| parse_err(line, format!("label '{}' is not 0/1", &row[c])))?,
        };
        let tokens = schema
            .fields
            .iter()
            .zip(&field_cols)
            .map(|(f, &c)| {
                let cell = row[c].trim();
                let toks: Vec<String> = if f.multiplicity > 1 {
                    cell.split(schema.multi_delimiter)
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(str::to_string)
                        .collect()
                } else if cell.is_empty() {
                    Vec::new()
                } else {
                    vec![cell.to_string()]
                };
                if let Some(t) = toks.iter().find(|t| t.contains(['\t', '\n'])) {
                    return Err(parse_err(
                        line,
                        format!("token '{t}' contains a tab or newline"),
                    ));
                }
                Ok(toks)
            })
            .collect::<Result<TokenRecord>>()?;
        out.push(RawRecord {
            line,
            user,
            item,
            label,
            tokens,
        });
    }
    Ok(out)
}

fn parse_label(cell: &str) -> Option<u8> {
    match cell.trim() {
        "1" | "true" | "True" => Some(1),
        "0" | "false" | "False" => Some(0),
        other => match other.parse::<f64>() {
            Ok(0.0) => Some(0),
            Ok(1.0) => Some(1),
            _ => None,
        },
    }
}

/// Encodes one record's fields into aligned slots (layout order).
pub fn encode_record(
    schema: &FieldSchema,
    vocab: &Vocabulary,
    tokens: &TokenRecord,
    exclude_padding: bool,
) -> Vec<Entry> {
    let mut entries = Vec::with_capacity(schema.width());
    for f in schema.layout() {
        let spec = &schema.fields[f];
        let ids: Vec<u32> = tokens[f].iter().map(|t| vocab.lookup(f, t)).collect();
        let real = ids.len().min(spec.multiplicity);
        for (slot, idx) in pad_multivalued(&ids, spec.multiplicity, vocab.unknown(f))
            .into_iter()
            .enumerate()
        {
            let value = if exclude_padding && slot >= real {
                0.0
            } else {
                1.0
            };
            entries.push(Entry::new(f as u32, idx, value));
        }
    }
    entries
}

/// Filtering, k-core reduction, splitting, vocabulary construction on the
/// training split, and encoding.
pub fn preprocess(schema: &SchemaFile, records: Vec<RawRecord>) -> Result<DatasetBundle> {
    schema.validate()?;
    let fields = schema.field_schema();

    let records = match schema.task {
        Task::Ranking => {
            let mut seen = HashSet::new();
            let deduped: Vec<RawRecord> = records
                .into_iter()
                .filter(|r| seen.insert((r.user.clone(), r.item.clone())))
                .collect();
            let pairs: Vec<(&str, &str)> = deduped
                .iter()
                .map(|r| {
                    (
                        r.user.as_deref().unwrap_or(""),
                        r.item.as_deref().unwrap_or(""),
                    )
                })
                .collect();
            let core: HashSet<(&str, &str)> =
                k_core_filter(&pairs, schema.k_core_user, schema.k_core_item)
                    .into_iter()
                    .collect();
            let keep: Vec<bool> = pairs.iter().map(|p| core.contains(p)).collect();
            deduped
                .into_iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(r, _)| r)
                .collect()
        }
        Task::Ctr => records,
    };
    if records.is_empty() {
        return Err(Error::Data("no rows left after filtering".into()));
    }

    let (users, items) = match schema.task {
        Task::Ranking => {
            let u: BTreeSet<&str> = records.iter().filter_map(|r| r.user.as_deref()).collect();
            let i: BTreeSet<&str> = records.iter().filter_map(|r| r.item.as_deref()).collect();
            (
                u.into_iter().map(str::to_string).collect::<Vec<_>>(),
                i.into_iter().map(str::to_string).collect::<Vec<_>>(),
            )
        }
        Task::Ctr => (Vec::new(), Vec::new()),
    };
    let user_ids: HashMap<&str, u32> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i as u32))
        .collect();
    let item_ids: HashMap<&str, u32> = items
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i as u32))
        .collect();

    let indexed: Vec<usize> = (0..records.len()).collect();
    let splits = make_splits(indexed, &schema.splits, schema.seed)?;
    let train_tokens: Vec<TokenRecord> = splits
        .train
        .iter()
        .map(|&r| records[r].tokens.clone())
        .collect();
    let vocab = build_vocab(&fields, &train_tokens, schema.min_freq)?;

    let encoded: Vec<Vec<Entry>> = records
        .iter()
        .map(|r| encode_record(&fields, &vocab, &r.tokens, schema.exclude_padding))
        .collect();
    let interaction = |r: &RawRecord| match (&r.user, &r.item) {
        (Some(u), Some(i)) if schema.task == Task::Ranking => Some(Interaction {
            user: user_ids[u.as_str()],
            item: item_ids[i.as_str()],
        }),
        _ => None,
    };

    let off = fields.item_offset();
    let mut item_entries: Vec<Option<Vec<Entry>>> = vec![None; items.len()];
    let mut user_entries: Vec<Option<Vec<Entry>>> = vec![None; users.len()];
    for (r, enc) in records.iter().zip(&encoded) {
        if let Some(ia) = interaction(r) {
            item_entries[ia.item as usize].get_or_insert_with(|| enc[off..].to_vec());
            user_entries[ia.user as usize].get_or_insert_with(|| enc[..off].to_vec());
        }
    }

    let build = |rows: &[usize]| -> Vec<Example> {
        rows.iter()
            .map(|&r| Example {
                instance: SparseInstance::new(encoded[r].clone(), records[r].label),
                interaction: interaction(&records[r]),
            })
            .collect()
    };
    DatasetBundle::new(
        schema.task,
        fields,
        vocab,
        build(&splits.train),
        build(&splits.val),
        build(&splits.test),
        users,
        items,
        item_entries
            .into_iter()
            .map(Option::unwrap_or_default)
            .collect(),
        user_entries
            .into_iter()
            .map(Option::unwrap_or_default)
            .collect(),
    )
}
