//! Feature vocabulary with per-field unknown folding.

use std::collections::BTreeMap;

use crate::data::schema::FieldSchema;
use crate::error::{Error, Result};

/// Token written for each field's unknown entry in vocabulary files.
pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq)]
struct FieldVocab {
    name: String,
    unknown: u32,
    tokens: BTreeMap<String, u32>,
}

/// Dense map `(field, token) -> index`. Each field owns a contiguous block:
/// its unknown index first, then surviving tokens in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
    field_of: Vec<u32>,
    token_of: Vec<String>,
}

/// One tokenized record: `tokens[f]` holds the raw values of field `f`.
pub type TokenRecord = Vec<Vec<String>>;

/// Counts tokens per field and keeps those seen at least `min_freq` times.
/// Only the first `multiplicity` tokens of a multi-valued cell count.
pub fn build_vocab(
    schema: &FieldSchema,
    records: &[TokenRecord],
    min_freq: usize,
) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(Error::Data(
            "cannot build a vocabulary from zero records".into(),
        ));
    }
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); schema.len()];
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != schema.len() {
            return Err(Error::Data(format!(
                "record {r} has {} fields, schema declares {}",
                rec.len(),
                schema.len()
            )));
        }
        for (f, tokens) in rec.iter().enumerate() {
            // tokens beyond the field's slot count are never encoded
            for t in tokens.iter().take(schema.fields[f].multiplicity) {
                *counts[f].entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let surviving = counts.iter().map(|c| {
        c.iter()
            .filter(|&(_, &n)| n >= min_freq)
            .map(|(t, _)| t.to_string())
            .collect::<Vec<_>>()
    });
    let per_field: Vec<(String, Vec<String>)> = schema
        .fields
        .iter()
        .map(|f| f.name.clone())
        .zip(surviving)
        .collect();
    Ok(Vocabulary::from_blocks(per_field))
}

impl Vocabulary {
    /// Builds from `(field name, tokens)` blocks; tokens are sorted and
    /// deduplicated.
    pub fn from_blocks(blocks: Vec<(String, Vec<String>)>) -> Self {
        let mut fields = Vec::with_capacity(blocks.len());
        let mut field_of = Vec::new();
        let mut token_of = Vec::new();
        for (f, (name, mut toks)) in blocks.into_iter().enumerate() {
            toks.sort();
            toks.dedup();
            let unknown = field_of.len() as u32;
            field_of.push(f as u32);
            token_of.push(UNKNOWN_TOKEN.to_string());
            let mut tokens = BTreeMap::new();
            for t in toks {
                tokens.insert(t.clone(), field_of.len() as u32);
                field_of.push(f as u32);
                token_of.push(t);
            }
            fields.push(FieldVocab {
                name,
                unknown,
                tokens,
            });
        }
        Vocabulary {
            fields,
            field_of,
            token_of,
        }
    }

    /// Total feature count `|V|`.
    pub fn len(&self) -> usize {
        self.field_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field_of.is_empty()
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn field_name(&self, field: usize) -> &str {
        &self.fields[field].name
    }

    pub fn unknown(&self, field: usize) -> u32 {
        self.fields[field].unknown
    }

    /// Index of `token` in `field`, or `None` if it was folded.
    pub fn get(&self, field: usize, token: &str) -> Option<u32> {
        self.fields[field].tokens.get(token).copied()
    }

    pub fn lookup(&self, field: usize, token: &str) -> u32 {
        self.get(field, token).unwrap_or(self.fields[field].unknown)
    }

    pub fn is_unknown(&self, index: u32) -> bool {
        let f = self.field_of[index as usize] as usize;
        self.fields[f].unknown == index
    }

    pub fn field_of(&self, index: u32) -> u32 {
        self.field_of[index as usize]
    }

    pub fn token(&self, index: u32) -> &str {
        &self.token_of[index as usize]
    }

    /// `field=token` label for reports.
    pub fn label(&self, index: u32) -> String {
        format!(
            "{}={}",
            self.fields[self.field_of(index) as usize].name,
            self.token(index)
        )
    }

    /// `field\ttoken\tindex` lines in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (&f, tok)) in self.field_of.iter().zip(&self.token_of).enumerate() {
            out.push_str(&self.fields[f as usize].name);
            out.push('\t');
            out.push_str(tok);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut blocks: Vec<(String, Vec<String>)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("vocabulary line {}: malformed '{line}'", n + 1));
            if cols.len() != 3 {
                return Err(bad());
            }
            let index: usize = cols[2].parse().map_err(|_| bad())?;
            if index != n {
                return Err(bad());
            }
            match blocks.last_mut() {
                Some((name, toks)) if name == cols[0] => toks.push(cols[1].to_string()),
                _ => {
                    if cols[1] != UNKNOWN_TOKEN {
                        return Err(bad());
                    }
                    blocks.push((cols[0].to_string(), Vec::new()));
                }
            }
        }
        let vocab = Vocabulary::from_blocks(blocks);
        // tokens must already have been sorted for indices to line up
        if vocab.to_tsv() != text {
            return Err(Error::Data(
                "vocabulary file is not in canonical order".into(),
            ));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FieldSpec, Side};

    fn schema() -> FieldSchema {
        FieldSchema::new(vec![FieldSpec::new("f", Side::Context, 1)]).unwrap()
    }

    fn records(tokens: &[(&str, usize)]) -> Vec<TokenRecord> {
        let mut out = Vec::new();
        for &(t, n) in tokens {
            for _ in 0..n {
                out.push(vec![vec![t.to_string()]]);
            }
        }
        out
    }

    #[test]
    fn rare_tokens_fold_into_unknown() {
        let v = build_vocab(&schema(), &records(&[("a", 10), ("b", 4)]), 5).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.lookup(0, "a"), 1);
        assert_eq!(v.lookup(0, "b"), v.unknown(0));
        assert_eq!(v.lookup(0, "never-seen"), 0);
    }

    #[test]
    fn min_freq_zero_keeps_everything() {
        let v = build_vocab(&schema(), &records(&[("a", 10), ("b", 4), ("c", 1)]), 0).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.get(0, "c").is_some());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            build_vocab(&schema(), &[], 5),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn size_counts_survivors_plus_unknowns() {
        // 20 records over two fields, counted by hand:
        // city: x*8, y*7, z*5 ; tag (multi): p*12, q*6, r*4, s*2
        let schema = FieldSchema::new(vec![
            FieldSpec::new("city", Side::User, 1),
            FieldSpec::new("tag", Side::Item, 2),
        ])
        .unwrap();
        let cities = [("x", 8), ("y", 7), ("z", 5)];
        let mut recs = Vec::new();
        for (c, n) in cities {
            for _ in 0..n {
                recs.push(vec![vec![c.to_string()], Vec::new()]);
            }
        }
        let tags = [("p", 12), ("q", 6), ("r", 4), ("s", 2)];
        let mut slot = 0;
        for (t, n) in tags {
            for _ in 0..n {
                recs[slot % 20][1].push(t.to_string());
                slot += 1;
            }
        }
        let v = build_vocab(&schema, &recs, 5).unwrap();
        // city: x,y,z survive; tag: p,q survive
        assert_eq!(v.len(), 3 + 2 + 2);
        let v = build_vocab(&schema, &recs, 7).unwrap();
        assert_eq!(v.len(), 2 + 1 + 2);
    }

    #[test]
    fn tsv_round_trip() {
        let schema = FieldSchema::new(vec![
            FieldSpec::new("a", Side::User, 1),
            FieldSpec::new("b", Side::Item, 1),
        ])
        .unwrap();
        let recs = vec![
            vec![vec!["u1".into()], vec!["i2".into()]],
            vec![vec!["u0".into()], vec!["i2".into()]],
        ];
        let v = build_vocab(&schema, &recs, 1).unwrap();
        let text = v.to_tsv();
        assert_eq!(
            text,
            "a\t<unk>\t0\na\tu0\t1\na\tu1\t2\nb\t<unk>\t3\nb\ti2\t4\n"
        );
        assert_eq!(Vocabulary::from_tsv(&text).unwrap(), v);
        assert!(v.is_unknown(3));
        assert_eq!(v.label(4), "b=i2");
        assert!(Vocabulary::from_tsv("a\tx\t0\n").is_err());
    }
}
