//! Pairwise interaction heatmaps for a single instance.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::geometry::triangle_score_raw;
use crate::model::{Entry, Model, ModelKind};

/// Which instance to explain.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    /// Raw user and item ids of a ranking dataset.
    Pair { user: String, item: String },
    /// A stored row of one split.
    Row { split: Split, index: usize },
    /// `field=token` list resolved through the vocabulary.
    Tokens(Vec<(String, String)>),
}

impl FromStr for InstanceSpec {
    type Err = Error;

    /// `pair:USER,ITEM`, `row:SPLIT:INDEX` or `tokens:f=a,g=b,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "bad instance `{s}`; expected pair:USER,ITEM, row:SPLIT:INDEX or tokens:FIELD=TOKEN,..."
            ))
        };
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "pair" => {
                let (user, item) = rest.split_once(',').ok_or_else(bad)?;
                Ok(InstanceSpec::Pair {
                    user: user.to_string(),
                    item: item.to_string(),
                })
            }
            "row" => {
                let (split, index) = rest.split_once(':').ok_or_else(bad)?;
                Ok(InstanceSpec::Row {
                    split: split.parse()?,
                    index: index.parse().map_err(|_| bad())?,
                })
            }
            "tokens" => rest
                .split(',')
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(f, t)| (f.to_string(), t.to_string()))
                        .ok_or_else(bad)
                })
                .collect::<Result<Vec<_>>>()
                .map(InstanceSpec::Tokens),
            _ => Err(bad()),
        }
    }
}

/// Encoded entries of an instance plus a description and any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedInstance {
    pub entries: Vec<Entry>,
    pub description: String,
    pub label: Option<u8>,
    pub warnings: Vec<String>,
}

pub fn resolve_instance(spec: &InstanceSpec, bundle: &DatasetBundle) -> Result<ResolvedInstance> {
    match spec {
        InstanceSpec::Pair { user, item } => {
            let u = bundle
                .users
                .iter()
                .position(|x| x == user)
                .ok_or_else(|| Error::Data(format!("unknown user `{user}`")))?;
            let i = bundle
                .items
                .iter()
                .position(|x| x == item)
                .ok_or_else(|| Error::Data(format!("unknown item `{item}`")))?;
            let mut entries = bundle.user_entries[u].clone();
            entries.extend_from_slice(&bundle.item_entries[i]);
            let observed = bundle.observed.contains_any(u as u32, i as u32);
            Ok(ResolvedInstance {
                entries,
                description: format!("user {user}, item {item}"),
                label: Some(observed as u8),
                warnings: Vec::new(),
            })
        }
        InstanceSpec::Row { split, index } => {
            let rows = bundle.split(*split);
            let ex = rows.get(*index).ok_or_else(|| {
                Error::Data(format!(
                    "{split} split has {} rows, no row {index}",
                    rows.len()
                ))
            })?;
            Ok(ResolvedInstance {
                entries: ex.instance.entries.clone(),
                description: format!("{split} row {index}"),
                label: Some(ex.instance.label),
                warnings: Vec::new(),
            })
        }
        InstanceSpec::Tokens(pairs) => {
            let vocab = &bundle.vocab;
            let mut entries = Vec::with_capacity(pairs.len());
            let mut warnings = Vec::new();
            for (field, token) in pairs {
                let f = (0..vocab.field_count())
                    .find(|&f| vocab.field_name(f) == field)
                    .ok_or_else(|| Error::Config(format!("unknown field `{field}`")))?;
                let index = vocab.get(f, token).unwrap_or_else(|| {
                    warnings.push(format!(
                        "{field}={token} is not in the vocabulary; using the unknown feature"
                    ));
                    vocab.unknown(f)
                });
                entries.push(Entry::new(f as u32, index, 1.0));
            }
            Ok(ResolvedInstance {
                entries,
                description: "token list".to_string(),
                label: None,
                warnings,
            })
        }
    }
}

/// `d x d` matrix of pairwise interaction scores with a masked diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapExport {
    pub model: ModelKind,
    pub instance: String,
    pub label: Option<u8>,
    /// Model logit of the whole instance.
    pub score: f64,
    pub labels: Vec<String>,
    pub diagonal_masked: bool,
    /// Row-major; diagonal cells hold 0 and are masked.
    pub matrix: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Pairwise scores `T(v_i, v_j) x_i x_j` for LorentzFM, or
/// `<v_i, v_j> x_i x_j` for the FM baseline.
pub fn pairwise_matrix(model: &Model, entries: &[Entry]) -> Result<Vec<Vec<f64>>> {
    let n = model.feature_count();
    if let Some(e) = entries.iter().find(|e| e.index as usize >= n) {
        return Err(Error::Lookup {
            index: e.index as usize,
            count: n,
        });
    }
    let d = entries.len();
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let (a, b) = (&entries[i], &entries[j]);
            let w = a.value * b.value;
            m[i][j] = w * match model {
                Model::Lorentz(t) => {
                    triangle_score_raw(t.row(a.index as usize), t.row(b.index as usize))
                }
                Model::Fm(p) => p
                    .factor(a.index as usize)
                    .iter()
                    .zip(p.factor(b.index as usize))
                    .map(|(x, y)| x * y)
                    .sum(),
            };
        }
    }
    Ok(m)
}

pub fn explain(
    model: &Model,
    bundle: &DatasetBundle,
    spec: &InstanceSpec,
) -> Result<HeatmapExport> {
    let resolved = resolve_instance(spec, bundle)?;
    for w in &resolved.warnings {
        log::warn!("{w}");
    }
    let matrix = pairwise_matrix(model, &resolved.entries)?;
    Ok(HeatmapExport {
        model: model.kind(),
        instance: resolved.description,
        label: resolved.label,
        score: model.score(&resolved.entries),
        labels: resolved
            .entries
            .iter()
            .map(|e| bundle.vocab.label(e.index))
            .collect(),
        diagonal_masked: true,
        matrix,
        warnings: resolved.warnings,
    })
}

impl HeatmapExport {
    /// Tab-separated grid with a header row of labels; masked cells read
    /// `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.matrix.iter().enumerate() {
            out.push_str(&self.labels[i]);
            for (j, v) in row.iter().enumerate() {
                if i == j && self.diagonal_masked {
                    out.push_str("\tNA");
                } else {
                    let _ = write!(out, "\t{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// JSON with masked cells as `null`.
    pub fn to_json(&self) -> String {
        let masked: Vec<Vec<Option<f64>>> = self
            .matrix
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| (i != j || !self.diagonal_masked).then_some(v))
                    .collect()
            })
            .collect();
        let value = serde_json::json!({
            "model": self.model,
            "instance": self.instance,
            "label": self.label,
            "score": self.score,
            "labels": self.labels,
            "diagonal_masked": self.diagonal_masked,
            "matrix": masked,
            "warnings": self.warnings,
        });
        serde_json::to_string_pretty(&value).expect("heatmap serializes") + "\n"
    }

    /// Writes `<stem>.tsv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (ext, body) in [("tsv", self.to_tsv()), ("json", self.to_json())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}
