//! Processed-dataset container.
//!
//! ```text
//! dataset.toml          task and field layout
//! vocab.tsv             field \t token \t index
//! train.txt val.txt test.txt
//!                       label \t user \t item \t index:value ...
//! users.tsv items.tsv   id \t raw-id \t index:value ...   (ranking only)
//! stats.txt             key \t value
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::schema::{FieldSchema, FieldSpec, Side, Task};
use crate::data::vocab::Vocabulary;
use crate::data::{DatasetBundle, Example, Interaction};
use crate::error::{Error, Result};
use crate::model::{Entry, SparseInstance};

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    task: Task,
    fields: Vec<FieldSpec>,
}

/// Dataset summary in the layout of the usual statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub user_fields: usize,
    pub item_fields: usize,
    pub fields: usize,
    pub slots: usize,
    pub users: usize,
    pub items: usize,
    pub features: usize,
    /// `1 - samples / (users * items)`; ranking only.
    pub sparsity: Option<f64>,
}

impl DatasetStats {
    pub fn of(bundle: &DatasetBundle) -> Self {
        let samples = bundle.train.len() + bundle.val.len() + bundle.test.len();
        let users = bundle.users.len();
        let items = bundle.items.len();
        let sparsity = (bundle.task == Task::Ranking && users * items > 0)
            .then(|| 1.0 - samples as f64 / (users as f64 * items as f64));
        DatasetStats {
            samples,
            train: bundle.train.len(),
            val: bundle.val.len(),
            test: bundle.test.len(),
            user_fields: bundle.schema.count_side(Side::User),
            item_fields: bundle.schema.count_side(Side::Item),
            fields: bundle.schema.len(),
            slots: bundle.schema.width(),
            users,
            items,
            features: bundle.vocab.len(),
            sparsity,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("samples", self.samples),
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
            ("user_fields", self.user_fields),
            ("item_fields", self.item_fields),
            ("fields", self.fields),
            ("slots", self.slots),
            ("users", self.users),
            ("items", self.items),
            ("features", self.features),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}\t{v}");
        }
        match self.sparsity {
            Some(sp) => {
                let _ = writeln!(s, "sparsity\t{sp:.6}");
            }
            None => s.push_str("sparsity\t-\n"),
        }
        s
    }
}

fn write_entries(out: &mut String, entries: &[Entry]) {
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}:{}", e.index, e.value);
    }
}

fn examples_text(rows: &[Example]) -> String {
    let mut s = String::new();
    for ex in rows {
        let _ = write!(s, "{}\t", ex.instance.label);
        match ex.interaction {
            Some(ia) => {
                let _ = write!(s, "{}\t{}\t", ia.user, ia.item);
            }
            None => s.push_str("-\t-\t"),
        }
        write_entries(&mut s, &ex.instance.entries);
        s.push('\n');
    }
    s
}

fn table_text(raw: &[String], entries: &[Vec<Entry>]) -> String {
    let mut s = String::new();
    for (i, (r, e)) in raw.iter().zip(entries).enumerate() {
        let _ = write!(s, "{i}\t{r}\t");
        write_entries(&mut s, e);
        s.push('\n');
    }
    s
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let meta = DatasetMeta {
        task: bundle.task,
        fields: bundle.schema.fields.clone(),
    };
    write_file(
        dir,
        "dataset.toml",
        &toml::to_string(&meta).expect("meta serializes"),
    )?;
    write_file(dir, "vocab.tsv", &bundle.vocab.to_tsv())?;
    write_file(dir, "train.txt", &examples_text(&bundle.train))?;
    write_file(dir, "val.txt", &examples_text(&bundle.val))?;
    write_file(dir, "test.txt", &examples_text(&bundle.test))?;
    if bundle.task == Task::Ranking {
        write_file(
            dir,
            "users.tsv",
            &table_text(&bundle.users, &bundle.user_entries),
        )?;
        write_file(
            dir,
            "items.tsv",
            &table_text(&bundle.items, &bundle.item_entries),
        )?;
    }
    write_file(dir, "stats.txt", &DatasetStats::of(bundle).to_text())
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

struct LineParser<'a> {
    dir: &'a Path,
    name: &'a str,
    vocab: &'a Vocabulary,
}

impl LineParser<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.dir.join(self.name),
            line,
            message: message.into(),
        }
    }

    fn entries(&self, line: usize, text: &str) -> Result<Vec<Entry>> {
        text.split(' ')
            .filter(|t| !t.is_empty())
            .map(|tok| {
                let (i, v) = tok
                    .split_once(':')
                    .ok_or_else(|| self.err(line, format!("bad entry '{tok}'")))?;
                let index: u32 = i
                    .parse()
                    .map_err(|_| self.err(line, format!("bad index '{i}'")))?;
                let value: f64 = v
                    .parse()
                    .map_err(|_| self.err(line, format!("bad value '{v}'")))?;
                if index as usize >= self.vocab.len() {
                    return Err(self.err(line, format!("index {index} outside vocabulary")));
                }
                Ok(Entry::new(self.vocab.field_of(index), index, value))
            })
            .collect()
    }

    fn examples(&self, text: &str) -> Result<Vec<Example>> {
        text.lines()
            .enumerate()
            .map(|(n, line)| {
                let n = n + 1;
                let cols: Vec<&str> = line.splitn(4, '\t').collect();
                if cols.len() != 4 {
                    return Err(self.err(n, "expected label, user, item, entries"));
                }
                let label: u8 = match cols[0] {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(self.err(n, format!("bad label '{other}'"))),
                };
                let interaction = match (cols[1], cols[2]) {
                    ("-", "-") => None,
                    (u, i) => Some(Interaction {
                        user: u
                            .parse()
                            .map_err(|_| self.err(n, format!("bad user '{u}'")))?,
                        item: i
                            .parse()
                            .map_err(|_| self.err(n, format!("bad item '{i}'")))?,
                    }),
                };
                Ok(Example {
                    instance: SparseInstance::new(self.entries(n, cols[3])?, label),
                    interaction,
                })
            })
            .collect()
    }

    fn table(&self, text: &str) -> Result<(Vec<String>, Vec<Vec<Entry>>)> {
        let mut raw = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.splitn(3, '\t').collect();
            if cols.len() != 3 || cols[0].parse::<usize>().ok() != Some(n) {
                return Err(self.err(n + 1, "expected id, raw id, entries"));
            }
            raw.push(cols[1].to_string());
            entries.push(self.entries(n + 1, cols[2])?);
        }
        Ok((raw, entries))
    }
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let meta: DatasetMeta = toml::from_str(&read_file(dir, "dataset.toml")?)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join("dataset.toml").display())))?;
    let schema = FieldSchema::new(meta.fields)?;
    let vocab = Vocabulary::from_tsv(&read_file(dir, "vocab.tsv")?)?;
    let parse = |name| -> Result<Vec<Example>> {
        LineParser {
            dir,
            name,
            vocab: &vocab,
        }
        .examples(&read_file(dir, name)?)
    };
    let (train, val, test) = (parse("train.txt")?, parse("val.txt")?, parse("test.txt")?);
    let ((users, user_entries), (items, item_entries)) = match meta.task {
        Task::Ranking => {
            let table = |name| -> Result<_> {
                LineParser {
                    dir,
                    name,
                    vocab: &vocab,
                }
                .table(&read_file(dir, name)?)
            };
            (table("users.tsv")?, table("items.tsv")?)
        }
        Task::Ctr => Default::default(),
    };
    DatasetBundle::new(
        meta.task,
        schema,
        vocab,
        train,
        val,
        test,
        users,
        items,
        item_entries,
        user_entries,
    )
}
