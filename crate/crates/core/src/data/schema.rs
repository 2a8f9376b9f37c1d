//! Schema file: field layout plus ingestion settings.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ranking,
    Ctr,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Ranking => "ranking",
            Task::Ctr => "ctr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
    Context,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub side: Side,
    #[serde(default = "one")]
    pub multiplicity: usize,
    /// Source column; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

impl FieldSpec {
    pub fn new(name: &str, side: Side, multiplicity: usize) -> Self {
        FieldSpec {
            name: name.to_string(),
            side,
            multiplicity,
            column: None,
        }
    }

    pub fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }
}

/// Ordered fields. Instances lay out every non-item field first, then item
/// fields, each occupying `multiplicity` consecutive slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub fields: Vec<FieldSpec>,
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let schema = FieldSchema { fields };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config("schema declares no fields".into()));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if f.multiplicity == 0 {
                return Err(Error::Config(format!(
                    "field '{}' has zero multiplicity",
                    f.name
                )));
            }
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Config(format!("duplicate field name '{}'", f.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Field ids in instance layout order.
    pub fn layout(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.fields.len())
            .filter(|&i| self.fields[i].side != Side::Item)
            .collect();
        order.extend((0..self.fields.len()).filter(|&i| self.fields[i].side == Side::Item));
        order
    }

    /// Total slots per instance.
    pub fn width(&self) -> usize {
        self.fields.iter().map(|f| f.multiplicity).sum()
    }

    /// Slots occupied by non-item fields; item slots start here.
    pub fn item_offset(&self) -> usize {
        self.fields
            .iter()
            .filter(|f| f.side != Side::Item)
            .map(|f| f.multiplicity)
            .sum()
    }

    pub fn count_side(&self, side: Side) -> usize {
        self.fields.iter().filter(|f| f.side == side).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSize {
    Count(usize),
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val: SplitSize,
    pub test: SplitSize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val: SplitSize::Fraction(0.1),
            test: SplitSize::Fraction(0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FilterValue {
    Number(f64),
    Text(String),
}

/// Row filter applied at ingestion, e.g. `rating > 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    pub value: FilterValue,
}

impl Filter {
    /// Whether a cell passes. Numeric filters need a numeric cell.
    pub fn accepts(&self, cell: &str) -> std::result::Result<bool, String> {
        match &self.value {
            FilterValue::Number(v) => {
                let x: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| format!("column '{}': '{cell}' is not numeric", self.column))?;
                Ok(match self.op {
                    FilterOp::Eq => x == *v,
                    FilterOp::Ne => x != *v,
                    FilterOp::Gt => x > *v,
                    FilterOp::Ge => x >= *v,
                    FilterOp::Lt => x < *v,
                    FilterOp::Le => x <= *v,
                })
            }
            FilterValue::Text(s) => match self.op {
                FilterOp::Eq => Ok(cell == s),
                FilterOp::Ne => Ok(cell != s),
                _ => Err(format!(
                    "column '{}': ordering comparison against text value",
                    self.column
                )),
            },
        }
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_multi() -> char {
    '|'
}

fn default_min_freq() -> usize {
    5
}

/// Contents of a schema file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub task: Task,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_multi")]
    pub multi_delimiter: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default = "one")]
    pub k_core_user: usize,
    #[serde(default = "one")]
    pub k_core_item: usize,
    /// Padding slots get value 0, which removes them from pooling.
    #[serde(default)]
    pub exclude_padding: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub splits: SplitSpec,
    #[serde(default)]
    pub filters: Vec<Filter>,
    pub fields: Vec<FieldSpec>,
}

impl SchemaFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn field_schema(&self) -> FieldSchema {
        FieldSchema {
            fields: self.fields.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field_schema().validate()?;
        if self.k_core_user == 0 || self.k_core_item == 0 {
            return Err(Error::Config("k-core thresholds must be at least 1".into()));
        }
        match self.task {
            Task::Ranking => {
                if self.user_column.is_none() || self.item_column.is_none() {
                    return Err(Error::Config(
                        "ranking schemas need user_column and item_column".into(),
                    ));
                }
                if self.field_schema().count_side(Side::Item) == 0 {
                    return Err(Error::Config(
                        "ranking schemas need at least one item-side field".into(),
                    ));
                }
            }
            Task::Ctr => {
                if self.label_column.is_none() {
                    return Err(Error::Config("ctr schemas need label_column".into()));
                }
            }
        }
        match (self.splits.val, self.splits.test) {
            (SplitSize::Count(_), SplitSize::Count(_)) => {}
            (SplitSize::Fraction(a), SplitSize::Fraction(b)) => {
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a + b > 1.0 {
                    return Err(Error::Config(format!("invalid split fractions {a}, {b}")));
                }
            }
            _ => {
                return Err(Error::Config(
                    "validation and test sizes must both be counts or both fractions".into(),
                ))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEAM_LIKE: &str = r#"
task = "ranking"
user_column = "user"
item_column = "game"
min_freq = 1
k_core_user = 20
k_core_item = 20

[splits]
val = 10000
test = 10000

[[filters]]
column = "hours"
op = ">="
value = 100

[[fields]]
name = "user"
side = "user"

[[fields]]
name = "genre"
side = "item"
multiplicity = 3
"#;

    #[test]
    fn parses_schema() {
        let s = SchemaFile::parse(STEAM_LIKE).unwrap();
        assert_eq!(s.task, Task::Ranking);
        assert_eq!(s.delimiter, ',');
        assert_eq!(s.splits.val, SplitSize::Count(10000));
        assert_eq!(s.filters[0].op, FilterOp::Ge);
        let f = s.field_schema();
        assert_eq!(f.width(), 4);
        assert_eq!(f.item_offset(), 1);
        let back = SchemaFile::parse(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn fraction_splits() {
        let text = STEAM_LIKE.replace("val = 10000\ntest = 10000", "val = 0.1\ntest = 0.1");
        let s = SchemaFile::parse(&text).unwrap();
        assert_eq!(s.splits.test, SplitSize::Fraction(0.1));
    }

    #[test]
    fn rejects_bad_schemas() {
        let dup = STEAM_LIKE.replace("name = \"genre\"", "name = \"user\"");
        assert!(matches!(SchemaFile::parse(&dup), Err(Error::Config(_))));
        let no_item = STEAM_LIKE.replace("side = \"item\"", "side = \"context\"");
        assert!(SchemaFile::parse(&no_item).is_err());
        let mixed = STEAM_LIKE.replace("val = 10000", "val = 0.5");
        assert!(SchemaFile::parse(&mixed).is_err());
        assert!(SchemaFile::parse("task = \"ctr\"\nfields = []").is_err());
    }

    #[test]
    fn filters() {
        let f = Filter {
            column: "rating".into(),
            op: FilterOp::Gt,
            value: FilterValue::Number(3.0),
        };
        assert_eq!(f.accepts("4"), Ok(true));
        assert_eq!(f.accepts("3"), Ok(false));
        assert!(f.accepts("abc").is_err());
        let t = Filter {
            column: "kind".into(),
            op: FilterOp::Eq,
            value: FilterValue::Text("free".into()),
        };
        assert_eq!(t.accepts("free"), Ok(true));
    }
}
