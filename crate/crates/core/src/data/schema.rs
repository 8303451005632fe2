use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

/// Reserved vocabulary entry for unseen or blank categorical cells.
pub const UNKNOWN: &str = "Unknown";

/// Number of target classes.
pub const N_CLASSES: usize = 3;

/// Display names of the target classes, by class index.
pub const CLASS_NAMES: [&str; N_CLASSES] =
    ["Assisted Driving", "Partial Automation", "Advanced Automation"];

/// Label-map value marking rows that are dropped at ingestion.
pub const EXCLUDED: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_map: BTreeMap<String, i64>,
}

impl ColumnSpec {
    pub fn categorical(name: &str, vocab: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            vocab: vocab.iter().map(|s| s.to_string()).collect(),
            label_map: BTreeMap::new(),
        }
    }

    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            vocab: Vec::new(),
            label_map: BTreeMap::new(),
        }
    }

    /// SAE level label column: level 1 → 0, level 2 → 1, levels 3–5 → 2;
    /// level 0 rows are excluded.
    pub fn sae_label(name: &str) -> Self {
        let label_map = [("0", EXCLUDED), ("1", 0), ("2", 1), ("3", 2), ("4", 2), ("5", 2)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            name: name.to_string(),
            kind: ColumnKind::Label,
            vocab: Vec::new(),
            label_map,
        }
    }
}

/// Ordered column roster of a crash table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(rename = "column")]
    columns: Vec<ColumnSpec>,
}

impl Schema {
    /// Validates the roster. Every categorical vocabulary gains a trailing
    /// [`UNKNOWN`] entry when it lacks one.
    pub fn new(mut columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut labels = 0;
        for c in &mut columns {
            if !names.insert(c.name.clone()) {
                return Err(Error::Schema(format!("duplicate column '{}'", c.name)));
            }
            match c.kind {
                ColumnKind::Categorical => {
                    let mut seen = HashSet::new();
                    if let Some(dup) = c.vocab.iter().find(|v| !seen.insert(v.as_str())) {
                        return Err(Error::Schema(format!(
                            "column '{}' repeats vocabulary entry '{dup}'",
                            c.name
                        )));
                    }
                    if !c.vocab.iter().any(|v| v == UNKNOWN) {
                        c.vocab.push(UNKNOWN.to_string());
                    }
                }
                ColumnKind::Label => {
                    labels += 1;
                    if c.label_map.is_empty() {
                        return Err(Error::Schema(format!("label '{}' has no label_map", c.name)));
                    }
                    if let Some((k, v)) = c
                        .label_map
                        .iter()
                        .find(|(_, &v)| v != EXCLUDED && !(0..N_CLASSES as i64).contains(&v))
                    {
                        return Err(Error::Schema(format!("label_map '{k}' -> {v} out of range")));
                    }
                }
                ColumnKind::Continuous => {}
            }
        }
        if labels != 1 {
            return Err(Error::Schema(format!("expected exactly one label column, found {labels}")));
        }
        Ok(Self { columns })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            column: Vec<ColumnSpec>,
        }
        let raw: Raw = toml::from_str(text)?;
        Self::new(raw.column)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn label(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label")
    }

    pub fn categorical(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Categorical)
    }

    pub fn continuous(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Continuous)
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical().count()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous().count()
    }

    /// Copy without the named feature columns. The label cannot be dropped.
    pub fn without(&self, drop: &[String]) -> Result<Self> {
        for d in drop {
            match self.column(d) {
                None => return Err(Error::Schema(format!("cannot drop unknown column '{d}'"))),
                Some(c) if c.kind == ColumnKind::Label => {
                    return Err(Error::Schema(format!("cannot drop the label column '{d}'")))
                }
                _ => {}
            }
        }
        Self::new(
            self.columns
                .iter()
                .filter(|c| !drop.contains(&c.name))
                .cloned()
                .collect(),
        )
    }

    /// Class index for a raw label cell: `Ok(None)` means the row is excluded.
    pub fn map_label(&self, raw: &str) -> Option<Option<usize>> {
        self.label().label_map.get(raw.trim()).map(|&v| {
            if v == EXCLUDED {
                None
            } else {
                Some(v as usize)
            }
        })
    }

    /// Canonical raw label written back for a class index.
    pub fn class_token(&self, class: usize) -> String {
        self.label()
            .label_map
            .iter()
            .find(|(_, &v)| v == class as i64)
            .map(|(k, _)| k.clone())
            .unwrap_or_else(|| class.to_string())
    }
}

/// Vocabulary index of a raw cell and whether the cell was an unseen value.
/// Blank and unseen cells map to [`UNKNOWN`].
pub(crate) fn vocab_index(vocab: &[String], value: &str) -> (usize, bool) {
    let v = value.trim();
    match vocab.iter().position(|x| x == v) {
        Some(i) => (i, false),
        None => (
            vocab.iter().position(|x| x == UNKNOWN).expect("validated vocab"),
            !v.is_empty(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_is_reserved_in_every_vocab() {
        let s = Schema::new(vec![
            ColumnSpec::categorical("w", &["Clear", "Rain"]),
            ColumnSpec::categorical("r", &["Dry", "Unknown", "Wet"]),
            ColumnSpec::sae_label("sae"),
        ])
        .unwrap();
        let cats: Vec<_> = s.categorical().collect();
        assert_eq!(cats[0].vocab, vec!["Clear", "Rain", "Unknown"]);
        assert_eq!(cats[1].vocab, vec!["Dry", "Unknown", "Wet"]);
    }

    #[test]
    fn rejects_bad_rosters() {
        let no_label = Schema::new(vec![ColumnSpec::continuous("x")]);
        assert!(matches!(no_label, Err(Error::Schema(_))));
        let two = Schema::new(vec![ColumnSpec::sae_label("a"), ColumnSpec::sae_label("b")]);
        assert!(matches!(two, Err(Error::Schema(_))));
        let dup = Schema::new(vec![
            ColumnSpec::categorical("w", &["a", "a"]),
            ColumnSpec::sae_label("s"),
        ]);
        assert!(matches!(dup, Err(Error::Schema(_))));
    }

    #[test]
    fn toml_round_trip_uses_exact_keys() {
        let text = r#"
[[column]]
name = "Wthr_Cond_ID"
kind = "categorical"
vocab = ["Clear", "Rain"]

[[column]]
name = "speed"
kind = "continuous"

[[column]]
name = "SAE"
kind = "label"
label_map = { "1" = 0, "2" = 1, "3" = 2, "0" = -1 }
"#;
        let s = Schema::from_toml_str(text).unwrap();
        assert_eq!(s.columns().len(), 3);
        assert_eq!(s.map_label("2"), Some(Some(1)));
        assert_eq!(s.map_label("0"), Some(None));
        assert_eq!(s.map_label("9"), None);
        let again = Schema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn sae_grouping() {
        let s = Schema::new(vec![ColumnSpec::sae_label("SAE")]).unwrap();
        assert_eq!(s.map_label("1"), Some(Some(0)));
        assert_eq!(s.map_label("2"), Some(Some(1)));
        for l in ["3", "4", "5"] {
            assert_eq!(s.map_label(l), Some(Some(2)));
        }
        assert_eq!(s.class_token(2), "3");
    }
}
