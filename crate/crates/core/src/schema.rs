//! Binding of anatomical structure names to mask integers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Pancreas,
    PancreasHead,
    PancreasBody,
    PancreasTail,
    Liver,
    Spleen,
    Muscle,
    VisceralFat,
    SubcutaneousFat,
    #[serde(rename = "vertebra_L1", alias = "vertebra_l1")]
    VertebraL1,
    #[serde(rename = "vertebra_L3", alias = "vertebra_l3")]
    VertebraL3,
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("label {0} must be a positive integer")]
    NonPositive(u32),
    #[error("label {label} is used by both {first:?} and {second:?}")]
    DuplicateLabel {
        label: u32,
        first: Structure,
        second: Structure,
    },
    #[error("schema defines neither `pancreas` nor all of head/body/tail")]
    MissingPancreas,
    #[error("cannot read schema: {0}")]
    Parse(String),
}

/// Validated mapping from structure to mask label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Structure, u32>", into = "BTreeMap<Structure, u32>")]
pub struct LabelSchema {
    labels: BTreeMap<Structure, u32>,
}

impl TryFrom<BTreeMap<Structure, u32>> for LabelSchema {
    type Error = SchemaError;

    fn try_from(labels: BTreeMap<Structure, u32>) -> Result<Self, SchemaError> {
        let mut seen: BTreeMap<u32, Structure> = BTreeMap::new();
        for (&s, &l) in &labels {
            if l == 0 {
                return Err(SchemaError::NonPositive(l));
            }
            if let Some(&first) = seen.get(&l) {
                return Err(SchemaError::DuplicateLabel {
                    label: l,
                    first,
                    second: s,
                });
            }
            seen.insert(l, s);
        }
        let has_subregions = [
            Structure::PancreasHead,
            Structure::PancreasBody,
            Structure::PancreasTail,
        ]
        .iter()
        .all(|s| labels.contains_key(s));
        if !labels.contains_key(&Structure::Pancreas) && !has_subregions {
            return Err(SchemaError::MissingPancreas);
        }
        Ok(Self { labels })
    }
}

impl From<LabelSchema> for BTreeMap<Structure, u32> {
    fn from(s: LabelSchema) -> Self {
        s.labels
    }
}

impl LabelSchema {
    pub fn new(pairs: impl IntoIterator<Item = (Structure, u32)>) -> Result<Self, SchemaError> {
        Self::try_from(pairs.into_iter().collect::<BTreeMap<_, _>>())
    }

    /// Labels used by the synthetic phantoms and the example configs.
    pub fn standard() -> Self {
        Self::new([
            (Structure::Pancreas, 1),
            (Structure::Liver, 2),
            (Structure::Spleen, 3),
            (Structure::Muscle, 4),
            (Structure::VisceralFat, 5),
            (Structure::SubcutaneousFat, 6),
            (Structure::VertebraL1, 7),
            (Structure::VertebraL3, 8),
        ])
        .expect("standard schema is valid")
    }

    /// The standard schema with the pancreas split into head/body/tail.
    pub fn standard_subregions() -> Self {
        let mut labels: BTreeMap<_, _> = Self::standard().labels;
        labels.remove(&Structure::Pancreas);
        labels.insert(Structure::PancreasHead, 9);
        labels.insert(Structure::PancreasBody, 10);
        labels.insert(Structure::PancreasTail, 11);
        Self::try_from(labels).expect("valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SchemaError::Parse(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn label(&self, s: Structure) -> Option<u32> {
        self.labels.get(&s).copied()
    }

    /// All mask labels making up `s`. The pancreas resolves to the union of
    /// its own label and any sub-region labels.
    pub fn resolve(&self, s: Structure) -> Vec<u32> {
        let parts: &[Structure] = match s {
            Structure::Pancreas => &[
                Structure::Pancreas,
                Structure::PancreasHead,
                Structure::PancreasBody,
                Structure::PancreasTail,
            ],
            _ => std::slice::from_ref(&s),
        };
        parts.iter().filter_map(|p| self.label(*p)).collect()
    }

    pub fn has_body_and_tail(&self) -> bool {
        self.label(Structure::PancreasBody).is_some() && self.label(Structure::PancreasTail).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_json_mapping() {
        let s = LabelSchema::from_json(r#"{"pancreas": 4, "liver": 1, "vertebra_L3": 9}"#).unwrap();
        assert_eq!(s.resolve(Structure::Pancreas), vec![4]);
        assert_eq!(s.label(Structure::VertebraL3), Some(9));
        assert_eq!(s.label(Structure::Spleen), None);
    }

    #[test]
    fn subregions_stand_in_for_pancreas() {
        let s = LabelSchema::standard_subregions();
        assert_eq!(s.resolve(Structure::Pancreas), vec![9, 10, 11]);
        assert!(s.has_body_and_tail());
    }

    #[test]
    fn rejects_invalid_schemas() {
        assert_eq!(
            LabelSchema::new([(Structure::Liver, 1)]).unwrap_err(),
            SchemaError::MissingPancreas
        );
        assert!(matches!(
            LabelSchema::new([(Structure::Pancreas, 1), (Structure::Liver, 1)]),
            Err(SchemaError::DuplicateLabel { label: 1, .. })
        ));
        assert_eq!(
            LabelSchema::new([(Structure::Pancreas, 0)]).unwrap_err(),
            SchemaError::NonPositive(0)
        );
        assert!(LabelSchema::from_json(r#"{"pancreas": 1, "kidney": 2}"#).is_err());
    }

    #[test]
    fn serializes_back_to_mapping() {
        let s = LabelSchema::standard();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"vertebra_L1\":7"));
        assert_eq!(LabelSchema::from_json(&json).unwrap(), s);
    }
}
