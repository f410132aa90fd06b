//! Closed-set, multi-dimensional tagging system.
//!
//! Every dimension carries a fixed, ordered list of tags including one
//! abstention tag. Tag order is significant: vote ties are broken by it and
//! rendered output follows dimension order.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fingerprint;

pub const DEFAULT_NA_TAG: &str = "Unknown(NA)";

const DEFAULT_DOCUMENT: &str = include_str!("../fixtures/taxonomy.json");

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy has no dimensions")]
    EmptyTaxonomy,
    #[error("dimension `{dimension}` lists tag `{tag}` more than once")]
    DuplicateTag { dimension: String, tag: String },
    #[error("dimension id `{0}` appears more than once")]
    DuplicateDimension(String),
    #[error("dimension `{dimension}` does not contain its abstention tag `{na_tag}`")]
    MissingNaTag { dimension: String, na_tag: String },
    #[error("dimension `{0}` needs at least two tags")]
    TooFewTags(String),
    #[error("dimension has an empty id")]
    EmptyDimensionId,
    #[error("cannot read taxonomy document: {0}")]
    Io(String),
    #[error("malformed taxonomy document: {0}")]
    Format(String),
}

fn default_na_tag() -> String {
    DEFAULT_NA_TAG.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyDimension {
    pub id: String,
    pub display_name: String,
    pub tags: Vec<String>,
    #[serde(default = "default_na_tag")]
    pub na_tag: String,
}

impl TaxonomyDimension {
    /// Exact, case-sensitive membership after trimming surrounding whitespace.
    pub fn validate_tag(&self, candidate: &str) -> bool {
        self.canonical_tag(candidate).is_some()
    }

    /// Returns the stored tag matching `candidate` after trimming.
    pub fn canonical_tag(&self, candidate: &str) -> Option<&str> {
        let trimmed = candidate.trim();
        self.tags.iter().map(String::as_str).find(|t| *t == trimmed)
    }

    pub fn is_na(&self, tag: &str) -> bool {
        tag.trim() == self.na_tag
    }

    /// Position of `tag` in the canonical order, if it is a member.
    pub fn position(&self, tag: &str) -> Option<usize> {
        let trimmed = tag.trim();
        self.tags.iter().position(|t| t == trimmed)
    }

    /// Tags other than the abstention tag.
    pub fn informative_tags(&self) -> impl Iterator<Item = &str> {
        self.tags
            .iter()
            .map(String::as_str)
            .filter(move |t| *t != self.na_tag)
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        if self.id.trim().is_empty() {
            return Err(TaxonomyError::EmptyDimensionId);
        }
        let mut seen = HashSet::new();
        for tag in &self.tags {
            if !seen.insert(tag.trim()) {
                return Err(TaxonomyError::DuplicateTag {
                    dimension: self.id.clone(),
                    tag: tag.trim().to_string(),
                });
            }
        }
        if !seen.contains(self.na_tag.trim()) {
            return Err(TaxonomyError::MissingNaTag {
                dimension: self.id.clone(),
                na_tag: self.na_tag.clone(),
            });
        }
        if self.tags.len() < 2 {
            return Err(TaxonomyError::TooFewTags(self.id.clone()));
        }
        Ok(())
    }

    fn canonicalize(&mut self) {
        self.id = self.id.trim().to_string();
        self.na_tag = self.na_tag.trim().to_string();
        for tag in &mut self.tags {
            *tag = tag.trim().to_string();
        }
    }
}

/// Ordered list of dimensions. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    dimensions: Vec<TaxonomyDimension>,
}

impl Taxonomy {
    pub fn new(mut dimensions: Vec<TaxonomyDimension>) -> Result<Self, TaxonomyError> {
        if dimensions.is_empty() {
            return Err(TaxonomyError::EmptyTaxonomy);
        }
        let mut ids = HashSet::new();
        for dim in &mut dimensions {
            dim.canonicalize();
            dim.validate()?;
            if !ids.insert(dim.id.clone()) {
                return Err(TaxonomyError::DuplicateDimension(dim.id.clone()));
            }
        }
        Ok(Self { dimensions })
    }

    /// The built-in six-dimension taxonomy.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_DOCUMENT).expect("built-in taxonomy document is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let raw: Taxonomy =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Format(e.to_string()))?;
        Self::new(raw.dimensions)
    }

    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        let raw: Taxonomy = toml::from_str(text).map_err(|e| TaxonomyError::Format(e.to_string()))?;
        Self::new(raw.dimensions)
    }

    /// Loads a JSON or TOML document, chosen by file extension (JSON otherwise).
    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("taxonomy serializes")
    }

    pub fn dimensions(&self) -> &[TaxonomyDimension] {
        &self.dimensions
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn dimension(&self, id: &str) -> Option<&TaxonomyDimension> {
        self.dimensions.iter().find(|d| d.id == id.trim())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.dimensions.iter().map(|d| d.id.as_str())
    }

    /// Content hash used to tie downstream artifacts to this taxonomy.
    pub fn fingerprint(&self) -> String {
        fingerprint::of(self)
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}
