//! Ingredient dictionary construction and per-recipe entity extraction.
//!
//! Entities are pulled from a recipe's first step by a greedy longest-match
//! scan against the dictionary; recipes where nothing matches signal a
//! needs-annotation error that callers resolve with an override file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::corpus::{tokenize, Recipe};
use crate::error::{PrnError, Result};

#[derive(Clone, Debug)]
pub struct IngredientDictionary {
    /// Token sequences, deduplicated and lowercased.
    entries: HashSet<Vec<String>>,
    max_len: usize,
}

impl IngredientDictionary {
    pub fn from_entries(entries: impl IntoIterator<Item = String>) -> Result<Self> {
        let set: HashSet<Vec<String>> = entries
            .into_iter()
            .map(|e| tokenize(&e))
            .filter(|t| !t.is_empty())
            .collect();
        if set.is_empty() {
            return Err(PrnError::Data("empty ingredient dictionary".into()));
        }
        let max_len = set.iter().map(|e| e.len()).max().unwrap_or(1);
        Ok(IngredientDictionary {
            entries: set,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, tokens: &[String]) -> bool {
        self.entries.contains(tokens)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Vec<String>> {
        self.entries.iter()
    }
}

/// Builds the dictionary from lexicon files (one ingredient per line),
/// keeping surface forms that occur at least `frequency_threshold` times
/// across all files.
pub fn build_dictionary(
    corpora_paths: &[&Path],
    frequency_threshold: usize,
) -> Result<IngredientDictionary> {
    if corpora_paths.is_empty() {
        return Err(PrnError::Config("at least one lexicon file required".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for path in corpora_paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PrnError::io(path.display().to_string(), e))?;
        for line in text.lines() {
            let entry = tokenize(line).join(" ");
            if !entry.is_empty() {
                *counts.entry(entry).or_insert(0) += 1;
            }
        }
    }
    let kept: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= frequency_threshold)
        .map(|(e, _)| e)
        .collect();
    if kept.is_empty() {
        return Err(PrnError::Data(format!(
            "no ingredient met frequency threshold {frequency_threshold}; lower the threshold"
        )));
    }
    IngredientDictionary::from_entries(kept)
}

/// Per-recipe manual entity overrides: recipe_id -> entity surface forms.
pub type EntityOverrides = BTreeMap<String, Vec<String>>;

pub fn load_overrides(path: &Path) -> Result<EntityOverrides> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// An extracted entity: its tokens, in first-mention order.
pub type EntityName = Vec<String>;

/// Extracts the recipe's entities from its first step via a greedy
/// left-to-right longest-match scan. Duplicates keep the first occurrence;
/// the list is truncated to `k_max` entries. A recipe with an override
/// entry bypasses the scan entirely.
pub fn extract_entities(
    recipe: &Recipe,
    dict: &IngredientDictionary,
    k_max: usize,
    overrides: Option<&EntityOverrides>,
) -> Result<Vec<EntityName>> {
    if let Some(ov) = overrides.and_then(|o| o.get(&recipe.id)) {
        let mut out: Vec<EntityName> = Vec::new();
        for surface in ov {
            let toks = tokenize(surface);
            if !toks.is_empty() && !out.contains(&toks) {
                out.push(toks);
            }
        }
        if out.is_empty() {
            return Err(PrnError::Data(format!(
                "override for recipe '{}' lists no entities",
                recipe.id
            )));
        }
        out.truncate(k_max);
        return Ok(out);
    }

    let step1 = recipe
        .steps
        .first()
        .ok_or_else(|| PrnError::Data(format!("recipe '{}' has no steps", recipe.id)))?;
    let tokens = &step1.tokens;

    let mut out: Vec<EntityName> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut matched = 0;
        let longest = dict.max_len.min(tokens.len() - i);
        for len in (1..=longest).rev() {
            if dict.contains(&tokens[i..i + len]) {
                matched = len;
                break;
            }
        }
        if matched > 0 {
            let entity = tokens[i..i + matched].to_vec();
            if !out.contains(&entity) {
                out.push(entity);
            }
            i += matched;
        } else {
            i += 1;
        }
    }
    if out.is_empty() {
        return Err(PrnError::NeedsAnnotation(recipe.id.clone()));
    }
    out.truncate(k_max);
    Ok(out)
}
