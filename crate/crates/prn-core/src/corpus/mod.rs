//! Data model and ingestion for step-structured recipe QA corpora.
//!
//! Recipes and question instances arrive as JSON lines; image features as a
//! binary feature file (see [`features`]). A deterministic synthetic
//! procedural-world generator lives in [`synthetic`].

pub mod features;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PrnError, Result};

pub use features::{load_features, ImageFeatureStore};
pub use synthetic::{SyntheticGroundTruth, SyntheticWorld, SyntheticWorldConfig};

/// Sentinel image id marking the missing slot of a cloze question.
pub const PLACEHOLDER_ID: &str = "@placeholder";

/// Number of images per question, fixed across all three tasks.
pub const QUESTION_IMAGES: usize = 4;

/// Number of answer candidates per question.
pub const CANDIDATES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cloze,
    Coherence,
    Ordering,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Cloze, Task::Coherence, Task::Ordering];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Cloze => "cloze",
            Task::Coherence => "coherence",
            Task::Ordering => "ordering",
        }
    }

    /// Images per answer candidate for this task.
    pub fn answer_len(&self) -> usize {
        match self {
            Task::Ordering => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based, contiguous.
    pub index: usize,
    pub tokens: Vec<String>,
    pub image_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub title: Vec<String>,
    pub steps: Vec<Step>,
}

impl Recipe {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(PrnError::Data(format!("recipe '{}': no steps", self.id)));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(PrnError::Data(format!(
                    "recipe '{}': step index {} at position {} (must be contiguous from 1)",
                    self.id,
                    step.index,
                    i + 1
                )));
            }
            if step.tokens.is_empty() {
                return Err(PrnError::Data(format!(
                    "recipe '{}': step {} has no tokens",
                    self.id, step.index
                )));
            }
        }
        Ok(())
    }

    /// Total word count N across steps.
    pub fn word_count(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }

    /// Image id of step `index` (1-based); steps here carry one image each.
    pub fn step_image(&self, index: usize) -> Option<&str> {
        self.steps
            .get(index - 1)
            .and_then(|s| s.image_ids.first())
            .map(|s| s.as_str())
    }
}

/// One answer candidate: a single image for cloze/coherence, a sequence of
/// four for ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Answer {
    pub image_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    #[serde(default)]
    pub id: String,
    pub task: Task,
    pub recipe_id: String,
    #[serde(rename = "question")]
    pub question_image_ids: Vec<String>,
    pub candidates: Vec<Answer>,
    pub gold_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl QuestionInstance {
    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if self.question_image_ids.len() != QUESTION_IMAGES {
            return Err(PrnError::Data(format!(
                "instance '{id}': question must list {QUESTION_IMAGES} images, got {}",
                self.question_image_ids.len()
            )));
        }
        if self.candidates.len() != CANDIDATES {
            return Err(PrnError::Data(format!(
                "instance '{id}': expected {CANDIDATES} candidates, got {}",
                self.candidates.len()
            )));
        }
        if self.gold_index >= CANDIDATES {
            return Err(PrnError::Data(format!(
                "instance '{id}': gold_index {} out of range [0,3]",
                self.gold_index
            )));
        }
        let placeholders = self
            .question_image_ids
            .iter()
            .filter(|s| s.as_str() == PLACEHOLDER_ID)
            .count();
        match self.task {
            Task::Cloze => {
                if placeholders != 1 {
                    return Err(PrnError::Data(format!(
                        "instance '{id}': cloze question needs exactly one placeholder slot"
                    )));
                }
            }
            _ => {
                if placeholders != 0 {
                    return Err(PrnError::Data(format!(
                        "instance '{id}': placeholder only valid in cloze questions"
                    )));
                }
            }
        }
        let want_len = self.task.answer_len();
        for (c, cand) in self.candidates.iter().enumerate() {
            if cand.image_ids.len() != want_len {
                return Err(PrnError::Data(format!(
                    "instance '{id}': candidate {c} has {} images, task {} requires {want_len}",
                    cand.image_ids.len(),
                    self.task
                )));
            }
        }
        if self.task == Task::Ordering {
            let mut want: Vec<&str> = self.question_image_ids.iter().map(|s| s.as_str()).collect();
            want.sort_unstable();
            for (c, cand) in self.candidates.iter().enumerate() {
                let mut got: Vec<&str> = cand.image_ids.iter().map(|s| s.as_str()).collect();
                got.sort_unstable();
                if got != want {
                    return Err(PrnError::Data(format!(
                        "instance '{id}': ordering candidate {c} is not a permutation of the question images"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Lowercases and whitespace-tokenizes raw text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Deserialize)]
struct RecipeRecord {
    id: String,
    #[serde(default)]
    title: String,
    steps: Vec<StepRecord>,
}

#[derive(Deserialize)]
struct StepRecord {
    index: usize,
    text: String,
    #[serde(default)]
    images: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file =
        std::fs::File::open(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PrnError::io(path.display().to_string(), e))?;
        if !line.trim().is_empty() {
            out.push((n + 1, line));
        }
    }
    Ok(out)
}

/// Loads a recipes JSONL file: `{id, title, steps: [{index, text, images}]}`.
pub fn load_recipes(path: &Path) -> Result<Vec<Recipe>> {
    let mut recipes = Vec::new();
    let mut seen = HashMap::new();
    for (line_no, line) in read_lines(path)? {
        let rec: RecipeRecord = serde_json::from_str(&line).map_err(|e| {
            PrnError::Data(format!(
                "{}:{line_no}: malformed recipe record: {e}",
                path.display()
            ))
        })?;
        if let Some(prev) = seen.insert(rec.id.clone(), line_no) {
            return Err(PrnError::Data(format!(
                "recipe '{}' duplicated on lines {prev} and {line_no}",
                rec.id
            )));
        }
        let recipe = Recipe {
            id: rec.id,
            title: tokenize(&rec.title),
            steps: rec
                .steps
                .into_iter()
                .map(|s| Step {
                    index: s.index,
                    tokens: tokenize(&s.text),
                    image_ids: s.images,
                })
                .collect(),
        };
        recipe.validate()?;
        recipes.push(recipe);
    }
    recipes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(recipes)
}

/// Loads instances from a questions JSONL file and validates them against
/// the recipes. Instances without an explicit `id` get
/// `{recipe_id}/{task}/{ordinal}`. When `split` is given, records carrying a
/// different `split` field are dropped. Output is ordered by instance id.
pub fn load_dataset(
    recipes_path: &Path,
    questions_path: &Path,
    split: Option<&str>,
) -> Result<(Vec<Recipe>, Vec<QuestionInstance>)> {
    let recipes = load_recipes(recipes_path)?;
    let by_id: HashMap<&str, &Recipe> = recipes.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut instances = Vec::new();
    let mut ordinals: HashMap<(String, Task), usize> = HashMap::new();
    for (line_no, line) in read_lines(questions_path)? {
        let mut inst: QuestionInstance = serde_json::from_str(&line).map_err(|e| {
            PrnError::Data(format!(
                "{}:{line_no}: malformed question record: {e}",
                questions_path.display()
            ))
        })?;
        if let Some(want) = split {
            if let Some(have) = &inst.split {
                if have != want {
                    continue;
                }
            }
        }
        if inst.id.is_empty() {
            let ord = ordinals
                .entry((inst.recipe_id.clone(), inst.task))
                .or_insert(0);
            inst.id = format!("{}/{}/{:04}", inst.recipe_id, inst.task, ord);
            *ord += 1;
        }
        inst.validate()?;
        if !by_id.contains_key(inst.recipe_id.as_str()) {
            return Err(PrnError::Data(format!(
                "instance '{}': dangling recipe_id '{}'",
                inst.id, inst.recipe_id
            )));
        }
        instances.push(inst);
    }
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((recipes, instances))
}

/// Checks that every image id referenced by the instances resolves in the
/// feature store.
pub fn validate_features(
    instances: &[QuestionInstance],
    store: &ImageFeatureStore,
) -> Result<()> {
    for inst in instances {
        for id in inst
            .question_image_ids
            .iter()
            .chain(inst.candidates.iter().flat_map(|c| c.image_ids.iter()))
        {
            if id != PLACEHOLDER_ID && !store.contains(id) {
                return Err(PrnError::Data(format!(
                    "instance '{}': unknown image '{id}'",
                    inst.id
                )));
            }
        }
    }
    Ok(())
}

/// Serializes recipes to JSONL in the external schema.
pub fn write_recipes(recipes: &[Recipe], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in recipes {
        let steps: Vec<serde_json::Value> = r
            .steps
            .iter()
            .map(|s| {
                serde_json::json!({
                    "index": s.index,
                    "text": s.tokens.join(" "),
                    "images": s.image_ids,
                })
            })
            .collect();
        let rec = serde_json::json!({
            "id": r.id,
            "title": r.title.join(" "),
            "steps": steps,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PrnError::io(path.display().to_string(), e))
}

/// Serializes instances to JSONL in the external schema.
pub fn write_instances(instances: &[QuestionInstance], path: &Path) -> Result<()> {
    let mut out = String::new();
    for inst in instances {
        let rec = serde_json::json!({
            "id": inst.id,
            "task": inst.task,
            "recipe_id": inst.recipe_id,
            "question": inst.question_image_ids,
            "candidates": inst.candidates.iter().map(|c| &c.image_ids).collect::<Vec<_>>(),
            "gold_index": inst.gold_index,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PrnError::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const RECIPE_LINE: &str = r#"{"id":"r1","title":"Test","steps":[{"index":1,"text":"salt and pepper","images":["r1_s1"]},{"index":2,"text":"mix well","images":["r1_s2"]}]}"#;

    #[test]
    fn empty_questions_file_yields_empty_list() {
        let recipes = tmp(RECIPE_LINE);
        let questions = tmp("");
        let (_, instances) = load_dataset(recipes.path(), questions.path(), None).unwrap();
        assert!(instances.is_empty());
    }

    #[test]
    fn single_cloze_record_loads() {
        let recipes = tmp(RECIPE_LINE);
        let q = r#"{"task":"cloze","recipe_id":"r1","question":["r1_s1","r1_s2","r1_s1","@placeholder"],"candidates":[["a"],["b"],["c"],["d"]],"gold_index":0}"#;
        let questions = tmp(q);
        let (_, instances) = load_dataset(recipes.path(), questions.path(), None).unwrap();
        assert_eq!(instances.len(), 1);
        assert_eq!(instances[0].task, Task::Cloze);
        assert_eq!(instances[0].question_image_ids.len(), 4);
    }

    #[test]
    fn out_of_range_gold_index_rejected() {
        let recipes = tmp(RECIPE_LINE);
        let q = r#"{"task":"cloze","recipe_id":"r1","question":["r1_s1","r1_s2","r1_s1","@placeholder"],"candidates":[["a"],["b"],["c"],["d"]],"gold_index":5}"#;
        let questions = tmp(q);
        let err = load_dataset(recipes.path(), questions.path(), None).unwrap_err();
        assert!(err.to_string().contains("gold_index"));
    }

    #[test]
    fn dangling_recipe_id_rejected() {
        let recipes = tmp(RECIPE_LINE);
        let q = r#"{"task":"coherence","recipe_id":"nope","question":["a","b","c","d"],"candidates":[["a"],["b"],["c"],["d"]],"gold_index":1}"#;
        let questions = tmp(q);
        let err = load_dataset(recipes.path(), questions.path(), None).unwrap_err();
        assert!(err.to_string().contains("dangling recipe_id"));
    }

    #[test]
    fn noncontiguous_step_indices_rejected() {
        let bad = r#"{"id":"r2","title":"x","steps":[{"index":1,"text":"a","images":[]},{"index":3,"text":"b","images":[]}]}"#;
        let recipes = tmp(bad);
        let err = load_recipes(recipes.path()).unwrap_err();
        assert!(err.to_string().contains("contiguous"));
    }

    #[test]
    fn ordering_candidates_must_be_permutations() {
        let recipes = tmp(RECIPE_LINE);
        let q = r#"{"task":"ordering","recipe_id":"r1","question":["a","b","c","d"],"candidates":[["a","b","c","d"],["b","a","c","d"],["d","c","b","a"],["a","a","c","d"]],"gold_index":0}"#;
        let questions = tmp(q);
        let err = load_dataset(recipes.path(), questions.path(), None).unwrap_err();
        assert!(err.to_string().contains("permutation"));
    }
}
