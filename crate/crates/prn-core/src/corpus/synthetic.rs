//! Deterministic synthetic procedural worlds for desk-scale verification.
//!
//! Each recipe lists its entities in step 1 and applies one named action per
//! later step, advancing hidden per-entity state ids. A step's "image" is a
//! fixed random projection of the multiset of current entity states plus
//! Gaussian noise.
//!
//! Recipes come in groups of four that share a common prefix and diverge at
//! a single step: the group's base recipe provides a cloze question whose
//! window ends at the divergence step, and the siblings' images at that step
//! serve as distractors. Because every observed question image comes from
//! the shared prefix, candidate images are equidistant from the observed
//! ones in feature space; only the action stated in the recipe text decides
//! the answer, which is exactly the state-tracking signal the benchmark is
//! meant to isolate.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Answer, ImageFeatureStore, QuestionInstance, Recipe, Step, Task, PLACEHOLDER_ID};
use crate::error::{PrnError, Result};

/// Ingredient name pool; entity ids index into this list.
pub const ENTITY_POOL: &[&str] = &[
    "onion", "tomato", "milk", "butter", "flour", "sugar", "salt", "pepper", "garlic", "carrot",
    "potato", "rice", "bean", "cheese", "egg", "apple", "celery", "corn", "oil", "water", "dough",
    "cream", "spinach", "basil",
];

/// Action vocabulary with argument counts.
pub const ACTION_POOL: &[(&str, usize)] = &[
    ("chop", 1),
    ("mix", 2),
    ("heat", 1),
    ("pour", 1),
    ("whisk", 1),
    ("slice", 1),
    ("stir", 2),
    ("bake", 1),
    ("grate", 1),
    ("fold", 2),
    ("boil", 1),
    ("fry", 1),
];

const ADVERBS: &[&str] = &["gently", "quickly", "slowly", "carefully"];

/// State id of the empty action multiset ("raw").
pub const RAW_STATE: u64 = 0;

/// An entity's hidden state: the multiset of actions applied so far, kept
/// sorted so equal multisets compare equal regardless of order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityState {
    actions: Vec<usize>,
}

impl EntityState {
    pub fn raw() -> Self {
        EntityState::default()
    }

    pub fn apply(&mut self, action_id: usize) {
        let pos = self.actions.partition_point(|&a| a <= action_id);
        self.actions.insert(pos, action_id);
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Canonical id of the multiset; the raw state is [`RAW_STATE`].
    pub fn id(&self) -> u64 {
        self.actions
            .iter()
            .fold(0u64, |h, &a| splitmix64(h ^ splitmix64(a as u64 + 1)))
    }

    /// Ground-truth label: sorted action names joined by '+', or "raw".
    pub fn label(&self) -> String {
        if self.actions.is_empty() {
            "raw".to_string()
        } else {
            self.actions
                .iter()
                .map(|&a| ACTION_POOL[a].0)
                .collect::<Vec<_>>()
                .join("+")
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticWorldConfig {
    /// Entities per recipe, drawn from [`ENTITY_POOL`].
    pub num_entities: usize,
    /// Actions in play, a prefix of [`ACTION_POOL`].
    pub num_actions: usize,
    pub steps_per_recipe: usize,
    pub feature_dim: usize,
    /// Seeds the fixed state-to-feature projection.
    pub projection_seed: u64,
    /// Standard deviation of the additive Gaussian image noise.
    pub noise_std: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            num_entities: 4,
            num_actions: 6,
            steps_per_recipe: 8,
            feature_dim: 64,
            projection_seed: 2024,
            noise_std: 0.05,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_entities == 0 || self.num_actions == 0 || self.steps_per_recipe == 0 {
            return Err(PrnError::Config("synthetic counts must be >= 1".into()));
        }
        if self.num_entities > ENTITY_POOL.len() {
            return Err(PrnError::Config(format!(
                "num_entities {} exceeds pool size {}",
                self.num_entities,
                ENTITY_POOL.len()
            )));
        }
        if self.num_actions > ACTION_POOL.len() {
            return Err(PrnError::Config(format!(
                "num_actions {} exceeds pool size {}",
                self.num_actions,
                ACTION_POOL.len()
            )));
        }
        if self.feature_dim == 0 {
            return Err(PrnError::Config("feature_dim must be >= 1".into()));
        }
        if self.noise_std < 0.0 {
            return Err(PrnError::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of distinct (action, argument set) moves available.
    fn move_count(&self) -> usize {
        let k = self.num_entities;
        ACTION_POOL[..self.num_actions]
            .iter()
            .map(|&(_, arity)| if arity == 1 { k } else { k * (k.saturating_sub(1)) / 2 })
            .sum()
    }
}

/// Per-recipe ground-truth state labels, step by step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecipeStates {
    pub entities: Vec<String>,
    /// `step_labels[t-1][e]` is the action-history label of entity `e`
    /// after step `t` ("raw", "chop", "chop+mix", ...).
    pub step_labels: Vec<Vec<String>>,
    /// `step_hashes[t-1][e]` is the hidden state id after step `t`.
    pub step_hashes: Vec<Vec<u64>>,
    pub group: usize,
    pub divergence_step: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub recipes: BTreeMap<String, RecipeStates>,
}

#[derive(Debug)]
pub struct SyntheticWorld {
    pub recipes: Vec<Recipe>,
    pub instances: Vec<QuestionInstance>,
    pub features: ImageFeatureStore,
    pub ground_truth: SyntheticGroundTruth,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn keyed_gaussian(key: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| standard_normal(&mut rng)).collect()
}

/// Fixed random vector for an entity in its raw state.
pub fn base_vector(projection_seed: u64, entity_id: u64, dim: usize) -> Vec<f64> {
    keyed_gaussian(
        splitmix64(splitmix64(projection_seed) ^ entity_id),
        dim,
    )
}

/// Occurrence counts beyond this reuse the same effect vector.
pub const MAX_EFFECT_COUNT: usize = 4;

/// Weight of action effects relative to entity base vectors in the
/// projection; actions dominate an image's appearance.
pub const EFFECT_WEIGHT: f64 = 2.0;

/// Fixed random offset for the `occurrence`-th application of an action to
/// an entity. Keying by occurrence makes a repeated action look different
/// from its first application, so telling candidates apart requires the
/// per-entity action counts accumulated over the whole prefix, while the
/// component set stays small enough to be covered by training data.
pub fn effect_vector(
    projection_seed: u64,
    entity_id: u64,
    action_id: usize,
    occurrence: usize,
    dim: usize,
) -> Vec<f64> {
    let occ = occurrence.min(MAX_EFFECT_COUNT) as u64;
    keyed_gaussian(
        splitmix64(
            splitmix64(splitmix64(splitmix64(projection_seed) ^ entity_id) ^ (action_id as u64 + 0x5151))
                ^ occ,
        ),
        dim,
    )
}

/// The projection of one entity state: base vector plus one effect vector
/// per applied action occurrence.
pub fn state_vector(
    projection_seed: u64,
    entity_id: u64,
    state: &EntityState,
    dim: usize,
) -> Vec<f64> {
    let mut v = base_vector(projection_seed, entity_id, dim);
    let mut prev = usize::MAX;
    let mut occurrence = 0usize;
    for &a in state.actions() {
        occurrence = if a == prev { occurrence + 1 } else { 1 };
        prev = a;
        let e = effect_vector(projection_seed, entity_id, a, occurrence, dim);
        for (x, y) in v.iter_mut().zip(e.iter()) {
            *x += EFFECT_WEIGHT * y;
        }
    }
    v
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Projects the multiset of current entity states into feature space: the
/// sum over entities of their state vectors, scaled so feature entries have
/// unit variance regardless of how many components (bases plus applied
/// effects) the states hold.
pub fn project_states(
    projection_seed: u64,
    entity_ids: &[u64],
    states: &[EntityState],
    dim: usize,
) -> Vec<f64> {
    let variance: f64 = states
        .iter()
        .map(|s| 1.0 + EFFECT_WEIGHT * EFFECT_WEIGHT * s.actions().len() as f64)
        .sum();
    let scale = 1.0 / variance.max(1.0).sqrt();
    let mut out = vec![0.0; dim];
    for (&e, s) in entity_ids.iter().zip(states.iter()) {
        let v = state_vector(projection_seed, e, s, dim);
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x * scale;
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Move {
    action: usize,
    args: [usize; 2],
    arity: usize,
}

impl Move {
    fn tokens(&self, entities: &[&str], rng: &mut ChaCha8Rng) -> Vec<String> {
        let (verb, _) = ACTION_POOL[self.action];
        let mut toks = vec![verb.to_string()];
        if rng.gen_bool(1.0 / 3.0) {
            toks.push(ADVERBS[rng.gen_range(0..ADVERBS.len())].to_string());
        }
        toks.push(entities[self.args[0]].to_string());
        if self.arity == 2 {
            toks.push("and".into());
            toks.push(entities[self.args[1]].to_string());
        }
        toks
    }
}

fn random_move(rng: &mut ChaCha8Rng, cfg: &SyntheticWorldConfig) -> Move {
    loop {
        let action = rng.gen_range(0..cfg.num_actions);
        let arity = ACTION_POOL[action].1;
        if arity == 2 && cfg.num_entities < 2 {
            continue;
        }
        let a = rng.gen_range(0..cfg.num_entities);
        let (a, b) = if arity == 2 {
            let mut b = rng.gen_range(0..cfg.num_entities - 1);
            if b >= a {
                b += 1;
            }
            (a.min(b), a.max(b))
        } else {
            (a, a)
        };
        return Move {
            action,
            args: [a, b],
            arity,
        };
    }
}

struct GroupPlan {
    entity_ids: Vec<usize>,
    prefix: Vec<Move>,
    divergent: Vec<Move>,
    suffix: Vec<Move>,
    divergence_step: usize,
}

/// Half the time, replay an earlier move instead of drawing a fresh one;
/// repeated (entity, action) pairs advance occurrence counts, which is the
/// state signal the benchmark isolates.
fn biased_move(rng: &mut ChaCha8Rng, cfg: &SyntheticWorldConfig, history: &[Move]) -> Move {
    if !history.is_empty() && rng.gen_bool(0.5) {
        history[rng.gen_range(0..history.len())]
    } else {
        random_move(rng, cfg)
    }
}

fn plan_group(rng: &mut ChaCha8Rng, cfg: &SyntheticWorldConfig, members: usize) -> GroupPlan {
    let t = cfg.steps_per_recipe;
    let mut entity_ids: Vec<usize> = (0..ENTITY_POOL.len()).collect();
    entity_ids.shuffle(rng);
    entity_ids.truncate(cfg.num_entities);
    entity_ids.sort_unstable();

    // Divergence sits at the final step: the cloze window's observed images
    // then all come from the shared prefix, so candidates are equidistant
    // from them in feature space and only the text decides the answer.
    let divergence_step = t;
    let mut prefix: Vec<Move> = Vec::new();
    for _ in 2..divergence_step {
        let m = biased_move(rng, cfg, &prefix);
        prefix.push(m);
    }
    let mut divergent: Vec<Move> = Vec::new();
    while divergent.len() < members {
        let m = biased_move(rng, cfg, &prefix);
        if !divergent.contains(&m) {
            divergent.push(m);
        }
    }
    let suffix: Vec<Move> = (divergence_step + 1..=t)
        .map(|_| random_move(rng, cfg))
        .collect();
    GroupPlan {
        entity_ids,
        prefix,
        divergent,
        suffix,
        divergence_step,
    }
}

struct BuiltRecipe {
    recipe: Recipe,
    states: RecipeStates,
}

fn build_recipe(
    rng: &mut ChaCha8Rng,
    cfg: &SyntheticWorldConfig,
    plan: &GroupPlan,
    group: usize,
    member: usize,
    features: &mut ImageFeatureStore,
) -> Result<BuiltRecipe> {
    let id = format!("g{group:05}r{member}");
    let entities: Vec<&str> = plan.entity_ids.iter().map(|&e| ENTITY_POOL[e]).collect();
    let entity_u64: Vec<u64> = plan.entity_ids.iter().map(|&e| e as u64).collect();
    let k = entities.len();

    let mut states: Vec<EntityState> = vec![EntityState::raw(); k];
    let mut steps = Vec::with_capacity(cfg.steps_per_recipe);
    let mut step_labels = Vec::with_capacity(cfg.steps_per_recipe);
    let mut step_hashes = Vec::with_capacity(cfg.steps_per_recipe);

    let mut push_step = |t: usize,
                         tokens: Vec<String>,
                         states: &[EntityState],
                         features: &mut ImageFeatureStore,
                         rng: &mut ChaCha8Rng|
     -> Result<(Vec<String>, Vec<u64>)> {
        let image_id = format!("{id}_s{t}");
        let mut feat = project_states(cfg.projection_seed, &entity_u64, states, cfg.feature_dim);
        if cfg.noise_std > 0.0 {
            for v in feat.iter_mut() {
                *v += cfg.noise_std * standard_normal(rng);
            }
        }
        let feat32: Vec<f32> = feat.iter().map(|&x| x as f32).collect();
        features.insert(&image_id, &feat32)?;
        steps.push(Step {
            index: t,
            tokens,
            image_ids: vec![image_id],
        });
        let labels = states.iter().map(|s| s.label()).collect();
        let hashes = states.iter().map(|s| s.id()).collect();
        Ok((labels, hashes))
    };

    // Step 1 lists the entities; all states are raw.
    let mut tokens = vec!["ingredients".to_string(), ":".to_string()];
    tokens.extend(entities.iter().map(|e| e.to_string()));
    let (labels, hashes) = push_step(1, tokens, &states, features, rng)?;
    step_labels.push(labels);
    step_hashes.push(hashes);

    for t in 2..=cfg.steps_per_recipe {
        let mv = if t < plan.divergence_step {
            plan.prefix[t - 2]
        } else if t == plan.divergence_step {
            plan.divergent[member]
        } else {
            plan.suffix[t - plan.divergence_step - 1]
        };
        let tokens = mv.tokens(&entities, rng);
        for arg in &mv.args[..mv.arity] {
            states[*arg].apply(mv.action);
        }
        let (labels, hashes) = push_step(t, tokens, &states, features, rng)?;
        step_labels.push(labels);
        step_hashes.push(hashes);
    }

    let recipe = Recipe {
        id: id.clone(),
        title: vec!["synthetic".into(), format!("g{group}")],
        steps,
    };
    Ok(BuiltRecipe {
        recipe,
        states: RecipeStates {
            entities: entities.iter().map(|e| e.to_string()).collect(),
            step_labels,
            step_hashes,
            group,
            divergence_step: plan.divergence_step,
        },
    })
}

/// Picks a shuffled gold slot and returns (candidates, gold_index).
fn shuffle_gold<T>(rng: &mut ChaCha8Rng, gold: T, mut distractors: Vec<T>) -> (Vec<T>, usize) {
    let gold_index = rng.gen_range(0..=distractors.len());
    distractors.insert(gold_index, gold);
    (distractors, gold_index)
}

/// Generates `n_recipes` recipes plus task instances and image features,
/// fully deterministic given (config, n_recipes, seed).
pub fn generate_synthetic(
    config: &SyntheticWorldConfig,
    n_recipes: usize,
    seed: u64,
) -> Result<SyntheticWorld> {
    config.validate()?;
    if n_recipes == 0 {
        return Ok(SyntheticWorld {
            recipes: Vec::new(),
            instances: Vec::new(),
            features: ImageFeatureStore::new(config.feature_dim),
            ground_truth: SyntheticGroundTruth::default(),
        });
    }
    if config.steps_per_recipe < 4 {
        return Err(PrnError::Config(
            "steps_per_recipe must be >= 4 (four question images required)".into(),
        ));
    }
    if config.move_count() < 4 {
        return Err(PrnError::Config(
            "world too small: fewer than 4 distinct moves available for distractors".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = ImageFeatureStore::new(config.feature_dim);
    let mut recipes = Vec::with_capacity(n_recipes);
    let mut ground_truth = SyntheticGroundTruth::default();
    let mut groups: Vec<Vec<usize>> = Vec::new(); // recipe indices per group

    let mut remaining = n_recipes;
    let mut group_no = 0;
    while remaining > 0 {
        let members = remaining.min(4);
        let plan = plan_group(&mut rng, config, members);
        let mut group_members = Vec::with_capacity(members);
        for m in 0..members {
            let built = build_recipe(&mut rng, config, &plan, group_no, m, &mut features)?;
            group_members.push(recipes.len());
            ground_truth
                .recipes
                .insert(built.recipe.id.clone(), built.states);
            recipes.push(built.recipe);
        }
        groups.push(group_members);
        remaining -= members;
        group_no += 1;
    }

    let mut instances = Vec::new();
    for (gi, members) in groups.iter().enumerate() {
        if members.len() < 4 {
            continue; // partial trailing group: recipes only
        }
        let base = &recipes[members[0]];
        let t_div = ground_truth.recipes[&base.id].divergence_step;
        let t_total = config.steps_per_recipe;

        // Visual cloze: window of four consecutive steps ending at the
        // divergence step, placeholder in the final slot.
        let window: Vec<usize> = (t_div - 3..=t_div).collect();
        let mut question: Vec<String> = window[..3]
            .iter()
            .map(|&t| base.step_image(t).unwrap().to_string())
            .collect();
        question.push(PLACEHOLDER_ID.to_string());
        let gold_img = base.step_image(t_div).unwrap().to_string();
        let distractors: Vec<String> = members[1..]
            .iter()
            .map(|&ri| recipes[ri].step_image(t_div).unwrap().to_string())
            .collect();
        let (cands, gold_index) = shuffle_gold(&mut rng, gold_img, distractors);
        instances.push(QuestionInstance {
            id: format!("{}_cloze", base.id),
            task: Task::Cloze,
            recipe_id: base.id.clone(),
            question_image_ids: question,
            candidates: cands
                .into_iter()
                .map(|c| Answer { image_ids: vec![c] })
                .collect(),
            gold_index,
            split: None,
        });

        // Visual coherence: corrupt one slot of a window with an image from
        // an unrelated recipe (another group when available, else a wrong
        // step of a sibling).
        let w0 = rng.gen_range(1..=t_total - 3);
        let corrupt_pos = rng.gen_range(0..4usize);
        let corrupt_step = w0 + corrupt_pos;
        let source_img = if groups.len() > 1 {
            let mut og = rng.gen_range(0..groups.len() - 1);
            if og >= gi {
                og += 1;
            }
            let other = &recipes[groups[og][0]];
            other.step_image(corrupt_step).unwrap().to_string()
        } else {
            let sib = &recipes[members[1]];
            let wrong_step = if corrupt_step == t_total { 1 } else { t_total };
            sib.step_image(wrong_step).unwrap().to_string()
        };
        let mut coh_question: Vec<String> = (w0..w0 + 4)
            .map(|t| base.step_image(t).unwrap().to_string())
            .collect();
        coh_question[corrupt_pos] = source_img;
        instances.push(QuestionInstance {
            id: format!("{}_coherence", base.id),
            task: Task::Coherence,
            recipe_id: base.id.clone(),
            question_image_ids: coh_question.clone(),
            candidates: coh_question
                .iter()
                .map(|c| Answer {
                    image_ids: vec![c.clone()],
                })
                .collect(),
            gold_index: corrupt_pos,
            split: None,
        });

        // Visual ordering: jumbled window; candidates are the chronological
        // sequence plus three distinct wrong permutations.
        let w0 = rng.gen_range(1..=t_total - 3);
        let chrono: Vec<String> = (w0..w0 + 4)
            .map(|t| base.step_image(t).unwrap().to_string())
            .collect();
        let mut shown = chrono.clone();
        shown.shuffle(&mut rng);
        let mut wrong: Vec<Vec<String>> = Vec::new();
        while wrong.len() < 3 {
            let mut p = chrono.clone();
            p.shuffle(&mut rng);
            if p != chrono && !wrong.contains(&p) {
                wrong.push(p);
            }
        }
        let (cands, gold_index) = shuffle_gold(&mut rng, chrono, wrong);
        instances.push(QuestionInstance {
            id: format!("{}_ordering", base.id),
            task: Task::Ordering,
            recipe_id: base.id.clone(),
            question_image_ids: shown,
            candidates: cands
                .into_iter()
                .map(|image_ids| Answer { image_ids })
                .collect(),
            gold_index,
            split: None,
        });
    }

    instances.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SyntheticWorld {
        recipes,
        instances,
        features,
        ground_truth,
    })
}

/// The ingredient lexicon covering every synthetic entity, one per line.
pub fn entity_lexicon() -> String {
    let mut s = ENTITY_POOL.join("\n");
    s.push('\n');
    s
}

/// Deterministic 70/15/15 split by recipe group.
pub fn default_split(group: usize) -> &'static str {
    match group % 20 {
        0..=13 => "train",
        14..=16 => "val",
        _ => "test",
    }
}

/// Group index encoded in a synthetic recipe id ("gNNNNNrM").
pub fn group_of(recipe_id: &str) -> usize {
    recipe_id
        .get(1..6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

#[derive(Debug, Serialize)]
pub struct SyntheticExport {
    pub recipes: usize,
    pub instances: usize,
    pub images: usize,
}

/// Generates a world and writes the full dataset bundle into `dir`:
/// recipes.jsonl, questions.jsonl (with default split fields),
/// features.bin, lexicon.txt, and labels.json.
pub fn generate_and_write(
    config: &SyntheticWorldConfig,
    n_recipes: usize,
    seed: u64,
    dir: &Path,
) -> Result<SyntheticExport> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).map_err(|e| PrnError::io(dir.display().to_string(), e))?;
    let mut world = generate_synthetic(config, n_recipes, seed)?;
    for inst in world.instances.iter_mut() {
        inst.split = Some(default_split(group_of(&inst.recipe_id)).to_string());
    }
    super::write_recipes(&world.recipes, &dir.join("recipes.jsonl"))?;

    let q_path = dir.join("questions.jsonl");
    let mut lines = String::new();
    for inst in &world.instances {
        let rec = serde_json::json!({
            "id": inst.id,
            "task": inst.task,
            "recipe_id": inst.recipe_id,
            "question": inst.question_image_ids,
            "candidates": inst.candidates.iter().map(|c| &c.image_ids).collect::<Vec<_>>(),
            "gold_index": inst.gold_index,
            "split": inst.split,
        });
        let _ = writeln!(lines, "{rec}");
    }
    std::fs::write(&q_path, lines).map_err(|e| PrnError::io(q_path.display().to_string(), e))?;
    world.features.save(&dir.join("features.bin"))?;
    std::fs::write(dir.join("lexicon.txt"), entity_lexicon())
        .map_err(|e| PrnError::io("lexicon.txt", e))?;
    std::fs::write(
        dir.join("labels.json"),
        serde_json::to_string_pretty(&world.ground_truth)?,
    )
    .map_err(|e| PrnError::io("labels.json", e))?;
    Ok(SyntheticExport {
        recipes: world.recipes.len(),
        instances: world.instances.len(),
        images: world.features.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SyntheticWorldConfig {
        SyntheticWorldConfig {
            noise_std: 0.0,
            ..SyntheticWorldConfig::default()
        }
    }

    #[test]
    fn zero_recipes_zero_outputs() {
        let world = generate_synthetic(&cfg(), 0, 1).unwrap();
        assert!(world.recipes.is_empty());
        assert!(world.instances.is_empty());
        assert_eq!(world.features.len(), 0);
    }

    #[test]
    fn too_few_steps_rejected() {
        let mut c = cfg();
        c.steps_per_recipe = 3;
        let err = generate_synthetic(&c, 4, 1).unwrap_err();
        assert!(err.to_string().contains("four question images"));
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate_synthetic(&cfg(), 8, 42).unwrap();
        let b = generate_synthetic(&cfg(), 8, 42).unwrap();
        assert_eq!(a.recipes, b.recipes);
        assert_eq!(a.instances, b.instances);
        let fa = tempfile::NamedTempFile::new().unwrap();
        let fb = tempfile::NamedTempFile::new().unwrap();
        a.features.save(fa.path()).unwrap();
        b.features.save(fb.path()).unwrap();
        assert_eq!(
            std::fs::read(fa.path()).unwrap(),
            std::fs::read(fb.path()).unwrap()
        );
    }

    #[test]
    fn instances_validate_and_reference_known_images() {
        let world = generate_synthetic(&cfg(), 16, 7).unwrap();
        assert!(!world.instances.is_empty());
        for inst in &world.instances {
            inst.validate().unwrap();
        }
        super::super::validate_features(&world.instances, &world.features).unwrap();
    }

    /// Independent re-projection oracle: walk the generated recipe text,
    /// replay the action grammar by hand, and re-derive the gold cloze
    /// image feature from scratch.
    #[test]
    fn cloze_gold_feature_matches_reprojection_oracle() {
        let c = cfg();
        let world = generate_synthetic(&c, 4, 9).unwrap();
        let inst = world
            .instances
            .iter()
            .find(|i| i.task == Task::Cloze)
            .unwrap();
        let recipe = world
            .recipes
            .iter()
            .find(|r| r.id == inst.recipe_id)
            .unwrap();

        // Entity list from step 1, after the "ingredients :" prefix.
        let entity_names: Vec<&str> = recipe.steps[0].tokens[2..]
            .iter()
            .map(|s| s.as_str())
            .collect();
        let entity_ids: Vec<u64> = entity_names
            .iter()
            .map(|n| ENTITY_POOL.iter().position(|e| e == n).unwrap() as u64)
            .collect();
        // Replay the action grammar: per entity, the applied-action
        // multiset.
        let mut applied: Vec<Vec<usize>> = vec![Vec::new(); entity_ids.len()];

        // The gold image is a step image of this recipe; find its step.
        let gold_img = &inst.candidates[inst.gold_index].image_ids[0];
        let gold_step: usize = gold_img.rsplit("_s").next().unwrap().parse().unwrap();

        for step in &recipe.steps[1..gold_step] {
            let toks: Vec<&str> = step.tokens.iter().map(|s| s.as_str()).collect();
            let action_id = ACTION_POOL
                .iter()
                .position(|&(name, _)| name == toks[0])
                .unwrap();
            for tok in &toks[1..] {
                if let Some(idx) = entity_names.iter().position(|e| e == tok) {
                    applied[idx].push(action_id);
                }
            }
        }

        // Direct recomputation: scaled sum over entities of
        // base-plus-effects, with per-action occurrence counting.
        let variance: f64 = applied
            .iter()
            .map(|a| 1.0 + EFFECT_WEIGHT * EFFECT_WEIGHT * a.len() as f64)
            .sum();
        let scale = 1.0 / variance.sqrt();
        let mut expect = vec![0.0f64; c.feature_dim];
        for (ei, &eid) in entity_ids.iter().enumerate() {
            let mut v = base_vector(c.projection_seed, eid, c.feature_dim);
            let mut counts: std::collections::HashMap<usize, usize> = Default::default();
            let mut sorted = applied[ei].clone();
            sorted.sort_unstable();
            for &a in &sorted {
                let occ = counts.entry(a).or_insert(0);
                *occ += 1;
                let eff = effect_vector(c.projection_seed, eid, a, *occ, c.feature_dim);
                for (x, y) in v.iter_mut().zip(eff.iter()) {
                    *x += EFFECT_WEIGHT * y;
                }
            }
            for (o, x) in expect.iter_mut().zip(v.iter()) {
                *o += x * scale;
            }
        }
        let got = world.features.get(gold_img).unwrap();
        for (e, g) in expect.iter().zip(got.iter()) {
            assert!((e - *g as f64).abs() < 1e-5, "oracle mismatch: {e} vs {g}");
        }
    }

    #[test]
    fn cloze_candidates_come_from_distinct_group_members() {
        let world = generate_synthetic(&cfg(), 8, 3).unwrap();
        for inst in world.instances.iter().filter(|i| i.task == Task::Cloze) {
            let mut prefixes: Vec<String> = inst
                .candidates
                .iter()
                .map(|c| c.image_ids[0].split("_s").next().unwrap().to_string())
                .collect();
            prefixes.sort();
            prefixes.dedup();
            assert_eq!(prefixes.len(), 4);
        }
    }

    #[test]
    fn ordering_has_exactly_one_chronological_candidate() {
        let world = generate_synthetic(&cfg(), 8, 5).unwrap();
        for inst in world.instances.iter().filter(|i| i.task == Task::Ordering) {
            let step_of = |img: &str| -> usize {
                img.rsplit("_s").next().unwrap().parse().unwrap()
            };
            let chrono_count = inst
                .candidates
                .iter()
                .filter(|c| {
                    c.image_ids
                        .windows(2)
                        .all(|w| step_of(&w[0]) < step_of(&w[1]))
                })
                .count();
            assert_eq!(chrono_count, 1);
            assert!(inst.candidates[inst.gold_index]
                .image_ids
                .windows(2)
                .all(|w| step_of(&w[0]) < step_of(&w[1])));
        }
    }
}
