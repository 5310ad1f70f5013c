//! End-to-end model assembly: encode recipe and question, track entity
//! states, attend, fuse, and score the four answer candidates.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::CrossAttention;
use crate::config::ModelConfig;
use crate::corpus::{ImageFeatureStore, QuestionInstance, Recipe, Task, PLACEHOLDER_ID};
use crate::encoders::{
    ImageEncoders, QuestionSlot, TextEncoders, TokenIds, Vocabulary,
};
use crate::entities::EntityName;
use crate::error::{PrnError, Result};
use crate::fusion::Fusion;
use crate::graph::{Graph, Var};
use crate::memory::{EntityInput, MemoryTrace, RelationalMemory};
use crate::params::ParamStore;
use crate::scoring;

/// A recipe preprocessed into model inputs.
#[derive(Clone, Debug)]
pub struct PreparedRecipe {
    pub id: String,
    /// Token ids per step.
    pub steps: Vec<Vec<TokenIds>>,
    pub entities: Vec<EntityInput>,
    pub entity_names: Vec<String>,
}

/// A question instance preprocessed into model inputs.
#[derive(Clone, Debug)]
pub struct PreparedInstance {
    pub id: String,
    pub task: Task,
    pub recipe: Arc<PreparedRecipe>,
    pub question: Vec<QuestionSlot>,
    /// Feature vectors per candidate, one per candidate image.
    pub candidates: Vec<Vec<Vec<f64>>>,
    pub gold: usize,
}

pub fn prepare_recipe(
    recipe: &Recipe,
    entities: &[EntityName],
    vocab: &Vocabulary,
    cfg: &ModelConfig,
) -> PreparedRecipe {
    let steps = recipe
        .steps
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| vocab.encode_token(t, cfg.max_token_chars))
                .collect()
        })
        .collect();
    let entity_inputs = entities
        .iter()
        .map(|name| EntityInput {
            chars: vocab.char_ids(&name.join(" "), cfg.max_token_chars),
            word_avg: vocab.average_vector(name),
        })
        .collect();
    PreparedRecipe {
        id: recipe.id.clone(),
        steps,
        entities: entity_inputs,
        entity_names: entities.iter().map(|n| n.join(" ")).collect(),
    }
}

/// Prepares instances against their recipes, resolving every image id.
pub fn prepare_instances(
    instances: &[QuestionInstance],
    recipes: &[Recipe],
    entities_by_recipe: &HashMap<String, Vec<EntityName>>,
    store: &ImageFeatureStore,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
) -> Result<Vec<PreparedInstance>> {
    let mut prepared_recipes: HashMap<&str, Arc<PreparedRecipe>> = HashMap::new();
    for r in recipes {
        let ents = entities_by_recipe
            .get(&r.id)
            .map(|e| e.as_slice())
            .unwrap_or(&[]);
        prepared_recipes.insert(
            r.id.as_str(),
            Arc::new(prepare_recipe(r, ents, vocab, cfg)),
        );
    }
    instances
        .iter()
        .map(|inst| {
            let recipe = prepared_recipes
                .get(inst.recipe_id.as_str())
                .ok_or_else(|| {
                    PrnError::Data(format!(
                        "instance '{}': dangling recipe_id '{}'",
                        inst.id, inst.recipe_id
                    ))
                })?
                .clone();
            let question = inst
                .question_image_ids
                .iter()
                .map(|id| {
                    if id == PLACEHOLDER_ID {
                        Ok(QuestionSlot::Placeholder)
                    } else {
                        Ok(QuestionSlot::Image(store.get_f64(id)?))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let candidates = inst
                .candidates
                .iter()
                .map(|c| {
                    c.image_ids
                        .iter()
                        .map(|id| store.get_f64(id))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedInstance {
                id: inst.id.clone(),
                task: inst.task,
                recipe,
                question,
                candidates,
                gold: inst.gold_index,
            })
        })
        .collect()
}

/// One scored forward pass.
pub struct ForwardPass {
    pub o: Var,
    /// Cosine similarity node per candidate.
    pub cosines: Vec<Var>,
    /// Cosine values read off the tape.
    pub scores: Vec<f64>,
    pub predicted: usize,
    pub trace: MemoryTrace,
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub text: TextEncoders,
    pub image: ImageEncoders,
    pub memory: Option<RelationalMemory>,
    pub attention: CrossAttention,
    pub fusion: Fusion,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.dim() != config.glove_dim {
            return Err(PrnError::Config(format!(
                "vocabulary width {} != configured glove_dim {}",
                vocab.dim(),
                config.glove_dim
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let entity_path = config.variant.has_entity_path();
        let text = TextEncoders::register(&mut store, &mut rng, &config, vocab.char_count());
        let image = ImageEncoders::register(&mut store, &mut rng, &config);
        let memory = entity_path.then(|| {
            let token_dim = config.char_out_dim() + config.glove_dim;
            RelationalMemory::register(&mut store, &mut rng, &config, token_dim)
        });
        let attention = CrossAttention::register(&mut store, &mut rng, &config, entity_path);
        let fusion = Fusion::register(&mut store, &mut rng, &config, entity_path);
        Ok(Model {
            config,
            vocab,
            store,
            text,
            image,
            memory,
            attention,
            fusion,
        })
    }

    /// Total trainable scalar count (the frozen word table is excluded; it
    /// lives in the vocabulary, not the parameter store).
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Shared text encoding: contextual word matrix R' plus per-step
    /// embeddings, computing token features once.
    fn encode_recipe_text(
        &self,
        g: &Graph,
        recipe: &PreparedRecipe,
    ) -> Result<(Var, Vec<Var>)> {
        if recipe.steps.is_empty() {
            return Err(PrnError::Data(format!("recipe '{}' has no steps", recipe.id)));
        }
        let mut step_feats = Vec::with_capacity(recipe.steps.len());
        for toks in &recipe.steps {
            step_feats.push(self.text.token_features(g, &self.store, &self.vocab, toks)?);
        }
        let all = g.concat_cols(&step_feats);
        let r_prime = self.text.word_bilstm.run(g, &self.store, all).hidden;
        let step_embs = step_feats
            .iter()
            .map(|&f| self.text.step_bilstm.run(g, &self.store, f).final_hidden)
            .collect();
        Ok((r_prime, step_embs))
    }

    /// Runs the full pipeline for one instance and scores all candidates.
    pub fn forward(&self, g: &Graph, inst: &PreparedInstance) -> Result<ForwardPass> {
        if inst.candidates.len() != crate::corpus::CANDIDATES {
            return Err(PrnError::Data(format!(
                "instance '{}': expected 4 candidates",
                inst.id
            )));
        }
        let (r_prime, step_embs) = self.encode_recipe_text(g, &inst.recipe)?;
        let q_prime = self.image.encode_question(
            g,
            &self.store,
            &inst.question,
            self.config.use_cell_state,
        )?;

        let (entity_final, trace) = match &self.memory {
            Some(memory) if !inst.recipe.entities.is_empty() => {
                let (e0, h0) =
                    memory.init_memory(g, &self.store, &self.text.char_cnn, &inst.recipe.entities)?;
                let (e_final, trace) = memory.run_reasoning(
                    g,
                    &self.store,
                    &step_embs,
                    e0,
                    h0,
                    self.config.variant.updates_memory(),
                )?;
                (Some(e_final), trace)
            }
            Some(_) => {
                return Err(PrnError::Data(format!(
                    "instance '{}': variant {} needs extracted entities",
                    inst.id,
                    self.config.variant.label()
                )))
            }
            None => (None, MemoryTrace::default()),
        };

        let (_, fused) = self
            .attention
            .recipe_attention(g, &self.store, r_prime, q_prime)?;
        let c = self.fusion.summarize_recipe(g, &self.store, fused)?;
        let f = match entity_final {
            Some(e_final) => {
                let (_, y) = self
                    .attention
                    .entity_attention(g, &self.store, e_final, q_prime)?;
                Some(self.fusion.summarize_entities(g, &self.store, y)?)
            }
            None => None,
        };
        let o = self.fusion.project(g, &self.store, c, f);

        let mut cosines = Vec::with_capacity(inst.candidates.len());
        let mut scores = Vec::with_capacity(inst.candidates.len());
        for cand in &inst.candidates {
            let a = self.image.encode_answer(
                g,
                &self.store,
                cand,
                inst.task,
                self.config.use_cell_state,
            )?;
            let cos = scoring::cosine(g, o, a)?;
            scores.push(g.value_ref(cos).get(0, 0));
            cosines.push(cos);
        }
        let predicted = scoring::predict(&scores);
        Ok(ForwardPass {
            o,
            cosines,
            scores,
            predicted,
            trace,
        })
    }

    /// Forward plus the training loss for one instance.
    pub fn loss(&self, g: &Graph, inst: &PreparedInstance) -> Result<(Var, ForwardPass)> {
        let pass = self.forward(g, inst)?;
        let loss = if self.config.use_softmax_loss {
            scoring::softmax_ce_loss(g, &pass.cosines, inst.gold)?
        } else {
            let negs: Vec<Var> = pass
                .cosines
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != inst.gold)
                .map(|(_, &v)| v)
                .collect();
            scoring::hinge_loss(g, pass.cosines[inst.gold], &negs, self.config.gamma)?
        };
        Ok((loss, pass))
    }

    /// Scores an instance on a fresh tape (inference).
    pub fn score(&self, inst: &PreparedInstance) -> Result<ForwardPass> {
        let g = Graph::new();
        self.forward(&g, inst)
    }
}
