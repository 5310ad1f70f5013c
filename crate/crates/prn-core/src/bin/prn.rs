//! Command-line surface: corpus ingestion, synthetic world generation,
//! entity extraction, training, evaluation, the heuristic baseline, and
//! the analysis exports.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prn_core::analysis::{
    entity_arithmetic, export_attention_maps, load_snapshot_table, project_3d,
    save_snapshot_table, snapshot_table, ArithmeticQuery, RowRef,
};
use prn_core::config::ModelConfig;
use prn_core::corpus::synthetic::{generate_and_write, SyntheticGroundTruth, SyntheticWorldConfig};
use prn_core::corpus::{load_dataset, load_features, validate_features, Recipe, Task};
use prn_core::encoders::{corpus_tokens, Vocabulary};
use prn_core::entities::{
    build_dictionary, extract_entities, load_overrides, EntityName, EntityOverrides,
    IngredientDictionary,
};
use prn_core::error::{PrnError, Result};
use prn_core::evaluation::{
    choose_coherence_policy, evaluate, evaluate_hasty, write_table_csv, CoherencePolicy,
};
use prn_core::model::{prepare_instances, prepare_recipe, Model, PreparedInstance};
use prn_core::training::{
    load_checkpoint, model_from_checkpoint, save_checkpoint, train_multi_task, train_single_task,
    write_metrics_csv, Checkpoint,
};

#[derive(Parser)]
#[command(name = "prn", version, about = "Entity-aware multimodal recipe comprehension")]
struct Cli {
    /// Model configuration JSON (defaults to the reference configuration).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Checkpoint to write (train) or read (evaluate/export).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Recipes JSONL file.
    #[arg(long)]
    recipes: PathBuf,
    /// Questions JSONL file.
    #[arg(long)]
    questions: PathBuf,
    /// Binary image-feature file.
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct EntityArgs {
    /// Ingredient lexicon files, one surface form per line.
    #[arg(long)]
    lexicon: Vec<PathBuf>,
    /// Minimum corpus frequency for a dictionary entry.
    #[arg(long, default_value_t = 1)]
    threshold: usize,
    /// JSON map recipe_id -> entity list for manual annotation.
    #[arg(long)]
    overrides: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validates a dataset and prints a summary.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Keep only records of this split.
        #[arg(long)]
        split: Option<String>,
    },
    /// Generates a synthetic procedural world (recipes, questions,
    /// features, lexicon, ground-truth state labels).
    Synth {
        /// Synthetic world configuration JSON; defaults apply if omitted.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        n_recipes: usize,
    },
    /// Extracts per-recipe entities and prints them as JSON.
    ExtractEntities {
        #[arg(long)]
        recipes: PathBuf,
        #[command(flatten)]
        entity: EntityArgs,
    },
    /// Trains one task.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        entity: EntityArgs,
        /// Task to train on.
        #[arg(long)]
        task: TaskArg,
        /// Pretrained word-vector file ("word v1 ... v_dim" lines);
        /// random frozen vectors are used when omitted.
        #[arg(long)]
        word_vectors: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        train_split: String,
        #[arg(long, default_value = "val")]
        val_split: String,
    },
    /// Trains all configured tasks round-robin with one shared model.
    TrainMulti {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        entity: EntityArgs,
        #[arg(long)]
        word_vectors: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        train_split: String,
        #[arg(long, default_value = "val")]
        val_split: String,
    },
    /// Evaluates a checkpoint and writes report JSON plus a summary CSV.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Keep only records of this split (default: all records).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Heuristic baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Exports per-step, per-head attention maps for one recipe.
    ExportAttn {
        #[arg(long)]
        recipes: PathBuf,
        #[arg(long)]
        recipe_id: String,
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Exports the memory-snapshot table (JSON + binary sidecar), with an
    /// optional seeded 3-d stochastic-neighbor projection.
    ExportSnapshots {
        #[arg(long)]
        recipes: PathBuf,
        /// Ground-truth state labels JSON (synthetic corpora).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Also write a 3-d projection for plotting.
        #[arg(long)]
        project_3d: bool,
        /// Cap on exported recipes (0 = all).
        #[arg(long, default_value_t = 0)]
        max_recipes: usize,
    },
    /// Entity state arithmetic over an exported snapshot table.
    Arith {
        /// Snapshot table JSON written by export-snapshots.
        #[arg(long)]
        table: PathBuf,
        /// Minuend row as recipe_id/entity/step.
        #[arg(long)]
        minuend: String,
        /// Subtrahend row as recipe_id/entity/step.
        #[arg(long)]
        subtrahend: String,
        /// Addend row as recipe_id/entity/step.
        #[arg(long)]
        addend: String,
        #[arg(short, default_value_t = 3)]
        k: usize,
    },
}

/// Task name argument.
#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    Cloze,
    Coherence,
    Ordering,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Cloze => Task::Cloze,
            TaskArg::Coherence => Task::Coherence,
            TaskArg::Ordering => Task::Ordering,
        }
    }
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Visual-distance heuristic that ignores the recipe text.
    Hasty {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        split: Option<String>,
        /// Coherence direction: min_distance, max_distance, or auto
        /// (picked on the given validation split).
        #[arg(long, default_value = "max_distance")]
        coherence_policy: String,
        /// Validation split name used by `auto`.
        #[arg(long, default_value = "val")]
        val_split: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are validation errors; --help/--version exit 0.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<ModelConfig> {
    let mut cfg = match cli_config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| PrnError::io(dir.display().to_string(), e))?;
    Ok(dir)
}

fn build_entities(
    recipes: &[Recipe],
    entity: &EntityArgs,
    variant_needs_entities: bool,
) -> Result<(Vec<String>, HashMap<String, Vec<EntityName>>)> {
    if entity.lexicon.is_empty() {
        if variant_needs_entities {
            return Err(PrnError::Config(
                "this model variant tracks entities: pass --lexicon".into(),
            ));
        }
        return Ok((Vec::new(), HashMap::new()));
    }
    let paths: Vec<&Path> = entity.lexicon.iter().map(|p| p.as_path()).collect();
    let dict = build_dictionary(&paths, entity.threshold)?;
    let overrides = entity
        .overrides
        .as_ref()
        .map(|p| load_overrides(p))
        .transpose()?;
    let map = extract_all(recipes, &dict, overrides.as_ref(), 30)?;
    let entries: Vec<String> = dict.entries().map(|e| e.join(" ")).collect();
    Ok((entries, map))
}

fn extract_all(
    recipes: &[Recipe],
    dict: &IngredientDictionary,
    overrides: Option<&EntityOverrides>,
    k_max: usize,
) -> Result<HashMap<String, Vec<EntityName>>> {
    let mut map = HashMap::new();
    for r in recipes {
        let ents = extract_entities(r, dict, k_max, overrides)?;
        map.insert(r.id.clone(), ents);
    }
    Ok(map)
}

fn load_vocab(
    recipes: &[Recipe],
    word_vectors: &Option<PathBuf>,
    cfg: &ModelConfig,
) -> Result<Vocabulary> {
    let tokens = corpus_tokens(recipes);
    match word_vectors {
        Some(path) => {
            let vocab = Vocabulary::from_pretrained(path, &tokens)?;
            if vocab.dim() != cfg.glove_dim {
                return Err(PrnError::Config(format!(
                    "word-vector width {} != configured glove_dim {}",
                    vocab.dim(),
                    cfg.glove_dim
                )));
            }
            Ok(vocab)
        }
        None => Ok(Vocabulary::random(&tokens, cfg.glove_dim, cfg.seed)),
    }
}

fn dictionary_from_checkpoint(ckpt: &Checkpoint) -> Result<IngredientDictionary> {
    if ckpt.dictionary.is_empty() {
        return Err(PrnError::Data(
            "checkpoint carries no ingredient dictionary".into(),
        ));
    }
    IngredientDictionary::from_entries(ckpt.dictionary.iter().cloned())
}

fn prepared_for_eval(
    model: &Model,
    ckpt: &Checkpoint,
    data: &DataArgs,
    split: Option<&str>,
    overrides: Option<&PathBuf>,
) -> Result<Vec<PreparedInstance>> {
    let (recipes, instances) = load_dataset(&data.recipes, &data.questions, split)?;
    let store = prn_core::corpus::features::load_features(&data.features)?;
    validate_features(&instances, &store)?;
    let entities_map = if model.config.variant.has_entity_path() {
        let dict = dictionary_from_checkpoint(ckpt)?;
        let ov = overrides.map(|p| load_overrides(p)).transpose()?;
        extract_all(&recipes, &dict, ov.as_ref(), model.config.k_max)?
    } else {
        HashMap::new()
    };
    prepare_instances(
        &instances,
        &recipes,
        &entities_map,
        &store,
        &model.vocab,
        &model.config,
    )
}

fn parse_row_ref(s: &str) -> Result<RowRef> {
    let parts: Vec<&str> = s.split('/').collect();
    if parts.len() != 3 {
        return Err(PrnError::Config(format!(
            "row reference '{s}' must be recipe_id/entity/step"
        )));
    }
    Ok(RowRef {
        recipe_id: parts[0].to_string(),
        entity: parts[1].replace('_', " "),
        step: parts[2]
            .parse()
            .map_err(|_| PrnError::Config(format!("bad step in row reference '{s}'")))?,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { data, split } => {
            let (recipes, instances) =
                load_dataset(&data.recipes, &data.questions, split.as_deref())?;
            let store = load_features(&data.features)?;
            validate_features(&instances, &store)?;
            let mut by_task: BTreeMap<&str, usize> = BTreeMap::new();
            for inst in &instances {
                *by_task.entry(inst.task.name()).or_insert(0) += 1;
            }
            let summary = serde_json::json!({
                "recipes": recipes.len(),
                "instances": instances.len(),
                "by_task": by_task,
                "images": store.len(),
                "feature_dim": store.dim(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }

        Command::Synth { world, n_recipes } => {
            let wcfg: SyntheticWorldConfig = match world {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| PrnError::io(path.display().to_string(), e))?;
                    serde_json::from_str(&text)?
                }
                None => SyntheticWorldConfig::default(),
            };
            let seed = cli.seed.unwrap_or(13);
            let dir = out_dir(&cli.out)?;
            let export = generate_and_write(&wcfg, n_recipes, seed, &dir)?;
            println!(
                "wrote {} recipes, {} instances, {} images to {}",
                export.recipes,
                export.instances,
                export.images,
                dir.display()
            );
            Ok(())
        }

        Command::ExtractEntities { recipes, entity } => {
            let recipes = prn_core::corpus::load_recipes(&recipes)?;
            let paths: Vec<&Path> = entity.lexicon.iter().map(|p| p.as_path()).collect();
            let dict = build_dictionary(&paths, entity.threshold)?;
            let overrides = entity
                .overrides
                .as_ref()
                .map(|p| load_overrides(p))
                .transpose()?;
            let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for r in &recipes {
                let ents = extract_entities(r, &dict, 30, overrides.as_ref())?;
                out.insert(r.id.clone(), ents.iter().map(|e| e.join(" ")).collect());
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }

        Command::Train {
            data,
            entity,
            task,
            word_vectors,
            train_split,
            val_split,
        } => {
            let task: Task = task.into();
            let mut cfg = load_config(&cli.config, cli.seed)?;
            cfg.tasks = vec![task];
            let (train_recipes, train_instances) =
                load_dataset(&data.recipes, &data.questions, Some(&train_split))?;
            let (_, val_instances) =
                load_dataset(&data.recipes, &data.questions, Some(&val_split))?;
            let store = load_features(&data.features)?;
            let pick = |v: Vec<prn_core::corpus::QuestionInstance>| -> Vec<_> {
                v.into_iter().filter(|i| i.task == task).collect()
            };
            let train_instances = pick(train_instances);
            let val_instances = pick(val_instances);
            validate_features(&train_instances, &store)?;
            validate_features(&val_instances, &store)?;

            let (dict_entries, entities_map) =
                build_entities(&train_recipes, &entity, cfg.variant.has_entity_path())?;
            let vocab = load_vocab(&train_recipes, &word_vectors, &cfg)?;
            let mut model = Model::new(cfg.clone(), vocab.clone())?;
            let train_set = prepare_instances(
                &train_instances,
                &train_recipes,
                &entities_map,
                &store,
                &vocab,
                &cfg,
            )?;
            let val_set = prepare_instances(
                &val_instances,
                &train_recipes,
                &entities_map,
                &store,
                &vocab,
                &cfg,
            )?;
            let state = train_single_task(&mut model, &train_set, &val_set, |m| {
                if let Some(loss) = m.loss {
                    println!("epoch {:>3} {:>5} loss {:.6}", m.epoch, m.split, loss);
                } else if let Some(acc) = m.accuracy {
                    println!("epoch {:>3} {:>5} accuracy {:.2}%", m.epoch, m.split, acc);
                }
            })?;
            let dir = out_dir(&cli.out)?;
            let ckpt_path = cli
                .checkpoint
                .clone()
                .unwrap_or_else(|| dir.join("model.ckpt"));
            save_checkpoint(&ckpt_path, &model, &dict_entries, None, &state.history)?;
            write_metrics_csv(&state.history, &dir.join("metrics.csv"))?;
            println!(
                "best val accuracy {:.2}% after {} epochs; checkpoint {}",
                100.0 * state.best_val_accuracy,
                state.epoch,
                ckpt_path.display()
            );
            Ok(())
        }

        Command::TrainMulti {
            data,
            entity,
            word_vectors,
            train_split,
            val_split,
        } => {
            let cfg = load_config(&cli.config, cli.seed)?;
            let (recipes, train_instances) =
                load_dataset(&data.recipes, &data.questions, Some(&train_split))?;
            let (_, val_instances) =
                load_dataset(&data.recipes, &data.questions, Some(&val_split))?;
            let store = load_features(&data.features)?;
            validate_features(&train_instances, &store)?;
            validate_features(&val_instances, &store)?;
            let (dict_entries, entities_map) =
                build_entities(&recipes, &entity, cfg.variant.has_entity_path())?;
            let vocab = load_vocab(&recipes, &word_vectors, &cfg)?;
            let mut model = Model::new(cfg.clone(), vocab.clone())?;

            let mut datasets = BTreeMap::new();
            for &task in &cfg.tasks {
                let tr: Vec<_> = train_instances
                    .iter()
                    .filter(|i| i.task == task)
                    .cloned()
                    .collect();
                let va: Vec<_> = val_instances
                    .iter()
                    .filter(|i| i.task == task)
                    .cloned()
                    .collect();
                let tr = prepare_instances(&tr, &recipes, &entities_map, &store, &vocab, &cfg)?;
                let va = prepare_instances(&va, &recipes, &entities_map, &store, &vocab, &cfg)?;
                datasets.insert(task, (tr, va));
            }
            let state = train_multi_task(&mut model, &datasets, |m| {
                if let Some(acc) = m.accuracy {
                    println!(
                        "epoch {:>3} {:>5} {} accuracy {:.2}%",
                        m.epoch, m.split, m.task, acc
                    );
                }
            })?;
            let dir = out_dir(&cli.out)?;
            let ckpt_path = cli
                .checkpoint
                .clone()
                .unwrap_or_else(|| dir.join("model.ckpt"));
            save_checkpoint(&ckpt_path, &model, &dict_entries, None, &state.history)?;
            write_metrics_csv(&state.history, &dir.join("metrics.csv"))?;
            println!(
                "best mean val accuracy {:.2}% after {} epochs; checkpoint {}",
                100.0 * state.best_val_accuracy,
                state.epoch,
                ckpt_path.display()
            );
            Ok(())
        }

        Command::Evaluate {
            data,
            split,
            overrides,
        } => {
            let ckpt_path = cli
                .checkpoint
                .clone()
                .ok_or_else(|| PrnError::Config("evaluate needs --checkpoint".into()))?;
            let ckpt = load_checkpoint(&ckpt_path)?;
            let model = model_from_checkpoint(&ckpt)?;
            let prepared =
                prepared_for_eval(&model, &ckpt, &data, split.as_deref(), overrides.as_ref())?;
            let report = evaluate(&model, &prepared)?;
            let dir = out_dir(&cli.out)?;
            report.save_json(&dir.join("report.json"))?;
            write_table_csv(&[&report], &dir.join("table.csv"))?;
            for t in &report.per_task {
                println!(
                    "{:<10} {:>7.2}%  ({} / {})",
                    t.task, t.accuracy, t.correct, t.count
                );
            }
            println!("average    {:>7.2}%", report.average_accuracy());
            Ok(())
        }

        Command::Baseline(BaselineCommand::Hasty {
            data,
            split,
            coherence_policy,
            val_split,
        }) => {
            let (_, instances) = load_dataset(&data.recipes, &data.questions, split.as_deref())?;
            let store = load_features(&data.features)?;
            validate_features(&instances, &store)?;
            let policy = match coherence_policy.as_str() {
                "min_distance" => CoherencePolicy::MinDistance,
                "max_distance" => CoherencePolicy::MaxDistance,
                "auto" => {
                    let (_, val) = load_dataset(&data.recipes, &data.questions, Some(&val_split))?;
                    choose_coherence_policy(&val, &store)?
                }
                other => {
                    return Err(PrnError::Config(format!(
                        "unknown coherence policy '{other}'"
                    )))
                }
            };
            let report = evaluate_hasty(&instances, &store, policy)?;
            let dir = out_dir(&cli.out)?;
            report.save_json(&dir.join("hasty_report.json"))?;
            write_table_csv(&[&report], &dir.join("hasty_table.csv"))?;
            for t in &report.per_task {
                println!(
                    "{:<10} {:>7.2}%  ({} / {})",
                    t.task, t.accuracy, t.correct, t.count
                );
            }
            println!("coherence policy: {}", policy.name());
            Ok(())
        }

        Command::ExportAttn {
            recipes,
            recipe_id,
            overrides,
        } => {
            let ckpt_path = cli
                .checkpoint
                .clone()
                .ok_or_else(|| PrnError::Config("export-attn needs --checkpoint".into()))?;
            let ckpt = load_checkpoint(&ckpt_path)?;
            let model = model_from_checkpoint(&ckpt)?;
            let recipes = prn_core::corpus::load_recipes(&recipes)?;
            let recipe = recipes
                .iter()
                .find(|r| r.id == recipe_id)
                .ok_or_else(|| PrnError::Data(format!("recipe '{recipe_id}' not found")))?;
            let dict = dictionary_from_checkpoint(&ckpt)?;
            let ov = overrides.map(|p| load_overrides(&p)).transpose()?;
            let ents = extract_entities(recipe, &dict, model.config.k_max, ov.as_ref())?;
            let prepared = prepare_recipe(recipe, &ents, &model.vocab, &model.config);
            let dir = out_dir(&cli.out)?;
            let export = export_attention_maps(&model, &prepared, &dir)?;
            match export.static_notice {
                Some(p) => println!("static-memory variant: notice written to {}", p.display()),
                None => println!(
                    "wrote {} attention maps (+{} rasters) to {}",
                    export.json_files.len(),
                    export.png_files.len(),
                    dir.display()
                ),
            }
            Ok(())
        }

        Command::ExportSnapshots {
            recipes,
            labels,
            overrides,
            project_3d: do_project,
            max_recipes,
        } => {
            let ckpt_path = cli
                .checkpoint
                .clone()
                .ok_or_else(|| PrnError::Config("export-snapshots needs --checkpoint".into()))?;
            let ckpt = load_checkpoint(&ckpt_path)?;
            let model = model_from_checkpoint(&ckpt)?;
            let recipes = prn_core::corpus::load_recipes(&recipes)?;
            let dict = dictionary_from_checkpoint(&ckpt)?;
            let ov = overrides.map(|p| load_overrides(&p)).transpose()?;
            let ground_truth: Option<SyntheticGroundTruth> = labels
                .map(|p| -> Result<SyntheticGroundTruth> {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| PrnError::io(p.display().to_string(), e))?;
                    Ok(serde_json::from_str(&text)?)
                })
                .transpose()?;

            let take = if max_recipes == 0 {
                recipes.len()
            } else {
                max_recipes
            };
            let prepared: Vec<_> = recipes
                .iter()
                .take(take)
                .map(|r| {
                    let ents = extract_entities(r, &dict, model.config.k_max, ov.as_ref())?;
                    Ok(prepare_recipe(r, &ents, &model.vocab, &model.config))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = snapshot_table(&model, &prepared, ground_truth.as_ref())?;
            let dir = out_dir(&cli.out)?;
            let json_path = dir.join("snapshots.json");
            save_snapshot_table(&table, &json_path)?;
            println!(
                "wrote {} snapshot rows to {}",
                table.rows.len(),
                json_path.display()
            );
            if do_project {
                let seed = cli.seed.unwrap_or(13);
                let proj = project_3d(&table, seed, 250);
                let rows: Vec<serde_json::Value> = table
                    .rows
                    .iter()
                    .zip(proj.iter())
                    .map(|(r, p)| {
                        serde_json::json!({
                            "recipe_id": r.recipe_id,
                            "entity": r.entity,
                            "step": r.step,
                            "label": r.label,
                            "x": p[0], "y": p[1], "z": p[2],
                        })
                    })
                    .collect();
                let proj_path = dir.join("projection3d.json");
                std::fs::write(&proj_path, serde_json::to_string_pretty(&rows)?)
                    .map_err(|e| PrnError::io(proj_path.display().to_string(), e))?;
                println!("wrote 3-d projection to {}", proj_path.display());
            }
            Ok(())
        }

        Command::Arith {
            table,
            minuend,
            subtrahend,
            addend,
            k,
        } => {
            let table = load_snapshot_table(&table)?;
            let query = ArithmeticQuery {
                minuend: parse_row_ref(&minuend)?,
                subtrahend: parse_row_ref(&subtrahend)?,
                addend: parse_row_ref(&addend)?,
                k,
            };
            query.validate()?;
            let neighbors = entity_arithmetic(&table, &query)?;
            println!("{}", serde_json::to_string_pretty(&neighbors)?);
            Ok(())
        }
    }
}
