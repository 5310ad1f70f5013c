//! Qualitative analysis tooling: attention heatmap export, memory-snapshot
//! tables with an optional stochastic-neighbor 3-d projection, and entity
//! state arithmetic over learned snapshot vectors.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::synthetic::SyntheticGroundTruth;
use crate::error::{PrnError, Result};
use crate::graph::Graph;
use crate::io::write_f64s;
use crate::memory::MemoryTrace;
use crate::model::{Model, PreparedRecipe};
use crate::scoring::cosine_value;
use crate::tensor::Mat;

/// Runs the reasoning pass alone for one recipe (no question needed) and
/// returns the memory trace.
pub fn recipe_trace(model: &Model, recipe: &PreparedRecipe) -> Result<MemoryTrace> {
    let memory = model.memory.as_ref().ok_or_else(|| {
        PrnError::Config("this model variant has no entity memory".into())
    })?;
    if recipe.entities.is_empty() {
        return Err(PrnError::Data(format!(
            "recipe '{}' has no extracted entities",
            recipe.id
        )));
    }
    let g = Graph::new();
    let mut step_embs = Vec::with_capacity(recipe.steps.len());
    for toks in &recipe.steps {
        let feats = model
            .text
            .token_features(&g, &model.store, &model.vocab, toks)?;
        step_embs.push(model.text.step_bilstm.run(&g, &model.store, feats).final_hidden);
    }
    let (e0, h0) = memory.init_memory(&g, &model.store, &model.text.char_cnn, &recipe.entities)?;
    let (_, trace) = memory.run_reasoning(
        &g,
        &model.store,
        &step_embs,
        e0,
        h0,
        model.config.variant.updates_memory(),
    )?;
    Ok(trace)
}

#[derive(Serialize, Deserialize)]
struct AttentionMapFile {
    recipe_id: String,
    step: usize,
    head: usize,
    /// Row labels: one per entity. The final column is the step-input
    /// offset column.
    entities: Vec<String>,
    rows: usize,
    cols: usize,
    values: Vec<Vec<f64>>,
}

/// Files written by one attention export.
pub struct AttentionExport {
    pub json_files: Vec<PathBuf>,
    pub png_files: Vec<PathBuf>,
    /// Set when the variant never updates memory: no maps exist.
    pub static_notice: Option<PathBuf>,
}

/// Writes per-step, per-head attention maps as JSON plus grayscale PNG
/// rasters. Static-memory variants produce a notice file instead.
pub fn export_attention_maps(
    model: &Model,
    recipe: &PreparedRecipe,
    out_dir: &Path,
) -> Result<AttentionExport> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PrnError::io(out_dir.display().to_string(), e))?;
    let trace = recipe_trace(model, recipe)?;
    let mut export = AttentionExport {
        json_files: Vec::new(),
        png_files: Vec::new(),
        static_notice: None,
    };
    if trace.attention.is_empty() {
        let notice = out_dir.join(format!("{}_static_memory.txt", recipe.id));
        std::fs::write(
            &notice,
            "static-memory variant: no attention maps are produced because memory is never updated\n",
        )
        .map_err(|e| PrnError::io(notice.display().to_string(), e))?;
        export.static_notice = Some(notice);
        return Ok(export);
    }
    for (step_idx, heads) in trace.attention.iter().enumerate() {
        for (head_idx, map) in heads.iter().enumerate() {
            let stem = format!("{}_s{}_h{}", recipe.id, step_idx + 1, head_idx);
            let json_path = out_dir.join(format!("{stem}.json"));
            let file = AttentionMapFile {
                recipe_id: recipe.id.clone(),
                step: step_idx + 1,
                head: head_idx,
                entities: recipe.entity_names.clone(),
                rows: map.rows(),
                cols: map.cols(),
                values: (0..map.rows()).map(|i| map.row(i).to_vec()).collect(),
            };
            std::fs::write(&json_path, serde_json::to_string_pretty(&file)?)
                .map_err(|e| PrnError::io(json_path.display().to_string(), e))?;
            export.json_files.push(json_path);

            let png_path = out_dir.join(format!("{stem}.png"));
            render_heatmap(map, &png_path)?;
            export.png_files.push(png_path);
        }
    }
    Ok(export)
}

/// Grayscale raster of a row-stochastic map, upscaled for visibility.
fn render_heatmap(map: &Mat, path: &Path) -> Result<()> {
    const CELL: u32 = 24;
    let w = map.cols() as u32 * CELL;
    let h = map.rows() as u32 * CELL;
    let img = image::GrayImage::from_fn(w, h, |x, y| {
        let i = (y / CELL) as usize;
        let j = (x / CELL) as usize;
        let v = map.get(i, j).clamp(0.0, 1.0);
        image::Luma([(255.0 * (1.0 - v)) as u8])
    });
    img.save(path)
        .map_err(|e| PrnError::Data(format!("{}: {e}", path.display())))
}

/// One row of the snapshot table: an entity's memory vector after a step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub recipe_id: String,
    pub entity: String,
    pub step: usize,
    /// Ground-truth state label when the corpus provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip)]
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SnapshotTable {
    pub d_e: usize,
    pub rows: Vec<SnapshotRow>,
}

impl SnapshotTable {
    pub fn find(&self, recipe_id: &str, entity: &str, step: usize) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.recipe_id == recipe_id && r.entity == entity && r.step == step)
    }
}

/// Collects one row per (entity, step t = 1..T) from each recipe's memory
/// snapshots. Labels come from the synthetic ground truth when given.
pub fn snapshot_table(
    model: &Model,
    recipes: &[PreparedRecipe],
    ground_truth: Option<&SyntheticGroundTruth>,
) -> Result<SnapshotTable> {
    let mut table = SnapshotTable {
        d_e: model.config.d_e,
        rows: Vec::new(),
    };
    for recipe in recipes {
        let trace = recipe_trace(model, recipe)?;
        // snapshots[0] is E_0; rows are taken after each step t = 1..T.
        for (t, snap) in trace.snapshots.iter().enumerate().skip(1) {
            for (e_idx, name) in recipe.entity_names.iter().enumerate() {
                let label = ground_truth
                    .and_then(|gt| gt.recipes.get(&recipe.id))
                    .and_then(|st| st.step_labels.get(t - 1))
                    .and_then(|ls| {
                        st_label_for(ls, &st_entities(ground_truth, &recipe.id), name)
                    });
                table.rows.push(SnapshotRow {
                    recipe_id: recipe.id.clone(),
                    entity: name.clone(),
                    step: t,
                    label,
                    vector: snap.row(e_idx).to_vec(),
                });
            }
        }
    }
    Ok(table)
}

fn st_entities<'a>(
    gt: Option<&'a SyntheticGroundTruth>,
    recipe_id: &str,
) -> Vec<&'a str> {
    gt.and_then(|g| g.recipes.get(recipe_id))
        .map(|r| r.entities.iter().map(|s| s.as_str()).collect())
        .unwrap_or_default()
}

fn st_label_for(labels: &[String], entities: &[&str], name: &str) -> Option<String> {
    entities
        .iter()
        .position(|e| *e == name)
        .and_then(|i| labels.get(i))
        .cloned()
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    d_e: usize,
    data_file: String,
    rows: Vec<SnapshotRow>,
}

/// Writes the table as JSON metadata plus a contiguous f64 binary sidecar,
/// one row vector per table row in order.
pub fn save_snapshot_table(table: &SnapshotTable, json_path: &Path) -> Result<()> {
    let bin_name = json_path
        .with_extension("bin")
        .file_name()
        .unwrap()
        .to_string_lossy()
        .to_string();
    let header = SnapshotHeader {
        d_e: table.d_e,
        data_file: bin_name.clone(),
        rows: table.rows.clone(),
    };
    std::fs::write(json_path, serde_json::to_string_pretty(&header)?)
        .map_err(|e| PrnError::io(json_path.display().to_string(), e))?;
    let bin_path = json_path.with_extension("bin");
    let file = std::fs::File::create(&bin_path)
        .map_err(|e| PrnError::io(bin_path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for row in &table.rows {
        write_f64s(&mut w, &row.vector)
            .map_err(|e| PrnError::io(bin_path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| PrnError::io(bin_path.display().to_string(), e))
}

pub fn load_snapshot_table(json_path: &Path) -> Result<SnapshotTable> {
    let text = std::fs::read_to_string(json_path)
        .map_err(|e| PrnError::io(json_path.display().to_string(), e))?;
    let header: SnapshotHeader = serde_json::from_str(&text)?;
    let bin_path = json_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let file = std::fs::File::open(&bin_path)
        .map_err(|e| PrnError::io(bin_path.display().to_string(), e))?;
    let mut r = std::io::BufReader::new(file);
    let mut rows = header.rows;
    for row in rows.iter_mut() {
        row.vector = crate::io::read_f64s(&mut r, header.d_e)
            .map_err(|e| PrnError::io(bin_path.display().to_string(), e))?;
    }
    Ok(SnapshotTable { d_e: header.d_e, rows })
}

// ---------------------------------------------------------------------------
// Stochastic-neighbor 3-d projection
// ---------------------------------------------------------------------------

/// Seeded exact stochastic-neighbor embedding into 3-d, for plotting the
/// snapshot table. Tables here are small, so the quadratic pass is fine.
pub fn project_3d(table: &SnapshotTable, seed: u64, iterations: usize) -> Vec<[f64; 3]> {
    let n = table.rows.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![[0.0, 0.0, 0.0]];
    }
    let perplexity = 15.0f64.min((n as f64 - 1.0) / 3.0).max(2.0);

    // Pairwise squared distances.
    let mut d2 = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = table.rows[i]
                .vector
                .iter()
                .zip(table.rows[j].vector.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[i * n + j] = dist;
            d2[j * n + i] = dist;
        }
    }

    // Per-row bandwidth via binary search on perplexity.
    let target_h = perplexity.ln();
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        let (mut lo, mut hi) = (1e-20f64, 1e20f64);
        let mut beta = 1.0;
        for _ in 0..50 {
            let mut sum = 0.0;
            for j in 0..n {
                if j != i {
                    sum += (-beta * d2[i * n + j]).exp();
                }
            }
            let sum = sum.max(1e-300);
            let mut h = 0.0;
            for j in 0..n {
                if j != i {
                    let pj = (-beta * d2[i * n + j]).exp() / sum;
                    if pj > 1e-300 {
                        h -= pj * pj.ln();
                    }
                }
            }
            if (h - target_h).abs() < 1e-5 {
                break;
            }
            if h > target_h {
                lo = beta;
                beta = if hi >= 1e20 { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                sum += (-beta * d2[i * n + j]).exp();
            }
        }
        let sum = sum.max(1e-300);
        for j in 0..n {
            if j != i {
                p[i * n + j] = (-beta * d2[i * n + j]).exp() / sum;
            }
        }
    }
    // Symmetrize.
    let mut pij = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            pij[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let m = crate::params::normal_scaled(&mut rng, 3, 1, 1e-4);
            [m.get(0, 0), m.get(1, 0), m.get(2, 0)]
        })
        .collect();
    let mut vel = vec![[0.0f64; 3]; n];
    let lr = 100.0;

    for iter in 0..iterations {
        let exaggeration = if iter < iterations / 4 { 4.0 } else { 1.0 };
        let momentum = if iter < iterations / 4 { 0.5 } else { 0.8 };
        // Low-dimensional affinities (Student-t kernel).
        let mut qnum = vec![0.0f64; n * n];
        let mut qsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let mut dist = 0.0;
                for d in 0..3 {
                    let diff = y[i][d] - y[j][d];
                    dist += diff * diff;
                }
                let num = 1.0 / (1.0 + dist);
                qnum[i * n + j] = num;
                qnum[j * n + i] = num;
                qsum += 2.0 * num;
            }
        }
        let qsum = qsum.max(1e-300);
        for i in 0..n {
            let mut grad = [0.0f64; 3];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let num = qnum[i * n + j];
                let qij = (num / qsum).max(1e-12);
                let mult = (exaggeration * pij[i * n + j] - qij) * num;
                for d in 0..3 {
                    grad[d] += 4.0 * mult * (y[i][d] - y[j][d]);
                }
            }
            for d in 0..3 {
                vel[i][d] = momentum * vel[i][d] - lr * grad[d];
            }
        }
        for i in 0..n {
            for d in 0..3 {
                y[i][d] += vel[i][d];
            }
        }
    }
    y
}

// ---------------------------------------------------------------------------
// Entity arithmetic
// ---------------------------------------------------------------------------

/// One operand of an arithmetic query: a (recipe, entity, step) row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowRef {
    pub recipe_id: String,
    pub entity: String,
    pub step: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArithmeticQuery {
    /// Entity a at the later step t2.
    pub minuend: RowRef,
    /// Entity a at the earlier step t1.
    pub subtrahend: RowRef,
    /// Entity b whose analogous next state is sought.
    pub addend: RowRef,
    pub k: usize,
}

impl ArithmeticQuery {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(PrnError::Config("k must be >= 1".into()));
        }
        if self.minuend.step <= self.subtrahend.step {
            return Err(PrnError::Config(
                "minuend step must be later than subtrahend step".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Neighbor {
    pub row_index: usize,
    pub recipe_id: String,
    pub entity: String,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub similarity: f64,
}

/// Ranks table rows by cosine similarity to `minuend - subtrahend + addend`,
/// excluding the addend's own row. Exact linear scan.
pub fn entity_arithmetic(table: &SnapshotTable, query: &ArithmeticQuery) -> Result<Vec<Neighbor>> {
    let lookup = |r: &RowRef, role: &str| -> Result<usize> {
        table.find(&r.recipe_id, &r.entity, r.step).ok_or_else(|| {
            PrnError::Data(format!(
                "{role} row not found: {}/{} step {}",
                r.recipe_id, r.entity, r.step
            ))
        })
    };
    let m = lookup(&query.minuend, "minuend")?;
    let s = lookup(&query.subtrahend, "subtrahend")?;
    let a = lookup(&query.addend, "addend")?;

    let target: Vec<f64> = (0..table.d_e)
        .map(|d| {
            table.rows[m].vector[d] - table.rows[s].vector[d] + table.rows[a].vector[d]
        })
        .collect();

    let mut neighbors: Vec<Neighbor> = table
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != a)
        .filter_map(|(i, row)| {
            cosine_value(&target, &row.vector).ok().map(|sim| Neighbor {
                row_index: i,
                recipe_id: row.recipe_id.clone(),
                entity: row.entity.clone(),
                step: row.step,
                label: row.label.clone(),
                similarity: sim,
            })
        })
        .collect();
    neighbors.sort_by(|x, y| {
        y.similarity
            .partial_cmp(&x.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.row_index.cmp(&y.row_index))
    });
    neighbors.truncate(query.k);
    Ok(neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::model::tests::{build_model, tiny_world};

    fn prepared_recipes(
        model: &Model,
        world: &crate::corpus::synthetic::SyntheticWorld,
    ) -> Vec<PreparedRecipe> {
        use crate::entities::{extract_entities, IngredientDictionary};
        let dict = IngredientDictionary::from_entries(
            crate::corpus::synthetic::ENTITY_POOL
                .iter()
                .map(|s| s.to_string()),
        )
        .unwrap();
        world
            .recipes
            .iter()
            .map(|r| {
                let ents = extract_entities(r, &dict, model.config.k_max, None).unwrap();
                crate::model::prepare_recipe(r, &ents, &model.vocab, &model.config)
            })
            .collect()
    }

    #[test]
    fn attention_export_writes_maps_per_step_and_head() {
        let (world, wcfg) = tiny_world(4, 51);
        let (model, _) = build_model(Variant::Prn, &world, wcfg.feature_dim, 53);
        let recipes = prepared_recipes(&model, &world);
        let dir = tempfile::tempdir().unwrap();
        let export = export_attention_maps(&model, &recipes[0], dir.path()).unwrap();
        let t = wcfg.steps_per_recipe;
        let heads = model.config.heads;
        assert_eq!(export.json_files.len(), t * heads);
        assert_eq!(export.png_files.len(), t * heads);
        assert!(export.static_notice.is_none());

        // Every exported matrix is row-stochastic.
        for f in &export.json_files {
            let text = std::fs::read_to_string(f).unwrap();
            let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
            for row in parsed["values"].as_array().unwrap() {
                let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn static_variant_exports_notice_instead_of_maps() {
        let (world, wcfg) = tiny_world(4, 55);
        let (model, _) = build_model(Variant::BidafStaticMemory, &world, wcfg.feature_dim, 57);
        let recipes = prepared_recipes(&model, &world);
        let dir = tempfile::tempdir().unwrap();
        let export = export_attention_maps(&model, &recipes[0], dir.path()).unwrap();
        assert!(export.json_files.is_empty());
        assert!(export.static_notice.is_some());
        let text = std::fs::read_to_string(export.static_notice.unwrap()).unwrap();
        assert!(text.contains("static-memory"));
    }

    #[test]
    fn snapshot_table_counts_and_round_trip() {
        let (world, wcfg) = tiny_world(4, 59);
        let (model, _) = build_model(Variant::Prn, &world, wcfg.feature_dim, 61);
        let recipes = prepared_recipes(&model, &world);
        let table = snapshot_table(&model, &recipes[..1], Some(&world.ground_truth)).unwrap();
        // K entities x T steps rows.
        let k = recipes[0].entity_names.len();
        assert_eq!(table.rows.len(), k * wcfg.steps_per_recipe);
        assert!(table.rows.iter().all(|r| r.vector.len() == model.config.d_e));
        assert!(table.rows.iter().all(|r| r.label.is_some()));
        // Step-1 rows are raw.
        for row in table.rows.iter().filter(|r| r.step == 1) {
            assert_eq!(row.label.as_deref(), Some("raw"));
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snapshots.json");
        save_snapshot_table(&table, &path).unwrap();
        let back = load_snapshot_table(&path).unwrap();
        assert_eq!(back.rows.len(), table.rows.len());
        for (a, b) in table.rows.iter().zip(back.rows.iter()) {
            assert_eq!(a.vector, b.vector);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn snapshot_rows_equal_trace_snapshots() {
        let (world, wcfg) = tiny_world(4, 63);
        let (model, _) = build_model(Variant::Prn, &world, wcfg.feature_dim, 65);
        let recipes = prepared_recipes(&model, &world);
        let table = snapshot_table(&model, &recipes[..1], None).unwrap();
        let trace = recipe_trace(&model, &recipes[0]).unwrap();
        let k = recipes[0].entity_names.len();
        for (ri, row) in table.rows.iter().enumerate() {
            let t = ri / k + 1;
            let e = ri % k;
            assert_eq!(row.step, t);
            assert_eq!(row.vector, trace.snapshots[t].row(e).to_vec());
        }
    }

    #[test]
    fn projection_is_deterministic_per_seed() {
        let (world, wcfg) = tiny_world(4, 67);
        let (model, _) = build_model(Variant::Prn, &world, wcfg.feature_dim, 69);
        let recipes = prepared_recipes(&model, &world);
        let table = snapshot_table(&model, &recipes[..1], None).unwrap();
        let p1 = project_3d(&table, 7, 60);
        let p2 = project_3d(&table, 7, 60);
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), table.rows.len());
        let p3 = project_3d(&table, 8, 60);
        assert_ne!(p1, p3);
    }

    fn toy_table() -> SnapshotTable {
        // Deliberate additive structure: vec(entity, state) =
        // base(entity) + delta(state).
        let base = |e: usize| vec![e as f64 * 2.0, 0.0, 1.0, 0.0];
        let delta = |s: usize| vec![0.0, s as f64 * 3.0, 0.0, s as f64];
        let mut rows = Vec::new();
        for (ei, entity) in ["onion", "tomato"].iter().enumerate() {
            for step in 1..=3 {
                let v: Vec<f64> = base(ei)
                    .iter()
                    .zip(delta(step - 1).iter())
                    .map(|(a, b)| a + b)
                    .collect();
                rows.push(SnapshotRow {
                    recipe_id: "r".into(),
                    entity: entity.to_string(),
                    step,
                    label: Some(format!("state{}", step - 1)),
                    vector: v,
                });
            }
        }
        SnapshotTable { d_e: 4, rows }
    }

    #[test]
    fn arithmetic_recovers_analogous_state_on_additive_toy() {
        let table = toy_table();
        // chopped onion - raw onion + raw tomato ~ chopped tomato.
        let query = ArithmeticQuery {
            minuend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 2 },
            subtrahend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 1 },
            addend: RowRef { recipe_id: "r".into(), entity: "tomato".into(), step: 1 },
            k: 1,
        };
        query.validate().unwrap();
        let got = entity_arithmetic(&table, &query).unwrap();
        assert_eq!(got[0].entity, "tomato");
        assert_eq!(got[0].step, 2);
    }

    #[test]
    fn zero_difference_returns_addend_neighbors() {
        let table = toy_table();
        let query = ArithmeticQuery {
            minuend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 1 },
            subtrahend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 1 },
            addend: RowRef { recipe_id: "r".into(), entity: "tomato".into(), step: 1 },
            k: 2,
        };
        // Bypasses validate() on purpose: the degenerate query is the
        // nearest-neighbor lookup of the addend itself.
        let got = entity_arithmetic(&table, &query).unwrap();
        // The addend's own row is excluded; its nearest neighbor leads.
        assert!(got.iter().all(|n| {
            !(n.recipe_id == "r" && n.entity == "tomato" && n.step == 1)
        }));
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn oversized_k_returns_all_ranked() {
        let table = toy_table();
        let query = ArithmeticQuery {
            minuend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 3 },
            subtrahend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 1 },
            addend: RowRef { recipe_id: "r".into(), entity: "tomato".into(), step: 1 },
            k: 100,
        };
        let got = entity_arithmetic(&table, &query).unwrap();
        assert_eq!(got.len(), table.rows.len() - 1);
        for w in got.windows(2) {
            assert!(w[0].similarity >= w[1].similarity);
        }
    }

    #[test]
    fn unknown_operand_is_an_error() {
        let table = toy_table();
        let query = ArithmeticQuery {
            minuend: RowRef { recipe_id: "r".into(), entity: "basil".into(), step: 2 },
            subtrahend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 1 },
            addend: RowRef { recipe_id: "r".into(), entity: "tomato".into(), step: 1 },
            k: 1,
        };
        let err = entity_arithmetic(&table, &query).unwrap_err();
        assert!(err.to_string().contains("minuend"));
    }

    #[test]
    fn arithmetic_invariant_under_uniform_scaling() {
        let table = toy_table();
        let mut scaled = table.clone();
        for row in scaled.rows.iter_mut() {
            for v in row.vector.iter_mut() {
                *v *= 4.2;
            }
        }
        let query = ArithmeticQuery {
            minuend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 2 },
            subtrahend: RowRef { recipe_id: "r".into(), entity: "onion".into(), step: 1 },
            addend: RowRef { recipe_id: "r".into(), entity: "tomato".into(), step: 1 },
            k: 3,
        };
        let a = entity_arithmetic(&table, &query).unwrap();
        let b = entity_arithmetic(&scaled, &query).unwrap();
        let key = |ns: &[Neighbor]| -> Vec<(String, usize)> {
            ns.iter().map(|n| (n.entity.clone(), n.step)).collect()
        };
        assert_eq!(key(&a), key(&b));
    }
}
