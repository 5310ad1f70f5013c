//! Training loops: single-task and round-robin multi-task optimization
//! with early stopping, gradient clipping, metrics logging, and
//! self-describing checkpoints.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::Task;
use crate::encoders::Vocabulary;
use crate::error::{PrnError, Result};
use crate::graph::Graph;
use crate::io::{read_f64s, write_f64s};
use crate::model::{Model, PreparedInstance};
use crate::params::Adam;
use crate::tensor::Mat;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochMetrics>,
    /// Task of every optimizer step, in order (multi-task schedule log).
    pub batch_tasks: Vec<Task>,
    /// Parameter values of the best validation epoch; also restored into
    /// the model when training ends.
    pub best_params: Vec<Mat>,
}

/// Fraction of instances whose argmax-cosine prediction hits the gold.
pub fn dataset_accuracy(model: &Model, data: &[PreparedInstance]) -> Result<f64> {
    if data.is_empty() {
        return Err(PrnError::Data("no instances".into()));
    }
    let mut correct = 0usize;
    for inst in data {
        if model.score(inst)?.predicted == inst.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One optimizer step over a batch: mean loss, mean gradients, clip, Adam.
fn batch_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&PreparedInstance],
) -> Result<f64> {
    let mut grads = model.store.zero_gradients();
    let mut loss_sum = 0.0;
    for inst in batch {
        let g = Graph::new();
        let (loss, _) = model.loss(&g, inst)?;
        let lv = g.value_ref(loss).get(0, 0);
        if !lv.is_finite() {
            return Err(PrnError::Numeric(format!(
                "training diverged: non-finite loss on instance '{}'",
                inst.id
            )));
        }
        loss_sum += lv;
        g.backward(loss, &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    if grads.has_nan() {
        return Err(PrnError::Numeric("training diverged: non-finite gradients".into()));
    }
    grads.clip_global_norm(model.config.grad_clip_norm);
    adam.apply(&mut model.store, &grads);
    Ok(loss_sum / batch.len() as f64)
}

fn task_label(data: &[PreparedInstance]) -> String {
    let mut tasks: Vec<&str> = data.iter().map(|i| i.task.name()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    tasks.join("+")
}

/// Minimizes the ranking loss over mini-batches, evaluating validation
/// accuracy each epoch and stopping when it fails to improve for
/// `patience` epochs. The model ends up holding the best parameters.
pub fn train_single_task(
    model: &mut Model,
    train: &[PreparedInstance],
    val: &[PreparedInstance],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainState> {
    if train.is_empty() || val.is_empty() {
        return Err(PrnError::Data("empty train or validation split".into()));
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let task = task_label(train);

    let mut state = TrainState {
        epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        epochs_since_improvement: 0,
        history: Vec::new(),
        batch_tasks: Vec::new(),
        best_params: model.store.values().to_vec(),
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedInstance> = chunk.iter().map(|&i| &train[i]).collect();
            epoch_loss += batch_step(model, &mut adam, &batch)?;
            state.batch_tasks.push(batch[0].task);
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_acc = dataset_accuracy(model, val)?;

        let train_m = EpochMetrics {
            epoch,
            split: "train".into(),
            task: task.clone(),
            loss: Some(train_loss),
            accuracy: None,
        };
        let val_m = EpochMetrics {
            epoch,
            split: "val".into(),
            task: task.clone(),
            loss: None,
            accuracy: Some(100.0 * val_acc),
        };
        on_epoch(&train_m);
        on_epoch(&val_m);
        state.history.push(train_m);
        state.history.push(val_m);

        if val_acc > state.best_val_accuracy {
            state.best_val_accuracy = val_acc;
            state.epochs_since_improvement = 0;
            state.best_params = model.store.values().to_vec();
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }
    model.store.load_values(state.best_params.clone());
    Ok(state)
}

/// Cycling, reshuffling batch source for one task.
struct TaskSampler<'a> {
    data: &'a [PreparedInstance],
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'a> TaskSampler<'a> {
    fn new(data: &'a [PreparedInstance], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        TaskSampler {
            data,
            order,
            cursor: 0,
            rng,
        }
    }

    /// Next task-pure batch; reshuffles and continues when exhausted.
    fn next_batch(&mut self, size: usize) -> Vec<&'a PreparedInstance> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                if !out.is_empty() {
                    break; // batch boundary at the reshuffle point
                }
            }
            out.push(&self.data[self.order[self.cursor]]);
            self.cursor += 1;
        }
        out
    }
}

/// Round-robin multi-task training: one shared model, batches alternating
/// strictly through the task list, each batch task-pure. An epoch ends when
/// the largest task dataset has been consumed once; smaller tasks reshuffle
/// and cycle. Validation is the mean accuracy across tasks.
pub fn train_multi_task(
    model: &mut Model,
    datasets: &BTreeMap<Task, (Vec<PreparedInstance>, Vec<PreparedInstance>)>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainState> {
    if datasets.is_empty() {
        return Err(PrnError::Data("no task datasets".into()));
    }
    for (task, (tr, va)) in datasets {
        if tr.is_empty() || va.is_empty() {
            return Err(PrnError::Data(format!(
                "task {task}: empty train or validation split"
            )));
        }
    }
    let cfg = model.config.clone();
    let tasks: Vec<Task> = Task::ALL
        .iter()
        .copied()
        .filter(|t| datasets.contains_key(t))
        .collect();
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut samplers: BTreeMap<Task, TaskSampler> = datasets
        .iter()
        .map(|(t, (tr, _))| {
            (
                *t,
                TaskSampler::new(tr, cfg.seed.wrapping_add(*t as u64 + 1)),
            )
        })
        .collect();
    let largest = datasets.values().map(|(tr, _)| tr.len()).max().unwrap();
    let steps_per_epoch = largest.div_ceil(cfg.batch_size);

    let mut state = TrainState {
        epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        epochs_since_improvement: 0,
        history: Vec::new(),
        batch_tasks: Vec::new(),
        best_params: model.store.values().to_vec(),
    };

    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let mut loss_by_task: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
        for _ in 0..steps_per_epoch {
            for &task in &tasks {
                let batch = samplers.get_mut(&task).unwrap().next_batch(cfg.batch_size);
                debug_assert!(batch.iter().all(|i| i.task == task));
                let loss = batch_step(model, &mut adam, &batch)?;
                state.batch_tasks.push(task);
                let e = loss_by_task.entry(task).or_insert((0.0, 0));
                e.0 += loss;
                e.1 += 1;
            }
        }

        let mut acc_sum = 0.0;
        for &task in &tasks {
            let (_, val) = &datasets[&task];
            let acc = dataset_accuracy(model, val)?;
            acc_sum += acc;
            let (lsum, lcnt) = loss_by_task[&task];
            let train_m = EpochMetrics {
                epoch,
                split: "train".into(),
                task: task.name().into(),
                loss: Some(lsum / lcnt.max(1) as f64),
                accuracy: None,
            };
            let val_m = EpochMetrics {
                epoch,
                split: "val".into(),
                task: task.name().into(),
                loss: None,
                accuracy: Some(100.0 * acc),
            };
            on_epoch(&train_m);
            on_epoch(&val_m);
            state.history.push(train_m);
            state.history.push(val_m);
        }
        let mean_acc = acc_sum / tasks.len() as f64;

        if mean_acc > state.best_val_accuracy {
            state.best_val_accuracy = mean_acc;
            state.epochs_since_improvement = 0;
            state.best_params = model.store.values().to_vec();
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }
    model.store.load_values(state.best_params.clone());
    Ok(state)
}

/// Writes the per-epoch metrics log as CSV.
pub fn write_metrics_csv(history: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,split,task,loss,accuracy\n");
    for m in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch,
            m.split,
            m.task,
            m.loss.map_or(String::new(), |l| format!("{l:.6}")),
            m.accuracy.map_or(String::new(), |a| format!("{a:.4}")),
        ));
    }
    std::fs::write(path, out).map_err(|e| PrnError::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"PRNCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    vocab_words: Vec<String>,
    vocab_chars: String,
    glove_rows: usize,
    glove_cols: usize,
    dictionary: Vec<String>,
    tensors: Vec<TensorSpec>,
    optimizer_step: Option<u64>,
    metrics: Vec<EpochMetrics>,
}

/// A loaded checkpoint: everything needed to rebuild the model and resume
/// or evaluate.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub dictionary: Vec<String>,
    pub params: Vec<Mat>,
    pub param_names: Vec<String>,
    pub optimizer: Option<(Vec<Mat>, Vec<Mat>, u64)>,
    pub metrics: Vec<EpochMetrics>,
}

/// Serializes config, vocabulary, dictionary, parameters, optimizer
/// moments, and metrics history into one self-describing archive.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    dictionary: &[String],
    optimizer: Option<&Adam>,
    metrics: &[EpochMetrics],
) -> Result<()> {
    let header = CheckpointHeader {
        version: 1,
        config: model.config.clone(),
        vocab_words: model.vocab.words().to_vec(),
        vocab_chars: model.vocab.chars().iter().collect(),
        glove_rows: model.vocab.vectors().rows(),
        glove_cols: model.vocab.vectors().cols(),
        dictionary: dictionary.to_vec(),
        tensors: model
            .store
            .iter()
            .map(|(_, name, m)| TensorSpec {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        optimizer_step: optimizer.map(|a| a.step),
        metrics: metrics.to_vec(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let file =
        std::fs::File::create(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| PrnError::io(path.display().to_string(), e);
    w.write_all(CKPT_MAGIC).map_err(io_err)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_json).map_err(io_err)?;
    write_f64s(&mut w, model.vocab.vectors().data()).map_err(io_err)?;
    for (_, _, m) in model.store.iter() {
        write_f64s(&mut w, m.data()).map_err(io_err)?;
    }
    if let Some(adam) = optimizer {
        let (ms, vs) = adam.moments();
        for m in ms {
            write_f64s(&mut w, m.data()).map_err(io_err)?;
        }
        for v in vs {
            write_f64s(&mut w, v.data()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file =
        std::fs::File::open(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| PrnError::io(path.display().to_string(), e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CKPT_MAGIC {
        return Err(PrnError::Data(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut lenbuf = [0u8; 8];
    r.read_exact(&mut lenbuf).map_err(io_err)?;
    let hlen = u64::from_le_bytes(lenbuf) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&hbuf)?;

    let glove_data = read_f64s(&mut r, header.glove_rows * header.glove_cols).map_err(io_err)?;
    let vocab = Vocabulary::from_parts(
        header.vocab_words,
        header.vocab_chars.chars().collect(),
        Mat::from_vec(header.glove_rows, header.glove_cols, glove_data),
    );
    let mut params = Vec::with_capacity(header.tensors.len());
    for spec in &header.tensors {
        let data = read_f64s(&mut r, spec.rows * spec.cols).map_err(io_err)?;
        params.push(Mat::from_vec(spec.rows, spec.cols, data));
    }
    let optimizer = match header.optimizer_step {
        Some(step) => {
            let mut ms = Vec::with_capacity(header.tensors.len());
            for spec in &header.tensors {
                ms.push(Mat::from_vec(
                    spec.rows,
                    spec.cols,
                    read_f64s(&mut r, spec.rows * spec.cols).map_err(io_err)?,
                ));
            }
            let mut vs = Vec::with_capacity(header.tensors.len());
            for spec in &header.tensors {
                vs.push(Mat::from_vec(
                    spec.rows,
                    spec.cols,
                    read_f64s(&mut r, spec.rows * spec.cols).map_err(io_err)?,
                ));
            }
            Some((ms, vs, step))
        }
        None => None,
    };
    Ok(Checkpoint {
        config: header.config,
        vocab,
        dictionary: header.dictionary,
        params,
        param_names: header.tensors.into_iter().map(|t| t.name).collect(),
        optimizer,
        metrics: header.metrics,
    })
}

/// Rebuilds a model from a checkpoint, verifying the parameter layout.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(ckpt.config.clone(), ckpt.vocab.clone())?;
    let names: Vec<String> = model
        .store
        .iter()
        .map(|(_, n, _)| n.to_string())
        .collect();
    if names != ckpt.param_names {
        return Err(PrnError::Data(
            "checkpoint parameter layout does not match its config".into(),
        ));
    }
    model.store.load_values(ckpt.params.clone());
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::model::tests::{build_model, tiny_world};

    fn split(
        prepared: Vec<PreparedInstance>,
        task: Task,
    ) -> (Vec<PreparedInstance>, Vec<PreparedInstance>) {
        let filtered: Vec<PreparedInstance> = prepared
            .into_iter()
            .filter(|i| i.task == task)
            .collect();
        let n_val = (filtered.len() / 3).max(1);
        let val = filtered[..n_val].to_vec();
        let train = filtered[n_val..].to_vec();
        (train, val)
    }

    #[test]
    fn patience_one_with_frozen_params_stops_after_one_flat_epoch() {
        let (world, wcfg) = tiny_world(8, 21);
        let (mut model, prepared) = build_model(Variant::Prn, &world, wcfg.feature_dim, 23);
        model.config.learning_rate = 0.0;
        model.config.patience = 1;
        model.config.max_epochs = 50;
        let (train, val) = split(prepared, Task::Cloze);
        let state = train_single_task(&mut model, &train, &val, |_| {}).unwrap();
        assert_eq!(state.epoch, 2);
        assert_eq!(state.epochs_since_improvement, 1);
    }

    /// Overfit sanity: loss on a 2-instance dataset trends down over 50
    /// epochs.
    #[test]
    fn two_instance_loss_trends_down() {
        let (world, wcfg) = tiny_world(8, 25);
        let (mut model, prepared) = build_model(Variant::Prn, &world, wcfg.feature_dim, 27);
        model.config.learning_rate = 1e-4;
        model.config.patience = 1000;
        model.config.max_epochs = 50;
        model.config.batch_size = 2;
        let cloze: Vec<PreparedInstance> = prepared
            .into_iter()
            .filter(|i| i.task == Task::Cloze)
            .take(2)
            .collect();
        assert_eq!(cloze.len(), 2);
        let state = train_single_task(&mut model, &cloze, &cloze, |_| {}).unwrap();
        let losses: Vec<f64> = state
            .history
            .iter()
            .filter(|m| m.split == "train")
            .filter_map(|m| m.loss)
            .collect();
        assert_eq!(losses.len(), 50);
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
        assert!(
            tail < head,
            "loss did not trend down: head {head:.6} tail {tail:.6}"
        );
    }

    #[test]
    fn checkpoint_reload_is_bit_exact() {
        let (world, wcfg) = tiny_world(8, 29);
        let (mut model, prepared) = build_model(Variant::Prn, &world, wcfg.feature_dim, 31);
        model.config.max_epochs = 2;
        model.config.patience = 10;
        model.config.batch_size = 4;
        model.config.learning_rate = 1e-3;
        let (train, val) = split(prepared, Task::Cloze);
        let state = train_single_task(&mut model, &train, &val, |_| {}).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &["salt".into()], None, &state.history).unwrap();

        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.dictionary, vec!["salt".to_string()]);
        assert_eq!(ckpt.metrics.len(), state.history.len());
        let restored = model_from_checkpoint(&ckpt).unwrap();

        for inst in val.iter().chain(train.iter()) {
            let a = model.score(inst).unwrap().scores;
            let b = restored.score(inst).unwrap().scores;
            assert_eq!(a, b, "scores differ after reload");
        }
    }

    #[test]
    fn round_robin_schedule_is_strict_and_task_pure() {
        let (world, wcfg) = tiny_world(8, 33);
        let (mut model, prepared) = build_model(Variant::Prn, &world, wcfg.feature_dim, 35);
        model.config.max_epochs = 2;
        model.config.batch_size = 1;
        model.config.patience = 100;
        model.config.learning_rate = 1e-4;
        let mut datasets = BTreeMap::new();
        for task in Task::ALL {
            let (train, val) = split(prepared.clone(), task);
            datasets.insert(task, (train, val));
        }
        let state = train_multi_task(&mut model, &datasets, |_| {}).unwrap();
        let want = [Task::Cloze, Task::Coherence, Task::Ordering];
        for (i, t) in state.batch_tasks.iter().enumerate() {
            assert_eq!(*t, want[i % 3], "schedule violated at step {i}");
        }
        assert!(state.batch_tasks.len() >= 6);
    }

    #[test]
    fn sampler_reshuffles_and_stays_pure() {
        let (world, wcfg) = tiny_world(8, 37);
        let (_, prepared) = build_model(Variant::Prn, &world, wcfg.feature_dim, 39);
        let cloze: Vec<PreparedInstance> = prepared
            .into_iter()
            .filter(|i| i.task == Task::Cloze)
            .collect();
        let mut sampler = TaskSampler::new(&cloze, 1);
        let mut drawn = 0usize;
        for _ in 0..10 {
            let b = sampler.next_batch(3);
            assert!(!b.is_empty());
            assert!(b.iter().all(|i| i.task == Task::Cloze));
            drawn += b.len();
        }
        assert!(drawn > cloze.len(), "sampler must cycle past one epoch");
    }

    #[test]
    fn metrics_csv_layout() {
        let metrics = vec![
            EpochMetrics {
                epoch: 1,
                split: "train".into(),
                task: "cloze".into(),
                loss: Some(0.5),
                accuracy: None,
            },
            EpochMetrics {
                epoch: 1,
                split: "val".into(),
                task: "cloze".into(),
                loss: None,
                accuracy: Some(50.0),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&metrics, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,split,task,loss,accuracy");
        assert_eq!(lines.next().unwrap(), "1,train,cloze,0.500000,");
        assert_eq!(lines.next().unwrap(), "1,val,cloze,,50.0000");
    }
}
