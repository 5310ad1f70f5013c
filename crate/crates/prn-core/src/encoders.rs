//! Input encoders: character CNN, highway fusion, recurrent text encoders,
//! and MLP+BiLSTM image-sequence encoders for questions and answers.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::Task;
use crate::error::{PrnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier, ParamId, ParamStore};
use crate::tensor::Mat;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word ids plus character ids for one token.
#[derive(Clone, Debug)]
pub struct TokenIds {
    pub word: usize,
    pub chars: Vec<usize>,
}

/// Frozen word-vector table plus word/char index maps. Index 0 is reserved
/// for padding in both maps; OOV words map to the UNK sentinel whose vector
/// is the corpus average, and their character path still applies.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
    /// |words| x dim, frozen. Row 0 is zeros, row 1 the corpus average.
    vectors: Mat,
    dim: usize,
}

impl Vocabulary {
    fn assemble(
        mut entries: Vec<(String, Vec<f64>)>,
        corpus_tokens: &BTreeSet<String>,
        dim: usize,
    ) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut rows: Vec<Vec<f64>> = vec![vec![0.0; dim], vec![0.0; dim]];
        for (w, v) in entries {
            words.push(w);
            rows.push(v);
        }
        // UNK takes the average of all known vectors.
        if rows.len() > 2 {
            let n = (rows.len() - 2) as f64;
            let mut avg = vec![0.0; dim];
            for row in &rows[2..] {
                for (a, x) in avg.iter_mut().zip(row.iter()) {
                    *a += x / n;
                }
            }
            rows[UNK] = avg;
        }
        let word_index: HashMap<String, usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();

        let mut charset: BTreeSet<char> = BTreeSet::new();
        charset.insert(' ');
        for tok in corpus_tokens {
            charset.extend(tok.chars());
        }
        let mut chars = vec!['\0', '\u{1}'];
        chars.extend(charset);
        let char_index: HashMap<char, usize> =
            chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();

        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let n_words = words.len();
        Vocabulary {
            words,
            word_index,
            chars,
            char_index,
            vectors: Mat::from_vec(n_words, dim, flat),
            dim,
        }
    }

    /// Reads a pretrained vector file ("word v1 ... v_dim" per line),
    /// keeping only words present in the corpus.
    pub fn from_pretrained(path: &Path, corpus_tokens: &BTreeSet<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PrnError::io(path.display().to_string(), e))?;
        let mut entries = Vec::new();
        let mut dim = 0usize;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| PrnError::Data(format!("{}:{}: empty line", path.display(), n + 1)))?
                .to_lowercase();
            let vec: std::result::Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
            let vec = vec.map_err(|e| {
                PrnError::Data(format!("{}:{}: bad float: {e}", path.display(), n + 1))
            })?;
            if dim == 0 {
                dim = vec.len();
                if dim == 0 {
                    return Err(PrnError::Data(format!(
                        "{}:{}: vector has no components",
                        path.display(),
                        n + 1
                    )));
                }
            } else if vec.len() != dim {
                return Err(PrnError::Data(format!(
                    "{}:{}: vector length {} != {}",
                    path.display(),
                    n + 1,
                    vec.len(),
                    dim
                )));
            }
            if corpus_tokens.contains(&word) {
                entries.push((word, vec));
            }
        }
        if dim == 0 {
            return Err(PrnError::Data(format!(
                "{}: no vectors found",
                path.display()
            )));
        }
        Ok(Self::assemble(entries, corpus_tokens, dim))
    }

    /// Frozen random vectors for every corpus token; stands in for a
    /// pretrained table on synthetic worlds. Deterministic per seed.
    pub fn random(corpus_tokens: &BTreeSet<String>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(String, Vec<f64>)> = corpus_tokens
            .iter()
            .map(|w| {
                let v = crate::params::normal_scaled(&mut rng, 1, dim, 0.5);
                (w.clone(), v.data().to_vec())
            })
            .collect();
        Self::assemble(entries, corpus_tokens, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn char_count(&self) -> usize {
        self.chars.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn word_id(&self, token: &str) -> usize {
        *self.word_index.get(token).unwrap_or(&UNK)
    }

    pub fn word_vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn char_ids(&self, surface: &str, max_chars: usize) -> Vec<usize> {
        surface
            .chars()
            .take(max_chars)
            .map(|c| *self.char_index.get(&c).unwrap_or(&UNK))
            .collect()
    }

    pub fn encode_token(&self, token: &str, max_chars: usize) -> TokenIds {
        TokenIds {
            word: self.word_id(token),
            chars: self.char_ids(token, max_chars),
        }
    }

    /// Average of member-word vectors; OOV members contribute the corpus
    /// average (UNK row).
    pub fn average_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut avg = vec![0.0; self.dim];
        if tokens.is_empty() {
            return avg;
        }
        for t in tokens {
            let row = self.word_vector(self.word_id(t));
            for (a, x) in avg.iter_mut().zip(row.iter()) {
                *a += x / tokens.len() as f64;
            }
        }
        avg
    }

    /// Rebuilds a vocabulary from its serialized parts (checkpoint restore).
    pub fn from_parts(words: Vec<String>, chars: Vec<char>, vectors: Mat) -> Self {
        let dim = vectors.cols();
        let word_index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let char_index = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Vocabulary {
            words,
            word_index,
            chars,
            char_index,
            vectors,
            dim,
        }
    }
}

/// Collects the token set of a recipe corpus for vocabulary construction.
pub fn corpus_tokens(recipes: &[crate::corpus::Recipe]) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for r in recipes {
        set.extend(r.title.iter().cloned());
        for s in &r.steps {
            set.extend(s.tokens.iter().cloned());
        }
    }
    set
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// LSTM cell parameters: one fused weight for the four gates, ordered
/// [input; forget; output; candidate]. The forget bias starts at 1.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let w = store.register(&format!("{name}.w"), xavier(rng, 4 * hidden, input + hidden));
        let mut bias = Mat::zeros(4 * hidden, 1);
        for i in hidden..2 * hidden {
            bias.set(i, 0, 1.0);
        }
        let b = store.register(&format!("{name}.b"), bias);
        LstmCell {
            w,
            b,
            input,
            hidden,
        }
    }
}

pub struct BiLstmOut {
    /// Per-position [h_fwd; h_bwd], shape 2h x n.
    pub hidden: Var,
    /// Per-position [c_fwd; c_bwd], shape 2h x n.
    pub cell: Var,
    /// [h_fwd after last; h_bwd after first], shape 2h x 1.
    pub final_hidden: Var,
    pub final_cell: Var,
}

impl BiLstmOut {
    pub fn states(&self, use_cell: bool) -> Var {
        if use_cell {
            self.cell
        } else {
            self.hidden
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub hidden: usize,
}

impl BiLstm {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        BiLstm {
            fwd: LstmCell::register(store, rng, &format!("{name}.fwd"), input, hidden),
            bwd: LstmCell::register(store, rng, &format!("{name}.bwd"), input, hidden),
            hidden,
        }
    }

    /// Runs both directions over the columns of `xs` (input x n).
    pub fn run(&self, g: &Graph, store: &ParamStore, xs: Var) -> BiLstmOut {
        let n = xs.cols;
        let (hf, cf) = run_direction(g, store, &self.fwd, xs, false);
        let (hb, cb) = run_direction(g, store, &self.bwd, xs, true);

        let hidden_cols: Vec<Var> = (0..n)
            .map(|t| g.concat_rows(&[hf[t], hb[t]]))
            .collect();
        let cell_cols: Vec<Var> = (0..n)
            .map(|t| g.concat_rows(&[cf[t], cb[t]]))
            .collect();
        BiLstmOut {
            hidden: g.concat_cols(&hidden_cols),
            cell: g.concat_cols(&cell_cols),
            final_hidden: g.concat_rows(&[hf[n - 1], hb[0]]),
            final_cell: g.concat_rows(&[cf[n - 1], cb[0]]),
        }
    }
}

/// One LSTM direction; outputs are indexed by original position.
fn run_direction(
    g: &Graph,
    store: &ParamStore,
    cell: &LstmCell,
    xs: Var,
    reverse: bool,
) -> (Vec<Var>, Vec<Var>) {
    let n = xs.cols;
    let w = g.param(store, cell.w);
    let b = g.param(store, cell.b);
    let mut h = g.zeros(cell.hidden, 1);
    let mut c = g.zeros(cell.hidden, 1);
    let mut hs = vec![h; n];
    let mut cs = vec![c; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let x = g.slice_cols(xs, t, 1);
        let (nh, nc) = g.lstm_step(w, b, x, h, c);
        h = nh;
        c = nc;
        hs[t] = h;
        cs[t] = c;
    }
    (hs, cs)
}

/// Character convolution: embed, slide each filter width over the char
/// sequence, tanh, max-over-time, concatenate filter banks.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub emb: ParamId,
    pub filters: Vec<CharFilter>,
    pub char_dim: usize,
    pub out_dim: usize,
    max_width: usize,
}

#[derive(Clone, Debug)]
pub struct CharFilter {
    pub w: ParamId,
    pub b: ParamId,
    pub width: usize,
}

impl CharCnn {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        char_vocab: usize,
        char_dim: usize,
        widths: &[usize],
        per_width: usize,
    ) -> Self {
        let mut emb = crate::params::normal_scaled(rng, char_vocab, char_dim, 0.1);
        for j in 0..char_dim {
            emb.set(PAD, j, 0.0);
        }
        let emb = store.register(&format!("{name}.emb"), emb);
        let filters = widths
            .iter()
            .map(|&width| CharFilter {
                w: store.register(
                    &format!("{name}.conv{width}.w"),
                    xavier(rng, width * char_dim, per_width),
                ),
                b: store.register(&format!("{name}.conv{width}.b"), Mat::zeros(1, per_width)),
                width,
            })
            .collect();
        CharCnn {
            emb,
            filters,
            char_dim,
            out_dim: widths.len() * per_width,
            max_width: widths.iter().copied().max().unwrap_or(1),
        }
    }

    /// Embeds one token's characters into a column vector (out_dim x 1).
    pub fn forward(&self, g: &Graph, store: &ParamStore, char_ids: &[usize]) -> Var {
        let mut ids = char_ids.to_vec();
        if ids.is_empty() {
            ids.push(UNK);
        }
        while ids.len() < self.max_width {
            ids.push(PAD);
        }
        let emb = g.param(store, self.emb);
        let seq = g.gather(emb, &ids, true);
        let mut banks = Vec::with_capacity(self.filters.len());
        for f in &self.filters {
            let windows = g.unfold(seq, f.width);
            let w = g.param(store, f.w);
            let b = g.param(store, f.b);
            let conv = g.tanh(g.add_row_bias(g.matmul(windows, w), b));
            banks.push(g.col_max(conv));
        }
        let row = g.concat_cols(&banks);
        g.transpose(row)
    }
}

/// Two-layer (configurable) highway network over column features:
/// `y = x + t * (H(x) - x)` with transform gate `t` and candidate `H`.
#[derive(Clone, Debug)]
pub struct Highway {
    pub layers: Vec<HighwayLayer>,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct HighwayLayer {
    pub wt: ParamId,
    pub bt: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
}

impl Highway {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| HighwayLayer {
                wt: store.register(&format!("{name}.{l}.wt"), xavier(rng, dim, dim)),
                bt: store.register(&format!("{name}.{l}.bt"), Mat::zeros(dim, 1)),
                wh: store.register(&format!("{name}.{l}.wh"), xavier(rng, dim, dim)),
                bh: store.register(&format!("{name}.{l}.bh"), Mat::zeros(dim, 1)),
            })
            .collect();
        Highway { layers, dim }
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var) -> Var {
        let mut cur = x;
        for layer in &self.layers {
            let wt = g.param(store, layer.wt);
            let bt = g.param(store, layer.bt);
            let wh = g.param(store, layer.wh);
            let bh = g.param(store, layer.bh);
            let t = g.sigmoid(g.add_col_bias(g.matmul(wt, cur), bt));
            let h = g.tanh(g.add_col_bias(g.matmul(wh, cur), bh));
            let delta = g.mul(t, g.sub(h, cur));
            cur = g.add(cur, delta);
        }
        cur
    }
}

/// Plain tanh MLP over column features.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub final_tanh: bool,
}

impl Mlp {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &[usize],
        final_tanh: bool,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                (
                    store.register(&format!("{name}.{l}.w"), xavier(rng, d[1], d[0])),
                    store.register(&format!("{name}.{l}.b"), Mat::zeros(d[1], 1)),
                )
            })
            .collect();
        Mlp { layers, final_tanh }
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var) -> Var {
        let mut cur = x;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, *w);
            let bv = g.param(store, *b);
            cur = g.add_col_bias(g.matmul(wv, cur), bv);
            if l < last || self.final_tanh {
                cur = g.tanh(cur);
            }
        }
        cur
    }
}

// ---------------------------------------------------------------------------
// Text encoders
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TextEncoders {
    pub char_cnn: CharCnn,
    pub highway: Highway,
    pub word_bilstm: BiLstm,
    pub step_bilstm: BiLstm,
}

impl TextEncoders {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        char_vocab: usize,
    ) -> Self {
        let char_cnn = CharCnn::register(
            store,
            rng,
            "text.char_cnn",
            char_vocab,
            cfg.char_dim,
            &cfg.char_filter_widths,
            cfg.char_filters_per_width,
        );
        let token_dim = cfg.char_out_dim() + cfg.glove_dim;
        let highway = Highway::register(store, rng, "text.highway", token_dim, cfg.highway_layers);
        let word_bilstm = BiLstm::register(store, rng, "text.word_bilstm", token_dim, cfg.d);
        let step_bilstm = BiLstm::register(store, rng, "text.step_bilstm", token_dim, cfg.d);
        TextEncoders {
            char_cnn,
            highway,
            word_bilstm,
            step_bilstm,
        }
    }

    /// Highway-fused char+word features for a token sequence,
    /// (char_out + glove_dim) x N.
    pub fn token_features(
        &self,
        g: &Graph,
        store: &ParamStore,
        vocab: &Vocabulary,
        tokens: &[TokenIds],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(PrnError::Data("empty token sequence".into()));
        }
        let cols: Vec<Var> = tokens
            .iter()
            .map(|tok| {
                let cc = self.char_cnn.forward(g, store, &tok.chars);
                let wv = g.constant(Mat::col_vec(vocab.word_vector(tok.word)));
                g.concat_rows(&[cc, wv])
            })
            .collect();
        let x = g.concat_cols(&cols);
        Ok(self.highway.forward(g, store, x))
    }

    /// Contextual word matrix R' (2d x N).
    pub fn embed_word_sequence(
        &self,
        g: &Graph,
        store: &ParamStore,
        vocab: &Vocabulary,
        tokens: &[TokenIds],
    ) -> Result<Var> {
        let feats = self.token_features(g, store, vocab, tokens)?;
        Ok(self.word_bilstm.run(g, store, feats).hidden)
    }

    /// Step embeddings s_1..s_T (each 2d x 1), computed from each step's
    /// tokens only.
    pub fn encode_steps(
        &self,
        g: &Graph,
        store: &ParamStore,
        vocab: &Vocabulary,
        steps: &[Vec<TokenIds>],
    ) -> Result<Vec<Var>> {
        if steps.is_empty() {
            return Err(PrnError::Data("recipe has no steps".into()));
        }
        steps
            .iter()
            .map(|toks| {
                let feats = self.token_features(g, store, vocab, toks)?;
                Ok(self.step_bilstm.run(g, store, feats).final_hidden)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Image encoders
// ---------------------------------------------------------------------------

/// One slot of a question's image sequence.
#[derive(Clone, Debug)]
pub enum QuestionSlot {
    Image(Vec<f64>),
    /// Cloze missing slot; encoded from a dedicated learned feature vector.
    Placeholder,
}

#[derive(Clone, Debug)]
pub struct ImageEncoders {
    pub question_mlp: Mlp,
    pub question_bilstm: BiLstm,
    pub answer_mlp: Mlp,
    pub answer_bilstm: BiLstm,
    pub answer_seq_bilstm: BiLstm,
    pub placeholder: ParamId,
}

impl ImageEncoders {
    pub fn register(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let mut dims = vec![cfg.feature_dim];
        dims.extend_from_slice(&cfg.image_mlp_hidden);
        dims.push(2 * cfg.d);
        let question_mlp = Mlp::register(store, rng, "image.question_mlp", &dims, true);
        let answer_mlp = Mlp::register(store, rng, "image.answer_mlp", &dims, true);
        let question_bilstm = BiLstm::register(store, rng, "image.question_bilstm", 2 * cfg.d, cfg.d);
        let answer_bilstm = BiLstm::register(store, rng, "image.answer_bilstm", 2 * cfg.d, cfg.d);
        let answer_seq_bilstm =
            BiLstm::register(store, rng, "image.answer_seq_bilstm", 2 * cfg.d, cfg.d);
        let placeholder = store.register(
            "image.placeholder",
            crate::params::normal_scaled(rng, cfg.feature_dim, 1, 0.1),
        );
        ImageEncoders {
            question_mlp,
            question_bilstm,
            answer_mlp,
            answer_bilstm,
            answer_seq_bilstm,
            placeholder,
        }
    }

    fn slot_feature(&self, g: &Graph, store: &ParamStore, slot: &QuestionSlot) -> Var {
        match slot {
            QuestionSlot::Image(f) => g.constant(Mat::col_vec(f)),
            QuestionSlot::Placeholder => g.param(store, self.placeholder),
        }
    }

    /// Question matrix Q' (2d x M): per-image MLP, then a BiLSTM whose
    /// per-position states (cells by default) are concatenated.
    pub fn encode_question(
        &self,
        g: &Graph,
        store: &ParamStore,
        slots: &[QuestionSlot],
        use_cell: bool,
    ) -> Result<Var> {
        if slots.is_empty() {
            return Err(PrnError::Data("question has no images".into()));
        }
        let cols: Vec<Var> = slots
            .iter()
            .map(|s| {
                let f = self.slot_feature(g, store, s);
                self.question_mlp.forward(g, store, f)
            })
            .collect();
        let seq = g.concat_cols(&cols);
        Ok(self.question_bilstm.run(g, store, seq).states(use_cell))
    }

    /// Answer embedding a (2d x 1): single image for cloze/coherence, the
    /// sum of per-position states over a candidate sequence for ordering.
    pub fn encode_answer(
        &self,
        g: &Graph,
        store: &ParamStore,
        images: &[Vec<f64>],
        task: Task,
        use_cell: bool,
    ) -> Result<Var> {
        let states = self.answer_states(g, store, images, task, use_cell)?;
        Ok(g.sum_cols(states))
    }

    /// Per-position answer states (2d x L); their column sum is the answer
    /// embedding.
    pub fn answer_states(
        &self,
        g: &Graph,
        store: &ParamStore,
        images: &[Vec<f64>],
        task: Task,
        use_cell: bool,
    ) -> Result<Var> {
        if images.len() != task.answer_len() {
            return Err(PrnError::Data(format!(
                "answer has {} images but task {} requires {}",
                images.len(),
                task,
                task.answer_len()
            )));
        }
        let cols: Vec<Var> = images
            .iter()
            .map(|f| {
                let fv = g.constant(Mat::col_vec(f));
                self.answer_mlp.forward(g, store, fv)
            })
            .collect();
        let seq = g.concat_cols(&cols);
        let bilstm = if task == Task::Ordering {
            &self.answer_seq_bilstm
        } else {
            &self.answer_bilstm
        };
        Ok(bilstm.run(g, store, seq).states(use_cell))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_vocab() -> Vocabulary {
        let tokens: BTreeSet<String> = ["chop", "the", "onion", "mix", "salt"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Vocabulary::random(&tokens, 8, 5)
    }

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::tiny(4, 6, 11);
        cfg.glove_dim = 8;
        cfg
    }

    fn setup() -> (ModelConfig, Vocabulary, ParamStore, TextEncoders) {
        let cfg = tiny_cfg();
        let vocab = test_vocab();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let text = TextEncoders::register(&mut store, &mut rng, &cfg, vocab.char_count());
        (cfg, vocab, store, text)
    }

    fn encode(vocab: &Vocabulary, cfg: &ModelConfig, words: &[&str]) -> Vec<TokenIds> {
        words
            .iter()
            .map(|w| vocab.encode_token(w, cfg.max_token_chars))
            .collect()
    }

    #[test]
    fn word_sequence_shape_is_2d_by_n() {
        let (cfg, vocab, store, text) = setup();
        let toks = encode(&vocab, &cfg, &["chop", "the", "onion", "mix", "salt", "the", "onion"]);
        let g = Graph::new();
        let r = text
            .embed_word_sequence(&g, &store, &vocab, &toks)
            .unwrap();
        assert_eq!((r.rows, r.cols), (2 * cfg.d, 7));
    }

    #[test]
    fn reference_dims_match_contract() {
        // d=100 -> 200 x N, per the shape contract.
        let mut cfg = ModelConfig::reference();
        cfg.glove_dim = 8;
        cfg.char_filters_per_width = 10;
        let vocab = test_vocab();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = TextEncoders::register(&mut store, &mut rng, &cfg, vocab.char_count());
        let toks = encode(&vocab, &cfg, &["chop", "the", "onion"]);
        let g = Graph::new();
        let r = text
            .embed_word_sequence(&g, &store, &vocab, &toks)
            .unwrap();
        assert_eq!((r.rows, r.cols), (200, 3));
    }

    #[test]
    fn all_oov_sentence_is_finite() {
        let (cfg, vocab, store, text) = setup();
        let toks = encode(&vocab, &cfg, &["zzz", "qqq", "www"]);
        assert!(toks.iter().all(|t| t.word == UNK));
        let g = Graph::new();
        let r = text
            .embed_word_sequence(&g, &store, &vocab, &toks)
            .unwrap();
        assert!(!g.value(r).has_nan());
    }

    #[test]
    fn empty_token_list_errors() {
        let (_, vocab, store, text) = setup();
        let g = Graph::new();
        assert!(text.embed_word_sequence(&g, &store, &vocab, &[]).is_err());
    }

    #[test]
    fn highway_gate_forced_to_zero_is_identity() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hw = Highway::register(&mut store, &mut rng, "hw", 6, 2);
        for layer in &hw.layers {
            let bt = store.value_mut(layer.bt);
            for i in 0..bt.rows() {
                bt.set(i, 0, -1e4);
            }
        }
        let g = Graph::new();
        let x = g.constant(Mat::from_fn(6, 3, |i, j| (i + j) as f64 * 0.1));
        let y = hw.forward(&g, &store, x);
        let xv = g.value(x);
        let yv = g.value(y);
        for i in 0..6 {
            for j in 0..3 {
                assert!((xv.get(i, j) - yv.get(i, j)).abs() < 1e-12);
            }
        }
        let _ = cfg;
    }

    #[test]
    fn step_embeddings_have_locality() {
        let (cfg, vocab, store, text) = setup();
        let steps = vec![
            encode(&vocab, &cfg, &["chop", "the", "onion"]),
            encode(&vocab, &cfg, &["mix", "the", "salt"]),
            encode(&vocab, &cfg, &["the", "onion", "mix"]),
            encode(&vocab, &cfg, &["salt", "the", "chop"]),
        ];
        let g = Graph::new();
        let s = text.encode_steps(&g, &store, &vocab, &steps).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!((s[0].rows, s[0].cols), (2 * cfg.d, 1));

        // Permute tokens of step 1; steps 0, 2, 3 unchanged.
        let mut permuted = steps.clone();
        permuted[1].reverse();
        let g2 = Graph::new();
        let s2 = text.encode_steps(&g2, &store, &vocab, &permuted).unwrap();
        for i in [0usize, 2, 3] {
            assert_eq!(g.value(s[i]), g2.value(s2[i]));
        }
        assert_ne!(g.value(s[1]), g2.value(s2[1]));
    }

    /// Hand-rolled recurrence oracle: recompute a step embedding at d=2
    /// with explicit loops over the LSTM equations.
    #[test]
    fn step_embedding_matches_manual_recurrence() {
        let mut cfg = tiny_cfg();
        cfg.d = 2;
        cfg.char_filters_per_width = 2;
        let vocab = test_vocab();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let text = TextEncoders::register(&mut store, &mut rng, &cfg, vocab.char_count());
        let toks = encode(&vocab, &cfg, &["chop", "the", "onion"]);

        let g = Graph::new();
        let feats = text.token_features(&g, &store, &vocab, &toks).unwrap();
        let s = text
            .encode_steps(&g, &store, &vocab, &[toks.clone()])
            .unwrap();
        let got = g.value(s[0]);
        let x = g.value(feats);

        let manual_dir = |wid: ParamId, bid: ParamId, reverse: bool| -> (Vec<f64>, Vec<f64>) {
            let w = store.value(wid);
            let b = store.value(bid);
            let hdim = cfg.d;
            let mut h = vec![0.0; hdim];
            let mut c = vec![0.0; hdim];
            let cols: Vec<usize> = if reverse {
                (0..x.cols()).rev().collect()
            } else {
                (0..x.cols()).collect()
            };
            for t in cols {
                let xt: Vec<f64> = (0..x.rows()).map(|i| x.get(i, t)).collect();
                let mut xh = xt.clone();
                xh.extend_from_slice(&h);
                let z: Vec<f64> = (0..4 * hdim)
                    .map(|r| {
                        b.get(r, 0)
                            + xh.iter()
                                .enumerate()
                                .map(|(k, &v)| w.get(r, k) * v)
                                .sum::<f64>()
                    })
                    .collect();
                let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
                let mut nc = vec![0.0; hdim];
                let mut nh = vec![0.0; hdim];
                for r in 0..hdim {
                    let i_g = sig(z[r]);
                    let f_g = sig(z[hdim + r]);
                    let o_g = sig(z[2 * hdim + r]);
                    let cand = z[3 * hdim + r].tanh();
                    nc[r] = f_g * c[r] + i_g * cand;
                    nh[r] = o_g * nc[r].tanh();
                }
                c = nc;
                h = nh;
            }
            (h, c)
        };
        let (hf, _) = manual_dir(text.step_bilstm.fwd.w, text.step_bilstm.fwd.b, false);
        let (hb, _) = manual_dir(text.step_bilstm.bwd.w, text.step_bilstm.bwd.b, true);
        let mut expect = hf;
        expect.extend(hb);
        for (i, e) in expect.iter().enumerate() {
            assert!(
                (got.get(i, 0) - e).abs() < 1e-12,
                "mismatch at {i}: {} vs {e}",
                got.get(i, 0)
            );
        }
    }

    fn image_setup() -> (ModelConfig, ParamStore, ImageEncoders) {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let image = ImageEncoders::register(&mut store, &mut rng, &cfg);
        (cfg, store, image)
    }

    fn feat(seed: u64, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::params::normal_scaled(&mut rng, dim, 1, 1.0).data().to_vec()
    }

    #[test]
    fn question_shape_and_column_sensitivity() {
        let (cfg, store, image) = image_setup();
        let slots: Vec<QuestionSlot> = (0..4)
            .map(|i| QuestionSlot::Image(feat(i, cfg.feature_dim)))
            .collect();
        let g = Graph::new();
        let q = image
            .encode_question(&g, &store, &slots, cfg.use_cell_state)
            .unwrap();
        assert_eq!((q.rows, q.cols), (2 * cfg.d, 4));

        let mut slots2 = slots.clone();
        slots2[2] = QuestionSlot::Image(feat(99, cfg.feature_dim));
        let g2 = Graph::new();
        let q2 = image
            .encode_question(&g2, &store, &slots2, cfg.use_cell_state)
            .unwrap();
        let v1 = g.value(q);
        let v2 = g2.value(q2);
        assert!(!v2.has_nan());
        assert_ne!(v1.col(2), v2.col(2));
    }

    #[test]
    fn placeholder_slot_is_deterministic() {
        let (cfg, store, image) = image_setup();
        let slots = vec![
            QuestionSlot::Image(feat(1, cfg.feature_dim)),
            QuestionSlot::Placeholder,
            QuestionSlot::Image(feat(2, cfg.feature_dim)),
            QuestionSlot::Image(feat(3, cfg.feature_dim)),
        ];
        let run = || {
            let g = Graph::new();
            let q = image
                .encode_question(&g, &store, &slots, cfg.use_cell_state)
                .unwrap();
            g.value(q)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn answer_shapes_and_wrong_length_rejected() {
        let (cfg, store, image) = image_setup();
        let g = Graph::new();
        let single = vec![feat(4, cfg.feature_dim)];
        let a = image
            .encode_answer(&g, &store, &single, Task::Cloze, cfg.use_cell_state)
            .unwrap();
        assert_eq!((a.rows, a.cols), (2 * cfg.d, 1));

        let err = image.encode_answer(&g, &store, &single, Task::Ordering, cfg.use_cell_state);
        assert!(err.is_err());
    }

    #[test]
    fn ordering_sum_matches_explicit_position_sum() {
        let (cfg, store, image) = image_setup();
        let images: Vec<Vec<f64>> = (0..4).map(|i| feat(10 + i, cfg.feature_dim)).collect();
        let g = Graph::new();
        let a = image
            .encode_answer(&g, &store, &images, Task::Ordering, cfg.use_cell_state)
            .unwrap();
        let states = image
            .answer_states(&g, &store, &images, Task::Ordering, cfg.use_cell_state)
            .unwrap();
        let sv = g.value(states);
        let av = g.value(a);
        for i in 0..av.rows() {
            let manual: f64 = (0..4).map(|j| sv.get(i, j)).sum();
            assert!((manual - av.get(i, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn ordering_is_permutation_sensitive() {
        let (cfg, store, image) = image_setup();
        let images: Vec<Vec<f64>> = (0..4).map(|i| feat(20 + i, cfg.feature_dim)).collect();
        let mut rev = images.clone();
        rev.reverse();
        let g = Graph::new();
        let a1 = image
            .encode_answer(&g, &store, &images, Task::Ordering, cfg.use_cell_state)
            .unwrap();
        let a2 = image
            .encode_answer(&g, &store, &rev, Task::Ordering, cfg.use_cell_state)
            .unwrap();
        assert_ne!(g.value(a1), g.value(a2));
    }

    #[test]
    fn oov_entity_words_take_average_vector() {
        let vocab = test_vocab();
        let avg = vocab.average_vector(&["zzz".to_string()]);
        assert_eq!(avg, vocab.word_vector(UNK).to_vec());
    }
}
