//! The tagger network: character embedding (optionally frozen) → two
//! bidirectional LSTM layers with dropout 0.1 on each layer's outputs →
//! dense layer with tanh → three linear classification heads.
//!
//! Everything runs in f64 with hand-written exact reverse-mode gradients,
//! verified against central finite differences (see `grad_check`).

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::PackedSequence;
use crate::hebrew::{DAGESH_CLASSES, MASK, NIKUD_CLASSES, SIN_CLASSES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint version/digest mismatch: {0}")]
    VersionMismatch(String),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
}

/// Character → dense token id. PAD is id 0; digits and punctuation are
/// bucketed; anything unknown maps to OOV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    entries: Vec<VocabEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VocabEntry {
    Pad,
    Oov,
    Space,
    Digit,
    Punct,
    Char(char),
}

impl CharVocab {
    pub const PAD: usize = 0;
    pub const OOV: usize = 1;
    const SPACE: usize = 2;
    const DIGIT: usize = 3;
    const PUNCT: usize = 4;

    /// The standard vocabulary: PAD, OOV, space, digit bucket, punctuation
    /// bucket, then the 27 Hebrew letters in code-point order.
    pub fn standard() -> CharVocab {
        let mut entries = vec![
            VocabEntry::Pad,
            VocabEntry::Oov,
            VocabEntry::Space,
            VocabEntry::Digit,
            VocabEntry::Punct,
        ];
        for cp in 0x05D0u32..=0x05EA {
            entries.push(VocabEntry::Char(char::from_u32(cp).unwrap()));
        }
        CharVocab { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        if c == '\0' {
            return Self::PAD;
        }
        if c.is_whitespace() {
            return Self::SPACE;
        }
        if c.is_ascii_digit() {
            return Self::DIGIT;
        }
        if c.is_ascii_punctuation() || c == '\u{05BE}' || c == '\u{05F3}' || c == '\u{05F4}' {
            return Self::PUNCT;
        }
        if ('\u{05D0}'..='\u{05EA}').contains(&c) {
            return 5 + (c as usize - 0x05D0);
        }
        Self::OOV
    }

    /// Stable digest of the vocabulary layout, embedded in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (i, e) in self.entries.iter().enumerate() {
            let tag = match e {
                VocabEntry::Pad => "PAD".to_string(),
                VocabEntry::Oov => "OOV".to_string(),
                VocabEntry::Space => "SPACE".to_string(),
                VocabEntry::Digit => "DIGIT".to_string(),
                VocabEntry::Punct => "PUNCT".to_string(),
                VocabEntry::Char(c) => format!("U+{:04X}", *c as u32),
            };
            h.update(format!("{i}:{tag};"));
        }
        h.finalize().into()
    }
}

/// Optimizer selection. The learning rate lives in [`TrainingConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Hyperparameters. Defaults: lr 0.001, batch 32, hidden 784, dropout 0.1,
/// max length 1024.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub embed_size: usize,
    pub dropout: f64,
    pub max_length: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub freeze_encoder: bool,
    /// Early-stop patience in epochs without dev letter-accuracy
    /// improvement; 0 disables early stopping.
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.001,
            batch_size: 32,
            hidden_size: 784,
            embed_size: 128,
            dropout: 0.1,
            max_length: 1024,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            freeze_encoder: false,
            patience: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.hidden_size == 0
            || self.embed_size == 0
            || self.max_length == 0
            || !(0.0..1.0).contains(&self.dropout)
        {
            return Err(ModelError::ShapeMismatch(format!(
                "invalid config: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One direction of one LSTM layer. Gate order in the 4H axis: input,
/// forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    pub w_input: Array2<f64>,  // [input, 4H]
    pub w_hidden: Array2<f64>, // [H, 4H]
    pub bias: Array1<f64>,     // [4H]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>, // [input, output]
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Array2<f64>, // [vocab, E]
    pub encoder_frozen: bool,
    pub rnn1: BiLstmParams, // input E, hidden H per direction
    pub rnn2: BiLstmParams, // input 2H
    pub dense: Linear,      // [2H, H]
    pub head_nikud: Linear, // [H, 12]
    pub head_dagesh: Linear,
    pub head_sin: Linear,
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn init_dir(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmDirParams {
    let mut bias = Array1::zeros(4 * hidden);
    // forget gate bias 1.0
    bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
    LstmDirParams {
        w_input: init_matrix(rng, input, 4 * hidden, input),
        w_hidden: init_matrix(rng, hidden, 4 * hidden, hidden),
        bias,
    }
}

impl ModelParams {
    /// Deterministic seeded initialization: uniform scaled by fan-in for
    /// every matrix, zero biases, forget-gate bias 1.0.
    pub fn init(config: &TrainingConfig, vocab: &CharVocab, seed: u64) -> ModelParams {
        let h = config.hidden_size;
        let e = config.embed_size;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams {
            embedding: init_matrix(&mut rng, v, e, e),
            encoder_frozen: config.freeze_encoder,
            rnn1: BiLstmParams {
                fwd: init_dir(&mut rng, e, h),
                bwd: init_dir(&mut rng, e, h),
            },
            rnn2: BiLstmParams {
                fwd: init_dir(&mut rng, 2 * h, h),
                bwd: init_dir(&mut rng, 2 * h, h),
            },
            dense: Linear {
                weight: init_matrix(&mut rng, 2 * h, h, 2 * h),
                bias: Array1::zeros(h),
            },
            head_nikud: Linear {
                weight: init_matrix(&mut rng, h, NIKUD_CLASSES, h),
                bias: Array1::zeros(NIKUD_CLASSES),
            },
            head_dagesh: Linear {
                weight: init_matrix(&mut rng, h, DAGESH_CLASSES, h),
                bias: Array1::zeros(DAGESH_CLASSES),
            },
            head_sin: Linear {
                weight: init_matrix(&mut rng, h, SIN_CLASSES, h),
                bias: Array1::zeros(SIN_CLASSES),
            },
            hidden: h,
            embed: e,
            vocab: v,
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for (_, slice) in z.param_slices_mut() {
            slice.fill(0.0);
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|(_, s)| s.len()).sum()
    }

    /// Trainable tensors as flat f64 slices, in the fixed checkpoint order.
    pub fn param_slices(&self) -> Vec<(&'static str, &[f64])> {
        fn lin<'a>(name: (&'static str, &'static str), l: &'a Linear, out: &mut Vec<(&'static str, &'a [f64])>) {
            out.push((name.0, l.weight.as_slice().unwrap()));
            out.push((name.1, l.bias.as_slice().unwrap()));
        }
        fn dir<'a>(
            names: (&'static str, &'static str, &'static str),
            d: &'a LstmDirParams,
            out: &mut Vec<(&'static str, &'a [f64])>,
        ) {
            out.push((names.0, d.w_input.as_slice().unwrap()));
            out.push((names.1, d.w_hidden.as_slice().unwrap()));
            out.push((names.2, d.bias.as_slice().unwrap()));
        }
        let mut out = Vec::with_capacity(23);
        out.push(("embedding", self.embedding.as_slice().unwrap()));
        dir(("rnn1.fwd.w_input", "rnn1.fwd.w_hidden", "rnn1.fwd.bias"), &self.rnn1.fwd, &mut out);
        dir(("rnn1.bwd.w_input", "rnn1.bwd.w_hidden", "rnn1.bwd.bias"), &self.rnn1.bwd, &mut out);
        dir(("rnn2.fwd.w_input", "rnn2.fwd.w_hidden", "rnn2.fwd.bias"), &self.rnn2.fwd, &mut out);
        dir(("rnn2.bwd.w_input", "rnn2.bwd.w_hidden", "rnn2.bwd.bias"), &self.rnn2.bwd, &mut out);
        lin(("dense.weight", "dense.bias"), &self.dense, &mut out);
        lin(("head_nikud.weight", "head_nikud.bias"), &self.head_nikud, &mut out);
        lin(("head_dagesh.weight", "head_dagesh.bias"), &self.head_dagesh, &mut out);
        lin(("head_sin.weight", "head_sin.bias"), &self.head_sin, &mut out);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn lin<'a>(names: (&'static str, &'static str), l: &'a mut Linear, out: &mut Vec<(&'static str, &'a mut [f64])>) {
            out.push((names.0, l.weight.as_slice_mut().unwrap()));
            out.push((names.1, l.bias.as_slice_mut().unwrap()));
        }
        fn dir<'a>(
            names: (&'static str, &'static str, &'static str),
            d: &'a mut LstmDirParams,
            out: &mut Vec<(&'static str, &'a mut [f64])>,
        ) {
            out.push((names.0, d.w_input.as_slice_mut().unwrap()));
            out.push((names.1, d.w_hidden.as_slice_mut().unwrap()));
            out.push((names.2, d.bias.as_slice_mut().unwrap()));
        }
        let mut out = Vec::with_capacity(23);
        out.push(("embedding", self.embedding.as_slice_mut().unwrap()));
        dir(("rnn1.fwd.w_input", "rnn1.fwd.w_hidden", "rnn1.fwd.bias"), &mut self.rnn1.fwd, &mut out);
        dir(("rnn1.bwd.w_input", "rnn1.bwd.w_hidden", "rnn1.bwd.bias"), &mut self.rnn1.bwd, &mut out);
        dir(("rnn2.fwd.w_input", "rnn2.fwd.w_hidden", "rnn2.fwd.bias"), &mut self.rnn2.fwd, &mut out);
        dir(("rnn2.bwd.w_input", "rnn2.bwd.w_hidden", "rnn2.bwd.bias"), &mut self.rnn2.bwd, &mut out);
        lin(("dense.weight", "dense.bias"), &mut self.dense, &mut out);
        lin(("head_nikud.weight", "head_nikud.bias"), &mut self.head_nikud, &mut out);
        lin(("head_dagesh.weight", "head_dagesh.bias"), &mut self.head_dagesh, &mut out);
        lin(("head_sin.weight", "head_sin.bias"), &mut self.head_sin, &mut out);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Digest of the structural dimensions, embedded in checkpoints.
    pub fn config_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(format!(
            "vocab={};embed={};hidden={};heads={}/{}/{}",
            self.vocab, self.embed, self.hidden, NIKUD_CLASSES, DAGESH_CLASSES, SIN_CLASSES
        ));
        h.finalize().into()
    }
}

/// Gradients, mirroring [`ModelParams`] tensor-for-tensor.
pub struct Grads(pub ModelParams);

impl Grads {
    pub fn zeros_like(params: &ModelParams) -> Grads {
        Grads(params.zeros_like())
    }
}

/// A mini-batch of packed rows in tensor form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens: Array2<usize>, // [B, L]
    pub nikud: Array2<u8>,
    pub dagesh: Array2<u8>,
    pub sin: Array2<u8>,
    pub attention: Array2<u8>,
}

impl Batch {
    pub fn from_packs(packs: &[&PackedSequence]) -> Result<Batch, ModelError> {
        let b = packs.len();
        if b == 0 {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        let l = packs[0].max_length();
        if packs.iter().any(|p| p.max_length() != l) {
            return Err(ModelError::ShapeMismatch("ragged pack lengths".into()));
        }
        let mut tokens = Array2::zeros((b, l));
        let mut nikud = Array2::from_elem((b, l), MASK);
        let mut dagesh = Array2::from_elem((b, l), MASK);
        let mut sin = Array2::from_elem((b, l), MASK);
        let mut attention = Array2::zeros((b, l));
        for (bi, p) in packs.iter().enumerate() {
            for li in 0..l {
                tokens[[bi, li]] = p.token_ids[li];
                nikud[[bi, li]] = p.labels[li].nikud;
                dagesh[[bi, li]] = p.labels[li].dagesh;
                sin[[bi, li]] = p.labels[li].sin;
                attention[[bi, li]] = p.attention_mask[li];
            }
        }
        Ok(Batch {
            tokens,
            nikud,
            dagesh,
            sin,
            attention,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Forward mode. Train mode applies seeded dropout; eval never does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout: f64, seed: u64 },
    Eval,
}

#[derive(Debug, Clone)]
pub struct HeadLogits {
    pub nikud: Array3<f64>,  // [B, L, 12]
    pub dagesh: Array3<f64>, // [B, L, 2]
    pub sin: Array3<f64>,    // [B, L, 3]
}

/// Per-direction forward cache for BPTT.
struct DirCache {
    i: Array3<f64>,
    f: Array3<f64>,
    g: Array3<f64>,
    o: Array3<f64>,
    c: Array3<f64>,
    tanh_c: Array3<f64>,
    h: Array3<f64>,
}

struct BiCache {
    fwd: DirCache,
    bwd: DirCache,
    out: Array3<f64>, // [B, L, 2H] concatenated
}

/// Everything backward needs.
pub struct ForwardCache {
    emb: Array3<f64>,
    rnn1: BiCache,
    drop1: Option<Array3<f64>>,
    rnn1_dropped: Array3<f64>,
    rnn2: BiCache,
    drop2: Option<Array3<f64>>,
    rnn2_dropped: Array3<f64>,
    dense_out: Array2<f64>, // [B*L, H], post-tanh
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn time_order(len: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    }
}

fn lstm_dir_forward(p: &LstmDirParams, xs: &Array3<f64>, reverse: bool) -> DirCache {
    let (b, l, _input) = xs.dim();
    let h = p.w_hidden.nrows();
    let mut cache = DirCache {
        i: Array3::zeros((b, l, h)),
        f: Array3::zeros((b, l, h)),
        g: Array3::zeros((b, l, h)),
        o: Array3::zeros((b, l, h)),
        c: Array3::zeros((b, l, h)),
        tanh_c: Array3::zeros((b, l, h)),
        h: Array3::zeros((b, l, h)),
    };
    let mut h_prev = Array2::<f64>::zeros((b, h));
    let mut c_prev = Array2::<f64>::zeros((b, h));
    for &t in &time_order(l, reverse) {
        let x = xs.index_axis(Axis(1), t);
        let mut gates = x.dot(&p.w_input) + h_prev.dot(&p.w_hidden);
        gates += &p.bias;
        let mut h_t = Array2::<f64>::zeros((b, h));
        let mut c_t = Array2::<f64>::zeros((b, h));
        for bi in 0..b {
            for hi in 0..h {
                let i_v = sigmoid(gates[[bi, hi]]);
                let f_v = sigmoid(gates[[bi, h + hi]]);
                let g_v = gates[[bi, 2 * h + hi]].tanh();
                let o_v = sigmoid(gates[[bi, 3 * h + hi]]);
                let c_v = f_v * c_prev[[bi, hi]] + i_v * g_v;
                let tc = c_v.tanh();
                cache.i[[bi, t, hi]] = i_v;
                cache.f[[bi, t, hi]] = f_v;
                cache.g[[bi, t, hi]] = g_v;
                cache.o[[bi, t, hi]] = o_v;
                cache.c[[bi, t, hi]] = c_v;
                cache.tanh_c[[bi, t, hi]] = tc;
                let h_v = o_v * tc;
                cache.h[[bi, t, hi]] = h_v;
                h_t[[bi, hi]] = h_v;
                c_t[[bi, hi]] = c_v;
            }
        }
        h_prev = h_t;
        c_prev = c_t;
    }
    cache
}

struct LstmDirGrads {
    w_input: Array2<f64>,
    w_hidden: Array2<f64>,
    bias: Array1<f64>,
}

fn lstm_dir_backward(
    p: &LstmDirParams,
    xs: &Array3<f64>,
    cache: &DirCache,
    d_h_seq: &Array3<f64>,
    reverse: bool,
) -> (LstmDirGrads, Array3<f64>) {
    let (b, l, input) = xs.dim();
    let h = p.w_hidden.nrows();
    let order = time_order(l, reverse);
    let mut gw_input = Array2::<f64>::zeros((input, 4 * h));
    let mut gw_hidden = Array2::<f64>::zeros((h, 4 * h));
    let mut gbias = Array1::<f64>::zeros(4 * h);
    let mut d_xs = Array3::<f64>::zeros((b, l, input));
    let mut dh_carry = Array2::<f64>::zeros((b, h));
    let mut dc_carry = Array2::<f64>::zeros((b, h));

    for k in (0..l).rev() {
        let t = order[k];
        let t_prev = if k > 0 { Some(order[k - 1]) } else { None };
        let mut d_gates = Array2::<f64>::zeros((b, 4 * h));
        for bi in 0..b {
            for hi in 0..h {
                let dh = d_h_seq[[bi, t, hi]] + dh_carry[[bi, hi]];
                let i_v = cache.i[[bi, t, hi]];
                let f_v = cache.f[[bi, t, hi]];
                let g_v = cache.g[[bi, t, hi]];
                let o_v = cache.o[[bi, t, hi]];
                let tc = cache.tanh_c[[bi, t, hi]];
                let c_prev = t_prev.map_or(0.0, |tp| cache.c[[bi, tp, hi]]);
                let d_o = dh * tc;
                let d_c = dh * o_v * (1.0 - tc * tc) + dc_carry[[bi, hi]];
                let d_i = d_c * g_v;
                let d_f = d_c * c_prev;
                let d_g = d_c * i_v;
                dc_carry[[bi, hi]] = d_c * f_v;
                d_gates[[bi, hi]] = d_i * i_v * (1.0 - i_v);
                d_gates[[bi, h + hi]] = d_f * f_v * (1.0 - f_v);
                d_gates[[bi, 2 * h + hi]] = d_g * (1.0 - g_v * g_v);
                d_gates[[bi, 3 * h + hi]] = d_o * o_v * (1.0 - o_v);
            }
        }
        let x_t = xs.index_axis(Axis(1), t);
        gw_input += &x_t.t().dot(&d_gates);
        if let Some(tp) = t_prev {
            let h_prev: ArrayView2<f64> = cache.h.index_axis(Axis(1), tp);
            gw_hidden += &h_prev.t().dot(&d_gates);
        }
        gbias += &d_gates.sum_axis(Axis(0));
        d_xs.index_axis_mut(Axis(1), t)
            .assign(&d_gates.dot(&p.w_input.t()));
        dh_carry = d_gates.dot(&p.w_hidden.t());
    }
    (
        LstmDirGrads {
            w_input: gw_input,
            w_hidden: gw_hidden,
            bias: gbias,
        },
        d_xs,
    )
}

fn bilstm_forward(p: &BiLstmParams, xs: &Array3<f64>) -> BiCache {
    let fwd = lstm_dir_forward(&p.fwd, xs, false);
    let bwd = lstm_dir_forward(&p.bwd, xs, true);
    let (b, l, _) = xs.dim();
    let h = p.fwd.w_hidden.nrows();
    let mut out = Array3::<f64>::zeros((b, l, 2 * h));
    out.slice_mut(s![.., .., ..h]).assign(&fwd.h);
    out.slice_mut(s![.., .., h..]).assign(&bwd.h);
    BiCache { fwd, bwd, out }
}

struct BiLstmGrads {
    fwd: LstmDirGrads,
    bwd: LstmDirGrads,
}

fn bilstm_backward(
    p: &BiLstmParams,
    xs: &Array3<f64>,
    cache: &BiCache,
    d_out: &Array3<f64>,
) -> (BiLstmGrads, Array3<f64>) {
    let h = p.fwd.w_hidden.nrows();
    let d_fwd = d_out.slice(s![.., .., ..h]).to_owned();
    let d_bwd = d_out.slice(s![.., .., h..]).to_owned();
    let (g_fwd, dx_fwd) = lstm_dir_backward(&p.fwd, xs, &cache.fwd, &d_fwd, false);
    let (g_bwd, dx_bwd) = lstm_dir_backward(&p.bwd, xs, &cache.bwd, &d_bwd, true);
    (
        BiLstmGrads {
            fwd: g_fwd,
            bwd: g_bwd,
        },
        dx_fwd + dx_bwd,
    )
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), rate: f64) -> Array3<f64> {
    let keep = 1.0 - rate;
    Array3::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Forward pass returning logits and the cache needed by [`backward`].
pub fn forward_cache(
    params: &ModelParams,
    batch: &Batch,
    mode: Mode,
) -> Result<(HeadLogits, ForwardCache), ModelError> {
    let (b, l) = (batch.batch_size(), batch.seq_len());
    if batch.tokens.iter().any(|&t| t >= params.vocab) {
        return Err(ModelError::ShapeMismatch(format!(
            "token id out of range for vocab {}",
            params.vocab
        )));
    }
    let e = params.embed;
    let h = params.hidden;

    let mut emb = Array3::<f64>::zeros((b, l, e));
    for bi in 0..b {
        for li in 0..l {
            emb.slice_mut(s![bi, li, ..])
                .assign(&params.embedding.row(batch.tokens[[bi, li]]));
        }
    }

    let rnn1 = bilstm_forward(&params.rnn1, &emb);

    let mut drop_rng = match mode {
        Mode::Train { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Eval => None,
    };
    let rate = match mode {
        Mode::Train { dropout, .. } => dropout,
        Mode::Eval => 0.0,
    };

    let (drop1, rnn1_dropped) = if rate > 0.0 {
        let m = dropout_mask(drop_rng.as_mut().unwrap(), (b, l, 2 * h), rate);
        let dropped = &rnn1.out * &m;
        (Some(m), dropped)
    } else {
        (None, rnn1.out.clone())
    };

    let rnn2 = bilstm_forward(&params.rnn2, &rnn1_dropped);

    let (drop2, rnn2_dropped) = if rate > 0.0 {
        let m = dropout_mask(drop_rng.as_mut().unwrap(), (b, l, 2 * h), rate);
        let dropped = &rnn2.out * &m;
        (Some(m), dropped)
    } else {
        (None, rnn2.out.clone())
    };

    let flat = rnn2_dropped
        .to_shape((b * l, 2 * h))
        .expect("contiguous")
        .to_owned();
    let mut dense_out = flat.dot(&params.dense.weight);
    dense_out += &params.dense.bias;
    dense_out.mapv_inplace(f64::tanh);

    let head = |lin: &Linear, classes: usize| -> Array3<f64> {
        let mut logits = dense_out.dot(&lin.weight);
        logits += &lin.bias;
        logits
            .to_shape((b, l, classes))
            .expect("contiguous")
            .to_owned()
    };

    let logits = HeadLogits {
        nikud: head(&params.head_nikud, NIKUD_CLASSES),
        dagesh: head(&params.head_dagesh, DAGESH_CLASSES),
        sin: head(&params.head_sin, SIN_CLASSES),
    };
    let cache = ForwardCache {
        emb,
        rnn1,
        drop1,
        rnn1_dropped,
        rnn2,
        drop2,
        rnn2_dropped,
        dense_out,
    };
    Ok((logits, cache))
}

/// Forward pass without keeping the cache.
pub fn forward(params: &ModelParams, batch: &Batch, mode: Mode) -> Result<HeadLogits, ModelError> {
    forward_cache(params, batch, mode).map(|(l, _)| l)
}

/// Per-head and total loss values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub total: f64,
    pub nikud: f64,
    pub dagesh: f64,
    pub sin: f64,
}

/// Mean masked cross-entropy for one head; also fills the logit gradient
/// when requested. Positions labeled MASK contribute nothing.
fn head_loss(
    logits: &Array3<f64>,
    labels: &Array2<u8>,
    mut d_logits: Option<&mut Array3<f64>>,
) -> f64 {
    let (b, l, k) = logits.dim();
    let mut count = 0usize;
    let mut positions: Vec<(usize, usize)> = Vec::new();
    for bi in 0..b {
        for li in 0..l {
            if labels[[bi, li]] != MASK {
                count += 1;
                positions.push((bi, li));
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for (bi, li) in positions {
        let row = logits.slice(s![bi, li, ..]);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for ki in 0..k {
            z += (row[ki] - max).exp();
        }
        let log_z = z.ln() + max;
        let y = labels[[bi, li]] as usize;
        loss += log_z - row[y];
        if let Some(d) = d_logits.as_deref_mut() {
            for ki in 0..k {
                let p = (row[ki] - log_z).exp();
                d[[bi, li, ki]] = scale * (p - if ki == y { 1.0 } else { 0.0 });
            }
        }
    }
    loss * scale
}

/// Summed masked cross-entropy over the three heads.
pub fn loss(logits: &HeadLogits, batch: &Batch) -> Losses {
    let nikud = head_loss(&logits.nikud, &batch.nikud, None);
    let dagesh = head_loss(&logits.dagesh, &batch.dagesh, None);
    let sin = head_loss(&logits.sin, &batch.sin, None);
    Losses {
        total: nikud + dagesh + sin,
        nikud,
        dagesh,
        sin,
    }
}

/// Exact reverse-mode gradients of the total loss with respect to every
/// trainable parameter. The embedding gradient is left at zero when the
/// encoder is frozen.
pub fn backward(
    params: &ModelParams,
    batch: &Batch,
    logits: &HeadLogits,
    cache: &ForwardCache,
) -> (Losses, Grads) {
    let (b, l) = (batch.batch_size(), batch.seq_len());
    let h = params.hidden;

    let mut d_nikud = Array3::<f64>::zeros(logits.nikud.dim());
    let mut d_dagesh = Array3::<f64>::zeros(logits.dagesh.dim());
    let mut d_sin = Array3::<f64>::zeros(logits.sin.dim());
    let nikud = head_loss(&logits.nikud, &batch.nikud, Some(&mut d_nikud));
    let dagesh = head_loss(&logits.dagesh, &batch.dagesh, Some(&mut d_dagesh));
    let sin = head_loss(&logits.sin, &batch.sin, Some(&mut d_sin));
    let losses = Losses {
        total: nikud + dagesh + sin,
        nikud,
        dagesh,
        sin,
    };

    let mut grads = Grads::zeros_like(params);

    // heads
    let mut d_dense_out = Array2::<f64>::zeros((b * l, h));
    {
        let mut head_back = |lin: &Linear, g_lin: &mut Linear, d: &Array3<f64>, classes: usize| {
            let d2 = d.to_shape((b * l, classes)).expect("contiguous");
            g_lin.weight += &cache.dense_out.t().dot(&d2);
            g_lin.bias += &d2.sum_axis(Axis(0));
            d_dense_out += &d2.dot(&lin.weight.t());
        };
        head_back(&params.head_nikud, &mut grads.0.head_nikud, &d_nikud, NIKUD_CLASSES);
        head_back(&params.head_dagesh, &mut grads.0.head_dagesh, &d_dagesh, DAGESH_CLASSES);
        head_back(&params.head_sin, &mut grads.0.head_sin, &d_sin, SIN_CLASSES);
    }

    // dense (tanh)
    let d_pre = &d_dense_out * &cache.dense_out.mapv(|y| 1.0 - y * y);
    let flat_in = cache
        .rnn2_dropped
        .to_shape((b * l, 2 * h))
        .expect("contiguous");
    grads.0.dense.weight += &flat_in.t().dot(&d_pre);
    grads.0.dense.bias += &d_pre.sum_axis(Axis(0));
    let mut d_rnn2_out = d_pre
        .dot(&params.dense.weight.t())
        .to_shape((b, l, 2 * h))
        .expect("contiguous")
        .to_owned();
    if let Some(m) = &cache.drop2 {
        d_rnn2_out *= m;
    }

    // rnn2
    let (g_rnn2, mut d_rnn1_out) =
        bilstm_backward(&params.rnn2, &cache.rnn1_dropped, &cache.rnn2, &d_rnn2_out);
    assign_bilstm(&mut grads.0.rnn2, g_rnn2);
    if let Some(m) = &cache.drop1 {
        d_rnn1_out *= m;
    }

    // rnn1
    let (g_rnn1, d_emb) = bilstm_backward(&params.rnn1, &cache.emb, &cache.rnn1, &d_rnn1_out);
    assign_bilstm(&mut grads.0.rnn1, g_rnn1);

    // embedding scatter
    if !params.encoder_frozen {
        for bi in 0..b {
            for li in 0..l {
                let row = batch.tokens[[bi, li]];
                let mut target = grads.0.embedding.row_mut(row);
                target += &d_emb.slice(s![bi, li, ..]);
            }
        }
    }

    (losses, grads)
}

fn assign_bilstm(target: &mut BiLstmParams, g: BiLstmGrads) {
    target.fwd.w_input = g.fwd.w_input;
    target.fwd.w_hidden = g.fwd.w_hidden;
    target.fwd.bias = g.fwd.bias;
    target.bwd.w_input = g.bwd.w_input;
    target.bwd.w_hidden = g.bwd.w_hidden;
    target.bwd.bias = g.bwd.bias;
}

/// Compares analytic gradients against central finite differences on every
/// parameter. Dropout must be disabled (eval-equivalent forward). Returns
/// the maximum relative error.
pub fn grad_check(params: &ModelParams, batch: &Batch, eps: f64) -> Result<f64, ModelError> {
    let mut params = params.clone();
    params.encoder_frozen = false;
    let mode = Mode::Eval;
    let (logits, cache) = forward_cache(&params, batch, mode)?;
    let (_, grads) = backward(&params, batch, &logits, &cache);

    let analytic: Vec<Vec<f64>> = grads
        .0
        .param_slices()
        .iter()
        .map(|(_, s)| s.to_vec())
        .collect();

    let mut max_rel = 0.0f64;
    let n_tensors = analytic.len();
    for ti in 0..n_tensors {
        let len = analytic[ti].len();
        for idx in 0..len {
            let orig = params.param_slices()[ti].1[idx];
            params.param_slices_mut()[ti].1[idx] = orig + eps;
            let plus = loss(&forward(&params, batch, mode)?, batch).total;
            params.param_slices_mut()[ti].1[idx] = orig - eps;
            let minus = loss(&forward(&params, batch, mode)?, batch).total;
            params.param_slices_mut()[ti].1[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti][idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
