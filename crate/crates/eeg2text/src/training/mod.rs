//! Training loops: masked-signal pre-training, teacher-forced fine-tuning,
//! per-epoch regional-encoder activation schedules, and checkpointing.
//!
//! Determinism contract: for a fixed (seed, config, thread count) the loss
//! history and final parameters are bit-identical across runs. Epoch data
//! order, per-sample masks, and adapter initialization all derive from the
//! config seed through tagged `mix_seed` streams, never ambient entropy.

mod checkpoint;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub(crate) use checkpoint::CKPT_VERSION;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    lit, Adam, AdamState, AutodiffError, Bound, Float, Graph, Params, Tensor, ValueId,
};
use crate::data::{normalize, Corpus, DataError, EEGRecording, BOS_ID, EOS_ID, PAD_ID};
use crate::masking::{make_mask, MaskError, MaskSpec, MaskStrategy};
use crate::mix_seed;
use crate::model::{
    decode_text, decode_text_graph, encode_multiview, encode_multiview_graph, encode_single,
    encode_single_graph, init_multiview_model_params, init_pretrain_params,
    init_single_view_params, input_node, reconstruct_graph, InputMode, ModelConfig, ModelError,
};
use crate::regions::{split_by_region, RegionError};

/// Epoch shuffling stream tag.
const SHUFFLE_STREAM: u64 = 31;
/// Per-sample mask seed stream tag.
const MASK_SEED_STREAM: u64 = 32;
/// Channel-adapter initialization stream tag.
const ADAPTER_STREAM: u64 = 33;

/// Stage-default learning rates and batch size.
pub const SINGLE_STAGE_LR: f64 = 1e-5;
pub const PRETRAIN_LR: f64 = 5e-5;
pub const MULTIVIEW_LR: f64 = 3e-5;
pub const DEFAULT_BATCH: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no corpora given")]
    EmptyCorpora,
    #[error("corpus {name:?} sample rate {got} differs from {want}")]
    SampleRateMismatch { name: String, got: f64, want: f64 },
    #[error("corpus vocabulary has {corpus} entries but the model expects {model}")]
    VocabMismatch { corpus: usize, model: usize },
    #[error("checkpoint does not fit this run: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint version {got} unsupported (expected {want})")]
    VersionMismatch { got: u32, want: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which encoders train during fine-tuning. `Single` selects the single-view
/// architecture; the rest select the multi-view model and differ only in
/// which regional encoders unfreeze each epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewStrategy {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "global_only")]
    GlobalOnly,
    #[serde(rename = "rotate_1")]
    Rotate1,
    #[serde(rename = "rotate_3")]
    Rotate3,
    #[serde(rename = "all")]
    All,
}

impl ViewStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ViewStrategy::Single => "single",
            ViewStrategy::GlobalOnly => "global_only",
            ViewStrategy::Rotate1 => "rotate_1",
            ViewStrategy::Rotate3 => "rotate_3",
            ViewStrategy::All => "all",
        }
    }
}

impl fmt::Display for ViewStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ViewStrategy {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "single" => Ok(ViewStrategy::Single),
            "global_only" => Ok(ViewStrategy::GlobalOnly),
            "rotate_1" => Ok(ViewStrategy::Rotate1),
            "rotate_3" => Ok(ViewStrategy::Rotate3),
            "all" => Ok(ViewStrategy::All),
            other => Err(TrainError::InvalidConfig(format!(
                "unknown view strategy {other:?} (expected single, global_only, rotate_1, rotate_3, or all)"
            ))),
        }
    }
}

/// Arithmetic width of the training loop. Checkpoints always store f32; a
/// double-precision run casts on the way in and out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => {
                Err(TrainError::InvalidConfig(format!("unknown precision {other:?} (f32 or f64)")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_epochs: usize,
    pub seed: u64,
    pub view_strategy: ViewStrategy,
    pub mask_strategy: MaskStrategy,
    pub mask_ratio: f64,
    /// Source corpus paths, recorded for checkpoint provenance only.
    pub corpora: Vec<String>,
    pub precision: Precision,
    /// Batch sizes outside {4, 8, 16} are rejected unless set.
    pub allow_any_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH,
            learning_rate: SINGLE_STAGE_LR,
            n_epochs: 1,
            seed: 7,
            view_strategy: ViewStrategy::Single,
            mask_strategy: MaskStrategy::Random,
            mask_ratio: 0.15,
            corpora: Vec::new(),
            precision: Precision::F32,
            allow_any_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.allow_any_batch && ![4, 8, 16].contains(&self.batch_size) {
            return Err(TrainError::InvalidConfig(format!(
                "batch_size {} is outside {{4, 8, 16}}; set allow_any_batch to override",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_epochs == 0 {
            return Err(TrainError::InvalidConfig("n_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Regional encoders trainable at `epoch`. The global transformer and the
/// decoder are always trainable and are not part of the returned set.
///
/// `global_only` freezes every region; `rotate_1` unfreezes one region per
/// epoch round-robin; `rotate_3` unfreezes three consecutive (mod n) regions;
/// `all` unfreezes everything. `single` has no regional encoders.
pub fn select_active_encoders(
    epoch: usize,
    strategy: ViewStrategy,
    n_regions: usize,
) -> BTreeSet<usize> {
    let mut set = BTreeSet::new();
    if n_regions == 0 {
        return set;
    }
    match strategy {
        ViewStrategy::Single | ViewStrategy::GlobalOnly => {}
        ViewStrategy::Rotate1 => {
            set.insert(epoch % n_regions);
        }
        ViewStrategy::Rotate3 => {
            for j in 0..3 {
                set.insert((3 * epoch + j) % n_regions);
            }
        }
        ViewStrategy::All => set.extend(0..n_regions),
    }
    set
}

/// A trained model: parameters, the optimizer moments needed to resume
/// exactly, both configs, and the per-epoch loss history.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Params<f32>,
    /// Adam moments per parameter that has taken at least one step.
    pub opt: BTreeMap<String, AdamState<f32>>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs completed when this checkpoint was written.
    pub epoch: usize,
    /// Mean per-sample loss of each completed epoch.
    pub loss_history: Vec<f64>,
    pub format_version: u32,
}

impl Checkpoint {
    /// Pre-training checkpoints carry the reconstruction head; fine-tuning
    /// checkpoints carry the text decoder instead.
    pub fn is_pretrain(&self) -> bool {
        self.params.contains("recon.w1")
    }
}

fn cast_state<A: Float, B: Float>(
    state: &BTreeMap<String, AdamState<A>>,
) -> BTreeMap<String, AdamState<B>> {
    state
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                AdamState {
                    m: s.m.iter().map(|v| B::from(*v).expect("finite cast")).collect(),
                    v: s.v.iter().map(|v| B::from(*v).expect("finite cast")).collect(),
                    t: s.t,
                },
            )
        })
        .collect()
}

/// Sample visit order for one epoch: a seeded shuffle of `0..n`, a pure
/// function of (seed, epoch).
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, SHUFFLE_STREAM, epoch]));
    idx.shuffle(&mut rng);
    idx
}

fn mean_of<T: Float>(g: &mut Graph<T>, losses: &[ValueId]) -> Result<ValueId, AutodiffError> {
    let mut acc = losses[0];
    for &l in &losses[1..] {
        acc = g.add(acc, l)?;
    }
    g.scale(acc, lit::<T>(1.0 / losses.len() as f64))
}

// ----- pre-training -----

/// Masked-reconstruction loss for one recording, built into `g`.
///
/// The input enters the graph untouched; masked patches are replaced in-graph
/// (`x*keep + fill*mask`) so the learned fill vector receives gradient. When
/// an adapter pair is given the signal is projected to the model's channel
/// layout before encoding and back after reconstruction, and the error is
/// measured in the recording's own channel space. The loss is the mean
/// squared error over masked entries only; with an empty mask it is the
/// constant zero and propagates no gradient.
pub(crate) fn sample_recon_loss<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    rec: &EEGRecording,
    spec: &MaskSpec,
    model: &ModelConfig,
    adapter: Option<(ValueId, ValueId)>,
) -> Result<ValueId, TrainError> {
    if spec.masked.is_empty() {
        return Ok(g.constant(vec![1], vec![T::zero()])?);
    }
    let c_native = rec.n_channels();
    let t = rec.n_timesteps();
    let kept = spec.n_patches * model.patch_len;
    if kept > t {
        return Err(MaskError::LengthMismatch { spec: spec.n_patches, got: t / model.patch_len }
            .into());
    }
    let mut data = Vec::with_capacity(c_native * kept);
    for ch in 0..c_native {
        data.extend(rec.samples.data()[ch * t..ch * t + kept].iter().map(|&v| lit::<T>(v as f64)));
    }
    let x_native = g.constant(vec![c_native, kept], data)?;
    let x_canon = match adapter {
        Some((w_in, _)) => g.matmul(w_in, x_native)?,
        None => x_native,
    };
    let c_canon = g.shape(x_canon)[0];

    // per-timestep keep indicator, repeated per channel row
    let mut keep_row = vec![T::one(); kept];
    for &p in &spec.masked {
        for i in p * model.patch_len..(p + 1) * model.patch_len {
            keep_row[i] = T::zero();
        }
    }
    let mask_row: Vec<T> =
        keep_row.iter().map(|&k| if k == T::zero() { T::one() } else { T::zero() }).collect();
    let tile = |row: &[T], c: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(c * kept);
        for _ in 0..c {
            out.extend_from_slice(row);
        }
        out
    };

    let kept_x = g.mul_const(x_canon, &tile(&keep_row, c_canon))?;
    let zeros = g.constant(vec![c_canon, kept], vec![T::zero(); c_canon * kept])?;
    let fill_cols = g.add_col_vec(zeros, b.id("mask_fill"))?;
    let fill_masked = g.mul_const(fill_cols, &tile(&mask_row, c_canon))?;
    let masked_x = g.add(kept_x, fill_masked)?;

    let mem = encode_single_graph(g, b, "enc.", masked_x, model)?;
    let recon_canon = reconstruct_graph(g, b, mem, model)?;
    let recon_native = match adapter {
        Some((_, w_out)) => g.matmul(w_out, recon_canon)?,
        None => recon_canon,
    };

    let diff = g.sub(recon_native, x_native)?;
    let masked_diff = g.mul_const(diff, &tile(&mask_row, c_native))?;
    let sq = g.mul(masked_diff, masked_diff)?;
    let total = g.sum_all(sq)?;
    let n_masked = spec.masked.len() * model.patch_len * c_native;
    Ok(g.scale(total, lit::<T>(1.0 / n_masked as f64))?)
}

/// Self-supervised pre-training: mask signal patches, reconstruct through the
/// single-view encoder, minimize masked-patch MSE with Adam. Corpora must
/// share a sample rate; corpora whose channel count differs from the first
/// get a learned linear adapter pair into and out of the model's layout.
pub fn pretrain(
    corpora: &[Corpus],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    model.validate()?;
    cfg.validate()?;
    if corpora.is_empty() {
        return Err(TrainError::EmptyCorpora);
    }
    if model.input_mode != InputMode::Raw {
        return Err(TrainError::InvalidConfig(
            "pre-training reconstructs raw signal patches; input_mode must be raw".into(),
        ));
    }
    for c in corpora {
        c.validate()?;
    }
    let want_rate = corpora[0].sample_rate;
    for c in corpora.iter().skip(1) {
        if c.sample_rate != want_rate {
            return Err(TrainError::SampleRateMismatch {
                name: c.name.clone(),
                got: c.sample_rate,
                want: want_rate,
            });
        }
    }
    let c_in = corpora[0].n_channels();
    let mut params = init_pretrain_params(model, c_in, cfg.seed);
    for (i, c) in corpora.iter().enumerate() {
        let c_i = c.n_channels();
        if c_i != c_in {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, ADAPTER_STREAM, i as u64]));
            params.insert(
                &format!("adapter{i}.in"),
                Tensor::randn(vec![c_in, c_i], 1.0 / (c_i as f64).sqrt(), &mut rng),
            )?;
            params.insert(
                &format!("adapter{i}.out"),
                Tensor::randn(vec![c_i, c_in], 1.0 / (c_in as f64).sqrt(), &mut rng),
            )?;
        }
    }
    match cfg.precision {
        Precision::F32 => run_pretrain::<f32>(corpora, model, cfg, params),
        Precision::F64 => run_pretrain::<f64>(corpora, model, cfg, params),
    }
}

fn run_pretrain<T: Float>(
    corpora: &[Corpus],
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: Params<f32>,
) -> Result<Checkpoint, TrainError> {
    let mut params: Params<T> = init.cast();
    let mut adam = Adam::<T>::new();
    let samples: Vec<(usize, usize)> = corpora
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.pairs.len()).map(move |pi| (ci, pi)))
        .collect();
    let mut history = Vec::with_capacity(cfg.n_epochs);
    for epoch in 0..cfg.n_epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let b = Bound::bind(&mut g, &params, |_| true);
            let mut losses = Vec::with_capacity(batch.len());
            for &s in batch {
                let (ci, pi) = samples[s];
                let corpus = &corpora[ci];
                let rec = normalize(&corpus.pairs[pi].0);
                let kept_patches = rec.n_timesteps() / model.patch_len;
                if kept_patches == 0 {
                    return Err(ModelError::InputTooShort {
                        got: rec.n_timesteps(),
                        need: model.patch_len,
                    }
                    .into());
                }
                let sample_seed =
                    mix_seed(&[cfg.seed, MASK_SEED_STREAM, ci as u64, pi as u64]);
                let spec = make_mask(
                    cfg.mask_strategy,
                    kept_patches,
                    cfg.mask_ratio,
                    epoch as u64,
                    sample_seed,
                )?;
                let adapter = if params.contains(&format!("adapter{ci}.in")) {
                    Some((b.id(&format!("adapter{ci}.in")), b.id(&format!("adapter{ci}.out"))))
                } else {
                    None
                };
                losses.push(sample_recon_loss(&mut g, &b, &rec, &spec, model, adapter)?);
            }
            let total = mean_of(&mut g, &losses)?;
            let loss = g.values(total)[0].to_f64().unwrap_or(f64::NAN);
            g.backward(total)?;
            let grads = b.grads(&g);
            adam.step(&mut params, &grads, cfg.learning_rate)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / samples.len() as f64;
        log::info!("pretrain epoch {epoch}: masked mse {mean:.6}");
        history.push(mean);
    }
    Ok(Checkpoint {
        params: params.cast(),
        opt: cast_state(&adam.export_state()),
        model: model.clone(),
        train: cfg.clone(),
        epoch: cfg.n_epochs,
        loss_history: history,
        format_version: CKPT_VERSION,
    })
}

/// Forward-only masked-reconstruction MSE of a pre-trained model over a
/// corpus, for held-out comparisons. Masks are drawn with the random strategy
/// from `(seed, sample index)` alone so two models measured with the same
/// arguments see identical masks. The corpus must match the model's channel
/// layout (adapters are a training-time device).
pub fn masked_recon_mse(
    corpus: &Corpus,
    model: &ModelConfig,
    params: &Params<f32>,
    mask_ratio: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    corpus.validate()?;
    let c_in = params.get("enc.comp.w1")?.shape()[1];
    if corpus.n_channels() != c_in {
        return Err(TrainError::InvalidConfig(format!(
            "corpus has {} channels but the model was built for {c_in}",
            corpus.n_channels()
        )));
    }
    let mut total = 0.0;
    for (pi, (rec, _)) in corpus.pairs.iter().enumerate() {
        let rec = normalize(rec);
        let kept_patches = rec.n_timesteps() / model.patch_len;
        if kept_patches == 0 {
            return Err(
                ModelError::InputTooShort { got: rec.n_timesteps(), need: model.patch_len }.into()
            );
        }
        let sample_seed = mix_seed(&[seed, MASK_SEED_STREAM, pi as u64]);
        let spec = make_mask(MaskStrategy::Random, kept_patches, mask_ratio, 0, sample_seed)?;
        let mut g = Graph::new();
        let b = Bound::bind(&mut g, params, |_| false);
        let loss = sample_recon_loss(&mut g, &b, &rec, &spec, model, None)?;
        total += g.values(loss)[0] as f64;
    }
    Ok(total / corpus.pairs.len() as f64)
}

// ----- fine-tuning -----

/// Teacher-forcing frame for one sentence: decoder input prefix (BOS first)
/// and the shifted targets (sentence then EOS), both truncated to fit
/// `max_text_len`.
pub(crate) fn teacher_frame(ids: &[usize], max_text_len: usize) -> (Vec<usize>, Vec<usize>) {
    let n_tok = ids.len().min(max_text_len - 1);
    let mut prefix = Vec::with_capacity(n_tok + 1);
    prefix.push(BOS_ID);
    prefix.extend_from_slice(&ids[..n_tok]);
    let mut targets = ids[..n_tok].to_vec();
    targets.push(EOS_ID);
    (prefix, targets)
}

/// Cross-entropy loss for one (recording, sentence) pair, built into `g`.
fn sample_ce_loss<T: Float>(
    g: &mut Graph<T>,
    b: &Bound,
    corpus: &Corpus,
    idx: usize,
    model: &ModelConfig,
    strategy: ViewStrategy,
) -> Result<ValueId, TrainError> {
    let (rec, sent) = &corpus.pairs[idx];
    let rec = normalize(rec);
    let mem = match strategy {
        ViewStrategy::Single => {
            let x = input_node(g, &rec, model)?;
            encode_single_graph(g, b, "enc.", x, model)?
        }
        _ => {
            let views = split_by_region(&rec, &model.partition)?;
            let nodes = views
                .iter()
                .map(|v| input_node(g, v, model))
                .collect::<Result<Vec<_>, _>>()?;
            encode_multiview_graph(g, b, &nodes, model)?.memory
        }
    };
    let ids = corpus.vocabulary.encode(sent);
    let (prefix, targets) = teacher_frame(&ids, model.max_text_len);
    let logits = decode_text_graph(g, b, mem, &prefix, model)?;
    Ok(g.cross_entropy(logits, &targets, PAD_ID)?)
}

/// Copies pre-trained weights into freshly initialized fine-tuning
/// parameters: the single-view model takes the compressor and transformer
/// layers; the multi-view model shares the pre-trained transformer layers
/// across every region and keeps its per-region compressors fresh.
pub(crate) fn seed_from_pretrain(
    params: &mut Params<f32>,
    init: &Checkpoint,
    strategy: ViewStrategy,
    n_regions: usize,
) {
    for (name, t) in init.params.iter() {
        match strategy {
            ViewStrategy::Single => {
                if !name.starts_with("enc.") {
                    continue;
                }
                if let Ok(dst) = params.get(name) {
                    if dst.shape() == t.shape() {
                        params.set(name, t.clone());
                    }
                }
            }
            _ => {
                let Some(suffix) = name.strip_prefix("enc.layer") else { continue };
                for k in 0..n_regions {
                    let target = format!("region{k}.layer{suffix}");
                    if let Ok(dst) = params.get(&target) {
                        if dst.shape() == t.shape() {
                            params.set(&target, t.clone());
                        }
                    }
                }
            }
        }
    }
}

/// Supervised fine-tuning with teacher forcing. `init` either seeds encoder
/// weights from a pre-training checkpoint or, when it is a fine-tuning
/// checkpoint of the same architecture, resumes that run exactly (parameters,
/// optimizer moments, epoch counter, loss history).
pub fn finetune(
    corpus: &Corpus,
    init: Option<&Checkpoint>,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    model.validate()?;
    cfg.validate()?;
    corpus.validate()?;
    if corpus.vocabulary.len() != model.vocab_size {
        return Err(TrainError::VocabMismatch {
            corpus: corpus.vocabulary.len(),
            model: model.vocab_size,
        });
    }
    let mut params = match cfg.view_strategy {
        ViewStrategy::Single => init_single_view_params(model, corpus.n_channels(), cfg.seed),
        _ => init_multiview_model_params(model, cfg.seed),
    };
    let mut start_epoch = 0;
    let mut history = Vec::new();
    let mut opt = BTreeMap::new();
    if let Some(ck) = init {
        if ck.is_pretrain() {
            seed_from_pretrain(&mut params, ck, cfg.view_strategy, model.partition.groups.len());
        } else {
            for (name, t) in ck.params.iter() {
                match params.get(name) {
                    Ok(dst) if dst.shape() == t.shape() => {}
                    Ok(dst) => {
                        return Err(TrainError::CheckpointMismatch(format!(
                            "parameter {name:?} has shape {:?}, expected {:?}",
                            t.shape(),
                            dst.shape()
                        )))
                    }
                    Err(_) => {
                        return Err(TrainError::CheckpointMismatch(format!(
                            "parameter {name:?} does not exist in a fresh {} model",
                            cfg.view_strategy
                        )))
                    }
                }
            }
            if ck.params.len() != params.len() {
                return Err(TrainError::CheckpointMismatch(format!(
                    "checkpoint has {} parameters, the model needs {}",
                    ck.params.len(),
                    params.len()
                )));
            }
            params = ck.params.clone();
            opt = ck.opt.clone();
            start_epoch = ck.epoch;
            history = ck.loss_history.clone();
        }
    }
    if start_epoch >= cfg.n_epochs {
        return Err(TrainError::InvalidConfig(format!(
            "checkpoint already covers {start_epoch} epochs; n_epochs {} adds nothing",
            cfg.n_epochs
        )));
    }
    match cfg.precision {
        Precision::F32 => run_finetune::<f32>(corpus, model, cfg, params, opt, start_epoch, history),
        Precision::F64 => run_finetune::<f64>(corpus, model, cfg, params, opt, start_epoch, history),
    }
}

fn run_finetune<T: Float>(
    corpus: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: Params<f32>,
    init_opt: BTreeMap<String, AdamState<f32>>,
    start_epoch: usize,
    mut history: Vec<f64>,
) -> Result<Checkpoint, TrainError> {
    let mut params: Params<T> = init.cast();
    let mut adam = Adam::<T>::new();
    adam.import_state(cast_state(&init_opt));
    let n_regions = model.partition.groups.len();
    for epoch in start_epoch..cfg.n_epochs {
        let active = select_active_encoders(epoch, cfg.view_strategy, n_regions);
        let trainable = |name: &str| -> bool {
            match name.strip_prefix("region") {
                Some(rest) => rest
                    .split('.')
                    .next()
                    .and_then(|k| k.parse::<usize>().ok())
                    .map(|k| active.contains(&k))
                    .unwrap_or(true),
                None => true,
            }
        };
        let order = epoch_order(corpus.pairs.len(), cfg.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let b = Bound::bind(&mut g, &params, &trainable);
            let mut losses = Vec::with_capacity(batch.len());
            for &s in batch {
                losses.push(sample_ce_loss(&mut g, &b, corpus, s, model, cfg.view_strategy)?);
            }
            let total = mean_of(&mut g, &losses)?;
            let loss = g.values(total)[0].to_f64().unwrap_or(f64::NAN);
            g.backward(total)?;
            let grads = b.grads(&g);
            adam.step(&mut params, &grads, cfg.learning_rate)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / corpus.pairs.len() as f64;
        log::info!("finetune epoch {epoch}: cross-entropy {mean:.6}");
        history.push(mean);
    }
    Ok(Checkpoint {
        params: params.cast(),
        opt: cast_state(&adam.export_state()),
        model: model.clone(),
        train: cfg.clone(),
        epoch: cfg.n_epochs,
        loss_history: history,
        format_version: CKPT_VERSION,
    })
}

/// Teacher-forced token accuracy over a corpus: the fraction of target
/// positions whose argmax logit equals the target, under frozen parameters.
pub fn token_accuracy(
    corpus: &Corpus,
    model: &ModelConfig,
    params: &Params<f32>,
    strategy: ViewStrategy,
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (rec, sent) in &corpus.pairs {
        let rec = normalize(rec);
        let mem = match strategy {
            ViewStrategy::Single => encode_single(&rec, model, params)?,
            _ => encode_multiview(&rec, model, params)?,
        };
        let ids = corpus.vocabulary.encode(sent);
        let (prefix, targets) = teacher_frame(&ids, model.max_text_len);
        let logits = decode_text(&mem, &prefix, model, params)?;
        let vocab = logits.shape()[1];
        for (row, &want) in targets.iter().enumerate() {
            let slice = &logits.data()[row * vocab..(row + 1) * vocab];
            let mut best = 0;
            for (i, &v) in slice.iter().enumerate().skip(1) {
                if v > slice[best] {
                    best = i;
                }
            }
            if best == want {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
