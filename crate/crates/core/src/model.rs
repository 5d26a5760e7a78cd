//! The full model: two recurrent pathways over shared word embeddings.
//!
//! A sentence is a slice of token ids already terminated by the vocabulary's
//! end sentinel. Each token's embedding (a column of the shared table) feeds
//! both a visual and a textual recurrent pathway, started from zero hidden
//! states. The visual pathway is read out once, at the final position, through
//! a clipped-rectifier projection to an image feature vector. The textual
//! pathway is read out at every position through a softmax projection, where
//! the distribution at position t is scored against the token at position
//! t + 1 (the end sentinel supplies the final target, so the last position's
//! distribution is computed but never scored).
//!
//! The composite loss is `alpha * textual + (1 - alpha) * visual`, with the
//! textual term the mean negative log-likelihood (normalized by sentence
//! length including the sentinel) and the visual term the mean squared error
//! over feature dimensions. Setting alpha to 0 or 1 silences a pathway
//! exactly: [`backward`] skips the silenced branch entirely, so its gradients
//! are bitwise zero, while the embedding table always accumulates whatever
//! pathways are live.

use crate::binio;
use crate::error::{Error, Result};
use crate::layers::{
    embed, gru_backward, gru_sequence, textual_head, visual_head, ActivationConfig, GruParams,
    GruStepTrace,
};
use crate::numcore::{init_matrix, Matrix, Rng, Vector};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

/// Probabilities below this are clamped inside the log of the textual loss;
/// each clamp is counted in the loss breakdown.
pub const PROB_FLOOR: f64 = 1e-12;

/// Magic bytes opening a model checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IMGN";
/// Checkpoint format version written by this crate.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which objective mix to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Visual,
    Textual,
    Multitask,
}

impl Variant {
    /// The loss mixing weight this variant trains with.
    pub fn alpha(self) -> f64 {
        match self {
            Variant::Visual => 0.0,
            Variant::Textual => 1.0,
            Variant::Multitask => 0.1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Visual => "visual",
            Variant::Textual => "textual",
            Variant::Multitask => "multitask",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Variant::Visual),
            "textual" => Ok(Variant::Textual),
            "multitask" => Ok(Variant::Multitask),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}, expected visual, textual or multitask"
            ))),
        }
    }
}

/// Shape of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

/// Complete learnable parameter set. Nothing learnable lives outside this
/// struct.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Shared word embeddings, one column per vocabulary entry
    /// (embedding_dim x vocab_size).
    pub embeddings: Matrix,
    pub visual_gru: GruParams,
    pub textual_gru: GruParams,
    /// Projection from the final visual hidden state to image features
    /// (feature_dim x hidden_dim).
    pub image_head: Matrix,
    /// Projection from each textual hidden state to next-word logits
    /// (vocab_size x hidden_dim).
    pub word_head: Matrix,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            embeddings: Matrix::zeros(dims.embedding_dim, dims.vocab_size),
            visual_gru: GruParams::zeros(dims.embedding_dim, dims.hidden_dim),
            textual_gru: GruParams::zeros(dims.embedding_dim, dims.hidden_dim),
            image_head: Matrix::zeros(dims.feature_dim, dims.hidden_dim),
            word_head: Matrix::zeros(dims.vocab_size, dims.hidden_dim),
        }
    }

    pub fn init(dims: ModelDims, scale: f64, rng: &mut Rng) -> Self {
        ModelParams {
            embeddings: init_matrix(dims.embedding_dim, dims.vocab_size, scale, rng),
            visual_gru: GruParams::init(dims.embedding_dim, dims.hidden_dim, scale, rng),
            textual_gru: GruParams::init(dims.embedding_dim, dims.hidden_dim, scale, rng),
            image_head: init_matrix(dims.feature_dim, dims.hidden_dim, scale, rng),
            word_head: init_matrix(dims.vocab_size, dims.hidden_dim, scale, rng),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.embeddings.cols(),
            embedding_dim: self.embeddings.rows(),
            hidden_dim: self.visual_gru.hidden_dim(),
            feature_dim: self.image_head.rows(),
        }
    }

    /// All fifteen weight matrices in the fixed serialization order:
    /// embeddings; visual cell (w_update, u_update, w_reset, u_reset, w_cand,
    /// u_cand); textual cell (same six); image head; word head.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = Vec::with_capacity(15);
        out.push(("embeddings", &self.embeddings));
        for (name, m) in self.visual_gru.tensors() {
            out.push((visual_name(name), m));
        }
        for (name, m) in self.textual_gru.tensors() {
            out.push((textual_name(name), m));
        }
        out.push(("image_head", &self.image_head));
        out.push(("word_head", &self.word_head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = Vec::with_capacity(15);
        out.push(("embeddings", &mut self.embeddings));
        for (name, m) in self.visual_gru.tensors_mut() {
            out.push((visual_name(name), m));
        }
        for (name, m) in self.textual_gru.tensors_mut() {
            out.push((textual_name(name), m));
        }
        out.push(("image_head", &mut self.image_head));
        out.push(("word_head", &mut self.word_head));
        out
    }

    /// `self += scale * other`, used to accumulate per-example gradients.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        self.embeddings.add_scaled(&other.embeddings, scale)?;
        self.visual_gru.add_scaled(&other.visual_gru, scale)?;
        self.textual_gru.add_scaled(&other.textual_gru, scale)?;
        self.image_head.add_scaled(&other.image_head, scale)?;
        self.word_head.add_scaled(&other.word_head, scale)?;
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.embeddings.scale(s);
        for (_, m) in self.visual_gru.tensors_mut() {
            m.scale(s);
        }
        for (_, m) in self.textual_gru.tensors_mut() {
            m.scale(s);
        }
        self.image_head.scale(s);
        self.word_head.scale(s);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Euclidean norm over every parameter entry.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, m)| m.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Writes the binary checkpoint: magic "IMGN", format version, the four
    /// dimensions as little-endian u32, then the fifteen matrices from
    /// [`ModelParams::tensors`] row-major as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let dims = self.dims();
        w.write_all(CHECKPOINT_MAGIC)?;
        binio::write_u32(&mut w, CHECKPOINT_VERSION)?;
        binio::write_u32(&mut w, dims.vocab_size as u32)?;
        binio::write_u32(&mut w, dims.embedding_dim as u32)?;
        binio::write_u32(&mut w, dims.hidden_dim as u32)?;
        binio::write_u32(&mut w, dims.feature_dim as u32)?;
        for (_, m) in self.tensors() {
            binio::write_f64_slice(&mut w, m.data())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ModelParams::save`]. Rejects wrong
    /// magic bytes, unknown versions, and files whose size disagrees with the
    /// header.
    pub fn load(path: &Path) -> Result<ModelParams> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint too short for magic bytes".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let version = binio::read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let dims = ModelDims {
            vocab_size: binio::read_u32(&mut r)? as usize,
            embedding_dim: binio::read_u32(&mut r)? as usize,
            hidden_dim: binio::read_u32(&mut r)? as usize,
            feature_dim: binio::read_u32(&mut r)? as usize,
        };
        let mut params = ModelParams::zeros(dims);
        for (_, m) in params.tensors_mut() {
            let n = m.rows() * m.cols();
            let data = binio::read_f64_vec(&mut r, n)?;
            m.data_mut().copy_from_slice(&data);
        }
        binio::expect_eof(&mut r, "checkpoint")?;
        Ok(params)
    }
}

fn visual_name(field: &'static str) -> &'static str {
    match field {
        "w_update" => "visual_gru.w_update",
        "u_update" => "visual_gru.u_update",
        "w_reset" => "visual_gru.w_reset",
        "u_reset" => "visual_gru.u_reset",
        "w_cand" => "visual_gru.w_cand",
        "u_cand" => "visual_gru.u_cand",
        _ => unreachable!(),
    }
}

fn textual_name(field: &'static str) -> &'static str {
    match field {
        "w_update" => "textual_gru.w_update",
        "u_update" => "textual_gru.u_update",
        "w_reset" => "textual_gru.w_reset",
        "u_reset" => "textual_gru.u_reset",
        "w_cand" => "textual_gru.w_cand",
        "u_cand" => "textual_gru.u_cand",
        _ => unreachable!(),
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub visual: Vec<GruStepTrace>,
    pub textual: Vec<GruStepTrace>,
    /// One next-word distribution per position; the one at the final position
    /// has no following token and is never scored.
    pub word_dists: Vec<Vector>,
    /// Clipped projection of the final visual hidden state.
    pub predicted_image: Vector,
}

/// Runs both pathways over an end-terminated sentence.
pub fn forward(
    params: &ModelParams,
    sentence: &[usize],
    act: &ActivationConfig,
) -> Result<ForwardTrace> {
    if sentence.is_empty() {
        return Err(Error::Input("cannot run forward on an empty sentence".into()));
    }
    let inputs: Vec<Vector> = sentence
        .iter()
        .map(|&t| embed(&params.embeddings, t))
        .collect::<Result<_>>()?;
    let visual = gru_sequence(&params.visual_gru, &inputs, act)?;
    let textual = gru_sequence(&params.textual_gru, &inputs, act)?;
    let word_dists = textual
        .iter()
        .map(|tr| textual_head(&params.word_head, &tr.hidden))
        .collect::<Result<_>>()?;
    let predicted_image = visual_head(
        &params.image_head,
        &visual.last().expect("sentence is nonempty").hidden,
        act,
    )?;
    Ok(ForwardTrace { visual, textual, word_dists, predicted_image })
}

/// Loss terms for one example.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    /// alpha * textual + (1 - alpha) * visual.
    pub total: f64,
    /// Mean negative log-likelihood of the next token, summed over positions
    /// with a target and normalized by full sentence length.
    pub textual: f64,
    /// Mean squared error of the predicted image features.
    pub visual: f64,
    /// How many target probabilities were clamped up to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Composite loss for one traced sentence against its image feature target.
pub fn loss(
    trace: &ForwardTrace,
    sentence: &[usize],
    target: &Vector,
    alpha: f64,
) -> Result<LossBreakdown> {
    let tau = sentence.len();
    if trace.word_dists.len() != tau {
        return Err(Error::Input(format!(
            "trace has {} positions but sentence has {tau} tokens",
            trace.word_dists.len()
        )));
    }
    if trace.predicted_image.dim() != target.dim() {
        return Err(Error::Shape {
            op: "visual_loss",
            lhs_rows: trace.predicted_image.dim(),
            lhs_cols: 1,
            rhs_rows: target.dim(),
            rhs_cols: 1,
        });
    }

    let mut clamped = 0;
    let mut nll = 0.0;
    for t in 0..tau.saturating_sub(1) {
        let y = sentence[t + 1];
        let p = trace.word_dists[t].as_slice()[y];
        let p = if p < PROB_FLOOR {
            clamped += 1;
            PROB_FLOOR
        } else {
            p
        };
        nll -= p.ln();
    }
    let textual = nll / tau as f64;

    let k = target.dim();
    let mut sq = 0.0;
    for (p, t) in trace.predicted_image.as_slice().iter().zip(target.as_slice()) {
        let d = p - t;
        sq += d * d;
    }
    let visual = sq / k as f64;

    Ok(LossBreakdown {
        total: alpha * textual + (1.0 - alpha) * visual,
        textual,
        visual,
        clamped,
    })
}

/// Exact gradients of the composite loss for one example.
///
/// Pathways with zero weight are skipped outright, so a silenced pathway's
/// gradients (and its head's) are bitwise zero. The embedding table receives
/// contributions from every live pathway at the columns of the sentence's
/// tokens.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    sentence: &[usize],
    target: &Vector,
    alpha: f64,
    act: &ActivationConfig,
) -> Result<ModelParams> {
    let tau = sentence.len();
    if trace.visual.len() != tau || trace.textual.len() != tau || trace.word_dists.len() != tau {
        return Err(Error::Input(format!(
            "trace length {} does not match sentence length {tau}",
            trace.visual.len()
        )));
    }
    let dims = params.dims();
    let mut grads = ModelParams::zeros(dims);

    let mut visual_input_grads: Option<Vec<Vector>> = None;
    if alpha != 1.0 {
        let weight = 1.0 - alpha;
        let k = target.dim();
        let last_hidden = &trace.visual[tau - 1].hidden;
        // d/d(pre-activation) of weight * mean squared error, through the clip.
        let mut g_head = Vector::zeros(k);
        for i in 0..k {
            let out = trace.predicted_image.as_slice()[i];
            let diff = out - target.as_slice()[i];
            g_head.as_mut_slice()[i] =
                weight * (2.0 / k as f64) * diff * act.clip_mask(out);
        }
        grads.image_head.add_outer(&g_head, last_hidden, 1.0)?;
        let mut grad_h = vec![Vector::zeros(dims.hidden_dim); tau];
        grad_h[tau - 1] = params.image_head.matvec_t(&g_head)?;
        let (cell_grads, input_grads) =
            gru_backward(&params.visual_gru, &trace.visual, &grad_h, act)?;
        grads.visual_gru = cell_grads;
        visual_input_grads = Some(input_grads);
    }

    let mut textual_input_grads: Option<Vec<Vector>> = None;
    if alpha != 0.0 {
        let scale = alpha / tau as f64;
        let mut grad_h = vec![Vector::zeros(dims.hidden_dim); tau];
        for t in 0..tau - 1 {
            let y = sentence[t + 1];
            let p = &trace.word_dists[t];
            // A clamped target sits on the flat part of the clamped log, so
            // it contributes no gradient.
            if p.as_slice()[y] < PROB_FLOOR {
                continue;
            }
            let mut g_logits = p.clone();
            g_logits.scale(scale);
            g_logits.as_mut_slice()[y] -= scale;
            grads.word_head.add_outer(&g_logits, &trace.textual[t].hidden, 1.0)?;
            grad_h[t] = params.word_head.matvec_t(&g_logits)?;
        }
        let (cell_grads, input_grads) =
            gru_backward(&params.textual_gru, &trace.textual, &grad_h, act)?;
        grads.textual_gru = cell_grads;
        textual_input_grads = Some(input_grads);
    }

    for (t, &token) in sentence.iter().enumerate() {
        if let Some(gs) = &visual_input_grads {
            grads.embeddings.add_to_column(token, &gs[t], 1.0)?;
        }
        if let Some(gs) = &textual_input_grads {
            grads.embeddings.add_to_column(token, &gs[t], 1.0)?;
        }
    }

    Ok(grads)
}

/// Forward, loss and backward in one call; what training loops consume.
pub fn example_gradients(
    params: &ModelParams,
    sentence: &[usize],
    target: &Vector,
    alpha: f64,
    act: &ActivationConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let trace = forward(params, sentence, act)?;
    let breakdown = loss(&trace, sentence, target, alpha)?;
    let grads = backward(params, &trace, sentence, target, alpha, act)?;
    Ok((breakdown, grads))
}

/// Final hidden state of the visual pathway, before the image projection.
/// This is the sentence representation used by paraphrase retrieval.
pub fn encode_visual(
    params: &ModelParams,
    sentence: &[usize],
    act: &ActivationConfig,
) -> Result<Vector> {
    if sentence.is_empty() {
        return Err(Error::Input("cannot encode an empty sentence".into()));
    }
    let mut h = Vector::zeros(params.visual_gru.hidden_dim());
    for &token in sentence {
        let x = embed(&params.embeddings, token)?;
        let tr = crate::layers::gru_step(&params.visual_gru, &h, &x, act)?;
        h = tr.hidden;
    }
    Ok(h)
}

/// Predicted image features for a single word presented as a one-token
/// Predicted image features for a sentence: the visual encoding pushed
/// through the clipped projection, skipping the textual pathway's work.
pub fn predict_image(
    params: &ModelParams,
    sentence: &[usize],
    act: &ActivationConfig,
) -> Result<Vector> {
    let h = encode_visual(params, sentence, act)?;
    visual_head(&params.image_head, &h, act)
}

/// Predicted image features for a single word presented as a one-token
/// sentence. No end sentinel is appended; callers that want one append it
/// themselves and call [`forward`].
pub fn project_word(
    params: &ModelParams,
    word: usize,
    act: &ActivationConfig,
) -> Result<Vector> {
    let h = encode_visual(params, &[word], act)?;
    visual_head(&params.image_head, &h, act)
}
