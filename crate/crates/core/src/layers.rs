//! Activations, the gated recurrent cell, and the two output heads.
//!
//! The recurrent cell follows the gated-recurrent-unit recipe with two
//! deliberate quirks, kept exactly as the models in this crate expect them:
//! the gates use a steepened sigmoid (slope 3.75 inside the exponential) and
//! the candidate activation is a rectifier clipped to [0, 5]. There are no
//! bias vectors anywhere. One step computes
//!
//! ```text
//! z = gate(Wz x + Uz h_prev)            update gate
//! r = gate(Wr x + Ur h_prev)            reset gate
//! c = clip(Wc x + Uc (r . h_prev))      candidate state
//! h = (1 - z) . h_prev + z . c          new hidden state
//! ```
//!
//! where `.` is elementwise product. Every step returns a [`GruStepTrace`]
//! holding the intermediates; [`gru_backward`] consumes the trace sequence and
//! replays it in reverse for exact gradients, including the paths through the
//! gates and through time.

use crate::error::{Error, Result};
use crate::numcore::{init_matrix, Matrix, Rng, Vector};

/// Activation constants: gate sigmoid slope and candidate clip range.
#[derive(Debug, Clone, Copy)]
pub struct ActivationConfig {
    pub gate_slope: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig { gate_slope: 3.75, clip_lo: 0.0, clip_hi: 5.0 }
    }
}

impl ActivationConfig {
    /// Steepened sigmoid: 1 / (1 + exp(-slope * z)).
    pub fn gate(&self, z: f64) -> f64 {
        1.0 / (1.0 + (-self.gate_slope * z).exp())
    }

    /// Derivative of the gate with respect to its pre-activation, expressed
    /// through the gate output g: slope * g * (1 - g).
    pub fn gate_deriv(&self, g: f64) -> f64 {
        self.gate_slope * g * (1.0 - g)
    }

    /// Clipped rectifier: 0.5 * (z + |z|) clipped to [clip_lo, clip_hi].
    pub fn clip(&self, z: f64) -> f64 {
        (0.5 * (z + z.abs())).clamp(self.clip_lo, self.clip_hi)
    }

    /// Subgradient of the clipped rectifier, recovered from its output:
    /// 1 strictly inside (clip_lo, clip_hi), 0 outside and at the kinks.
    pub fn clip_mask(&self, out: f64) -> f64 {
        if out > self.clip_lo && out < self.clip_hi {
            1.0
        } else {
            0.0
        }
    }
}

/// Steepened sigmoid with the default slope of 3.75.
pub fn steep_sigmoid(z: f64) -> f64 {
    ActivationConfig::default().gate(z)
}

/// Rectifier clipped to the default [0, 5] range.
pub fn clipped_relu(z: f64) -> f64 {
    ActivationConfig::default().clip(z)
}

/// Weights of one recurrent cell: an input-to-hidden and a hidden-to-hidden
/// matrix per gate plus the candidate. No biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_update: Matrix,
    pub u_update: Matrix,
    pub w_reset: Matrix,
    pub u_reset: Matrix,
    pub w_cand: Matrix,
    pub u_cand: Matrix,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruParams {
            w_update: Matrix::zeros(hidden_dim, input_dim),
            u_update: Matrix::zeros(hidden_dim, hidden_dim),
            w_reset: Matrix::zeros(hidden_dim, input_dim),
            u_reset: Matrix::zeros(hidden_dim, hidden_dim),
            w_cand: Matrix::zeros(hidden_dim, input_dim),
            u_cand: Matrix::zeros(hidden_dim, hidden_dim),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        GruParams {
            w_update: init_matrix(hidden_dim, input_dim, scale, rng),
            u_update: init_matrix(hidden_dim, hidden_dim, scale, rng),
            w_reset: init_matrix(hidden_dim, input_dim, scale, rng),
            u_reset: init_matrix(hidden_dim, hidden_dim, scale, rng),
            w_cand: init_matrix(hidden_dim, input_dim, scale, rng),
            u_cand: init_matrix(hidden_dim, hidden_dim, scale, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_update.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_update.rows()
    }

    /// The six weight matrices with role names, in a fixed order (update,
    /// reset, candidate; input-to-hidden before hidden-to-hidden).
    pub fn tensors(&self) -> [(&'static str, &Matrix); 6] {
        [
            ("w_update", &self.w_update),
            ("u_update", &self.u_update),
            ("w_reset", &self.w_reset),
            ("u_reset", &self.u_reset),
            ("w_cand", &self.w_cand),
            ("u_cand", &self.u_cand),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 6] {
        [
            ("w_update", &mut self.w_update),
            ("u_update", &mut self.u_update),
            ("w_reset", &mut self.w_reset),
            ("u_reset", &mut self.u_reset),
            ("w_cand", &mut self.w_cand),
            ("u_cand", &mut self.u_cand),
        ]
    }

    pub fn add_scaled(&mut self, other: &GruParams, scale: f64) -> Result<()> {
        self.w_update.add_scaled(&other.w_update, scale)?;
        self.u_update.add_scaled(&other.u_update, scale)?;
        self.w_reset.add_scaled(&other.w_reset, scale)?;
        self.u_reset.add_scaled(&other.u_reset, scale)?;
        self.w_cand.add_scaled(&other.w_cand, scale)?;
        self.u_cand.add_scaled(&other.u_cand, scale)?;
        Ok(())
    }
}

/// Intermediates of one recurrent step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepTrace {
    pub update: Vector,
    pub reset: Vector,
    pub candidate: Vector,
    pub hidden: Vector,
    pub input: Vector,
    pub hidden_prev: Vector,
}

/// One forward step of the cell.
pub fn gru_step(
    params: &GruParams,
    h_prev: &Vector,
    x: &Vector,
    act: &ActivationConfig,
) -> Result<GruStepTrace> {
    if x.dim() != params.input_dim() || h_prev.dim() != params.hidden_dim() {
        return Err(Error::Shape {
            op: "gru_step",
            lhs_rows: params.hidden_dim(),
            lhs_cols: params.input_dim(),
            rhs_rows: h_prev.dim(),
            rhs_cols: x.dim(),
        });
    }
    let mut update = params.w_update.matvec(x)?;
    update.add_scaled(&params.u_update.matvec(h_prev)?, 1.0)?;
    for v in update.as_mut_slice() {
        *v = act.gate(*v);
    }

    let mut reset = params.w_reset.matvec(x)?;
    reset.add_scaled(&params.u_reset.matvec(h_prev)?, 1.0)?;
    for v in reset.as_mut_slice() {
        *v = act.gate(*v);
    }

    let gated_prev = reset.hadamard(h_prev)?;
    let mut candidate = params.w_cand.matvec(x)?;
    candidate.add_scaled(&params.u_cand.matvec(&gated_prev)?, 1.0)?;
    for v in candidate.as_mut_slice() {
        *v = act.clip(*v);
    }

    let mut hidden = Vector::zeros(params.hidden_dim());
    for i in 0..params.hidden_dim() {
        let z = update.as_slice()[i];
        hidden.as_mut_slice()[i] =
            (1.0 - z) * h_prev.as_slice()[i] + z * candidate.as_slice()[i];
    }

    Ok(GruStepTrace {
        update,
        reset,
        candidate,
        hidden,
        input: x.clone(),
        hidden_prev: h_prev.clone(),
    })
}

/// Runs the cell over a full input sequence starting from a zero hidden state.
pub fn gru_sequence(
    params: &GruParams,
    inputs: &[Vector],
    act: &ActivationConfig,
) -> Result<Vec<GruStepTrace>> {
    let mut traces = Vec::with_capacity(inputs.len());
    let mut h = Vector::zeros(params.hidden_dim());
    for x in inputs {
        let trace = gru_step(params, &h, x, act)?;
        h = trace.hidden.clone();
        traces.push(trace);
    }
    Ok(traces)
}

/// Exact reverse-mode differentiation through a traced sequence.
///
/// `grad_h[t]` is the loss gradient arriving directly at hidden state t (from
/// whatever heads read it); gradients flowing backward through time are added
/// internally. Returns the parameter gradients and the gradient with respect
/// to each step's input vector. The initial hidden state is a constant zero,
/// so its gradient is dropped.
pub fn gru_backward(
    params: &GruParams,
    traces: &[GruStepTrace],
    grad_h: &[Vector],
    act: &ActivationConfig,
) -> Result<(GruParams, Vec<Vector>)> {
    if traces.len() != grad_h.len() {
        return Err(Error::Input(format!(
            "gru_backward: {} traces but {} hidden-state gradients",
            traces.len(),
            grad_h.len()
        )));
    }
    let h_dim = params.hidden_dim();
    let x_dim = params.input_dim();
    let mut grads = GruParams::zeros(x_dim, h_dim);
    let mut input_grads = vec![Vector::zeros(x_dim); traces.len()];
    // Gradient flowing from step t into h_{t-1}.
    let mut carry = Vector::zeros(h_dim);

    for t in (0..traces.len()).rev() {
        let tr = &traces[t];
        let mut gh = grad_h[t].clone();
        gh.add_scaled(&carry, 1.0)?;

        let z = tr.update.as_slice();
        let r = tr.reset.as_slice();
        let c = tr.candidate.as_slice();
        let h_prev = tr.hidden_prev.as_slice();

        // h = (1 - z) . h_prev + z . c
        let mut g_update = Vector::zeros(h_dim);
        let mut g_cand_out = Vector::zeros(h_dim);
        let mut g_prev = Vector::zeros(h_dim);
        for i in 0..h_dim {
            let g = gh.as_slice()[i];
            g_update.as_mut_slice()[i] = g * (c[i] - h_prev[i]);
            g_cand_out.as_mut_slice()[i] = g * z[i];
            g_prev.as_mut_slice()[i] = g * (1.0 - z[i]);
        }

        // Candidate: c = clip(Wc x + Uc (r . h_prev))
        let mut g_cand_pre = g_cand_out;
        for (g, out) in g_cand_pre.as_mut_slice().iter_mut().zip(c) {
            *g *= act.clip_mask(*out);
        }
        let gated_prev = tr.reset.hadamard(&tr.hidden_prev)?;
        grads.w_cand.add_outer(&g_cand_pre, &tr.input, 1.0)?;
        grads.u_cand.add_outer(&g_cand_pre, &gated_prev, 1.0)?;
        let g_gated = params.u_cand.matvec_t(&g_cand_pre)?;
        let mut g_reset = Vector::zeros(h_dim);
        for i in 0..h_dim {
            g_reset.as_mut_slice()[i] = g_gated.as_slice()[i] * h_prev[i];
            g_prev.as_mut_slice()[i] += g_gated.as_slice()[i] * r[i];
        }
        input_grads[t].add_scaled(&params.w_cand.matvec_t(&g_cand_pre)?, 1.0)?;

        // Reset gate: r = gate(Wr x + Ur h_prev)
        let mut g_reset_pre = g_reset;
        for (g, out) in g_reset_pre.as_mut_slice().iter_mut().zip(r) {
            *g *= act.gate_deriv(*out);
        }
        grads.w_reset.add_outer(&g_reset_pre, &tr.input, 1.0)?;
        grads.u_reset.add_outer(&g_reset_pre, &tr.hidden_prev, 1.0)?;
        g_prev.add_scaled(&params.u_reset.matvec_t(&g_reset_pre)?, 1.0)?;
        input_grads[t].add_scaled(&params.w_reset.matvec_t(&g_reset_pre)?, 1.0)?;

        // Update gate: z = gate(Wz x + Uz h_prev)
        let mut g_update_pre = g_update;
        for (g, out) in g_update_pre.as_mut_slice().iter_mut().zip(z) {
            *g *= act.gate_deriv(*out);
        }
        grads.w_update.add_outer(&g_update_pre, &tr.input, 1.0)?;
        grads.u_update.add_outer(&g_update_pre, &tr.hidden_prev, 1.0)?;
        g_prev.add_scaled(&params.u_update.matvec_t(&g_update_pre)?, 1.0)?;
        input_grads[t].add_scaled(&params.w_update.matvec_t(&g_update_pre)?, 1.0)?;

        carry = g_prev;
    }

    Ok((grads, input_grads))
}

/// Embedding lookup: column `token` of the embedding table.
pub fn embed(embeddings: &Matrix, token: usize) -> Result<Vector> {
    if token >= embeddings.cols() {
        return Err(Error::Vocab { token, vocab_size: embeddings.cols() });
    }
    Ok(embeddings.column(token))
}

/// Image head: clipped rectifier over a linear projection of a hidden state.
pub fn visual_head(proj: &Matrix, h: &Vector, act: &ActivationConfig) -> Result<Vector> {
    let mut out = proj.matvec(h)?;
    for v in out.as_mut_slice() {
        *v = act.clip(*v);
    }
    Ok(out)
}

/// Word head: softmax over a linear projection of a hidden state. The max
/// logit is subtracted before exponentiation so large logits cannot overflow.
pub fn textual_head(proj: &Matrix, h: &Vector) -> Result<Vector> {
    let logits = proj.matvec(h)?;
    Ok(softmax(&logits))
}

/// Numerically stable softmax.
pub fn softmax(logits: &Vector) -> Vector {
    let max = logits.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(logits.dim());
    let mut sum = 0.0;
    for &v in logits.as_slice() {
        let e = (v - max).exp();
        sum += e;
        out.push(e);
    }
    for v in &mut out {
        *v /= sum;
    }
    Vector::from_vec(out)
}
