//! Ridge-regression baseline: image features as a linear function of
//! bag-of-words counts.
//!
//! The baseline ignores word order entirely. A sentence becomes a vector of
//! token counts (the end sentinel is excluded, everything else counts), and
//! the model is `features = W * counts + intercept`, fit in closed form by
//! the normal equations with an L2 penalty on `W` only; the intercept is
//! never penalized. Because the input is a count vector, scrambling a
//! sentence cannot change the prediction, bit for bit.

use crate::binio;
use crate::error::{Error, Result};
use crate::model::CHECKPOINT_VERSION;
use crate::numcore::{Matrix, Vector};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Magic bytes opening a baseline checkpoint.
pub const BASELINE_MAGIC: &[u8; 4] = b"IMGL";

/// Fitted baseline: `predict(x) = weights * x + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegParams {
    /// feature_dim x vocab_size; column w is the fitted feature direction of
    /// word w, which doubles as the baseline's word vector.
    pub weights: Matrix,
    /// feature_dim.
    pub intercept: Vector,
}

impl LinRegParams {
    pub fn vocab_size(&self) -> usize {
        self.weights.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    /// The baseline's vector for one word: the corresponding column of the
    /// weight matrix.
    pub fn word_vector(&self, token: usize) -> Result<Vector> {
        if token >= self.vocab_size() {
            return Err(Error::Vocab { token, vocab_size: self.vocab_size() });
        }
        Ok(self.weights.column(token))
    }

    /// Binary checkpoint: magic "IMGL", format version, then vocab_size, 0, 0,
    /// feature_dim as little-endian u32 (the zeros stand where the recurrent
    /// model's embedding and hidden sizes go; the baseline has neither),
    /// then the weight matrix row-major and the intercept as little-endian
    /// f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(BASELINE_MAGIC)?;
        binio::write_u32(&mut w, CHECKPOINT_VERSION)?;
        binio::write_u32(&mut w, self.vocab_size() as u32)?;
        binio::write_u32(&mut w, 0)?;
        binio::write_u32(&mut w, 0)?;
        binio::write_u32(&mut w, self.feature_dim() as u32)?;
        binio::write_f64_slice(&mut w, self.weights.data())?;
        binio::write_f64_slice(&mut w, self.intercept.as_slice())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LinRegParams> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint too short for magic bytes".into()))?;
        if &magic != BASELINE_MAGIC {
            return Err(Error::Format(format!(
                "bad baseline checkpoint magic {magic:?}, expected {BASELINE_MAGIC:?}"
            )));
        }
        let version = binio::read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let vocab_size = binio::read_u32(&mut r)? as usize;
        let embedding_dim = binio::read_u32(&mut r)? as usize;
        let hidden_dim = binio::read_u32(&mut r)? as usize;
        let feature_dim = binio::read_u32(&mut r)? as usize;
        if embedding_dim != 0 || hidden_dim != 0 {
            return Err(Error::Format(
                "baseline checkpoint with nonzero recurrent dimensions".into(),
            ));
        }
        let weights = Matrix::from_vec(
            feature_dim,
            vocab_size,
            binio::read_f64_vec(&mut r, feature_dim * vocab_size)?,
        )?;
        let intercept = Vector::from_vec(binio::read_f64_vec(&mut r, feature_dim)?);
        binio::expect_eof(&mut r, "baseline checkpoint")?;
        Ok(LinRegParams { weights, intercept })
    }
}

/// Token counts of a sentence over a fixed vocabulary. The end sentinel does
/// not count; every other token does, unknowns included.
pub fn bow(sentence: &[usize], vocab_size: usize, end_token: usize) -> Result<Vector> {
    let mut counts = Vector::zeros(vocab_size);
    for &t in sentence {
        if t >= vocab_size {
            return Err(Error::Vocab { token: t, vocab_size });
        }
        if t == end_token {
            continue;
        }
        counts.as_mut_slice()[t] += 1.0;
    }
    Ok(counts)
}

/// Closed-form ridge fit of `targets ~ weights * inputs + intercept`.
///
/// Builds the normal equations over the design matrix augmented with a
/// constant column, adds `lambda` to the diagonal of every coefficient except
/// the intercept's, and solves by Cholesky factorization. A system that is
/// not positive definite (rank-deficient data with `lambda = 0`) is an error
/// suggesting a positive `lambda`.
pub fn fit_ridge(inputs: &[Vector], targets: &[Vector], lambda: f64) -> Result<LinRegParams> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Input(format!(
            "ridge fit needs matching nonempty inputs and targets, got {} and {}",
            inputs.len(),
            targets.len()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let d = inputs[0].dim();
    let k = targets[0].dim();
    for x in inputs {
        if x.dim() != d {
            return Err(Error::Format(
                "ridge fit inputs disagree on dimension".into(),
            ));
        }
    }
    for y in targets {
        if y.dim() != k {
            return Err(Error::Format(
                "ridge fit targets disagree on dimension".into(),
            ));
        }
    }

    // Gram matrix of [X | 1] plus the penalty, and the matching moment matrix.
    let n = d + 1;
    let mut gram = Matrix::zeros(n, n);
    let mut moment = Matrix::zeros(n, k);
    for (x, y) in inputs.iter().zip(targets) {
        for i in 0..d {
            let xi = x.as_slice()[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..d {
                gram.set(i, j, gram.get(i, j) + xi * x.as_slice()[j]);
            }
            gram.set(i, d, gram.get(i, d) + xi);
            for c in 0..k {
                moment.set(i, c, moment.get(i, c) + xi * y.as_slice()[c]);
            }
        }
        gram.set(d, d, gram.get(d, d) + 1.0);
        for c in 0..k {
            moment.set(d, c, moment.get(d, c) + y.as_slice()[c]);
        }
    }
    for j in 0..d {
        gram.set(d, j, gram.get(j, d)); // symmetrize the constant row
        gram.set(j, j, gram.get(j, j) + lambda); // intercept stays unpenalized
    }

    let solution = cholesky_solve(&gram, &moment)?;

    // solution is (d+1) x k with the intercept in the last row; weights are
    // stored feature-major.
    let mut weights = Matrix::zeros(k, d);
    for c in 0..k {
        for j in 0..d {
            weights.set(c, j, solution.get(j, c));
        }
    }
    let mut intercept = Vector::zeros(k);
    for c in 0..k {
        intercept.as_mut_slice()[c] = solution.get(d, c);
    }
    Ok(LinRegParams { weights, intercept })
}

/// `weights * x + intercept`. No clipping: the baseline's output is the raw
/// affine map.
pub fn predict(params: &LinRegParams, x: &Vector) -> Result<Vector> {
    let mut out = params.weights.matvec(x)?;
    out.add_scaled(&params.intercept, 1.0)?;
    Ok(out)
}

/// Sum of squared residuals plus the weight penalty; the quantity
/// [`fit_ridge`] minimizes. Exposed for tests that probe optimality.
pub fn ridge_objective(
    params: &LinRegParams,
    inputs: &[Vector],
    targets: &[Vector],
    lambda: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let p = predict(params, x)?;
        for (a, b) in p.as_slice().iter().zip(y.as_slice()) {
            let d = a - b;
            total += d * d;
        }
    }
    total += lambda * params.weights.data().iter().map(|w| w * w).sum::<f64>();
    Ok(total)
}

/// Solves `m * x = rhs` for symmetric positive definite `m` by Cholesky
/// factorization. Fails with a rank-deficiency error when a pivot is not
/// positive.
#[allow(clippy::needless_range_loop)]
fn cholesky_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let mut diag_scale: f64 = 0.0;
    for i in 0..n {
        diag_scale = diag_scale.max(m.get(i, i).abs());
    }
    let tol = 1e-12 * diag_scale.max(1.0);

    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            if i == j {
                if s <= tol {
                    return Err(Error::Numerical(
                        "normal equations are rank deficient; refit with lambda > 0".into(),
                    ));
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }

    let k = rhs.cols();
    let mut out = Matrix::zeros(n, k);
    let mut y = vec![0.0; n];
    for c in 0..k {
        // L y = rhs[:, c]
        for i in 0..n {
            let mut s = rhs.get(i, c);
            for p in 0..i {
                s -= l.get(i, p) * y[p];
            }
            y[i] = s / l.get(i, i);
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in i + 1..n {
                s -= l.get(p, i) * out.get(p, c);
            }
            out.set(i, c, s / l.get(i, i));
        }
    }
    Ok(out)
}
