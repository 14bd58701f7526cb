//! Differentiable operations.
//!
//! Every op validates shapes, computes the forward value eagerly, and pushes
//! a backward closure onto the tape. Backward closures return one gradient
//! buffer per parent, in parent order.

use super::Var;
use crate::error::{Error, Result};
use ndarray::ArrayView2;
use std::sync::Arc;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl Var {
    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "add", |a, b| a + b, |g| (g.to_vec(), g.to_vec()))
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(
            other,
            "sub",
            |a, b| a - b,
            |g| (g.to_vec(), g.iter().map(|v| -v).collect()),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.check_same_tape(other, "mul")?;
        if self.shape() != other.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let a = self.shared_data();
        let b = other.shared_data();
        let data: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let (ca, cb) = (Arc::clone(&a), Arc::clone(&b));
        Ok(self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id(), other.id()],
            Box::new(move |g| {
                let da = g.iter().zip(cb.iter()).map(|(gi, bi)| gi * bi).collect();
                let db = g.iter().zip(ca.iter()).map(|(gi, ai)| gi * ai).collect();
                vec![da, db]
            }),
        ))
    }

    fn binary_elementwise(
        &self,
        other: &Var,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        back: fn(&[f64]) -> (Vec<f64>, Vec<f64>),
    ) -> Result<Var> {
        self.check_same_tape(other, op)?;
        if self.shape() != other.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id(), other.id()],
            Box::new(move |g| {
                let (da, db) = back(g);
                vec![da, db]
            }),
        ))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Var {
        let data: Vec<f64> = self.data().iter().map(|v| v * c).collect();
        self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id()],
            Box::new(move |g| vec![g.iter().map(|v| v * c).collect()]),
        )
    }

    /// Per-column multiplication by constant weights (no gradient to the
    /// weights); `self` is `[rows, cols]` row-major.
    pub fn scale_cols(&self, weights: &[f64]) -> Result<Var> {
        let cols = *self.shape().last().ok_or_else(|| {
            shape_err("scale_cols", "input must have at least one axis".into())
        })?;
        if weights.len() != cols {
            return Err(shape_err(
                "scale_cols",
                format!("{} weights vs {} columns", weights.len(), cols),
            ));
        }
        let w = weights.to_vec();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * w[i % cols])
            .collect();
        let wb = w.clone();
        Ok(self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id()],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * wb[i % cols])
                    .collect()]
            }),
        ))
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`, row-major.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_same_tape(other, "matmul")?;
        let (&[m, k], &[k2, n]) = (&self.shape()[..], &other.shape()[..]) else {
            return Err(shape_err(
                "matmul",
                format!("need 2-D operands, got {:?} x {:?}", self.shape(), other.shape()),
            ));
        };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dims disagree: {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let a = self.shared_data();
        let b = other.shared_data();
        let data = mat_dot(&a, m, k, &b, k, n);
        let (ca, cb) = (Arc::clone(&a), Arc::clone(&b));
        Ok(self.tape().emit(
            data,
            vec![m, n],
            vec![self.id(), other.id()],
            Box::new(move |g| {
                // dA = g . B^T ; dB = A^T . g
                let gv = ArrayView2::from_shape((m, n), g).unwrap();
                let bv = ArrayView2::from_shape((k, n), &cb[..]).unwrap();
                let av = ArrayView2::from_shape((m, k), &ca[..]).unwrap();
                let da = gv.dot(&bv.t());
                let db = av.t().dot(&gv);
                vec![
                    da.into_raw_vec_and_offset().0,
                    db.into_raw_vec_and_offset().0,
                ]
            }),
        ))
    }

    /// Broadcasts a bias over the last axis: `y[..., o] = x[..., o] + b[o]`.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        self.check_same_tape(bias, "add_bias")?;
        let o = *self.shape().last().ok_or_else(|| {
            shape_err("add_bias", "input must have at least one axis".into())
        })?;
        if bias.shape() != [o] {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} vs last axis {}", bias.shape(), o),
            ));
        }
        let b = bias.shared_data();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % o])
            .collect();
        Ok(self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id(), bias.id()],
            Box::new(move |g| {
                let mut db = vec![0.0; o];
                for (i, v) in g.iter().enumerate() {
                    db[i % o] += v;
                }
                vec![g.to_vec(), db]
            }),
        ))
    }

    /// Rectified linear unit.
    pub fn relu(&self) -> Var {
        let x = self.shared_data();
        let data: Vec<f64> = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id()],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect()]
            }),
        )
    }

    /// Elementwise smooth-L1: `0.5 d^2 / beta` for `|d| < beta`, else
    /// `|d| - 0.5 beta`.
    pub fn smooth_l1(&self, beta: f64) -> Result<Var> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidConfig(format!("smooth_l1 beta must be > 0, got {beta}")));
        }
        let x = self.shared_data();
        let data: Vec<f64> = x
            .iter()
            .map(|&d| {
                if d.abs() < beta {
                    0.5 * d * d / beta
                } else {
                    d.abs() - 0.5 * beta
                }
            })
            .collect();
        Ok(self.tape().emit(
            data,
            self.shape().to_vec(),
            vec![self.id()],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(gi, &d)| {
                        gi * if d.abs() < beta { d / beta } else { d.signum() }
                    })
                    .collect()]
            }),
        ))
    }

    /// View with a new shape (same element count, zero copy).
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), new_shape),
            ));
        }
        Ok(self.tape().emit_shared(
            self.shared_data(),
            new_shape.to_vec(),
            vec![self.id()],
            Box::new(move |g| vec![g.to_vec()]),
        ))
    }

    /// Cuts the gradient flow: same value, new leaf.
    pub fn detach(&self) -> Var {
        self.tape()
            .leaf_shared(self.shared_data(), self.shape())
            .expect("detach preserves shape")
    }

    /// Column slice of a `[rows, cols]` tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let &[rows, cols] = self.shape() else {
            return Err(shape_err("slice_cols", format!("need 2-D input, got {:?}", self.shape())));
        };
        if start + len > cols {
            return Err(shape_err(
                "slice_cols",
                format!("slice {start}..{} exceeds {cols} columns", start + len),
            ));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
        }
        Ok(self.tape().emit(
            data,
            vec![rows, len],
            vec![self.id()],
            Box::new(move |g| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![dx]
            }),
        ))
    }

    /// Tiles a `[b, c]` tensor into `[b, n, c]`.
    pub fn repeat_rows(&self, n: usize) -> Result<Var> {
        let &[b, c] = self.shape() else {
            return Err(shape_err("repeat_rows", format!("need 2-D input, got {:?}", self.shape())));
        };
        let x = self.data();
        let mut data = Vec::with_capacity(b * n * c);
        for bi in 0..b {
            for _ in 0..n {
                data.extend_from_slice(&x[bi * c..(bi + 1) * c]);
            }
        }
        Ok(self.tape().emit(
            data,
            vec![b, n, c],
            vec![self.id()],
            Box::new(move |g| {
                let mut dx = vec![0.0; b * c];
                for bi in 0..b {
                    for ni in 0..n {
                        let row = &g[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                        for (a, v) in dx[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Per-channel max over the point axis of `[b, n, c]`; gradient routes
    /// to the first maximal element per (batch, channel).
    pub fn global_max_pool(&self) -> Result<Var> {
        let &[b, n, c] = self.shape() else {
            return Err(shape_err("global_max_pool", format!("need 3-D input, got {:?}", self.shape())));
        };
        if n == 0 {
            return Err(shape_err("global_max_pool", "empty point axis".into()));
        }
        let x = self.data();
        let mut data = vec![f64::NEG_INFINITY; b * c];
        let mut argmax = vec![0usize; b * c];
        for bi in 0..b {
            for ni in 0..n {
                for ci in 0..c {
                    let v = x[(bi * n + ni) * c + ci];
                    let slot = bi * c + ci;
                    if v > data[slot] {
                        data[slot] = v;
                        argmax[slot] = ni;
                    }
                }
            }
        }
        Ok(self.tape().emit(
            data,
            vec![b, c],
            vec![self.id()],
            Box::new(move |g| {
                let mut dx = vec![0.0; b * n * c];
                for bi in 0..b {
                    for ci in 0..c {
                        let slot = bi * c + ci;
                        dx[(bi * n + argmax[slot]) * c + ci] = g[slot];
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Per-channel mean over the point axis of `[b, n, c]`.
    pub fn global_avg_pool(&self) -> Result<Var> {
        let &[b, n, c] = self.shape() else {
            return Err(shape_err("global_avg_pool", format!("need 3-D input, got {:?}", self.shape())));
        };
        if n == 0 {
            return Err(shape_err("global_avg_pool", "empty point axis".into()));
        }
        let x = self.data();
        let mut data = vec![0.0; b * c];
        for bi in 0..b {
            for ni in 0..n {
                for ci in 0..c {
                    data[bi * c + ci] += x[(bi * n + ni) * c + ci];
                }
            }
        }
        let inv = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= inv;
        }
        Ok(self.tape().emit(
            data,
            vec![b, c],
            vec![self.id()],
            Box::new(move |g| {
                let mut dx = vec![0.0; b * n * c];
                for bi in 0..b {
                    for ni in 0..n {
                        for ci in 0..c {
                            dx[(bi * n + ni) * c + ci] = g[bi * c + ci] * inv;
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Sums a `[rows, cols]` tensor along columns into `[rows]`.
    pub fn row_sum(&self) -> Result<Var> {
        let &[rows, cols] = self.shape() else {
            return Err(shape_err("row_sum", format!("need 2-D input, got {:?}", self.shape())));
        };
        let x = self.data();
        let data: Vec<f64> = (0..rows)
            .map(|r| x[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        Ok(self.tape().emit(
            data,
            vec![rows],
            vec![self.id()],
            Box::new(move |g| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols..(r + 1) * cols].fill(g[r]);
                }
                vec![dx]
            }),
        ))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean_all(&self) -> Var {
        let n = self.numel();
        let data = vec![self.data().iter().sum::<f64>() / n as f64];
        self.tape().emit(
            data,
            vec![1],
            vec![self.id()],
            Box::new(move |g| vec![vec![g[0] / n as f64; n]]),
        )
    }

    /// Applies the per-sample similarity block to per-sample points:
    /// `y[b,n,:] = M[b] x[b,n,:] + t[b]`, where `pose[b]` is the row-major
    /// 12-dim flattening of `[M | t]`.
    pub fn pose_points(&self, pose: &Var) -> Result<Var> {
        self.check_same_tape(pose, "pose_points")?;
        let &[b, n, 3] = self.shape() else {
            return Err(shape_err(
                "pose_points",
                format!("points must be [b,n,3], got {:?}", self.shape()),
            ));
        };
        if pose.shape() != [b, 12] {
            return Err(shape_err(
                "pose_points",
                format!("pose must be [{b},12], got {:?}", pose.shape()),
            ));
        }
        let x = self.shared_data();
        let p = pose.shared_data();
        let mut data = vec![0.0; b * n * 3];
        for bi in 0..b {
            let m = &p[bi * 12..(bi + 1) * 12];
            for ni in 0..n {
                let src = &x[(bi * n + ni) * 3..(bi * n + ni) * 3 + 3];
                let dst = &mut data[(bi * n + ni) * 3..(bi * n + ni) * 3 + 3];
                for i in 0..3 {
                    dst[i] = m[4 * i] * src[0]
                        + m[4 * i + 1] * src[1]
                        + m[4 * i + 2] * src[2]
                        + m[4 * i + 3];
                }
            }
        }
        let (cx, cp) = (Arc::clone(&x), Arc::clone(&p));
        Ok(self.tape().emit(
            data,
            vec![b, n, 3],
            vec![self.id(), pose.id()],
            Box::new(move |g| {
                let mut dx = vec![0.0; b * n * 3];
                let mut dp = vec![0.0; b * 12];
                for bi in 0..b {
                    let m = &cp[bi * 12..(bi + 1) * 12];
                    for ni in 0..n {
                        let base = (bi * n + ni) * 3;
                        let src = &cx[base..base + 3];
                        let go = &g[base..base + 3];
                        for i in 0..3 {
                            for j in 0..3 {
                                dx[base + j] += go[i] * m[4 * i + j];
                                dp[bi * 12 + 4 * i + j] += go[i] * src[j];
                            }
                            dp[bi * 12 + 4 * i + 3] += go[i];
                        }
                    }
                }
                vec![dx, dp]
            }),
        ))
    }
}

/// Concatenates 2-D tensors along the column axis.
pub fn concat_cols(parts: &[&Var]) -> Result<Var> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat_cols", "no operands".into()))?;
    let &[rows, _] = first.shape() else {
        return Err(shape_err("concat_cols", format!("need 2-D inputs, got {:?}", first.shape())));
    };
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        first.check_same_tape(p, "concat_cols")?;
        let &[r, c] = p.shape() else {
            return Err(shape_err("concat_cols", format!("need 2-D inputs, got {:?}", p.shape())));
        };
        if r != rows {
            return Err(shape_err("concat_cols", format!("row counts differ: {rows} vs {r}")));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &c) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
    }
    let back_widths = widths.clone();
    Ok(first.tape().emit(
        data,
        vec![rows, total],
        parts.iter().map(|p| p.id()).collect(),
        Box::new(move |g| {
            let mut out: Vec<Vec<f64>> =
                back_widths.iter().map(|&c| Vec::with_capacity(rows * c)).collect();
            for r in 0..rows {
                let mut offset = 0;
                for (buf, &c) in out.iter_mut().zip(&back_widths) {
                    buf.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    offset += c;
                }
            }
            out
        }),
    ))
}

/// Affine map `y = x w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
pub fn affine(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    x.matmul(w)?.add_bias(b)
}

/// Batch statistics captured by a training-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_biased: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

/// Training-mode batch normalization over the row axis of `[rows, cols]`.
///
/// Normalizes with the biased per-column variance; returns the statistics so
/// the caller can fold them into running buffers. Rejects `rows < 2`.
pub fn batch_norm_train(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    eps: f64,
) -> Result<(Var, BatchStats)> {
    x.check_same_tape(gamma, "batch_norm")?;
    x.check_same_tape(beta, "batch_norm")?;
    let &[rows, cols] = x.shape() else {
        return Err(shape_err("batch_norm", format!("need 2-D input, got {:?}", x.shape())));
    };
    if rows < 2 {
        return Err(shape_err(
            "batch_norm",
            format!("training-mode variance is undefined for batch size {rows}"),
        ));
    }
    if gamma.shape() != [cols] || beta.shape() != [cols] {
        return Err(shape_err(
            "batch_norm",
            format!("scale/offset must be [{cols}], got {:?}/{:?}", gamma.shape(), beta.shape()),
        ));
    }
    let xd = x.shared_data();
    let gd = gamma.shared_data();
    let bd = beta.shared_data();

    let inv_n = 1.0 / rows as f64;
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += xd[r * cols + c];
        }
    }
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let d = xd[r * cols + c] - mean[c];
            var[c] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v *= inv_n;
    }
    let var_unbiased: Vec<f64> = var
        .iter()
        .map(|v| v * rows as f64 / (rows as f64 - 1.0))
        .collect();

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; rows * cols];
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let h = (xd[r * cols + c] - mean[c]) * inv_std[c];
            xhat[r * cols + c] = h;
            data[r * cols + c] = gd[c] * h + bd[c];
        }
    }

    let stats = BatchStats {
        mean,
        var_biased: var,
        var_unbiased,
    };
    let xhat = Arc::new(xhat);
    let out = x.tape().emit(
        data,
        vec![rows, cols],
        vec![x.id(), gamma.id(), beta.id()],
        Box::new(move |g| {
            let mut dgamma = vec![0.0; cols];
            let mut dbeta = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    dgamma[c] += g[r * cols + c] * xhat[r * cols + c];
                    dbeta[c] += g[r * cols + c];
                }
            }
            // dx = gamma/std * (g - mean(g) - xhat * mean(g*xhat))
            let mut dx = vec![0.0; rows * cols];
            for c in 0..cols {
                let mg = dbeta[c] * inv_n;
                let mgx = dgamma[c] * inv_n;
                let k = gd[c] * inv_std[c];
                for r in 0..rows {
                    dx[r * cols + c] =
                        k * (g[r * cols + c] - mg - xhat[r * cols + c] * mgx);
                }
            }
            vec![dx, dgamma, dbeta]
        }),
    );
    Ok((out, stats))
}

/// Eval-mode batch normalization using frozen running statistics.
pub fn batch_norm_eval(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Var> {
    x.check_same_tape(gamma, "batch_norm_eval")?;
    x.check_same_tape(beta, "batch_norm_eval")?;
    let &[rows, cols] = x.shape() else {
        return Err(shape_err("batch_norm_eval", format!("need 2-D input, got {:?}", x.shape())));
    };
    if gamma.shape() != [cols]
        || beta.shape() != [cols]
        || running_mean.len() != cols
        || running_var.len() != cols
    {
        return Err(shape_err(
            "batch_norm_eval",
            format!("per-channel buffers must have {cols} entries"),
        ));
    }
    let xd = x.shared_data();
    let gd = gamma.shared_data();
    let bd = beta.shared_data();
    let mean = running_mean.to_vec();
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = gd[c] * (xd[r * cols + c] - mean[c]) * inv_std[c] + bd[c];
        }
    }
    let inv_std_b = inv_std.clone();
    Ok(x.tape().emit(
        data,
        vec![rows, cols],
        vec![x.id(), gamma.id(), beta.id()],
        Box::new(move |g| {
            let mut dx = vec![0.0; rows * cols];
            let mut dgamma = vec![0.0; cols];
            let mut dbeta = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    let gi = g[r * cols + c];
                    dx[r * cols + c] = gi * gd[c] * inv_std_b[c];
                    dgamma[c] += gi * (xd[r * cols + c] - mean[c]) * inv_std_b[c];
                    dbeta[c] += gi;
                }
            }
            vec![dx, dgamma, dbeta]
        }),
    ))
}

fn mat_dot(a: &[f64], m: usize, k: usize, b: &[f64], k2: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(k, k2);
    let av = ArrayView2::from_shape((m, k), a).expect("matmul lhs layout");
    let bv = ArrayView2::from_shape((k2, n), b).expect("matmul rhs layout");
    av.dot(&bv).into_raw_vec_and_offset().0
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Test-only finite-difference oracle, independent of the tape.

    /// Central differences `(f(x+h) - f(x-h)) / 2h` per coordinate.
    pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }

    /// Max relative error with an absolute floor of 1e-3 on the denominator.
    pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{central_diff, max_rel_err};
    use super::*;
    use crate::tensor::Tape;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    const H: f64 = 1e-4;
    const TOL: f64 = 1e-4;

    fn randv(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    /// Checks d(mean of op output)/d(input i) against central differences,
    /// where `build` maps freshly-leafed inputs to the op output.
    fn check_op(inputs: &[(Vec<f64>, Vec<usize>)], build: impl Fn(&Tape, &[Var]) -> Var) {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(d, s)| tape.leaf(d.clone(), s).unwrap())
            .collect();
        let out = build(&tape, &vars);
        let loss = out.mean_all();
        let grads = tape.backward(&loss).unwrap();

        for (i, (data, shape)) in inputs.iter().enumerate() {
            let analytic = grads.wrt(&vars[i]).expect("gradient must reach input");
            let numeric = central_diff(
                |x| {
                    let t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, (d, s))| {
                            let d = if j == i { x.to_vec() } else { d.clone() };
                            t.leaf(d, s).unwrap()
                        })
                        .collect();
                    build(&t, &vs).mean_all().item()
                },
                data,
                H,
            );
            let err = max_rel_err(analytic, &numeric);
            assert!(err <= TOL, "input {i}: max relative error {err}, shape {shape:?}");
        }
    }

    #[test]
    fn affine_identity_and_hand_case() {
        let tape = Tape::new();
        let x = tape.leaf(vec![3.0, -1.0, 2.0, 0.5], &[2, 2]).unwrap();
        let w = tape.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let b = tape.leaf(vec![0.0, 0.0], &[2]).unwrap();
        let y = affine(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());

        let x = tape.leaf(vec![1.0, 2.0], &[1, 2]).unwrap();
        let w = tape.leaf(vec![3.0, 4.0], &[2, 1]).unwrap();
        let b = tape.leaf(vec![5.0], &[1]).unwrap();
        let y = affine(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[16.0]);
    }

    #[test]
    fn affine_rejects_mismatched_inner_dims() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.0; 6], &[2, 3]).unwrap();
        let w = tape.leaf(vec![0.0; 8], &[4, 2]).unwrap();
        assert!(x.matmul(&w).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        // affine
        check_op(
            &[
                (randv(&mut rng, 6), vec![2, 3]),
                (randv(&mut rng, 12), vec![3, 4]),
                (randv(&mut rng, 4), vec![4]),
            ],
            |_, v| affine(&v[0], &v[1], &v[2]).unwrap(),
        );
        // elementwise chain with relu / mul / sub
        check_op(
            &[(randv(&mut rng, 8), vec![2, 4]), (randv(&mut rng, 8), vec![2, 4])],
            |_, v| v[0].relu().mul(&v[1]).unwrap().sub(&v[0]).unwrap(),
        );
        // smooth l1 spanning both branches
        check_op(&[(vec![0.3, -0.4, 1.7, -2.2, 0.9, -0.95], vec![2, 3])], |_, v| {
            v[0].smooth_l1(1.0).unwrap()
        });
        // pooling ops
        check_op(&[(randv(&mut rng, 24), vec![2, 4, 3])], |_, v| {
            v[0].global_max_pool().unwrap()
        });
        check_op(&[(randv(&mut rng, 24), vec![2, 4, 3])], |_, v| {
            v[0].global_avg_pool().unwrap()
        });
        // structural ops
        check_op(
            &[(randv(&mut rng, 6), vec![2, 3]), (randv(&mut rng, 4), vec![2, 2])],
            |_, v| concat_cols(&[&v[0], &v[1]]).unwrap().slice_cols(1, 3).unwrap(),
        );
        check_op(&[(randv(&mut rng, 6), vec![2, 3])], |_, v| {
            v[0].repeat_rows(4).unwrap().reshape(&[2, 12]).unwrap().row_sum().unwrap()
                .reshape(&[2, 1]).unwrap()
        });
        // pose transform
        check_op(
            &[
                (randv(&mut rng, 2 * 5 * 3), vec![2, 5, 3]),
                (randv(&mut rng, 24), vec![2, 12]),
            ],
            |_, v| v[0].pose_points(&v[1]).unwrap(),
        );
        // batch norm, training mode
        check_op(
            &[
                (randv(&mut rng, 15), vec![5, 3]),
                (vec![1.2, 0.8, 1.1], vec![3]),
                (vec![0.1, -0.2, 0.3], vec![3]),
            ],
            |_, v| batch_norm_train(&v[0], &v[1], &v[2], 1e-5).unwrap().0,
        );
        // batch norm, eval mode
        check_op(
            &[
                (randv(&mut rng, 12), vec![4, 3]),
                (vec![1.2, 0.8, 1.1], vec![3]),
                (vec![0.1, -0.2, 0.3], vec![3]),
            ],
            |_, v| {
                batch_norm_eval(&v[0], &v[1], &v[2], &[0.2, -0.1, 0.4], &[1.5, 0.9, 2.0], 1e-5)
                    .unwrap()
            },
        );
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.leaf(vec![-1.0, 0.0, 2.0], &[1, 3]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn smooth_l1_branch_values() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.0, 0.5, 2.0, -2.0], &[1, 4]).unwrap();
        let y = x.smooth_l1(1.0).unwrap();
        assert_eq!(y.data(), &[0.0, 0.125, 1.5, 1.5]);
    }

    #[test]
    fn max_pool_values_and_tie_break() {
        let tape = Tape::new();
        // n=2 points, c=1 channel: values 1 and 3 -> max 3, grad to index 1
        let x = tape.leaf(vec![1.0, 3.0], &[1, 2, 1]).unwrap();
        let y = x.global_max_pool().unwrap();
        assert_eq!(y.data(), &[3.0]);
        let loss = y.mean_all();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[0.0, 1.0]);

        // exact tie: first index wins
        let x = tape.leaf(vec![5.0, 5.0], &[1, 2, 1]).unwrap();
        let y = x.global_max_pool().unwrap();
        let loss = y.mean_all();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn max_pool_matches_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let (b, n, c) = (3, 7, 5);
        let data = randv(&mut rng, b * n * c);
        let tape = Tape::new();
        let x = tape.leaf(data.clone(), &[b, n, c]).unwrap();
        let y = x.global_max_pool().unwrap();
        for bi in 0..b {
            for ci in 0..c {
                let mut best = f64::NEG_INFINITY;
                for ni in 0..n {
                    best = best.max(data[(bi * n + ni) * c + ci]);
                }
                assert_eq!(y.data()[bi * c + ci], best);
            }
        }
    }

    #[test]
    fn all_points_equal_pools_to_that_point() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.7, -0.3].repeat(4), &[1, 4, 2]).unwrap();
        assert_eq!(x.global_max_pool().unwrap().data(), &[0.7, -0.3]);
        assert_eq!(x.global_avg_pool().unwrap().data(), &[0.7, -0.3]);
    }

    #[test]
    fn batch_norm_standardizes_training_batch() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let (rows, cols) = (64, 4);
        // Spread inputs widely so eps=1e-5 is negligible relative to the
        // batch variance.
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-20.0..20.0)).collect();
        let tape = Tape::new();
        let x = tape.leaf(data, &[rows, cols]).unwrap();
        let gamma = tape.leaf(vec![1.0; cols], &[cols]).unwrap();
        let beta = tape.leaf(vec![0.0; cols], &[cols]).unwrap();
        let (y, _) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        for c in 0..cols {
            let col: Vec<f64> = (0..rows).map(|r| y.data()[r * cols + c]).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn batch_norm_rejects_batch_of_one() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[1, 2]).unwrap();
        let gamma = tape.leaf(vec![1.0, 1.0], &[2]).unwrap();
        let beta = tape.leaf(vec![0.0, 0.0], &[2]).unwrap();
        assert!(batch_norm_train(&x, &gamma, &beta, 1e-5).is_err());
    }

    #[test]
    fn repeat_then_slice_recovers_source() {
        let tape = Tape::new();
        let src = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let tiled = src.repeat_rows(5).unwrap();
        for ni in 0..5 {
            let row = tiled.reshape(&[2 * 5, 2]).unwrap();
            let slice = row.slice_cols(0, 2).unwrap();
            for bi in 0..2 {
                let got = &slice.data()[(bi * 5 + ni) * 2..(bi * 5 + ni) * 2 + 2];
                assert_eq!(got, &src.data()[bi * 2..bi * 2 + 2]);
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let data = randv(&mut rng, 12);
        let w = randv(&mut rng, 9);

        let run = |combine: &dyn Fn(&Var, &Var) -> Var| -> Vec<f64> {
            let tape = Tape::new();
            let x = tape.leaf(data.clone(), &[4, 3]).unwrap();
            let wv = tape.leaf(w.clone(), &[3, 3]).unwrap();
            let y = x.matmul(&wv).unwrap();
            let l1 = y.relu().mean_all();
            let l2 = y.mul(&y).unwrap().mean_all();
            let loss = combine(&l1, &l2);
            tape.backward(&loss).unwrap().wrt(&x).unwrap().to_vec()
        };
        let g_sum = run(&|a, b| a.add(b).unwrap());
        let g_a = run(&|a, _| a.clone());
        let g_b = run(&|_, b| b.clone());
        for i in 0..g_sum.len() {
            assert!((g_sum[i] - (g_a[i] + g_b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2.0, 3.0], &[1, 2]).unwrap();
        let d = x.detach();
        let loss = d.mul(&d).unwrap().mean_all();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.wrt(&x).is_none());
        assert!(grads.wrt(&d).is_some());
    }
}
