//! Differentiable primitives over [`Tensor`].
//!
//! Each op validates shapes up front, computes the forward value, and records
//! a backward closure that turns the output gradient into parent gradients.
//! Closures capture plain data only (masks, indices), never tensors; parents
//! are handed back by the tape.

use rand::Rng;

use crate::error::{Error, Result};

use super::tensor::Tensor;

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::InvalidShape { op, shape: t.shape().to_vec() }),
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("add", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|out, parents| {
            let g = out.grad_ref();
            for p in parents {
                if p.requires_grad() {
                    p.accumulate_grad(&g);
                }
            }
        }),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("sub", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|out, parents| {
            let g = out.grad_ref();
            if parents[0].requires_grad() {
                parents[0].accumulate_grad(&g);
            }
            if parents[1].requires_grad() {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                parents[1].accumulate_grad(&neg);
            }
        }),
    ))
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("mul", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|out, parents| {
            let g = out.grad_ref();
            if parents[0].requires_grad() {
                let da: Vec<f64> =
                    g.iter().zip(parents[1].data().iter()).map(|(gi, bi)| gi * bi).collect();
                parents[0].accumulate_grad(&da);
            }
            if parents[1].requires_grad() {
                let db: Vec<f64> =
                    g.iter().zip(parents[0].data().iter()).map(|(gi, ai)| gi * ai).collect();
                parents[1].accumulate_grad(&db);
            }
        }),
    ))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|x| x * c).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                parents[0].accumulate_grad(&da);
            }
        }),
    )
}

/// Sum of all entries, as a scalar.
pub fn sum_all(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().sum();
    Tensor::from_op(
        vec![],
        vec![s],
        vec![a.clone()],
        Box::new(|out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref()[0];
                parents[0].accumulate_grad(&vec![g; parents[0].numel()]);
            }
        }),
    )
}

pub fn mean_all(a: &Tensor) -> Tensor {
    let n = a.numel() as f64;
    scale(&sum_all(a), 1.0 / n)
}

/// Standard matrix product of a 2-D `(m, k)` by a 2-D `(k, n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_rank2("matmul", a)?;
    let (k2, n) = require_rank2("matmul", b)?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let ad = a.data();
    let bd = b.data();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = ad[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            let orow = &mut data[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    drop(ad);
    drop(bd);
    Ok(Tensor::from_op(
        vec![m, n],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |out, parents| {
            let g = out.grad_ref();
            let ad = parents[0].data();
            let bd = parents[1].data();
            if parents[0].requires_grad() {
                // dA = g . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bd[l * n + j];
                        }
                        da[i * k + l] = acc;
                    }
                }
                parents[0].accumulate_grad(&da);
            }
            if parents[1].requires_grad() {
                // dB = A^T . g
                let mut db = vec![0.0; k * n];
                for l in 0..k {
                    for i in 0..m {
                        let av = ad[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[l * n + j] += av * g[i * n + j];
                        }
                    }
                }
                parents[1].accumulate_grad(&db);
            }
        }),
    ))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = require_rank2("transpose", a)?;
    let ad = a.data();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = ad[i * n + j];
        }
    }
    drop(ad);
    Ok(Tensor::from_op(
        vec![n, m],
        data,
        vec![a.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                parents[0].accumulate_grad(&da);
            }
        }),
    ))
}

/// Adds a row vector to every row of a matrix. The vector may be shaped
/// `(d)` or `(1, d)`.
pub fn add_row(x: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (n, d) = require_rank2("add_row", x)?;
    let vd_len = v.numel();
    let v_ok = matches!(v.shape(), [w] if *w == d) || matches!(v.shape(), [1, w] if *w == d);
    if !v_ok {
        return Err(Error::ShapeMismatch {
            op: "add_row",
            left: x.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    debug_assert_eq!(vd_len, d);
    let xd = x.data();
    let vd = v.data();
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            data[i * d + j] = xd[i * d + j] + vd[j];
        }
    }
    drop(xd);
    drop(vd);
    Ok(Tensor::from_op(
        vec![n, d],
        data,
        vec![x.clone(), v.clone()],
        Box::new(move |out, parents| {
            let g = out.grad_ref();
            if parents[0].requires_grad() {
                parents[0].accumulate_grad(&g);
            }
            if parents[1].requires_grad() {
                let mut dv = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        dv[j] += g[i * d + j];
                    }
                }
                parents[1].accumulate_grad(&dv);
            }
        }),
    ))
}

pub fn relu(a: &Tensor) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|x| x.max(0.0)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let xd = parents[0].data();
                let da: Vec<f64> =
                    g.iter().zip(xd.iter()).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect();
                drop(xd);
                parents[0].accumulate_grad(&da);
            }
        }),
    )
}

fn softmax_backward_from_output(y: &[f64], g: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
        for c in 0..cols {
            dx[r * cols + c] = yr[c] * (gr[c] - dot);
        }
    }
    dx
}

/// Softmax over the last axis, stabilized by row-max subtraction.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    let shape = a.shape().to_vec();
    let cols = *shape.last().ok_or(Error::InvalidShape { op: "softmax_rows", shape: vec![] })?;
    if cols == 0 {
        return Err(Error::InvalidShape { op: "softmax_rows", shape });
    }
    let rows = a.numel() / cols;
    let ad = a.data();
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &ad[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, x) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (x - m).exp();
            z += *o;
        }
        for o in data[r * cols..(r + 1) * cols].iter_mut() {
            *o /= z;
        }
    }
    drop(ad);
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let y = out.data();
                let dx = softmax_backward_from_output(&y, &g, rows, cols);
                drop(y);
                drop(g);
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

/// Row softmax restricted to valid columns. Invalid columns carry weight
/// exactly 0.0, and rows flagged invalid come out all-zero so that padded
/// query positions contribute nothing downstream.
pub fn masked_softmax_rows(a: &Tensor, row_valid: &[bool], col_valid: &[bool]) -> Result<Tensor> {
    let (rows, cols) = require_rank2("masked_softmax_rows", a)?;
    if row_valid.len() != rows || col_valid.len() != cols {
        return Err(Error::Contract(format!(
            "masked_softmax_rows: mask lengths ({}, {}) do not match shape ({rows}, {cols})",
            row_valid.len(),
            col_valid.len()
        )));
    }
    let ad = a.data();
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        if !row_valid[r] {
            continue;
        }
        let row = &ad[r * cols..(r + 1) * cols];
        let mut m = f64::NEG_INFINITY;
        for (c, x) in row.iter().enumerate() {
            if col_valid[c] && *x > m {
                m = *x;
            }
        }
        if m == f64::NEG_INFINITY {
            return Err(Error::Contract(format!(
                "masked_softmax_rows: valid row {r} has no valid column"
            )));
        }
        let mut z = 0.0;
        for c in 0..cols {
            if col_valid[c] {
                let e = (row[c] - m).exp();
                data[r * cols + c] = e;
                z += e;
            }
        }
        for c in 0..cols {
            if col_valid[c] {
                data[r * cols + c] /= z;
            }
        }
    }
    drop(ad);
    Ok(Tensor::from_op(
        vec![rows, cols],
        data,
        vec![a.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let y = out.data();
                // Masked entries have y == 0, so the shared formula already
                // routes them zero gradient.
                let dx = softmax_backward_from_output(&y, &g, rows, cols);
                drop(y);
                drop(g);
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

/// Concatenates 2-D tensors with equal row counts along the column axis.
pub fn concat_cols(xs: &[Tensor]) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(Error::Contract("concat_cols of zero tensors".into()));
    }
    let (n, _) = require_rank2("concat_cols", &xs[0])?;
    let mut widths = Vec::with_capacity(xs.len());
    let mut total = 0;
    for x in xs {
        let (r, c) = require_rank2("concat_cols", x)?;
        if r != n {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: xs[0].shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        widths.push(c);
        total += c;
    }
    let mut data = vec![0.0; n * total];
    let mut offset = 0;
    for (x, &w) in xs.iter().zip(&widths) {
        let xd = x.data();
        for i in 0..n {
            data[i * total + offset..i * total + offset + w]
                .copy_from_slice(&xd[i * w..(i + 1) * w]);
        }
        offset += w;
    }
    Ok(Tensor::from_op(
        vec![n, total],
        data,
        xs.to_vec(),
        Box::new(move |out, parents| {
            let g = out.grad_ref();
            let mut offset = 0;
            for (p, &w) in parents.iter().zip(&widths) {
                if p.requires_grad() {
                    let mut dp = vec![0.0; n * w];
                    for i in 0..n {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    p.accumulate_grad(&dp);
                }
                offset += w;
            }
        }),
    ))
}

/// Stacks tensors along the row axis. Inputs may be `(k, d)` matrices or
/// `(d)` vectors (treated as single rows); all must share the width `d`.
pub fn concat_rows(xs: &[Tensor]) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(Error::Contract("concat_rows of zero tensors".into()));
    }
    let width = match xs[0].shape() {
        [d] => *d,
        [_, d] => *d,
        _ => {
            return Err(Error::InvalidShape { op: "concat_rows", shape: xs[0].shape().to_vec() })
        }
    };
    let mut row_counts = Vec::with_capacity(xs.len());
    let mut total_rows = 0;
    for x in xs {
        let (r, d) = match x.shape() {
            [d] => (1, *d),
            [r, d] => (*r, *d),
            _ => return Err(Error::InvalidShape { op: "concat_rows", shape: x.shape().to_vec() }),
        };
        if d != width {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                left: xs[0].shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        row_counts.push(r);
        total_rows += r;
    }
    let mut data = Vec::with_capacity(total_rows * width);
    for x in xs {
        data.extend_from_slice(&x.data());
    }
    Ok(Tensor::from_op(
        vec![total_rows, width],
        data,
        xs.to_vec(),
        Box::new(move |out, parents| {
            let g = out.grad_ref();
            let mut offset = 0;
            for (p, &r) in parents.iter().zip(&row_counts) {
                let len = r * width;
                if p.requires_grad() {
                    p.accumulate_grad(&g[offset..offset + len]);
                }
                offset += len;
            }
        }),
    ))
}

/// Selects rows of a matrix by index; indices may repeat. Backward
/// scatter-adds, which also makes this the embedding-lookup primitive.
pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (r, d) = require_rank2("gather_rows", x)?;
    if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
        return Err(Error::Contract(format!("gather_rows: index {bad} out of range for {r} rows")));
    }
    let xd = x.data();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&xd[i * d..(i + 1) * d]);
    }
    drop(xd);
    let idx = idx.to_vec();
    Ok(Tensor::from_op(
        vec![idx.len(), d],
        data,
        vec![x.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let mut dx = vec![0.0; r * d];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dx[i * d + j] += g[k * d + j];
                    }
                }
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

pub fn slice_cols(x: &Tensor, start: usize, width: usize) -> Result<Tensor> {
    let (r, c) = require_rank2("slice_cols", x)?;
    if start + width > c {
        return Err(Error::Contract(format!(
            "slice_cols: columns {start}..{} out of range for width {c}",
            start + width
        )));
    }
    let xd = x.data();
    let mut data = Vec::with_capacity(r * width);
    for i in 0..r {
        data.extend_from_slice(&xd[i * c + start..i * c + start + width]);
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![r, width],
        data,
        vec![x.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + width]
                        .copy_from_slice(&g[i * width..(i + 1) * width]);
                }
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

/// Sliding-window view for 1-D convolution: `(t, d)` becomes
/// `(t' , width*d)` where each output row is `width` consecutive input rows.
/// Inputs shorter than `width` are zero-padded at the end.
pub fn unfold_time(x: &Tensor, width: usize) -> Result<Tensor> {
    let (t, d) = require_rank2("unfold_time", x)?;
    if width == 0 {
        return Err(Error::Config("unfold_time: width must be >= 1".into()));
    }
    let t_eff = t.max(width);
    let rows = t_eff - width + 1;
    let xd = x.data();
    let mut data = vec![0.0; rows * width * d];
    for r in 0..rows {
        for k in 0..width {
            if r + k < t {
                data[r * width * d + k * d..r * width * d + (k + 1) * d]
                    .copy_from_slice(&xd[(r + k) * d..(r + k + 1) * d]);
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![rows, width * d],
        data,
        vec![x.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let mut dx = vec![0.0; t * d];
                for r in 0..rows {
                    for k in 0..width {
                        if r + k < t {
                            for j in 0..d {
                                dx[(r + k) * d + j] += g[r * width * d + k * d + j];
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

/// Max over the time axis of a `(t, c)` feature map, yielding a `(c)` vector.
/// Ties route the gradient to the earliest maximal step.
pub fn maxpool_time(x: &Tensor) -> Result<Tensor> {
    let (t, c) = require_rank2("maxpool_time", x)?;
    if t == 0 {
        return Err(Error::InvalidShape { op: "maxpool_time", shape: x.shape().to_vec() });
    }
    let xd = x.data();
    let mut data = vec![f64::NEG_INFINITY; c];
    let mut argmax = vec![0usize; c];
    for step in 0..t {
        for j in 0..c {
            let v = xd[step * c + j];
            if v > data[j] {
                data[j] = v;
                argmax[j] = step;
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![c],
        data,
        vec![x.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let mut dx = vec![0.0; t * c];
                for j in 0..c {
                    dx[argmax[j] * c + j] = g[j];
                }
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

pub fn reshape(x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    let expected: usize = shape.iter().product();
    if expected != x.numel() {
        return Err(Error::InvalidShape { op: "reshape", shape });
    }
    let data = x.data().clone();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![x.clone()],
        Box::new(|out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                parents[0].accumulate_grad(&g);
            }
        }),
    ))
}

/// Inverted dropout: surviving entries are scaled by `1/(1-p)` so the
/// expectation matches eval mode. Identity when not training or `p == 0`.
pub fn dropout<R: Rng>(x: &Tensor, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = 1.0 / (1.0 - p);
    let factors: Vec<f64> =
        (0..x.numel()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale }).collect();
    let data: Vec<f64> = x.data().iter().zip(&factors).map(|(v, f)| v * f).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |out, parents| {
            if parents[0].requires_grad() {
                let g = out.grad_ref();
                let dx: Vec<f64> = g.iter().zip(&factors).map(|(gi, f)| gi * f).collect();
                drop(g);
                parents[0].accumulate_grad(&dx);
            }
        }),
    ))
}

/// `x . w + b` with the bias broadcast over rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_row(&matmul(x, w)?, b)
}

/// Valid 1-D convolution over time. `kernels` is `(out_channels, width*d)`
/// with each row a flattened filter; short inputs are zero-padded to `width`.
pub fn conv1d(x: &Tensor, kernels: &Tensor, bias: &Tensor, width: usize) -> Result<Tensor> {
    let unfolded = unfold_time(x, width)?;
    affine(&unfolded, &transpose(kernels)?, bias)
}

/// Position-term attention scores: `out[i, j] = qv[i] . rstar[i*n + j]`,
/// where `qv` is `(n, d)` and `rstar` holds one `(d)` encoding per ordered
/// token pair, row-major over `(i, j)`.
pub fn pos_attn_scores(qv: &Tensor, rstar: &Tensor) -> Result<Tensor> {
    let (n, d) = require_rank2("pos_attn_scores", qv)?;
    let (pairs, d2) = require_rank2("pos_attn_scores", rstar)?;
    if d != d2 || pairs != n * n {
        return Err(Error::ShapeMismatch {
            op: "pos_attn_scores",
            left: qv.shape().to_vec(),
            right: rstar.shape().to_vec(),
        });
    }
    let qd = qv.data();
    let rd = rstar.data();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..d {
                acc += qd[i * d + l] * rd[(i * n + j) * d + l];
            }
            data[i * n + j] = acc;
        }
    }
    drop(qd);
    drop(rd);
    Ok(Tensor::from_op(
        vec![n, n],
        data,
        vec![qv.clone(), rstar.clone()],
        Box::new(move |out, parents| {
            let g = out.grad_ref();
            let qd = parents[0].data();
            let rd = parents[1].data();
            if parents[0].requires_grad() {
                let mut dq = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for l in 0..d {
                            dq[i * d + l] += gij * rd[(i * n + j) * d + l];
                        }
                    }
                }
                parents[0].accumulate_grad(&dq);
            }
            if parents[1].requires_grad() {
                let mut dr = vec![0.0; n * n * d];
                for i in 0..n {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for l in 0..d {
                            dr[(i * n + j) * d + l] = gij * qd[i * d + l];
                        }
                    }
                }
                parents[1].accumulate_grad(&dr);
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_tensors;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::param(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::from_vec(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = matmul(&eye, &x).unwrap();
        assert_eq!(*y.data(), *x.data());
    }

    #[test]
    fn matmul_hand_sum() {
        let a = Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![1., 1.]).unwrap();
        let y = matmul(&a, &b).unwrap();
        assert_eq!(*y.data(), vec![3., 7.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, vec![4, 5]);
        let b = rand_tensor(&mut rng, vec![5, 3]);
        let w = rand_tensor(&mut rng, vec![4, 3]);
        let leaves = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
        let report = check_tensors(
            || Ok(sum_all(&mul(&matmul(&a, &b)?, &w)?)),
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor::from_vec(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        for v in y.data().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::from_vec(vec![3], vec![0.3, 0.5, 0.7]).unwrap();
        let shifted = Tensor::from_vec(vec![3], vec![100.3, 100.5, 100.7]).unwrap();
        let y0 = softmax_rows(&x).unwrap();
        let y1 = softmax_rows(&shifted).unwrap();
        for (a, b) in y0.data().iter().zip(y1.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, vec![5, 7]);
        let y = softmax_rows(&x).unwrap();
        let yd = y.data();
        for r in 0..5 {
            let s: f64 = yd[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_empty_row_is_error() {
        let x = Tensor::zeros(vec![2, 0]);
        assert!(softmax_rows(&x).is_err());
    }

    #[test]
    fn softmax_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        let leaves = vec![("x".to_string(), x.clone())];
        let report =
            check_tensors(|| Ok(sum_all(&mul(&softmax_rows(&x)?, &w)?)), &leaves, 1e-5).unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }

    #[test]
    fn masked_softmax_zeroes_invalid_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&mut rng, vec![4, 4]);
        let valid = [true, true, true, false];
        let y = masked_softmax_rows(&x, &valid, &valid).unwrap();
        let yd = y.data();
        for r in 0..4 {
            for c in 0..4 {
                if !valid[r] || !valid[c] {
                    assert_eq!(yd[r * 4 + c], 0.0);
                }
            }
        }
        for r in 0..3 {
            let s: f64 = yd[r * 4..r * 4 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_softmax_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = rand_tensor(&mut rng, vec![4, 4]);
        let w = rand_tensor(&mut rng, vec![4, 4]);
        let valid = vec![true, true, true, false];
        let leaves = vec![("x".to_string(), x.clone())];
        let (rv, cv) = (valid.clone(), valid.clone());
        let report = check_tensors(
            || Ok(sum_all(&mul(&masked_softmax_rows(&x, &rv, &cv)?, &w)?)),
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(*relu(&x).data(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_single_step_is_identity() {
        let x = Tensor::from_vec(vec![1, 4], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let y = maxpool_time(&x).unwrap();
        assert_eq!(*y.data(), vec![0.1, -0.2, 0.3, 0.4]);
    }

    #[test]
    fn conv1d_zero_signal_is_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let kernels = rand_tensor(&mut rng, vec![5, 3 * 2]);
        let bias = rand_tensor(&mut rng, vec![5]);
        for t in [1usize, 3, 6] {
            let x = Tensor::zeros(vec![t, 2]);
            let y = conv1d(&x, &kernels, &bias, 3).unwrap();
            let yd = y.data();
            let bd = bias.data();
            for r in 0..y.shape()[0] {
                for c in 0..5 {
                    assert!((yd[r * 5 + c] - bd[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_and_pool_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = rand_tensor(&mut rng, vec![5, 3]);
        let kernels = rand_tensor(&mut rng, vec![4, 9]);
        let bias = rand_tensor(&mut rng, vec![4]);
        let w = rand_tensor(&mut rng, vec![4]);
        let leaves = vec![
            ("x".to_string(), x.clone()),
            ("kernels".to_string(), kernels.clone()),
            ("bias".to_string(), bias.clone()),
        ];
        let report = check_tensors(
            || {
                let pooled = maxpool_time(&relu(&conv1d(&x, &kernels, &bias, 3)?))?;
                Ok(sum_all(&mul(&pooled, &w)?))
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }

    #[test]
    fn dropout_eval_is_identity_and_training_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::from_vec(vec![100], vec![1.0; 100]).unwrap();
        let eval = dropout(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(*eval.data(), vec![1.0; 100]);
        let train = dropout(&x, 0.5, true, &mut rng).unwrap();
        for v in train.data().iter() {
            assert!(*v == 0.0 || (*v - 2.0).abs() < 1e-12);
        }
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
        assert!(dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn gather_scatter_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let table = rand_tensor(&mut rng, vec![6, 3]);
        let w = rand_tensor(&mut rng, vec![4, 3]);
        let idx = vec![0usize, 2, 2, 5];
        let leaves = vec![("table".to_string(), table.clone())];
        let report = check_tensors(
            || Ok(sum_all(&mul(&gather_rows(&table, &idx)?, &w)?)),
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }

    #[test]
    fn pos_attn_scores_matches_direct_loop_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 3;
        let d = 4;
        let qv = rand_tensor(&mut rng, vec![n, d]);
        let rstar = rand_tensor(&mut rng, vec![n * n, d]);
        let out = pos_attn_scores(&qv, &rstar).unwrap();
        let (od, qd, rd) = (out.data(), qv.data(), rstar.data());
        for i in 0..n {
            for j in 0..n {
                let direct: f64 = (0..d).map(|l| qd[i * d + l] * rd[(i * n + j) * d + l]).sum();
                assert!((od[i * n + j] - direct).abs() < 1e-12);
            }
        }
        drop((od, qd, rd));
        let w = rand_tensor(&mut rng, vec![n, n]);
        let leaves =
            vec![("qv".to_string(), qv.clone()), ("rstar".to_string(), rstar.clone())];
        let report = check_tensors(
            || Ok(sum_all(&mul(&pos_attn_scores(&qv, &rstar)?, &w)?)),
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }

    #[test]
    fn unfold_pads_short_sequences() {
        let x = Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = unfold_time(&x, 3).unwrap();
        assert_eq!(y.shape(), &[1, 6]);
        assert_eq!(*y.data(), vec![1., 2., 3., 4., 0., 0.]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = rand_tensor(&mut rng, vec![3, 2]);
        let b = rand_tensor(&mut rng, vec![3, 4]);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        let leaves = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
        let report = check_tensors(
            || {
                let cat = concat_cols(&[a.clone(), b.clone()])?;
                Ok(sum_all(&mul(&slice_cols(&cat, 2, 4)?, &w)?))
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_err() < 1e-6, "{report}");
    }
}
