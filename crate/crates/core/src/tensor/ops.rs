use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Additive bias applied to masked attention logits. Large enough that
/// `exp` underflows to exactly zero after max-subtraction.
pub const NEG_INF_BIAS: f64 = -1e9;

pub(crate) enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    BatchMatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    /// Input, and for each output index the input index it reads.
    Permute(Tensor, Vec<usize>),
    Reshape(Tensor),
    Concat(Tensor, Tensor),
    Slice {
        input: Tensor,
        axis: usize,
        start: usize,
        len: usize,
    },
    MeanAxis(Tensor, usize),
    Sum(Tensor),
    Softmax(Tensor, usize),
    LayerNorm {
        input: Tensor,
        gain: Tensor,
        bias: Tensor,
        eps: f64,
    },
    Gelu(Tensor),
    Tanh(Tensor),
    Dropout(Tensor, Vec<f64>),
    Embedding(Tensor, Vec<usize>),
    KeyMask(Tensor, Vec<f64>),
    CrossEntropy(Tensor, Vec<usize>),
    BceWithLogits(Tensor, Vec<f64>),
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every flat output index of `input.permute(axes)`, the flat input index.
fn permutation_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let n = numel(&out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        map.push(
            idx.iter()
                .zip(axes)
                .map(|(&i, &a)| i * in_strides[a])
                .sum(),
        );
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

/// Products up to this many multiply-adds skip the packed kernel.
const SMALL_GEMM: usize = 512;

/// `c += a · b` for row-major `a [m,k]`, `b [k,n]`, `c [m,n]` given as
/// `(pointer, row stride, column stride)` views.
#[allow(clippy::too_many_arguments)]
fn dgemm_acc(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n);
    if m * k * n <= SMALL_GEMM {
        let at = |(d, rs, cs): (&[f64], isize, isize), i: usize, j: usize| d[(i as isize * rs + j as isize * cs) as usize];
        for i in 0..m {
            for p in 0..k {
                let x = at(a, i, p);
                for j in 0..n {
                    c[i * n + j] += x * at(b, p, j);
                }
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, 1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// out[m,n] += a[m,k] * b[k,n]
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    dgemm_acc(m, k, n, (a, k as isize, 1), (b, n as isize, 1), out);
}

/// da[m,k] += g[m,n] * b[k,n]^T
fn gemm_grad_a(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    dgemm_acc(m, n, k, (g, n as isize, 1), (b, 1, n as isize), da);
}

/// db[k,n] += a[m,k]^T * g[m,n]
fn gemm_grad_b(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    dgemm_acc(k, m, n, (a, 1, k as isize), (g, n as isize, 1), db);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `tanh` through one `exp`; absolute error stays at rounding level.
fn tanh_exp(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh_exp(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = tanh_exp(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn log1p_exp_neg_abs(z: f64) -> f64 {
    (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "bmm",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat_last_dim",
            Op::Slice { .. } => "slice",
            Op::MeanAxis(..) => "mean_axis",
            Op::Sum(..) => "sum",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Tanh(..) => "tanh",
            Op::Dropout(..) => "dropout",
            Op::Embedding(..) => "embedding",
            Op::KeyMask(..) => "key_mask",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::BatchMatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => {
                vec![a, b]
            }
            Op::Mul(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::LayerNorm {
                input, gain, bias, ..
            } => vec![input, gain, bias],
            Op::Slice { input, .. } => vec![input],
            Op::Scale(x, _)
            | Op::Permute(x, _)
            | Op::Reshape(x)
            | Op::MeanAxis(x, _)
            | Op::Sum(x)
            | Op::Softmax(x, _)
            | Op::Gelu(x)
            | Op::Tanh(x)
            | Op::Dropout(x, _)
            | Op::Embedding(x, _)
            | Op::KeyMask(x, _)
            | Op::CrossEntropy(x, _)
            | Op::BceWithLogits(x, _) => vec![x],
        }
    }

    /// Forward value of block `block` of `blocks` equal slices along the
    /// first axis, for ops that are row-wise in everything except `weight`.
    pub(crate) fn forward_block(&self, weight: &Tensor, block: usize, blocks: usize) -> Option<Vec<f64>> {
        let slice = |t: &Tensor| {
            let mut shape = t.shape().to_vec();
            if shape.first().is_none_or(|&d| d % blocks != 0) {
                return None;
            }
            shape[0] /= blocks;
            let n = t.numel() / blocks;
            Tensor::from_vec(&shape, t.data()[block * n..(block + 1) * n].to_vec()).ok()
        };
        let same = |t: &Tensor| std::rc::Rc::ptr_eq(&t.0, &weight.0);
        let op = match self {
            Op::MatMul(a, b) if same(b) && !same(a) => Op::MatMul(slice(a)?, b.clone()),
            Op::AddRow(x, b) if same(b) && !same(x) => Op::AddRow(slice(x)?, b.clone()),
            Op::LayerNorm { input, gain, bias, eps } if !same(input) && (same(gain) || same(bias)) => Op::LayerNorm {
                input: slice(input)?,
                gain: gain.clone(),
                bias: bias.clone(),
                eps: *eps,
            },
            Op::Embedding(w, ids) if same(w) && ids.len() % blocks == 0 => {
                let n = ids.len() / blocks;
                Op::Embedding(w.clone(), ids[block * n..(block + 1) * n].to_vec())
            }
            _ => return None,
        };
        Some(op.forward())
    }

    pub(crate) fn forward(&self) -> Vec<f64> {
        match self {
            Op::Leaf => unreachable!("leaves carry their own data"),
            Op::MatMul(a, b) => {
                let (k, n) = (b.shape()[0], b.shape()[1]);
                let m = a.numel() / k;
                let mut out = vec![0.0; m * n];
                gemm_acc(&a.data(), &b.data(), &mut out, m, k, n);
                out
            }
            Op::BatchMatMul(a, b) => {
                let r = a.shape().len();
                let (m, k, n) = (a.shape()[r - 2], a.shape()[r - 1], b.shape()[r - 1]);
                let batch = a.numel() / (m * k);
                let (ad, bd) = (a.data(), b.data());
                let mut out = vec![0.0; batch * m * n];
                for i in 0..batch {
                    gemm_acc(
                        &ad[i * m * k..(i + 1) * m * k],
                        &bd[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                out
            }
            Op::Add(a, b) => a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect(),
            Op::AddRow(x, bias) => {
                let bias = bias.data();
                let n = bias.len();
                let mut out = x.to_vec();
                for row in out.chunks_mut(n) {
                    row.iter_mut().zip(bias.iter()).for_each(|(v, b)| *v += b);
                }
                out
            }
            Op::Mul(a, b) => a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect(),
            Op::Scale(x, s) => x.data().iter().map(|v| v * s).collect(),
            Op::Permute(x, map) => {
                let d = x.data();
                map.iter().map(|&i| d[i]).collect()
            }
            Op::Reshape(x) => x.to_vec(),
            Op::Concat(a, b) => {
                let (na, nb) = (*a.shape().last().unwrap(), *b.shape().last().unwrap());
                let rows = a.numel() / na;
                let (ad, bd) = (a.data(), b.data());
                let mut out = Vec::with_capacity(rows * (na + nb));
                for r in 0..rows {
                    out.extend_from_slice(&ad[r * na..(r + 1) * na]);
                    out.extend_from_slice(&bd[r * nb..(r + 1) * nb]);
                }
                out
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let (outer, full, inner) = split_axis(input.shape(), *axis);
                let d = input.data();
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * full * inner + start * inner;
                    out.extend_from_slice(&d[base..base + len * inner]);
                }
                out
            }
            Op::MeanAxis(x, axis) => {
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let d = x.data();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            out[o * inner + i] += d[(o * n + j) * inner + i];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v /= n as f64);
                out
            }
            Op::Sum(x) => vec![x.data().iter().sum()],
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let d = x.data();
                let mut out = vec![0.0; d.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let max = (0..n).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                        let mut total = 0.0;
                        for j in 0..n {
                            let e = (d[at(j)] - max).exp();
                            out[at(j)] = e;
                            total += e;
                        }
                        for j in 0..n {
                            out[at(j)] /= total;
                        }
                    }
                }
                out
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                eps,
            } => {
                let n = *input.shape().last().unwrap();
                let (g, b) = (gain.data(), bias.data());
                let mut out = input.to_vec();
                for row in out.chunks_mut(n) {
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (*v - mean) * rstd * g[j] + b[j];
                    }
                }
                out
            }
            Op::Gelu(x) => x.data().iter().map(|&v| gelu(v)).collect(),
            Op::Tanh(x) => x.data().iter().map(|v| v.tanh()).collect(),
            Op::Dropout(x, mask) => x.data().iter().zip(mask).map(|(v, m)| v * m).collect(),
            Op::Embedding(weight, ids) => {
                let dim = weight.shape()[1];
                let w = weight.data();
                let mut out = Vec::with_capacity(ids.len() * dim);
                for &id in ids {
                    out.extend_from_slice(&w[id * dim..(id + 1) * dim]);
                }
                out
            }
            Op::KeyMask(scores, bias) => {
                let s = scores.shape();
                let r = s.len();
                let (keys, per_batch) = (s[r - 1], numel(&s[1..]));
                scores
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v + bias[(i / per_batch) * keys + i % keys])
                    .collect()
            }
            Op::CrossEntropy(logits, targets) => {
                let c = logits.shape()[1];
                let d = logits.data();
                let total: f64 = d
                    .chunks(c)
                    .zip(targets)
                    .map(|(row, &t)| {
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        lse - row[t]
                    })
                    .sum();
                vec![total / targets.len() as f64]
            }
            Op::BceWithLogits(logits, targets) => {
                let d = logits.data();
                let total: f64 = d
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| z.max(0.0) - z * t + log1p_exp_neg_abs(z))
                    .sum();
                vec![total / d.len() as f64]
            }
        }
    }

    /// Accumulates input gradients given the output value and its gradient.
    pub(crate) fn backward(&self, out: &[f64], g: &[f64]) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (k, n) = (b.shape()[0], b.shape()[1]);
                let m = a.numel() / k;
                if a.requires_grad() {
                    let bd = b.data();
                    a.accumulate_grad(|da| gemm_grad_a(g, &bd, da, m, k, n));
                }
                if b.requires_grad() {
                    let ad = a.data();
                    b.accumulate_grad(|db| gemm_grad_b(&ad, g, db, m, k, n));
                }
            }
            Op::BatchMatMul(a, b) => {
                let r = a.shape().len();
                let (m, k, n) = (a.shape()[r - 2], a.shape()[r - 1], b.shape()[r - 1]);
                let batch = a.numel() / (m * k);
                if a.requires_grad() {
                    let bd = b.data();
                    a.accumulate_grad(|da| {
                        for i in 0..batch {
                            gemm_grad_a(
                                &g[i * m * n..(i + 1) * m * n],
                                &bd[i * k * n..(i + 1) * k * n],
                                &mut da[i * m * k..(i + 1) * m * k],
                                m,
                                k,
                                n,
                            );
                        }
                    });
                }
                if b.requires_grad() {
                    let ad = a.data();
                    b.accumulate_grad(|db| {
                        for i in 0..batch {
                            gemm_grad_b(
                                &ad[i * m * k..(i + 1) * m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut db[i * k * n..(i + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    t.accumulate_grad(|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::AddRow(x, bias) => {
                x.accumulate_grad(|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let n = bias.numel();
                bias.accumulate_grad(|d| {
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    let bd = b.to_vec();
                    a.accumulate_grad(|d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * bd[i];
                        }
                    });
                }
                if b.requires_grad() {
                    let ad = a.to_vec();
                    b.accumulate_grad(|d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * ad[i];
                        }
                    });
                }
            }
            Op::Scale(x, s) => {
                x.accumulate_grad(|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s));
            }
            Op::Permute(x, map) => {
                x.accumulate_grad(|d| {
                    for (o, &i) in map.iter().enumerate() {
                        d[i] += g[o];
                    }
                });
            }
            Op::Reshape(x) => {
                x.accumulate_grad(|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Concat(a, b) => {
                let (na, nb) = (*a.shape().last().unwrap(), *b.shape().last().unwrap());
                let w = na + nb;
                a.accumulate_grad(|d| {
                    for (r, row) in d.chunks_mut(na).enumerate() {
                        row.iter_mut()
                            .zip(&g[r * w..r * w + na])
                            .for_each(|(d, g)| *d += g);
                    }
                });
                b.accumulate_grad(|d| {
                    for (r, row) in d.chunks_mut(nb).enumerate() {
                        row.iter_mut()
                            .zip(&g[r * w + na..(r + 1) * w])
                            .for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let (outer, full, inner) = split_axis(input.shape(), *axis);
                input.accumulate_grad(|d| {
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        d[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::MeanAxis(x, axis) => {
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                x.accumulate_grad(|d| {
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                d[(o * n + j) * inner + i] += g[o * inner + i] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => x.accumulate_grad(|d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                x.accumulate_grad(|d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..n {
                                d[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                eps,
            } => {
                let n = *input.shape().last().unwrap();
                let x = input.data();
                let gd = gain.data();
                let rows = x.len() / n;
                let mut dx = vec![0.0; x.len()];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for r in 0..rows {
                    let row = &x[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    for j in 0..n {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = grow[j] * gd[j];
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                    }
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = rstd / n as f64
                            * (n as f64 * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                drop(x);
                drop(gd);
                input.accumulate_grad(|d| d.iter_mut().zip(&dx).for_each(|(d, g)| *d += g));
                gain.accumulate_grad(|d| d.iter_mut().zip(&dgain).for_each(|(d, g)| *d += g));
                bias.accumulate_grad(|d| d.iter_mut().zip(&dbias).for_each(|(d, g)| *d += g));
            }
            Op::Gelu(x) => {
                let xd = x.to_vec();
                x.accumulate_grad(|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * gelu_grad(xd[i]);
                    }
                });
            }
            Op::Tanh(x) => x.accumulate_grad(|d| {
                for i in 0..d.len() {
                    d[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Dropout(x, mask) => x.accumulate_grad(|d| {
                for i in 0..d.len() {
                    d[i] += g[i] * mask[i];
                }
            }),
            Op::Embedding(weight, ids) => {
                let dim = weight.shape()[1];
                weight.accumulate_grad(|d| {
                    for (pos, &id) in ids.iter().enumerate() {
                        d[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(&g[pos * dim..(pos + 1) * dim])
                            .for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::KeyMask(scores, _) => {
                scores.accumulate_grad(|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::CrossEntropy(logits, targets) => {
                let c = logits.shape()[1];
                let scale = g[0] / targets.len() as f64;
                let ld = logits.to_vec();
                logits.accumulate_grad(|d| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &ld[r * c..(r + 1) * c];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - max).exp() / total;
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[r * c + j] += scale * (p - onehot);
                        }
                    }
                });
            }
            Op::BceWithLogits(logits, targets) => {
                let scale = g[0] / targets.len() as f64;
                let ld = logits.to_vec();
                logits.accumulate_grad(|d| {
                    for i in 0..d.len() {
                        d[i] += scale * (sigmoid(ld[i]) - targets[i]);
                    }
                });
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_axis(op: &'static str, x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.shape().len() {
        return Err(Error::shape(op, x.shape(), &[axis]));
    }
    Ok(())
}

impl Tensor {
    /// `[.., k] x [k, n] -> [.., n]`; the right operand must be a matrix.
    pub fn matmul(&self, w: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), w.shape());
        if a.is_empty() || b.len() != 2 || a[a.len() - 1] != b[0] {
            return Err(Error::shape("matmul", a, b));
        }
        let mut shape = a.to_vec();
        *shape.last_mut().unwrap() = b[1];
        Tensor::from_op(Op::MatMul(self.clone(), w.clone()), shape)
    }

    /// Batched matrix product over matching leading dimensions:
    /// `[.., m, k] x [.., k, n] -> [.., m, n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        let r = a.len();
        if r < 2 || b.len() != r || a[..r - 2] != b[..r - 2] || a[r - 1] != b[r - 2] {
            return Err(Error::shape("bmm", a, b));
        }
        let mut shape = a.to_vec();
        shape[r - 1] = b[r - 1];
        Tensor::from_op(Op::BatchMatMul(self.clone(), other.clone()), shape)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        Tensor::from_op(Op::Add(self.clone(), other.clone()), self.shape().to_vec())
    }

    /// Adds a vector along the last dimension of every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.shape().len() != 1 || self.shape().last() != bias.shape().first() {
            return Err(Error::shape("add_row", self.shape(), bias.shape()));
        }
        Tensor::from_op(Op::AddRow(self.clone(), bias.clone()), self.shape().to_vec())
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        Tensor::from_op(Op::Mul(self.clone(), other.clone()), self.shape().to_vec())
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        Tensor::from_op(Op::Scale(self.clone(), factor), self.shape().to_vec())
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self) -> Result<Tensor> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let r = self.shape().len();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", self.shape(), axes));
        }
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        let map = permutation_map(self.shape(), axes);
        Tensor::from_op(Op::Permute(self.clone(), map), shape)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Tensor::from_op(Op::Reshape(self.clone()), shape.to_vec())
    }

    /// Concatenates along the last dimension; all other dimensions must agree.
    pub fn concat_last_dim(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.is_empty() || a.len() != b.len() || a[..a.len() - 1] != b[..b.len() - 1] {
            return Err(Error::shape("concat_last_dim", a, b));
        }
        let mut shape = a.to_vec();
        *shape.last_mut().unwrap() += b[b.len() - 1];
        Tensor::from_op(Op::Concat(self.clone(), other.clone()), shape)
    }

    /// `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("slice", self, axis)?;
        if start + len > self.shape()[axis] {
            return Err(Error::shape("slice", self.shape(), &[axis, start, len]));
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(
            Op::Slice {
                input: self.clone(),
                axis,
                start,
                len,
            },
            shape,
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", self, axis)?;
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(Op::MeanAxis(self.clone(), axis), shape)
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self) -> Result<Tensor> {
        Tensor::from_op(Op::Sum(self.clone()), vec![])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self, axis)?;
        Tensor::from_op(Op::Softmax(self.clone(), axis), self.shape().to_vec())
    }

    /// Normalizes each row over the last dimension, then applies
    /// `gain * x + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let last = self.shape().last().copied();
        if gain.shape().len() != 1 || Some(gain.shape()[0]) != last || gain.shape() != bias.shape() {
            return Err(Error::shape("layer_norm", self.shape(), gain.shape()));
        }
        Tensor::from_op(
            Op::LayerNorm {
                input: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                eps,
            },
            self.shape().to_vec(),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor> {
        Tensor::from_op(Op::Gelu(self.clone()), self.shape().to_vec())
    }

    pub fn tanh(&self) -> Result<Tensor> {
        Tensor::from_op(Op::Tanh(self.clone()), self.shape().to_vec())
    }

    /// Inverted dropout. The identity when `rng` is `None` or `p == 0`.
    pub fn dropout(&self, p: f64, rng: Option<&mut dyn rand::RngCore>) -> Result<Tensor> {
        use rand::Rng;
        let Some(rng) = rng else {
            return Ok(self.clone());
        };
        if p <= 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - p;
        let mask = (0..self.numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Tensor::from_op(Op::Dropout(self.clone(), mask), self.shape().to_vec())
    }

    /// Gathers rows of a `[vocab, dim]` table; the result has shape
    /// `ids_shape + [dim]`.
    pub fn embedding(&self, ids: &[usize], ids_shape: &[usize]) -> Result<Tensor> {
        if self.shape().len() != 2 || numel(ids_shape) != ids.len() {
            return Err(Error::shape("embedding", self.shape(), ids_shape));
        }
        let vocab = self.shape()[0];
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::IdOutOfRange { id, size: vocab });
        }
        let mut shape = ids_shape.to_vec();
        shape.push(self.shape()[1]);
        Tensor::from_op(Op::Embedding(self.clone(), ids.to_vec()), shape)
    }

    /// Adds [`NEG_INF_BIAS`] to attention logits `[batch, .., keys]` at every
    /// key position whose `key_mask[batch * keys + key]` is zero.
    pub fn mask_keys(&self, key_mask: &[u8]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 2 || key_mask.len() != s[0] * s[s.len() - 1] {
            return Err(Error::shape("mask_keys", s, &[key_mask.len()]));
        }
        let bias = key_mask
            .iter()
            .map(|&m| if m == 0 { NEG_INF_BIAS } else { 0.0 })
            .collect();
        Tensor::from_op(Op::KeyMask(self.clone(), bias), s.to_vec())
    }
}

/// Mean negative log-likelihood of `targets` under `softmax(logits)`;
/// `logits` is `[batch, classes]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
        return Err(Error::shape("cross_entropy", s, &[targets.len()]));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= s[1]) {
        return Err(Error::IdOutOfRange { id: t, size: s[1] });
    }
    Tensor::from_op(Op::CrossEntropy(logits.clone(), targets.to_vec()), vec![])
}

/// Mean over every `[batch, classes]` entry of the sigmoid binary cross
/// entropy, in the overflow-free form `max(z,0) - z*t + ln(1 + e^-|z|)`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    same_shape("bce_with_logits", logits, targets)?;
    if logits.numel() == 0 {
        return Err(Error::shape("bce_with_logits", logits.shape(), targets.shape()));
    }
    Tensor::from_op(Op::BceWithLogits(logits.clone(), targets.to_vec()), vec![])
}
