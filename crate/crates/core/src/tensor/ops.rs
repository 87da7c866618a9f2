use super::graph::{Node, Op};
use super::{Graph, Result, Tensor, TensorError, Var};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a [m×k] · b [k×p]`
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in row.iter_mut().zip(&b[kk * p..(kk + 1) * p]) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `a [m×k] · bᵀ` where `b` is `[p×k]`
fn mm_bt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let br = &b[j * k..(j + 1) * k];
            out[i * p + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b` where `a` is `[m×k]` and `b` is `[m×p]`
fn mm_at(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * p];
    for i in 0..m {
        let br = &b[i * p..(i + 1) * p];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bij) in out[kk * p..(kk + 1) * p].iter_mut().zip(br) {
                *o += aik * bij;
            }
        }
    }
    out
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims2() != b.dims2() || a.numel() != b.numel() {
        return Err(TensorError::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// Row-wise softmax of `logits + mask`, where `mask` entries are 0 or -inf.
pub(crate) fn softmax_rows(logits: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let (m, n) = logits.dims2();
    if let Some(mask) = mask {
        let (mm_, mn) = mask.dims2();
        if mn != n || !(mm_ == m || mm_ == 1) {
            return Err(TensorError::Dimension {
                op: "masked_softmax",
                left: logits.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &logits.data[i * n..(i + 1) * n];
        let z: Vec<f64> = match mask {
            Some(mask) => {
                let mr = if mask.dims2().0 == 1 { 0 } else { i };
                row.iter().zip(mask.row(mr)).map(|(x, k)| x + k).collect()
            }
            None => row.to_vec(),
        };
        let o = &mut out[i * n..(i + 1) * n];
        if z.iter().any(|v| v.is_nan()) {
            o.fill(f64::NAN);
            continue;
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(TensorError::DegenerateRow { row: i });
        }
        let mut sum = 0.0;
        for (o, &zi) in o.iter_mut().zip(&z) {
            *o = (zi - max).exp();
            sum += *o;
        }
        o.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Tensor {
        shape: logits.shape.clone(),
        data: out,
    })
}

impl Graph {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, p)) = (ta.dims2(), tb.dims2());
        if k != k2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = mm(&ta.data, &tb.data, m, k, p);
        let value = Tensor {
            shape: vec![m, p],
            data,
        };
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let value = zip(ta, tb, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let value = zip(ta, tb, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let value = zip(ta, tb, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// `x [m×n] + b [n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (m, n) = tx.dims2();
        if tb.numel() != n {
            return Err(TensorError::Dimension {
                op: "add_row",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data.clone();
        for i in 0..m {
            data[i * n..(i + 1) * n]
                .iter_mut()
                .zip(&tb.data)
                .for_each(|(d, b)| *d += b);
        }
        let value = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::AddRow(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = map(self.value(x), |v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| 1.0 - v);
        self.push(value, Op::OneMinus(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = map(self.value(x), sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = map(self.value(x), f64::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| {
            0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
        });
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data[i * n + j];
            }
        }
        let value = Tensor {
            shape: vec![n, m],
            data,
        };
        self.push(value, Op::Transpose(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x), None)?;
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Softmax of `logits + mask` along the last axis. `mask` holds 0 or
    /// -inf and either matches `logits` or is a single row broadcast over
    /// all rows. Masked positions come out exactly 0.
    pub fn masked_softmax(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let value = softmax_rows(self.value(x), Some(mask))?;
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of width n.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = tx.dims2();
        if tg.numel() != n || tb.numel() != n {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                left: tx.shape().to_vec(),
                right: tg.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &tx.data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                data[i * n + j] = h * tg.data[j] + tb.data[j];
            }
        }
        let value = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Embedding lookup: rows `ids` of `table [V×d]` stacked into `[len×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::OutOfRange {
                    op: "gather",
                    index: id,
                    extent: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pm != m {
                return Err(TensorError::Dimension {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor {
            shape: vec![m, n],
            data,
        };
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            let (pm, pn) = t.dims2();
            if pn != n {
                return Err(TensorError::Dimension {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            m += pm;
            data.extend_from_slice(&t.data);
        }
        let value = Tensor {
            shape: vec![m, n],
            data,
        };
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if start >= end || end > n {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: end,
                extent: n,
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor {
            shape: vec![m, w],
            data,
        };
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if start >= end || end > m {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                index: end,
                extent: m,
            });
        }
        let value = Tensor {
            shape: vec![end - start, n],
            data: t.data[start * n..end * n].to_vec(),
        };
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data.iter().sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Euclidean distances between every row of `q [m×d]` and every row of
    /// `c [k×d]`, as an `[m×k]` matrix.
    pub fn row_distances(&mut self, q: Var, c: Var) -> Result<Var> {
        let (tq, tc) = (self.value(q), self.value(c));
        let ((m, d), (k, d2)) = (tq.dims2(), tc.dims2());
        if d != d2 {
            return Err(TensorError::Dimension {
                op: "row_distances",
                left: tq.shape().to_vec(),
                right: tc.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                data[i * k + j] = tq
                    .row(i)
                    .iter()
                    .zip(tc.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            }
        }
        let value = Tensor {
            shape: vec![m, k],
            data,
        };
        Ok(self.push(value, Op::RowDistances(q, c), &[q, c]))
    }

    /// Summed cross-entropy of row-wise softmax(`logits`) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (m, k) = t.dims2();
        if targets.len() != m {
            return Err(TensorError::Dimension {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let probs = softmax_rows(t, None)?;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= k {
                return Err(TensorError::OutOfRange {
                    op: "cross_entropy",
                    index: y,
                    extent: k,
                });
            }
            // log-sum-exp form stays finite when the gold probability underflows
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let value = Tensor::scalar(loss);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: probs.data,
            },
            &[logits],
        ))
    }

    /// Summed negative log-likelihood `-ln p[target]` per row of `probs`.
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let (m, k) = t.dims2();
        if targets.len() != m {
            return Err(TensorError::Dimension {
                op: "nll",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= k {
                return Err(TensorError::OutOfRange {
                    op: "nll",
                    index: y,
                    extent: k,
                });
            }
            loss -= t.row(i)[y].ln();
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
            },
            &[probs],
        ))
    }
}

/// Input-gradient contributions of node `i` given its upstream gradient.
pub(crate) fn backward_rule(nodes: &[Node], i: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let node = &nodes[i];
    let y = &node.value;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let ((m, k), (_, p)) = (ta.dims2(), tb.dims2());
            let da = mm_bt(dy, &tb.data, m, p, k);
            let db = mm_at(&ta.data, dy, m, k, p);
            vec![(*a, da), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
        Op::Sub(a, b) => vec![(*a, dy.to_vec()), (*b, dy.iter().map(|g| -g).collect())],
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let da = dy.iter().zip(&tb.data).map(|(g, y)| g * y).collect();
            let db = dy.iter().zip(&ta.data).map(|(g, x)| g * x).collect();
            vec![(*a, da), (*b, db)]
        }
        Op::AddRow(x, b) => {
            let n = val(*b).numel();
            let mut db = vec![0.0; n];
            for row in dy.chunks(n) {
                db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
            }
            vec![(*x, dy.to_vec()), (*b, db)]
        }
        Op::Scale(x, c) => vec![(*x, dy.iter().map(|g| g * c).collect())],
        Op::OneMinus(x) => vec![(*x, dy.iter().map(|g| -g).collect())],
        Op::Sigmoid(x) => vec![(*x, dy.iter().zip(&y.data).map(|(g, s)| g * s * (1.0 - s)).collect())],
        Op::Tanh(x) => vec![(*x, dy.iter().zip(&y.data).map(|(g, t)| g * (1.0 - t * t)).collect())],
        Op::Gelu(x) => {
            let dx = dy
                .iter()
                .zip(&val(*x).data)
                .map(|(g, &v)| {
                    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                })
                .collect();
            vec![(*x, dx)]
        }
        Op::Transpose(x) => {
            let (m, n) = val(*x).dims2();
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = dy[j * m + i];
                }
            }
            vec![(*x, dx)]
        }
        Op::Softmax(x) => {
            let (m, n) = y.dims2();
            let mut dx = vec![0.0; m * n];
            for r in 0..m {
                let ys = &y.data[r * n..(r + 1) * n];
                let gs = &dy[r * n..(r + 1) * n];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dx[r * n + j] = ys[j] * (gs[j] - dot);
                }
            }
            vec![(*x, dx)]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (m, n) = y.dims2();
            let g = &val(*gamma).data;
            let mut dx = vec![0.0; m * n];
            let mut dg = vec![0.0; n];
            let mut db = vec![0.0; n];
            for r in 0..m {
                let gs = &dy[r * n..(r + 1) * n];
                let hs = &xhat[r * n..(r + 1) * n];
                let dh: Vec<f64> = gs.iter().zip(g).map(|(a, b)| a * b).collect();
                let sum_dh: f64 = dh.iter().sum();
                let sum_dh_h: f64 = dh.iter().zip(hs).map(|(a, b)| a * b).sum();
                let nf = n as f64;
                for j in 0..n {
                    dx[r * n + j] = inv_std[r] / nf * (nf * dh[j] - sum_dh - hs[j] * sum_dh_h);
                    dg[j] += gs[j] * hs[j];
                    db[j] += gs[j];
                }
            }
            vec![(*x, dx), (*gamma, dg), (*beta, db)]
        }
        Op::Gather { table, ids } => {
            let t = val(*table);
            let (_, d) = t.dims2();
            let mut dt = vec![0.0; t.numel()];
            for (r, &id) in ids.iter().enumerate() {
                dt[id * d..(id + 1) * d]
                    .iter_mut()
                    .zip(&dy[r * d..(r + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            vec![(*table, dt)]
        }
        Op::ConcatCols(parts) => {
            let (m, n) = y.dims2();
            let mut out = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for &p in parts {
                let w = val(p).dims2().1;
                let mut dp = Vec::with_capacity(m * w);
                for r in 0..m {
                    dp.extend_from_slice(&dy[r * n + offset..r * n + offset + w]);
                }
                out.push((p, dp));
                offset += w;
            }
            out
        }
        Op::ConcatRows(parts) => {
            let mut out = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for &p in parts {
                let len = val(p).numel();
                out.push((p, dy[offset..offset + len].to_vec()));
                offset += len;
            }
            out
        }
        Op::SliceCols { x, start } => {
            let (m, n) = val(*x).dims2();
            let w = y.dims2().1;
            let mut dx = vec![0.0; m * n];
            for r in 0..m {
                dx[r * n + start..r * n + start + w].copy_from_slice(&dy[r * w..(r + 1) * w]);
            }
            vec![(*x, dx)]
        }
        Op::SliceRows { x, start } => {
            let (m, n) = val(*x).dims2();
            let mut dx = vec![0.0; m * n];
            dx[start * n..start * n + dy.len()].copy_from_slice(dy);
            vec![(*x, dx)]
        }
        Op::Sum(x) => vec![(*x, vec![dy[0]; val(*x).numel()])],
        Op::RowDistances(q, c) => {
            let (tq, tc) = (val(*q), val(*c));
            let ((m, d), (k, _)) = (tq.dims2(), tc.dims2());
            let mut dq = vec![0.0; m * d];
            let mut dc = vec![0.0; k * d];
            for i in 0..m {
                for j in 0..k {
                    let dist = y.data[i * k + j];
                    // subgradient 0 at coincident points
                    if dist == 0.0 {
                        continue;
                    }
                    let s = dy[i * k + j] / dist;
                    for t in 0..d {
                        let diff = (tq.data[i * d + t] - tc.data[j * d + t]) * s;
                        dq[i * d + t] += diff;
                        dc[j * d + t] -= diff;
                    }
                }
            }
            vec![(*q, dq), (*c, dc)]
        }
        Op::CrossEntropy { logits, targets, probs } => {
            let k = val(*logits).dims2().1;
            let mut dx: Vec<f64> = probs.iter().map(|p| p * dy[0]).collect();
            for (r, &t) in targets.iter().enumerate() {
                dx[r * k + t] -= dy[0];
            }
            vec![(*logits, dx)]
        }
        Op::Nll { probs, targets } => {
            let t = val(*probs);
            let k = t.dims2().1;
            let mut dp = vec![0.0; t.numel()];
            for (r, &y) in targets.iter().enumerate() {
                dp[r * k + y] -= dy[0] / t.data[r * k + y];
            }
            vec![(*probs, dp)]
        }
    }
}
