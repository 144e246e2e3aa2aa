//! Reverse-mode autodiff over tensor operations.
//!
//! Values are computed eagerly as nodes are appended, so the node list is
//! already a topological order; `backward` walks it in reverse. The op set
//! is exactly what the transformer forward pass and the two training losses
//! need, each with a hand-written vector-Jacobian product.

use super::scalar::Scalar;
use super::tensor::{matmul, Tensor, Trans};
use super::LmError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: Trans,
        tb: Trans,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        a: NodeId,
        bias: NodeId,
    },
    Scale {
        a: NodeId,
        c: T,
    },
    Gelu {
        a: NodeId,
    },
    LayerNorm {
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        // per-row (mean, 1/sigma)
        stats: Vec<(T, T)>,
    },
    CausalSoftmax {
        a: NodeId,
    },
    SliceCols {
        a: NodeId,
        start: usize,
    },
    ConcatCols {
        parts: Vec<NodeId>,
    },
    Embed {
        table: NodeId,
        ids: Vec<usize>,
    },
    SeqLogProb {
        logits: NodeId,
        targets: Vec<usize>,
        // softmax probabilities for each scored row
        scored: Vec<(usize, Vec<T>)>,
    },
    Softplus {
        a: NodeId,
    },
    Sum {
        a: NodeId,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. the node, if the node required grad and
    /// was reached by backpropagation.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }
}

/// Eagerly-evaluated computation graph.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable leaf; `backward` produces a gradient for it.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, ta: Trans, b: NodeId, tb: Trans) -> NodeId {
        let value = matmul(self.value(a), ta, self.value(b), tb);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, rg, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(va.shape(), data);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, rg, Op::Add { a, b })
    }

    /// Adds a vector bias to every row of a matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(va.cols(), vb.len(), "bias length mismatch");
        let mut value = va.clone();
        let cols = value.cols();
        for i in 0..value.rows() {
            let row = &mut value.data_mut()[i * cols..(i + 1) * cols];
            for (r, &b) in row.iter_mut().zip(vb.data()) {
                *r += b;
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        self.push(value, rg, Op::AddBias { a, bias })
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let value = Tensor::from_vec(self.value(a).shape(), data);
        let rg = self.needs(a);
        self.push(value, rg, Op::Scale { a, c })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::from_vec(self.value(a).shape(), data);
        let rg = self.needs(a);
        self.push(value, rg, Op::Gelu { a })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        let eps = T::from_f64(1e-5);
        let inv_n = T::from_f64(1.0 / cols as f64);
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();

        let mut out = vec![T::ZERO; rows * cols];
        let mut stats = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = va.row(i);
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() * inv_n;
            let rstd = T::ONE / (var + eps).sqrt();
            stats.push((mean, rstd));
            let orow = &mut out[i * cols..(i + 1) * cols];
            for j in 0..cols {
                orow[j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let value = Tensor::from_vec(va.shape(), out);
        let rg = self.needs(a) || self.needs(gain) || self.needs(bias);
        self.push(
            value,
            rg,
            Op::LayerNorm {
                a,
                gain,
                bias,
                stats,
            },
        )
    }

    /// Row-wise softmax over a square score matrix where row `i` may attend
    /// to columns `0..=i` only.
    pub fn causal_softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let n = va.rows();
        assert_eq!(n, va.cols(), "causal softmax expects a square matrix");
        let mut out = vec![T::ZERO; n * n];
        for i in 0..n {
            let row = va.row(i);
            let visible = &row[..=i];
            let mx = visible
                .iter()
                .copied()
                .fold(T::from_f64(f64::NEG_INFINITY), |m, v| m.max(v));
            let mut denom = T::ZERO;
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..=i {
                let e = (row[j] - mx).exp();
                orow[j] = e;
                denom += e;
            }
            let inv = T::ONE / denom;
            for o in orow[..=i].iter_mut() {
                *o *= inv;
            }
        }
        let value = Tensor::from_vec(&[n, n], out);
        let rg = self.needs(a);
        self.push(value, rg, Op::CausalSoftmax { a })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert!(start + len <= cols, "column slice out of range");
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let value = Tensor::from_vec(&[rows, len], out);
        let rg = self.needs(a);
        self.push(value, rg, Op::SliceCols { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::from_vec(&[rows, total], out);
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(
            value,
            rg,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Gathers embedding rows for a token id sequence.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let vt = self.value(table);
        let dim = vt.cols();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(vt.row(id));
        }
        let value = Tensor::from_vec(&[ids.len(), dim], out);
        let rg = self.needs(table);
        self.push(
            value,
            rg,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Sum of next-token log-probabilities at the scored positions.
    ///
    /// `targets[t]`, where present, is the token expected at row `t` of the
    /// logits (i.e. the target for the position the row predicts). Rows with
    /// `None` contribute nothing and receive no gradient.
    pub fn seq_log_prob(&mut self, logits: NodeId, targets: &[Option<usize>]) -> NodeId {
        let vl = self.value(logits);
        assert_eq!(targets.len(), vl.rows(), "one target slot per logit row");
        let vocab = vl.cols();
        let mut total = T::ZERO;
        let mut scored = Vec::new();
        let mut target_ids = vec![usize::MAX; targets.len()];
        for (t, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            assert!(y < vocab, "target id out of vocabulary");
            target_ids[t] = y;
            let row = vl.row(t);
            let mx = row
                .iter()
                .copied()
                .fold(T::from_f64(f64::NEG_INFINITY), |m, v| m.max(v));
            let mut denom = T::ZERO;
            let mut probs = vec![T::ZERO; vocab];
            for (p, &x) in probs.iter_mut().zip(row) {
                let e = (x - mx).exp();
                *p = e;
                denom += e;
            }
            let inv = T::ONE / denom;
            for p in probs.iter_mut() {
                *p *= inv;
            }
            // log p(y) = (x_y - mx) - ln(denom)
            total += (row[y] - mx) - denom.ln();
            scored.push((t, probs));
        }
        let rg = self.needs(logits);
        self.push(
            Tensor::scalar(total),
            rg,
            Op::SeqLogProb {
                logits,
                targets: target_ids,
                scored,
            },
        )
    }

    /// Numerically stable `ln(1 + e^x)`, elementwise.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.max(T::ZERO) + (-(x.abs())).exp().ln_1p())
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data);
        let rg = self.needs(a);
        self.push(value, rg, Op::Softplus { a })
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), rg, Op::Sum { a })
    }

    /// Mean of scalar nodes.
    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        self.scale(acc, T::from_f64(1.0 / parts.len() as f64))
    }

    /// Reverse-mode gradients of a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, LmError> {
        if !self.value(loss).is_scalar() {
            return Err(LmError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.needs(*a) {
                        let da = match (ta, tb) {
                            (Trans::No, Trans::No) => matmul(&g, Trans::No, vb, Trans::Yes),
                            (Trans::No, Trans::Yes) => matmul(&g, Trans::No, vb, Trans::No),
                            (Trans::Yes, Trans::No) => matmul(vb, Trans::No, &g, Trans::Yes),
                            (Trans::Yes, Trans::Yes) => unreachable!(),
                        };
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let db = match (ta, tb) {
                            (Trans::No, Trans::No) => matmul(va, Trans::Yes, &g, Trans::No),
                            (Trans::No, Trans::Yes) => matmul(&g, Trans::Yes, va, Trans::No),
                            (Trans::Yes, Trans::No) => matmul(va, Trans::No, &g, Trans::No),
                            (Trans::Yes, Trans::Yes) => unreachable!(),
                        };
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                }
                Op::AddBias { a, bias } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*bias) {
                        let cols = g.cols();
                        let mut db = vec![T::ZERO; cols];
                        for i in 0..g.rows() {
                            for (d, &gv) in db.iter_mut().zip(g.row(i)) {
                                *d += gv;
                            }
                        }
                        accumulate(
                            &mut grads[bias.0],
                            Tensor::from_vec(self.nodes[bias.0].value.shape(), db),
                        );
                    }
                }
                Op::Scale { a, c } => {
                    if self.needs(*a) {
                        let da = g.data().iter().map(|&x| x * *c).collect();
                        accumulate(&mut grads[a.0], Tensor::from_vec(g.shape(), da));
                    }
                }
                Op::Gelu { a } => {
                    if self.needs(*a) {
                        let va = &self.nodes[a.0].value;
                        let da = va
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&x, &gv)| gv * gelu_deriv(x))
                            .collect();
                        accumulate(&mut grads[a.0], Tensor::from_vec(g.shape(), da));
                    }
                }
                Op::LayerNorm {
                    a,
                    gain,
                    bias,
                    stats,
                } => {
                    let va = &self.nodes[a.0].value;
                    let vg = &self.nodes[gain.0].value;
                    let (rows, cols) = (va.rows(), va.cols());
                    let inv_n = T::from_f64(1.0 / cols as f64);
                    let gain_data = vg.data();

                    let mut da = if self.needs(*a) {
                        Some(vec![T::ZERO; rows * cols])
                    } else {
                        None
                    };
                    let mut dgain = if self.needs(*gain) {
                        Some(vec![T::ZERO; cols])
                    } else {
                        None
                    };
                    let mut dbias = if self.needs(*bias) {
                        Some(vec![T::ZERO; cols])
                    } else {
                        None
                    };

                    for i in 0..rows {
                        let (mean, rstd) = stats[i];
                        let xrow = va.row(i);
                        let grow = g.row(i);
                        if let Some(db) = dbias.as_mut() {
                            for (d, &gv) in db.iter_mut().zip(grow) {
                                *d += gv;
                            }
                        }
                        if let Some(dg) = dgain.as_mut() {
                            for j in 0..cols {
                                dg[j] += grow[j] * (xrow[j] - mean) * rstd;
                            }
                        }
                        if let Some(dx) = da.as_mut() {
                            // dxhat = g * gain; dx = (dxhat - mean(dxhat)
                            //   - xhat * mean(dxhat * xhat)) * rstd
                            let mut sum_dxhat = T::ZERO;
                            let mut sum_dxhat_xhat = T::ZERO;
                            for j in 0..cols {
                                let xhat = (xrow[j] - mean) * rstd;
                                let dxhat = grow[j] * gain_data[j];
                                sum_dxhat += dxhat;
                                sum_dxhat_xhat += dxhat * xhat;
                            }
                            let m1 = sum_dxhat * inv_n;
                            let m2 = sum_dxhat_xhat * inv_n;
                            let drow = &mut dx[i * cols..(i + 1) * cols];
                            for j in 0..cols {
                                let xhat = (xrow[j] - mean) * rstd;
                                let dxhat = grow[j] * gain_data[j];
                                drow[j] = (dxhat - m1 - xhat * m2) * rstd;
                            }
                        }
                    }
                    if let Some(dx) = da {
                        accumulate(&mut grads[a.0], Tensor::from_vec(va.shape(), dx));
                    }
                    if let Some(dg) = dgain {
                        accumulate(&mut grads[gain.0], Tensor::from_vec(vg.shape(), dg));
                    }
                    if let Some(db) = dbias {
                        accumulate(
                            &mut grads[bias.0],
                            Tensor::from_vec(self.nodes[bias.0].value.shape(), db),
                        );
                    }
                }
                Op::CausalSoftmax { a } => {
                    if self.needs(*a) {
                        let p = &node.value;
                        let n = p.rows();
                        let mut da = vec![T::ZERO; n * n];
                        for i in 0..n {
                            let prow = p.row(i);
                            let grow = g.row(i);
                            let mut dotv = T::ZERO;
                            for j in 0..=i {
                                dotv += grow[j] * prow[j];
                            }
                            let drow = &mut da[i * n..(i + 1) * n];
                            for j in 0..=i {
                                drow[j] = prow[j] * (grow[j] - dotv);
                            }
                        }
                        accumulate(&mut grads[a.0], Tensor::from_vec(&[n, n], da));
                    }
                }
                Op::SliceCols { a, start } => {
                    if self.needs(*a) {
                        let va = &self.nodes[a.0].value;
                        let (rows, cols) = (va.rows(), va.cols());
                        let len = g.cols();
                        let mut da = vec![T::ZERO; rows * cols];
                        for i in 0..rows {
                            let drow = &mut da[i * cols + start..i * cols + start + len];
                            for (d, &gv) in drow.iter_mut().zip(g.row(i)) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads[a.0], Tensor::from_vec(va.shape(), da));
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.cols();
                        if self.needs(p) {
                            let rows = g.rows();
                            let mut dp = Vec::with_capacity(rows * w);
                            for i in 0..rows {
                                dp.extend_from_slice(&g.row(i)[offset..offset + w]);
                            }
                            accumulate(&mut grads[p.0], Tensor::from_vec(&[rows, w], dp));
                        }
                        offset += w;
                    }
                }
                Op::Embed { table, ids } => {
                    if self.needs(*table) {
                        let vt = &self.nodes[table.0].value;
                        let dim = vt.cols();
                        let mut dt = vec![T::ZERO; vt.len()];
                        for (t, &id) in ids.iter().enumerate() {
                            let drow = &mut dt[id * dim..(id + 1) * dim];
                            for (d, &gv) in drow.iter_mut().zip(g.row(t)) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads[table.0], Tensor::from_vec(vt.shape(), dt));
                    }
                }
                Op::SeqLogProb {
                    logits,
                    targets,
                    scored,
                } => {
                    if self.needs(*logits) {
                        let vl = &self.nodes[logits.0].value;
                        let gv = g.item();
                        let vocab = vl.cols();
                        let mut dl = vec![T::ZERO; vl.len()];
                        for (t, probs) in scored {
                            let y = targets[*t];
                            let drow = &mut dl[t * vocab..(t + 1) * vocab];
                            for (d, &p) in drow.iter_mut().zip(probs) {
                                *d -= gv * p;
                            }
                            drow[y] += gv;
                        }
                        accumulate(&mut grads[logits.0], Tensor::from_vec(vl.shape(), dl));
                    }
                }
                Op::Softplus { a } => {
                    if self.needs(*a) {
                        let va = &self.nodes[a.0].value;
                        let da = va
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&x, &gv)| gv * (T::ONE / (T::ONE + (-x).exp())))
                            .collect();
                        accumulate(&mut grads[a.0], Tensor::from_vec(g.shape(), da));
                    }
                }
                Op::Sum { a } => {
                    if self.needs(*a) {
                        let va = &self.nodes[a.0].value;
                        let gv = g.item();
                        let da = vec![gv; va.len()];
                        accumulate(&mut grads[a.0], Tensor::from_vec(va.shape(), da));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        None => *slot = Some(delta),
        Some(acc) => {
            debug_assert_eq!(acc.shape(), delta.shape());
            for (a, &d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

fn gelu_deriv<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three_a = T::from_f64(3.0 * GELU_A);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = T::ONE - th * th;
    half * (T::ONE + th) + half * x * sech2 * c * (T::ONE + three_a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        let denom = a.abs().max(b.abs()).max(1e-8);
        assert!(
            (a - b).abs() / denom < tol,
            "{what}: analytic {a} vs fd {b}"
        );
    }

    fn fd_on<F>(leaf: Tensor<f64>, coord: usize, builder: F) -> (f64, f64)
    where
        F: Fn(&mut Graph<f64>, NodeId) -> NodeId,
    {
        let eps = 1e-5;
        let mut g = Graph::new();
        let p = g.param(leaf.clone());
        let loss = builder(&mut g, p);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(p).unwrap().data()[coord];

        let eval = |delta: f64| {
            let mut t = leaf.clone();
            t.data_mut()[coord] += delta;
            let mut g = Graph::new();
            let p = g.input(t);
            let loss = builder(&mut g, p);
            g.value(loss).item()
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        (analytic, fd)
    }

    #[test]
    fn simple_product_gradient() {
        // loss = sum(w * x) with x = 3: d/dw = 3.
        let w = Tensor::from_vec(&[1, 1], vec![2.0]);
        let (analytic, _) = fd_on(w, 0, |g, p| {
            let x = g.input(Tensor::from_vec(&[1, 1], vec![3.0]));
            let y = g.matmul(p, Trans::No, x, Trans::No);
            g.sum(y)
        });
        assert!((analytic - 3.0).abs() < 1e-12);
    }

    #[test]
    fn op_fd_agree() {
        let leaf = Tensor::from_vec(
            &[2, 4],
            vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9, -1.3, 0.5],
        );
        let other = Tensor::from_vec(
            &[3, 4],
            vec![0.1, 0.2, -0.3, 0.4, 0.7, -0.6, 0.5, -0.2, 0.05, 0.5, -0.15, 0.25],
        );

        // matmul nt + gelu + sum
        for coord in [0, 3, 7] {
            let o = other.clone();
            let (a, fd) = fd_on(leaf.clone(), coord, move |g, p| {
                let w = g.input(o.clone());
                let y = g.matmul(p, Trans::No, w, Trans::Yes);
                let z = g.gelu(y);
                g.sum(z)
            });
            assert_close(a, fd, 1e-6, "matmul+gelu");
        }

        // layer norm with gain/bias
        for coord in [1, 5] {
            let (a, fd) = fd_on(leaf.clone(), coord, |g, p| {
                let gain = g.input(Tensor::from_vec(&[4], vec![1.2, 0.8, 1.0, 1.5]));
                let bias = g.input(Tensor::from_vec(&[4], vec![0.1, -0.2, 0.0, 0.3]));
                let y = g.layer_norm(p, gain, bias);
                let z = g.gelu(y);
                g.sum(z)
            });
            assert_close(a, fd, 1e-5, "layer_norm");
        }

        // causal softmax on a square slice
        let sq = Tensor::from_vec(&[2, 2], vec![0.5, -0.3, 0.8, 0.1]);
        for coord in [0, 2, 3] {
            let (a, fd) = fd_on(sq.clone(), coord, |g, p| {
                let sm = g.causal_softmax(p);
                let w = g.input(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
                let y = g.matmul(sm, Trans::No, w, Trans::No);
                g.sum(y)
            });
            assert_close(a, fd, 1e-6, "causal_softmax");
        }

        // seq_log_prob
        let logits = Tensor::from_vec(&[2, 3], vec![0.2, 1.1, -0.5, 0.7, 0.1, 0.4]);
        for coord in 0..6 {
            let (a, fd) = fd_on(logits.clone(), coord, |g, p| {
                g.seq_log_prob(p, &[Some(1), Some(2)])
            });
            assert_close(a, fd, 1e-6, "seq_log_prob");
        }

        // softplus + scale + bias, slice/concat
        for coord in [2, 6] {
            let (a, fd) = fd_on(leaf.clone(), coord, |g, p| {
                let left = g.slice_cols(p, 0, 2);
                let right = g.slice_cols(p, 2, 2);
                let back = g.concat_cols(&[right, left]);
                let bias = g.input(Tensor::from_vec(&[4], vec![0.05, -0.1, 0.2, 0.0]));
                let y = g.add_bias(back, bias);
                let z = g.softplus(y);
                let s = g.scale(z, 0.7);
                g.sum(s)
            });
            assert_close(a, fd, 1e-6, "slice/concat/softplus");
        }

        // embedding gather with a repeated id accumulates
        let table = Tensor::from_vec(&[3, 2], vec![0.5, -0.2, 0.3, 0.9, -0.4, 0.6]);
        for coord in [0, 3] {
            let (a, fd) = fd_on(table.clone(), coord, |g, p| {
                let e = g.embed(p, &[1, 0, 1]);
                let z = g.gelu(e);
                g.sum(z)
            });
            assert_close(a, fd, 1e-6, "embed");
        }
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let frozen = g.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]));
        let trainable = g.param(Tensor::from_vec(&[1, 2], vec![0.5, -0.5]));
        let y = g.add(frozen, trainable);
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(frozen).is_none());
        assert!(grads.get(trainable).is_some());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]));
        let err = g.backward(p).err().expect("non-scalar loss must fail");
        assert!(matches!(err, LmError::NonScalarLoss { .. }));
    }

    #[test]
    fn seq_log_prob_with_no_targets_is_zero() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::from_vec(&[2, 3], vec![0.0; 6]));
        let lp = g.seq_log_prob(logits, &[None, None]);
        assert_eq!(g.value(lp).item(), 0.0);
    }
}
