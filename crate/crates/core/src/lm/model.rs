//! Transformer forward pass built on the autodiff graph.
//!
//! Pre-norm blocks with causal scaled dot-product attention. The same
//! builder serves inference (all tensors as constants) and training (a
//! caller-chosen subset of tensors as trainable graph params), so merged
//! and dynamically-adapted forwards share one code path.

use super::graph::{Graph, NodeId};
use super::lora::ModelView;
use super::scalar::Scalar;
use super::tensor::{Tensor, Trans};
use super::tokenizer::{TokenId, Vocabulary};
use super::LmError;
use std::collections::HashMap;

/// Graph-name of an adapter tensor, e.g. `adapter.INFP.layer0.attn.wq.a`.
pub fn adapter_tensor_name(adapter: &str, target: &str, side: char) -> String {
    format!("adapter.{adapter}.{target}.{side}")
}

/// A forward-pass builder over one model view.
///
/// Leaves for every base and adapter tensor are added once; each call to
/// [`GraphModel::logits`] then appends one sequence's computation, so a
/// whole batch shares parameter nodes and a single backward pass.
pub struct GraphModel<'a, T: Scalar> {
    pub graph: Graph<T>,
    leaves: HashMap<String, NodeId>,
    view: ModelView<'a, T>,
}

impl<'a, T: Scalar> GraphModel<'a, T> {
    /// Builds leaf nodes. `trainable` decides, by graph-name, which tensors
    /// become differentiable params; everything else is a frozen constant.
    pub fn new(view: ModelView<'a, T>, trainable: &dyn Fn(&str) -> bool) -> Self {
        let mut graph = Graph::new();
        let mut leaves = HashMap::new();
        let params = view.params();
        for name in params.names() {
            let tensor = params.tensor(name).clone();
            let node = if trainable(name) {
                graph.param(tensor)
            } else {
                graph.input(tensor)
            };
            leaves.insert(name.clone(), node);
        }
        for adapter in view.adapters() {
            for pair in &adapter.pairs {
                for (side, tensor) in [('a', &pair.a), ('b', &pair.b)] {
                    let name = adapter_tensor_name(&adapter.name, &pair.target, side);
                    let node = if trainable(&name) {
                        graph.param(tensor.clone())
                    } else {
                        graph.input(tensor.clone())
                    };
                    leaves.insert(name, node);
                }
            }
        }
        GraphModel {
            graph,
            leaves,
            view,
        }
    }

    /// Frozen view: every tensor is a constant.
    pub fn frozen(view: ModelView<'a, T>) -> Self {
        Self::new(view, &|_| false)
    }

    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    /// Linear projection through a base weight plus any attached adapters.
    fn project(&mut self, x: NodeId, target: &str) -> NodeId {
        let w = self.leaves[target];
        let mut y = self.graph.matmul(x, Trans::No, w, Trans::Yes);
        for adapter in self.view.adapters().to_vec() {
            if adapter.pair(target).is_some() {
                let a = self.leaves[&adapter_tensor_name(&adapter.name, target, 'a')];
                let b = self.leaves[&adapter_tensor_name(&adapter.name, target, 'b')];
                let xa = self.graph.matmul(x, Trans::No, a, Trans::Yes);
                let xab = self.graph.matmul(xa, Trans::No, b, Trans::Yes);
                let scaled = self.graph.scale(xab, T::from_f64(adapter.scaling()));
                y = self.graph.add(y, scaled);
            }
        }
        y
    }

    /// Appends one sequence's forward pass; returns the `[len, vocab]`
    /// logits node.
    pub fn logits(&mut self, tokens: &[TokenId]) -> Result<NodeId, LmError> {
        let cfg = self.view.params().config().clone();
        if tokens.len() > cfg.context_len {
            return Err(LmError::ContextOverflow {
                len: tokens.len(),
                context_len: cfg.context_len,
            });
        }
        if tokens.is_empty() {
            return Err(LmError::InvalidConfig {
                reason: "cannot run forward on an empty sequence".into(),
            });
        }
        let g = &mut self.graph;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = g.embed(self.leaves["embed.tok"], tokens);
        let pos = g.embed(self.leaves["embed.pos"], &positions);
        let mut h = g.add(tok, pos);

        let head_dim = cfg.head_dim();
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());

        for i in 0..cfg.layers {
            let p = format!("layer{i}");
            let ln1 = {
                let gain = self.leaves[&format!("{p}.ln1.gain")];
                let bias = self.leaves[&format!("{p}.ln1.bias")];
                self.graph.layer_norm(h, gain, bias)
            };
            let q = self.project(ln1, &format!("{p}.attn.wq"));
            let k = self.project(ln1, &format!("{p}.attn.wk"));
            let v = self.project(ln1, &format!("{p}.attn.wv"));

            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let start = head * head_dim;
                let g = &mut self.graph;
                let qh = g.slice_cols(q, start, head_dim);
                let kh = g.slice_cols(k, start, head_dim);
                let vh = g.slice_cols(v, start, head_dim);
                let scores = g.matmul(qh, Trans::No, kh, Trans::Yes);
                let scaled = g.scale(scores, scale);
                let probs = g.causal_softmax(scaled);
                let ctx = g.matmul(probs, Trans::No, vh, Trans::No);
                heads.push(ctx);
            }
            let ctx = self.graph.concat_cols(&heads);
            let attn_out = self.project(ctx, &format!("{p}.attn.wo"));
            h = self.graph.add(h, attn_out);

            let ln2 = {
                let gain = self.leaves[&format!("{p}.ln2.gain")];
                let bias = self.leaves[&format!("{p}.ln2.bias")];
                self.graph.layer_norm(h, gain, bias)
            };
            let g = &mut self.graph;
            let w1 = self.leaves[&format!("{p}.ff.w1")];
            let b1 = self.leaves[&format!("{p}.ff.b1")];
            let w2 = self.leaves[&format!("{p}.ff.w2")];
            let b2 = self.leaves[&format!("{p}.ff.b2")];
            let f1 = g.matmul(ln2, Trans::No, w1, Trans::Yes);
            let f1 = g.add_bias(f1, b1);
            let act = g.gelu(f1);
            let f2 = g.matmul(act, Trans::No, w2, Trans::Yes);
            let f2 = g.add_bias(f2, b2);
            h = g.add(h, f2);
        }

        let g = &mut self.graph;
        let gain = self.leaves["final_ln.gain"];
        let bias = self.leaves["final_ln.bias"];
        let hn = g.layer_norm(h, gain, bias);
        Ok(g.matmul(hn, Trans::No, self.leaves["head.w"], Trans::Yes))
    }

    /// Appends the scored log-probability of `completion` given `prompt`:
    /// the sum over completion tokens of `log p(token | preceding tokens)`.
    /// Prompt tokens contribute nothing.
    pub fn sequence_logprob_node(
        &mut self,
        prompt: &[TokenId],
        completion: &[TokenId],
    ) -> Result<NodeId, LmError> {
        let mut seq = Vec::with_capacity(1 + prompt.len() + completion.len());
        seq.push(Vocabulary::BOS);
        seq.extend_from_slice(prompt);
        seq.extend_from_slice(completion);
        let logits = self.logits(&seq)?;
        let boundary = 1 + prompt.len();
        let targets: Vec<Option<usize>> = (0..seq.len())
            .map(|i| {
                if i + 1 >= boundary && i + 1 < seq.len() {
                    Some(seq[i + 1])
                } else {
                    None
                }
            })
            .collect();
        Ok(self.graph.seq_log_prob(logits, &targets))
    }
}

/// Logits (and derived log-probabilities) for one sequence.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    /// Per-position log-probabilities; each row exponentiates to a
    /// distribution summing to 1 within 1e-6. The log-sum-exp accumulates
    /// in f64 so the invariant holds at f32 too.
    pub fn log_probs(&self) -> Tensor<T> {
        let (rows, cols) = (self.logits.rows(), self.logits.cols());
        let mut out = vec![T::ZERO; rows * cols];
        for i in 0..rows {
            let row = self.logits.row(i);
            let mx = row
                .iter()
                .map(|v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&x| (x.to_f64() - mx).exp()).sum();
            let lse = mx + sum.ln();
            for (o, &x) in out[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                *o = T::from_f64(x.to_f64() - lse);
            }
        }
        Tensor::from_vec(self.logits.shape(), out)
    }
}

/// Causal logits for a token sequence under a model view.
pub fn forward<T: Scalar>(
    view: &ModelView<'_, T>,
    tokens: &[TokenId],
) -> Result<ForwardOutput<T>, LmError> {
    let mut gm = GraphModel::frozen(view.clone());
    let node = gm.logits(tokens)?;
    Ok(ForwardOutput {
        logits: gm.graph.value(node).clone(),
    })
}

/// Log-probability (nats) of `completion` given `prompt`. An empty
/// completion scores exactly zero.
pub fn sequence_logprob<T: Scalar>(
    view: &ModelView<'_, T>,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<f64, LmError> {
    if completion.is_empty() {
        // Still enforce the context precondition.
        let len = 1 + prompt.len();
        let ctx = view.params().config().context_len;
        if len > ctx {
            return Err(LmError::ContextOverflow {
                len,
                context_len: ctx,
            });
        }
        return Ok(0.0);
    }
    let mut gm = GraphModel::frozen(view.clone());
    let node = gm.sequence_logprob_node(prompt, completion)?;
    Ok(gm.graph.value(node).item().to_f64())
}
