//! Low-rank adapters: swappable personality plug-ins for the base model.
//!
//! Each adapter carries a pair `(A: r×in, B: out×r)` for every attention
//! projection. A targeted weight `W` behaves as `W + (alpha/r)·B·A`; with
//! `B = 0` the adapter is exactly the identity, which is how fresh adapters
//! start.

use super::config::ModelConfig;
use super::scalar::Scalar;
use super::tensor::{matmul, Tensor, Trans};
use super::LmError;
use super::ParameterStore;
use crate::util::Pcg;
use std::collections::HashMap;

/// Attention projection suffixes targeted by adapters.
pub const LORA_TARGETS: [&str; 4] = ["wq", "wk", "wv", "wo"];

/// Default adapter rank.
pub const DEFAULT_RANK: usize = 4;
/// Default adapter scale alpha.
pub const DEFAULT_ALPHA: f64 = 8.0;

/// One low-rank pair attached to a named base weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<T> {
    /// Base tensor name, e.g. `layer0.attn.wq`.
    pub target: String,
    /// `r × in` projection, normally initialized.
    pub a: Tensor<T>,
    /// `out × r` projection, zero at initialization.
    pub b: Tensor<T>,
}

/// A named adapter covering every attention projection of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    pub name: String,
    pub rank: usize,
    pub alpha: f64,
    pub pairs: Vec<LoraPair<T>>,
}

impl<T: Scalar> LoraAdapter<T> {
    /// Fresh adapter for a model: `A` drawn from a scaled normal (seeded by
    /// the adapter name and given seed), `B` exactly zero.
    pub fn init(name: &str, config: &ModelConfig, rank: usize, alpha: f64, seed: u64) -> Self {
        assert!(rank >= 1, "rank must be at least 1");
        let d = config.model_dim;
        let mut rng = Pcg::new(crate::util::stable_hash(seed, &["lora", name]));
        let std = 0.02;
        let mut pairs = Vec::new();
        for layer in 0..config.layers {
            for w in LORA_TARGETS {
                let a_data = (0..rank * d)
                    .map(|_| T::from_f64(rng.normal() * std))
                    .collect();
                pairs.push(LoraPair {
                    target: format!("layer{layer}.attn.{w}"),
                    a: Tensor::from_vec(&[rank, d], a_data),
                    b: Tensor::zeros(&[d, rank]),
                });
            }
        }
        LoraAdapter {
            name: name.to_string(),
            rank,
            alpha,
            pairs,
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn pair(&self, target: &str) -> Option<&LoraPair<T>> {
        self.pairs.iter().find(|p| p.target == target)
    }

    /// Verifies that every pair's shapes match the base model's weights.
    pub fn check_shapes(&self, params: &ParameterStore<T>) -> Result<(), LmError> {
        for pair in &self.pairs {
            let base = params.get(&pair.target).ok_or_else(|| LmError::ShapeMismatch {
                name: pair.target.clone(),
                expected: vec![],
                got: vec![],
            })?;
            let (out_dim, in_dim) = (base.rows(), base.cols());
            if pair.a.shape() != [self.rank, in_dim] {
                return Err(LmError::ShapeMismatch {
                    name: format!("{}.lora_a", pair.target),
                    expected: vec![self.rank, in_dim],
                    got: pair.a.shape().to_vec(),
                });
            }
            if pair.b.shape() != [out_dim, self.rank] {
                return Err(LmError::ShapeMismatch {
                    name: format!("{}.lora_b", pair.target),
                    expected: vec![out_dim, self.rank],
                    got: pair.b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// The dense update `(alpha/r)·B·A` for a target, for tests and merges.
    pub fn delta(&self, target: &str) -> Option<Tensor<T>> {
        let pair = self.pair(target)?;
        let mut d = matmul(&pair.b, Trans::No, &pair.a, Trans::No);
        let s = T::from_f64(self.scaling());
        for v in d.data_mut() {
            *v *= s;
        }
        Some(d)
    }

    pub fn cast<U: Scalar>(&self) -> LoraAdapter<U> {
        LoraAdapter {
            name: self.name.clone(),
            rank: self.rank,
            alpha: self.alpha,
            pairs: self
                .pairs
                .iter()
                .map(|p| LoraPair {
                    target: p.target.clone(),
                    a: p.a.cast(),
                    b: p.b.cast(),
                })
                .collect(),
        }
    }
}

/// A base parameter store plus the adapters currently attached, in attach
/// order. Stacking distinct adapters applies every low-rank term.
///
/// Views borrow the store and adapters; they cannot outlive either.
#[derive(Clone)]
pub struct ModelView<'a, T> {
    params: &'a ParameterStore<T>,
    adapters: Vec<&'a LoraAdapter<T>>,
}

impl<'a, T: Scalar> ModelView<'a, T> {
    /// View of the bare base model.
    pub fn base(params: &'a ParameterStore<T>) -> Self {
        ModelView {
            params,
            adapters: Vec::new(),
        }
    }

    pub fn params(&self) -> &'a ParameterStore<T> {
        self.params
    }

    pub fn adapters(&self) -> &[&'a LoraAdapter<T>] {
        &self.adapters
    }

    /// Attaches an adapter after checking shape compatibility.
    pub fn attach(mut self, adapter: &'a LoraAdapter<T>) -> Result<Self, LmError> {
        adapter.check_shapes(self.params)?;
        self.adapters.push(adapter);
        Ok(self)
    }

    /// Removes the named adapter; restores base behavior exactly when the
    /// last adapter is detached.
    pub fn detach(mut self, name: &str) -> Self {
        self.adapters.retain(|a| a.name != name);
        self
    }

    /// Detach-and-attach as one step.
    pub fn swap(self, old_name: &str, new: &'a LoraAdapter<T>) -> Result<Self, LmError> {
        self.detach(old_name).attach(new)
    }
}

/// New store with every adapter delta baked into its target weight; the
/// original store is untouched.
pub fn merge_adapter<T: Scalar>(
    params: &ParameterStore<T>,
    adapter: &LoraAdapter<T>,
) -> Result<ParameterStore<T>, LmError> {
    adapter.check_shapes(params)?;
    let deltas: HashMap<&str, Tensor<T>> = adapter
        .pairs
        .iter()
        .map(|p| (p.target.as_str(), adapter.delta(&p.target).unwrap()))
        .collect();
    let entries = params
        .names()
        .iter()
        .map(|name| {
            let mut t = params.tensor(name).clone();
            if let Some(delta) = deltas.get(name.as_str()) {
                for (v, &d) in t.data_mut().iter_mut().zip(delta.data()) {
                    *v += d;
                }
            }
            (name.clone(), t)
        })
        .collect();
    ParameterStore::from_parts(params.config().clone(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_adapter_has_zero_b() {
        let cfg = ModelConfig::tiny(0);
        let adapter: LoraAdapter<f32> = LoraAdapter::init("INFP", &cfg, 4, 8.0, 0);
        assert_eq!(adapter.pairs.len(), cfg.layers * 4);
        for pair in &adapter.pairs {
            assert!(pair.b.data().iter().all(|&v| v == 0.0));
            assert!(pair.a.data().iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn merge_of_zero_b_adapter_is_identity() {
        let cfg = ModelConfig::tiny(1);
        let params: ParameterStore<f32> = ParameterStore::init(&cfg).unwrap();
        let adapter = LoraAdapter::init("X", &cfg, 2, 4.0, 0);
        let merged = merge_adapter(&params, &adapter).unwrap();
        assert_eq!(params, merged);
    }

    #[test]
    fn merge_leaves_original_untouched() {
        let cfg = ModelConfig::tiny(1);
        let params: ParameterStore<f32> = ParameterStore::init(&cfg).unwrap();
        let before = params.clone();
        let mut adapter = LoraAdapter::init("X", &cfg, 2, 4.0, 0);
        for pair in &mut adapter.pairs {
            for v in pair.b.data_mut() {
                *v = 0.01;
            }
        }
        let merged = merge_adapter(&params, &adapter).unwrap();
        assert_eq!(params, before);
        assert_ne!(merged, params);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = ModelConfig::tiny(0);
        let other = ModelConfig {
            model_dim: 32,
            heads: 2,
            ..cfg.clone()
        };
        let params: ParameterStore<f32> = ParameterStore::init(&cfg).unwrap();
        let adapter = LoraAdapter::init("X", &other, 2, 4.0, 0);
        assert!(matches!(
            adapter.check_shapes(&params),
            Err(LmError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn view_attach_detach_swap() {
        let cfg = ModelConfig::tiny(0);
        let params: ParameterStore<f32> = ParameterStore::init(&cfg).unwrap();
        let a = LoraAdapter::init("INFP", &cfg, 2, 4.0, 0);
        let b = LoraAdapter::init("INTJ", &cfg, 2, 4.0, 0);

        let view = ModelView::base(&params).attach(&a).unwrap();
        assert_eq!(view.adapters().len(), 1);
        let view = view.swap("INFP", &b).unwrap();
        assert_eq!(view.adapters()[0].name, "INTJ");
        let view = view.detach("INTJ");
        assert!(view.adapters().is_empty());
    }
}
