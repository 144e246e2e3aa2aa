//! Finite-difference verification of the analytic gradients.
//!
//! The check instantiates the engine at f64, where central differences with
//! eps = 1e-3 resolve relative errors well below 1e-4; the f32 training
//! path runs the identical generic code.

use super::loss::{dpo_loss_node, sft_loss_node, DpoItem};
use crate::lm::lora::LoraAdapter;
use crate::lm::model::{adapter_tensor_name, GraphModel};
use crate::lm::{ModelConfig, ModelView, ParameterStore, Vocabulary};
use crate::util::Pcg;
use serde::Serialize;

/// Which loss to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Sft,
    Dpo,
}

/// Which tensors count as trainable for the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Adapter tensors only — the training path.
    AdapterOnly,
    /// Every model tensor, adapter included.
    FullModel,
}

/// One probed coordinate.
#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub tensor: String,
    pub coord: usize,
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
}

/// Result of a gradient check run.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: Vec<Probe>,
}

/// Near-zero coordinates are compared absolutely at this tolerance instead
/// of relatively.
const ZERO_TOL: f64 = 1e-6;

struct Harness {
    params: ParameterStore<f64>,
    adapter: LoraAdapter<f64>,
    kind: LossKind,
    scope: GradScope,
    beta: f64,
    sft_batch: Vec<(Vec<usize>, Vec<usize>)>,
    dpo_batch: Vec<DpoItem>,
}

impl Harness {
    fn new(kind: LossKind, scope: GradScope, seed: u64) -> Self {
        let cfg = ModelConfig::tiny(seed);
        let params: ParameterStore<f64> = ParameterStore::init(&cfg).unwrap();
        let mut adapter: LoraAdapter<f64> = LoraAdapter::init("probe", &cfg, 2, 4.0, seed);
        // Randomize B so gradients flow through both halves of each pair.
        let mut rng = Pcg::new(seed.wrapping_add(17));
        for pair in &mut adapter.pairs {
            for v in pair.b.data_mut() {
                *v = rng.normal() * 0.05;
            }
        }

        let enc = |s: &str| Vocabulary::encode(s);
        let with_eos = |s: &str| {
            let mut t = Vocabulary::encode(s);
            t.push(Vocabulary::EOS);
            t
        };
        let sft_batch = vec![
            (enc("Q: a\nA: "), with_eos("<mk_T> ok.")),
            (enc("Q: bb\nA: "), with_eos("<mk_F> no.")),
        ];

        // Reference terms for DPO come from a different adapter so the
        // reference margin is a non-trivial constant.
        let mut ref_adapter: LoraAdapter<f64> =
            LoraAdapter::init("ref", &cfg, 2, 4.0, seed.wrapping_add(3));
        for pair in &mut ref_adapter.pairs {
            for v in pair.b.data_mut() {
                *v = rng.normal() * 0.05;
            }
        }
        let ref_view = ModelView::base(&params).attach(&ref_adapter).unwrap();
        let mk_item = |prompt: &str, chosen: &str, rejected: &str| {
            let p = enc(prompt);
            let c = with_eos(chosen);
            let r = with_eos(rejected);
            let lc = crate::lm::sequence_logprob(&ref_view, &p, &c).unwrap();
            let lr = crate::lm::sequence_logprob(&ref_view, &p, &r).unwrap();
            DpoItem {
                prompt: p,
                chosen: c,
                rejected: r,
                ref_chosen_lp: lc,
                ref_rejected_lp: lr,
            }
        };
        let dpo_batch = vec![
            mk_item("Q: a\nA: ", "<mk_F> y.", "<mk_T> n."),
            mk_item("Q: c\nA: ", "<mk_F> go.", "<mk_T> x."),
        ];

        Harness {
            params,
            adapter,
            kind,
            scope,
            beta: 0.5,
            sft_batch,
            dpo_batch,
        }
    }

    fn trainable(&self) -> impl Fn(&str) -> bool + '_ {
        let scope = self.scope;
        move |name: &str| match scope {
            GradScope::AdapterOnly => name.starts_with("adapter."),
            GradScope::FullModel => true,
        }
    }

    fn loss_graph(&self) -> (GraphModel<'_, f64>, crate::lm::graph::NodeId) {
        let view = ModelView::base(&self.params).attach(&self.adapter).unwrap();
        let mut gm = GraphModel::new(view, &self.trainable());
        let node = match self.kind {
            LossKind::Sft => sft_loss_node(&mut gm, &self.sft_batch).unwrap(),
            LossKind::Dpo => dpo_loss_node(&mut gm, &self.dpo_batch, self.beta).unwrap().0,
        };
        (gm, node)
    }

    fn loss_value(&self) -> f64 {
        let (gm, node) = self.loss_graph();
        gm.graph.value(node).item()
    }

    /// Names of trainable tensors, with mutable access for perturbation.
    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.scope == GradScope::FullModel {
            names.extend(self.params.names().iter().cloned());
        }
        for pair in &self.adapter.pairs {
            names.push(adapter_tensor_name(&self.adapter.name, &pair.target, 'a'));
            names.push(adapter_tensor_name(&self.adapter.name, &pair.target, 'b'));
        }
        names
    }

    fn perturb(&mut self, name: &str, coord: usize, delta: f64) {
        if let Some(rest) = name.strip_prefix(&format!("adapter.{}.", self.adapter.name)) {
            let (target, side) = rest.rsplit_once('.').expect("adapter tensor name");
            let pair = self
                .adapter
                .pairs
                .iter_mut()
                .find(|p| p.target == target)
                .expect("known target");
            let tensor = if side == "a" { &mut pair.a } else { &mut pair.b };
            tensor.data_mut()[coord] += delta;
        } else {
            self.params.tensor_mut(name).data_mut()[coord] += delta;
        }
    }

    fn tensor_len(&self, name: &str) -> usize {
        if let Some(rest) = name.strip_prefix(&format!("adapter.{}.", self.adapter.name)) {
            let (target, side) = rest.rsplit_once('.').expect("adapter tensor name");
            let pair = self
                .adapter
                .pairs
                .iter()
                .find(|p| p.target == target)
                .expect("known target");
            if side == "a" {
                pair.a.len()
            } else {
                pair.b.len()
            }
        } else {
            self.params.tensor(name).len()
        }
    }
}

/// Probes `probes` randomly chosen trainable coordinates, comparing the
/// analytic gradient against the central finite difference
/// `(f(x+eps) - f(x-eps)) / 2 eps`. `inject_fault` flips the analytic sign,
/// as a negative control that must make the check fail.
pub fn gradient_check(
    kind: LossKind,
    scope: GradScope,
    probes: usize,
    epsilon: f64,
    seed: u64,
    inject_fault: bool,
) -> GradCheckReport {
    assert!(probes >= 1, "at least one probe required");
    let mut harness = Harness::new(kind, scope, seed);
    let names = harness.tensor_names();
    let mut rng = Pcg::new(seed.wrapping_add(1000));

    // Analytic gradients once.
    let mut analytic: std::collections::HashMap<String, Vec<f64>> = Default::default();
    {
        let (gm, node) = harness.loss_graph();
        let grads = gm.graph.backward(node).unwrap();
        for name in &names {
            let node = gm.leaf(name).expect("leaf exists");
            let g = grads
                .get(node)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; harness.tensor_len(name)]);
            analytic.insert(name.clone(), g);
        }
    }

    let mut out = Vec::with_capacity(probes);
    let mut max_rel = 0.0f64;
    for _ in 0..probes {
        let name = names[rng.below(names.len())].clone();
        let coord = rng.below(harness.tensor_len(&name));
        let mut a = analytic[&name][coord];
        if inject_fault {
            a = -a - 1e-3;
        }

        harness.perturb(&name, coord, epsilon);
        let f_plus = harness.loss_value();
        harness.perturb(&name, coord, -2.0 * epsilon);
        let f_minus = harness.loss_value();
        harness.perturb(&name, coord, epsilon);
        let fd = (f_plus - f_minus) / (2.0 * epsilon);

        let denom = a.abs().max(fd.abs());
        let rel_err = if denom < ZERO_TOL {
            // Degenerate coordinate: absolute comparison at 1e-6.
            if (a - fd).abs() <= ZERO_TOL {
                0.0
            } else {
                (a - fd).abs() / ZERO_TOL
            }
        } else {
            (a - fd).abs() / denom
        };
        max_rel = max_rel.max(rel_err);
        out.push(Probe {
            tensor: name,
            coord,
            analytic: a,
            finite_diff: fd,
            rel_err,
        });
    }

    GradCheckReport {
        max_rel_err: max_rel,
        probes: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sft_gradients_match_finite_differences() {
        let report = gradient_check(LossKind::Sft, GradScope::AdapterOnly, 20, 1e-3, 0, false);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} probes {:#?}",
            report.max_rel_err,
            report.probes
        );
    }

    #[test]
    fn dpo_gradients_match_finite_differences() {
        let report = gradient_check(LossKind::Dpo, GradScope::AdapterOnly, 20, 1e-3, 1, false);
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let report = gradient_check(LossKind::Sft, GradScope::FullModel, 20, 1e-3, 2, false);
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn injected_fault_is_caught() {
        let report = gradient_check(LossKind::Sft, GradScope::AdapterOnly, 5, 1e-3, 3, true);
        assert!(report.max_rel_err >= 1e-4, "negative control must fail");
    }
}
