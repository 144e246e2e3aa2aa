//! Loss graphs for the two training objectives.

use crate::dataset::{BehaviorRecord, PreferencePair, SelfAwarenessRecord};
use crate::lm::graph::NodeId;
use crate::lm::model::GraphModel;
use crate::lm::tokenizer::TokenId;
use crate::lm::{LmError, Scalar, Tensor, Vocabulary};
use crate::prompt::TemplateSet;

/// One supervised example: a formatted prompt and its target completion.
#[derive(Debug, Clone)]
pub struct SftExample {
    pub prompt: String,
    pub completion: String,
}

impl SftExample {
    pub fn from_behavior(record: &BehaviorRecord, templates: &TemplateSet) -> Self {
        SftExample {
            prompt: templates.format_prompt(&record.instruction, &record.input),
            completion: record.response.clone(),
        }
    }

    pub fn from_awareness(record: &SelfAwarenessRecord, templates: &TemplateSet) -> Self {
        SftExample {
            prompt: templates.format_prompt(&record.question, ""),
            completion: record.answer.clone(),
        }
    }

    pub fn prompt_tokens(&self) -> Vec<TokenId> {
        Vocabulary::encode(&self.prompt)
    }

    /// Completion tokens with the EOS the model must learn to emit.
    pub fn completion_tokens(&self) -> Vec<TokenId> {
        let mut t = Vocabulary::encode(&self.completion);
        t.push(Vocabulary::EOS);
        t
    }
}

/// One preference example with both completions.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

impl PairExample {
    pub fn from_pair(pair: &PreferencePair) -> Self {
        PairExample {
            prompt: pair.prompt.clone(),
            chosen: pair.chosen.clone(),
            rejected: pair.rejected.clone(),
        }
    }

    pub fn prompt_tokens(&self) -> Vec<TokenId> {
        Vocabulary::encode(&self.prompt)
    }

    pub fn chosen_tokens(&self) -> Vec<TokenId> {
        let mut t = Vocabulary::encode(&self.chosen);
        t.push(Vocabulary::EOS);
        t
    }

    pub fn rejected_tokens(&self) -> Vec<TokenId> {
        let mut t = Vocabulary::encode(&self.rejected);
        t.push(Vocabulary::EOS);
        t
    }
}

/// Appends the supervised loss for a batch: mean cross-entropy over
/// completion tokens only, averaged over all unmasked tokens in the batch.
/// Prompt tokens are loss-masked.
pub fn sft_loss_node<T: Scalar>(
    gm: &mut GraphModel<'_, T>,
    batch: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<NodeId, LmError> {
    assert!(!batch.is_empty(), "sft batch must be non-empty");
    let mut sum: Option<NodeId> = None;
    let mut total_tokens = 0usize;
    for (prompt, completion) in batch {
        let lp = gm.sequence_logprob_node(prompt, completion)?;
        total_tokens += completion.len();
        sum = Some(match sum {
            None => lp,
            Some(acc) => gm.graph.add(acc, lp),
        });
    }
    let sum = sum.expect("non-empty batch");
    Ok(gm
        .graph
        .scale(sum, T::from_f64(-1.0 / total_tokens as f64)))
}

/// One tokenized DPO item plus its frozen-reference log-probabilities.
#[derive(Debug, Clone)]
pub struct DpoItem {
    pub prompt: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
    pub ref_chosen_lp: f64,
    pub ref_rejected_lp: f64,
}

/// Appends the DPO loss for a batch:
/// mean over pairs of `-log sigmoid(beta * ((lp_c - lr_c) - (lp_r - lr_r)))`
/// where `lp` terms are policy log-probabilities (differentiable) and `lr`
/// terms come from the frozen reference. Also returns each pair's realized
/// margin `(lp_c - lr_c) - (lp_r - lr_r)`.
pub fn dpo_loss_node<T: Scalar>(
    gm: &mut GraphModel<'_, T>,
    batch: &[DpoItem],
    beta: f64,
) -> Result<(NodeId, Vec<f64>), LmError> {
    assert!(!batch.is_empty(), "dpo batch must be non-empty");
    let mut losses = Vec::with_capacity(batch.len());
    let mut margins = Vec::with_capacity(batch.len());
    for item in batch {
        let lp_chosen = gm.sequence_logprob_node(&item.prompt, &item.chosen)?;
        let lp_rejected = gm.sequence_logprob_node(&item.prompt, &item.rejected)?;
        let ref_margin = item.ref_chosen_lp - item.ref_rejected_lp;
        margins.push(
            gm.graph.value(lp_chosen).item().to_f64()
                - gm.graph.value(lp_rejected).item().to_f64()
                - ref_margin,
        );
        let neg_rejected = gm.graph.scale(lp_rejected, -T::ONE);
        let policy_margin = gm.graph.add(lp_chosen, neg_rejected);
        let ref_node = gm.graph.input(Tensor::scalar(T::from_f64(-ref_margin)));
        let margin = gm.graph.add(policy_margin, ref_node);
        let neg_z = gm.graph.scale(margin, T::from_f64(-beta));
        losses.push(gm.graph.softplus(neg_z));
    }
    Ok((gm.graph.mean_scalars(&losses), margins))
}

/// Scalar form of the DPO objective, used as the independent oracle in
/// tests: `-ln sigmoid(beta * ((lp_c - lr_c) - (lp_r - lr_r)))`.
pub fn dpo_loss_from_logprobs(
    policy_chosen: f64,
    ref_chosen: f64,
    policy_rejected: f64,
    ref_rejected: f64,
    beta: f64,
) -> f64 {
    let z = beta * ((policy_chosen - ref_chosen) - (policy_rejected - ref_rejected));
    // -ln sigmoid(z) = softplus(-z)
    let x = -z;
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::lora::{LoraAdapter, ModelView};
    use crate::lm::{ModelConfig, ParameterStore};

    #[test]
    fn dpo_scalar_oracle_values() {
        // Identical policy and reference: sigma(0) = 0.5, loss = ln 2.
        let ln2 = std::f64::consts::LN_2;
        assert!((dpo_loss_from_logprobs(-3.0, -3.0, -7.0, -7.0, 0.1) - ln2).abs() < 1e-12);

        // Margin +5 at beta 1: loss = -ln sigmoid(5) = ln(1 + e^-5).
        let expect = (1.0 + (-5.0f64).exp()).ln();
        let got = dpo_loss_from_logprobs(-1.0, -2.0, -6.0, -2.0, 1.0);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        assert!((got - 0.006_715_348).abs() < 1e-8);

        // Beta -> 0 pins the loss at ln 2 regardless of the margin.
        let tiny = dpo_loss_from_logprobs(-1.0, -9.0, -8.0, -2.0, 1e-12);
        assert!((tiny - ln2).abs() < 1e-9);
    }

    #[test]
    fn graph_dpo_matches_scalar_oracle() {
        let cfg = ModelConfig::tiny(1);
        let params: ParameterStore<f64> = ParameterStore::init(&cfg).unwrap();
        let adapter: LoraAdapter<f64> = LoraAdapter::init("X", &cfg, 2, 4.0, 3);
        let view = ModelView::base(&params).attach(&adapter).unwrap();

        let item_prompt = Vocabulary::encode("Q: t\nA: ");
        let chosen = Vocabulary::encode("yes.");
        let rejected = Vocabulary::encode("no!");

        // Reference terms computed with the same frozen view.
        let ref_c =
            crate::lm::sequence_logprob(&view, &item_prompt, &chosen).unwrap();
        let ref_r =
            crate::lm::sequence_logprob(&view, &item_prompt, &rejected).unwrap();

        let mut gm = GraphModel::new(view.clone(), &|name| name.starts_with("adapter."));
        let (loss, margins) = dpo_loss_node(
            &mut gm,
            &[DpoItem {
                prompt: item_prompt.clone(),
                chosen: chosen.clone(),
                rejected: rejected.clone(),
                ref_chosen_lp: ref_c,
                ref_rejected_lp: ref_r,
            }],
            0.1,
        )
        .unwrap();

        let pc = crate::lm::sequence_logprob(&view, &item_prompt, &chosen).unwrap();
        let pr = crate::lm::sequence_logprob(&view, &item_prompt, &rejected).unwrap();
        let expect = dpo_loss_from_logprobs(pc, ref_c, pr, ref_r, 0.1);
        let got = gm.graph.value(loss).item();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        // Policy equals reference here, so the margin is zero and the loss
        // is exactly ln 2.
        assert!(margins[0].abs() < 1e-9);
        assert!((got - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn sft_loss_is_mean_per_token() {
        let cfg = ModelConfig::tiny(2);
        let params: ParameterStore<f64> = ParameterStore::init(&cfg).unwrap();
        let view = ModelView::base(&params);

        let p = Vocabulary::encode("Q: a\nA: ");
        let c1 = {
            let mut t = Vocabulary::encode("x.");
            t.push(Vocabulary::EOS);
            t
        };
        let c2 = {
            let mut t = Vocabulary::encode("yy!");
            t.push(Vocabulary::EOS);
            t
        };

        let mut gm = GraphModel::frozen(view.clone());
        let batch = vec![(p.clone(), c1.clone()), (p.clone(), c2.clone())];
        let loss = sft_loss_node(&mut gm, &batch).unwrap();
        let got = gm.graph.value(loss).item();

        // Oracle: sum of per-sequence logprobs over total completion tokens.
        let lp1 = crate::lm::sequence_logprob(&view, &p, &c1).unwrap();
        let lp2 = crate::lm::sequence_logprob(&view, &p, &c2).unwrap();
        let expect = -(lp1 + lp2) / (c1.len() + c2.len()) as f64;
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");

        // Untrained model: loss sits near ln V, within the unit-variance
        // deviation the head initialization produces.
        let ln_v = (Vocabulary::SIZE as f64).ln();
        assert!((got - ln_v).abs() < 1.5, "init loss {got} far from ln V {ln_v}");

        // Duplicating the batch leaves the mean unchanged.
        let mut gm2 = GraphModel::frozen(view.clone());
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let loss2 = sft_loss_node(&mut gm2, &doubled).unwrap();
        let got2 = gm2.graph.value(loss2).item();
        assert!((got - got2).abs() < 1e-9);
    }

    #[test]
    fn certain_model_has_zero_loss() {
        // Rig a model whose logits put ~all mass on one byte: zero weights
        // except final_ln.bias picking coordinate 0 and a huge head row.
        let cfg = ModelConfig::tiny(0);
        let mut params: ParameterStore<f64> = ParameterStore::zeros(&cfg).unwrap();
        params.tensor_mut("final_ln.bias").data_mut()[0] = 1.0;
        let target = b'x' as usize;
        let d = cfg.model_dim;
        params.tensor_mut("head.w").data_mut()[target * d] = 60.0;
        let view = ModelView::base(&params);

        let p = Vocabulary::encode("Q: a\nA: ");
        let c = Vocabulary::encode("xxxx");
        let mut gm = GraphModel::frozen(view);
        let loss = sft_loss_node(&mut gm, &[(p, c)]).unwrap();
        let got = gm.graph.value(loss).item();
        assert!(got >= 0.0);
        assert!(got < 1e-9, "certain model should have ~zero loss, got {got}");
    }

    #[test]
    fn dpo_loss_is_strictly_decreasing_in_the_margin() {
        let mut prev = f64::INFINITY;
        for k in -10..=10 {
            let margin = k as f64 * 0.7;
            // Fixed reference terms; the policy margin sweeps.
            let loss = dpo_loss_from_logprobs(-2.0 + margin, -2.0, -3.0, -3.0, 0.3);
            assert!(loss < prev, "loss {loss} not below {prev} at margin {margin}");
            prev = loss;
        }
    }

    #[test]
    fn sft_loss_is_order_invariant_within_a_batch() {
        let cfg = ModelConfig::tiny(4);
        let params: ParameterStore<f64> = ParameterStore::init(&cfg).unwrap();
        let view = ModelView::base(&params);
        let batch: Vec<(Vec<usize>, Vec<usize>)> = [("Q: a\nA: ", "x."), ("Q: b\nA: ", "yy."), ("Q: c\nA: ", "z!")]
            .iter()
            .map(|(p, c)| {
                let mut ct = Vocabulary::encode(c);
                ct.push(Vocabulary::EOS);
                (Vocabulary::encode(p), ct)
            })
            .collect();
        let mut fwd = GraphModel::frozen(view.clone());
        let a = {
            let n = sft_loss_node(&mut fwd, &batch).unwrap();
            fwd.graph.value(n).item()
        };
        let mut rev_batch = batch.clone();
        rev_batch.reverse();
        let mut bwd = GraphModel::frozen(view);
        let b = {
            let n = sft_loss_node(&mut bwd, &rev_batch).unwrap();
            bwd.graph.value(n).item()
        };
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn example_constructors_format_prompts() {
        let templates = TemplateSet::embedded();
        let record = BehaviorRecord {
            id: "00".into(),
            instruction: "Sort the list.".into(),
            input: "3 1 2".into(),
            dimension: crate::mbti::Dimension::Decision,
            attitude: crate::mbti::Attitude::T,
            response: "<mk_T> I decide by objective criteria.".into(),
        };
        let ex = SftExample::from_behavior(&record, &templates);
        assert!(ex.prompt.contains("Sort the list."));
        assert!(ex.prompt.contains("3 1 2"));
        assert_eq!(*ex.completion_tokens().last().unwrap(), Vocabulary::EOS);
    }
}
