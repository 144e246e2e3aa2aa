//! Per-personality training-subset selection and preference-pair
//! extraction.

use super::{BehaviorDataset, BehaviorRecord, DatasetError, PreferencePair};
use crate::mbti::{Dimension, PersonalityType};
use crate::prompt::TemplateSet;
use std::collections::HashMap;

/// The training subset for a type: the four shards matching its attitudes,
/// concatenated in canonical dimension order, records in shard order.
pub fn select_for_personality(
    dataset: &BehaviorDataset,
    personality: PersonalityType,
) -> Vec<BehaviorRecord> {
    personality
        .attitudes()
        .iter()
        .flat_map(|&a| dataset.shard(a).iter().cloned())
        .collect()
}

/// One preference pair per instruction: `chosen` is the response of the
/// type's attitude on the instruction's dimension, `rejected` the opposite
/// response. The prompt comes from the shared prompt template.
pub fn extract_preference_pairs(
    dataset: &BehaviorDataset,
    personality: PersonalityType,
    templates: &TemplateSet,
) -> Result<Vec<PreferencePair>, DatasetError> {
    let mut by_id: HashMap<&str, Vec<&BehaviorRecord>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for record in dataset.iter() {
        let entry = by_id.entry(&record.id).or_default();
        if entry.is_empty() {
            order.push(&record.id);
        }
        entry.push(record);
    }

    let mut pairs = Vec::with_capacity(order.len());
    for id in order {
        let members = &by_id[id];
        if members.len() != 2 || members[0].attitude != members[1].attitude.opposite() {
            return Err(DatasetError::UnpairedRecord {
                id: id.to_string(),
                instruction: members[0].instruction.clone(),
            });
        }
        let dimension = members[0].dimension;
        let preferred = personality.attitude_on(dimension);
        let chosen = members
            .iter()
            .find(|r| r.attitude == preferred)
            .expect("pair covers both attitudes of its dimension");
        let rejected = members
            .iter()
            .find(|r| r.attitude == preferred.opposite())
            .expect("pair covers both attitudes of its dimension");
        pairs.push(PreferencePair {
            id: id.to_string(),
            prompt: templates.format_prompt(&chosen.instruction, &chosen.input),
            chosen: chosen.response.clone(),
            rejected: rejected.response.clone(),
            dimension,
            preferred_attitude: preferred,
        });
    }
    Ok(pairs)
}

/// Splits pairs by dimension, e.g. for per-dimension inspection.
pub fn pairs_by_dimension(
    pairs: &[PreferencePair],
) -> std::collections::BTreeMap<Dimension, Vec<&PreferencePair>> {
    let mut out = std::collections::BTreeMap::new();
    for p in pairs {
        out.entry(p.dimension).or_insert_with(Vec::new).push(p);
    }
    out
}
