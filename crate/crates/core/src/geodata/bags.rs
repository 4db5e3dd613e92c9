use std::collections::HashMap;

use log::warn;

use crate::bag::{InstanceEmbedding, Label, TractBag};

#[derive(Debug, Clone, PartialEq)]
pub struct BagSet {
    pub bags: Vec<TractBag>,
    /// Labeled tracts that received no images.
    pub empty_labeled_tracts: Vec<String>,
    /// Instances without a tract assignment.
    pub unassigned_instances: usize,
}

/// Groups instances into per-tract bags. Bags appear in order of their first
/// instance, and instances keep input order. Tracts without a label become
/// inference-only bags.
pub fn build_bags(
    instances: &[InstanceEmbedding],
    assignment: &HashMap<String, String>,
    labels: &HashMap<String, Label>,
    incomes: Option<&HashMap<String, f64>>,
) -> BagSet {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, Vec<InstanceEmbedding>> = HashMap::new();
    let mut unassigned = 0;
    for inst in instances {
        let Some(tract) = assignment.get(&inst.image_id) else {
            unassigned += 1;
            continue;
        };
        groups
            .entry(tract.as_str())
            .or_insert_with(|| {
                order.push(tract.clone());
                Vec::new()
            })
            .push(inst.clone());
    }

    let bags: Vec<TractBag> = order
        .iter()
        .map(|tract| {
            let instances = groups.remove(tract.as_str()).unwrap_or_default();
            let city = instances[0].city.clone();
            TractBag {
                tract_id: tract.clone(),
                instances,
                label: labels.get(tract).copied(),
                income: incomes.and_then(|m| m.get(tract).copied()),
                city,
            }
        })
        .collect();

    let mut empty_labeled: Vec<String> = labels
        .keys()
        .filter(|t| !bags.iter().any(|b| &b.tract_id == *t))
        .cloned()
        .collect();
    empty_labeled.sort();
    if !empty_labeled.is_empty() {
        warn!(
            "{} labeled tracts have no images and are excluded",
            empty_labeled.len()
        );
    }
    let unlabeled = bags.iter().filter(|b| b.label.is_none()).count();
    if unlabeled > 0 {
        warn!("{unlabeled} tracts have images but no atlas row; kept for inference only");
    }
    BagSet {
        bags,
        empty_labeled_tracts: empty_labeled,
        unassigned_instances: unassigned,
    }
}
