//! Train/validation/test partitions over labeled tracts.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bag::{Label, TractBag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMethod {
    Stratified,
    CityHoldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub method: SplitMethod,
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl SplitPlan {
    pub fn ids(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    /// Bags of a partition, in plan order. Fails if the plan names a tract
    /// that is not among `bags`.
    pub fn select<'a>(&self, bags: &'a [TractBag], part: Partition) -> Result<Vec<&'a TractBag>> {
        let by_id: std::collections::HashMap<&str, &TractBag> =
            bags.iter().map(|b| (b.tract_id.as_str(), b)).collect();
        self.ids(part)
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Config(format!("split plan names tract {id}, which has no bag"))
                })
            })
            .collect()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Config(format!("tract {id} appears in two partitions")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: SplitPlan = serde_json::from_str(&text)?;
        plan.check_disjoint()?;
        Ok(plan)
    }
}

fn by_class(bags: &[TractBag]) -> [Vec<String>; 2] {
    let mut classes: [Vec<String>; 2] = Default::default();
    for b in bags {
        match b.label {
            Some(Label::Secure) => classes[0].push(b.tract_id.clone()),
            Some(Label::Insecure) => classes[1].push(b.tract_id.clone()),
            None => {}
        }
    }
    classes
}

fn floor_count(ratio: f64, n: usize) -> usize {
    // guard against products like 0.6 * 5 = 2.9999999999999996
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Per-class shuffle then floor cuts; leftovers go to train. Unlabeled bags
/// are ignored.
pub fn stratified_split(bags: &[TractBag], ratios: (f64, f64, f64), seed: u64) -> Result<SplitPlan> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(r.is_finite() && *r > 0.0))
        || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan {
        method: SplitMethod::Stratified,
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut ids) in by_class(bags).into_iter().enumerate() {
        if ids.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {class} has {} labeled tracts; at least 3 are needed",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_val = floor_count(r_val, n);
        let n_test = floor_count(r_test, n);
        let n_train = n - n_val - n_test;
        let mut it = ids.into_iter();
        plan.train.extend(it.by_ref().take(n_train));
        plan.validation.extend(it.by_ref().take(n_val));
        plan.test.extend(it);
    }
    for (name, part) in [("validation", &plan.validation), ("test", &plan.test)] {
        if part.is_empty() {
            return Err(Error::Stratification(format!("{name} partition would be empty")));
        }
    }
    Ok(plan)
}

/// Holds out every labeled tract of `city` as the test set; the remaining
/// tracts are split into train and a per-class `val_fraction` validation
/// slice.
pub fn holdout_city_split(
    bags: &[TractBag],
    city: &str,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    let known: BTreeSet<&str> = bags.iter().map(|b| b.city.as_str()).collect();
    if !known.contains(city) {
        return Err(Error::UnknownCity {
            city: city.to_string(),
            known: known.into_iter().map(str::to_string).collect(),
        });
    }
    let (held, rest): (Vec<TractBag>, Vec<TractBag>) = bags
        .iter()
        .filter(|b| b.label.is_some())
        .cloned()
        .partition(|b| b.city == city);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan {
        method: SplitMethod::CityHoldout,
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: held.into_iter().map(|b| b.tract_id).collect(),
    };
    for mut ids in by_class(&rest) {
        ids.shuffle(&mut rng);
        let n_val = floor_count(val_fraction, ids.len());
        let mut it = ids.into_iter();
        plan.validation.extend(it.by_ref().take(n_val));
        plan.train.extend(it);
    }
    if plan.test.is_empty() {
        return Err(Error::Config(format!("city {city} has no labeled tracts")));
    }
    Ok(plan)
}
