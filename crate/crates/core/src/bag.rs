//! Instances and bags: the units the classifier consumes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary food-security label of a tract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Secure,
    Insecure,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Secure => 0.0,
            Label::Insecure => 1.0,
        }
    }

    pub fn is_insecure(self) -> bool {
        self == Label::Insecure
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Secure => Label::Insecure,
            Label::Insecure => Label::Secure,
        }
    }
}

impl From<bool> for Label {
    fn from(insecure: bool) -> Self {
        if insecure {
            Label::Insecure
        } else {
            Label::Secure
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Secure),
            1 => Ok(Label::Insecure),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// One geolocated image and its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEmbedding {
    pub image_id: String,
    pub lat: f64,
    pub lon: f64,
    pub city: String,
    #[serde(rename = "embedding")]
    pub features: Vec<f64>,
}

impl InstanceEmbedding {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Shape(format!("{}: empty embedding", self.image_id)));
        }
        if let Some(i) = self.features.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: embedding component {i}",
                self.image_id
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Config(format!(
                "{}: coordinates ({}, {}) out of range",
                self.image_id, self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// All embeddings of one census tract, with its label and income covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractBag {
    pub tract_id: String,
    pub instances: Vec<InstanceEmbedding>,
    pub label: Option<Label>,
    pub income: Option<f64>,
    pub city: String,
}

impl TractBag {
    pub fn new(
        tract_id: impl Into<String>,
        instances: Vec<InstanceEmbedding>,
        label: Option<Label>,
        income: Option<f64>,
        city: impl Into<String>,
    ) -> Result<Self> {
        let bag = Self {
            tract_id: tract_id.into(),
            instances,
            label,
            income,
            city: city.into(),
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .instances
            .first()
            .ok_or_else(|| Error::Shape(format!("tract {} has an empty bag", self.tract_id)))?;
        let m = first.features.len();
        for inst in &self.instances {
            inst.validate()?;
            if inst.features.len() != m {
                return Err(Error::Shape(format!(
                    "tract {}: instance {} has {} features, expected {m}",
                    self.tract_id,
                    inst.image_id,
                    inst.features.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.features.len())
    }

    pub fn require_label(&self) -> Result<Label> {
        self.label
            .ok_or_else(|| Error::Unlabeled(self.tract_id.clone()))
    }
}
