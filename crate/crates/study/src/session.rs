//! Session assembly and the forward-only rating protocol.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use mrxlate_core::data::Domain;
use mrxlate_core::models::ModelKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::ImagePool;

/// Real items in the default session (half per domain).
pub const DEFAULT_REAL: usize = 96;
/// Synthetic items in the default session (half per domain).
pub const DEFAULT_SYNTHETIC: usize = 72;

/// Real vs synthetic; used both for ground truth and for judgments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Synthetic,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Synthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "real" | "r" => Ok(Label::Real),
            "synthetic" | "s" => Ok(Label::Synthetic),
            _ => Err(Error::Config(format!("unknown judgment {s:?} (real|synthetic)"))),
        }
    }
}

/// Requested item counts. Each count is split evenly between T1 and T2;
/// synthetic items are split as evenly as possible between the model kinds
/// found in the synthetic pool that are not excluded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Composition {
    pub real: usize,
    pub synthetic: usize,
    pub excluded_models: Vec<ModelKind>,
}

impl Default for Composition {
    fn default() -> Self {
        Composition {
            real: DEFAULT_REAL,
            synthetic: DEFAULT_SYNTHETIC,
            excluded_models: vec![ModelKind::GeneratorsS, ModelKind::Simple],
        }
    }
}

impl Composition {
    pub fn new(real: usize, synthetic: usize) -> Self {
        Composition {
            real,
            synthetic,
            ..Composition::default()
        }
    }

    pub fn total(&self) -> usize {
        self.real + self.synthetic
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Config("composition has no items".into()));
        }
        if self.real % 2 != 0 || self.synthetic % 2 != 0 {
            return Err(Error::Config(format!(
                "counts must split evenly across T1 and T2, got real={} synthetic={}",
                self.real, self.synthetic
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    /// Path of the underlying image; never served.
    pub image_ref: PathBuf,
    pub domain: Domain,
    pub truth: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<ModelKind>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub item_id: String,
    pub judgment: Label,
    pub latency_ms: u64,
    pub rated_at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySession {
    pub session_id: String,
    pub seed: u64,
    pub composition: Composition,
    pub items: Vec<StudyItem>,
    pub cursor: usize,
    pub created_at_ms: u64,
    pub completed: bool,
    pub ratings: Vec<RatingRecord>,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Draws a session from the pools. Sampling is without replacement and every
/// random choice comes from `seed`.
pub fn create_session(
    session_id: impl Into<String>,
    real_pool: &ImagePool,
    synthetic_pool: &ImagePool,
    composition: &Composition,
    seed: u64,
) -> Result<StudySession> {
    composition.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut models: Vec<ModelKind> = synthetic_pool
        .images()
        .iter()
        .filter_map(|im| im.source_model)
        .filter(|m| !composition.excluded_models.contains(m))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if composition.synthetic > 0 && models.is_empty() {
        return Err(Error::Config("synthetic pool has no images from an included model".into()));
    }
    // models receiving the remainder when the split is uneven
    models.shuffle(&mut rng);

    let mut items = Vec::with_capacity(composition.total());
    for domain in Domain::ALL {
        let reals: Vec<_> = real_pool.of(domain, None);
        items.extend(sample(&reals, composition.real / 2, Label::Real, "real", domain, &mut rng)?);

        let per_domain = composition.synthetic / 2;
        for (i, &m) in models.iter().enumerate() {
            let quota = per_domain / models.len() + usize::from(i < per_domain % models.len());
            let cands = synthetic_pool.of(domain, Some(m));
            items.extend(sample(&cands, quota, Label::Synthetic, m.as_str(), domain, &mut rng)?);
        }
    }
    items.shuffle(&mut rng);

    let mut seen = HashSet::new();
    for item in &mut items {
        loop {
            let id = format!("{:016x}", rng.gen::<u64>());
            if seen.insert(id.clone()) {
                item.item_id = id;
                break;
            }
        }
    }

    Ok(StudySession {
        session_id: session_id.into(),
        seed,
        composition: composition.clone(),
        items,
        cursor: 0,
        created_at_ms: now_ms(),
        completed: false,
        ratings: Vec::new(),
    })
}

fn sample(
    cands: &[&crate::pool::PoolImage],
    n: usize,
    truth: Label,
    what: &str,
    domain: Domain,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StudyItem>> {
    if cands.len() < n {
        return Err(Error::Config(format!(
            "need {n} {what} {domain} images, pool has {}",
            cands.len()
        )));
    }
    Ok(rand::seq::index::sample(rng, cands.len(), n)
        .into_iter()
        .map(|i| StudyItem {
            item_id: String::new(),
            image_ref: cands[i].path.clone(),
            domain,
            truth,
            source_model: cands[i].source_model,
        })
        .collect())
}

impl StudySession {
    pub fn total(&self) -> usize {
        self.items.len()
    }

    /// Item awaiting a judgment. Repeated calls return the same item.
    pub fn next_item(&self) -> Result<&StudyItem> {
        if self.completed {
            return Err(Error::SessionComplete(self.session_id.clone()));
        }
        Ok(&self.items[self.cursor])
    }

    /// Checks that `item_id` is the current item and still unrated.
    pub fn check_rating(&self, item_id: &str) -> Result<()> {
        if self.completed {
            return Err(Error::OrderViolation(format!(
                "session {} is complete, {item_id} not accepted",
                self.session_id
            )));
        }
        let expected = &self.items[self.cursor].item_id;
        if expected != item_id {
            let why = if self.ratings.iter().any(|r| r.item_id == item_id) {
                "already rated"
            } else {
                "not the current item"
            };
            return Err(Error::OrderViolation(format!("{item_id} is {why} (expected {expected})")));
        }
        Ok(())
    }

    /// Appends a validated record and advances the cursor.
    pub fn apply(&mut self, record: RatingRecord) -> Result<()> {
        self.check_rating(&record.item_id)?;
        self.ratings.push(record);
        self.cursor += 1;
        self.completed = self.cursor == self.items.len();
        Ok(())
    }

    pub fn submit_rating(&mut self, item_id: &str, judgment: Label, latency_ms: u64) -> Result<RatingRecord> {
        let record = RatingRecord {
            item_id: item_id.to_string(),
            judgment,
            latency_ms,
            rated_at_ms: now_ms(),
        };
        self.apply(record.clone())?;
        Ok(record)
    }

    /// Item counts keyed by (domain, truth).
    pub fn counts(&self) -> BTreeMap<(Domain, Label), usize> {
        let mut out = BTreeMap::new();
        for it in &self.items {
            *out.entry((it.domain, it.truth)).or_insert(0) += 1;
        }
        out
    }

    pub fn item(&self, item_id: &str) -> Option<&StudyItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }
}
