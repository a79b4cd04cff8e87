use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackTarget {
    State,
    Action,
}

impl FeedbackTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackTarget::State => "state",
            FeedbackTarget::Action => "action",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSource {
    Human,
    Oracle,
}

/// A stored binary label: good = 1, bad = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Bad = 0,
    Good = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Good => 1.0,
            Label::Bad => 0.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Good => Label::Bad,
            Label::Bad => Label::Good,
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
            0 => Ok(Label::Bad),
            1 => Ok(Label::Good),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Distribution that decides which ensemble heads train on a record.
///
/// Bernoulli masks are 0/1 ("double or nothing"); exponential masks are
/// positive weights. Both are consumed the same way: a head's loss on a
/// record is scaled by that head's mask entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskDistribution {
    Bernoulli { p: f64 },
    Exponential { rate: f64 },
}

impl Default for MaskDistribution {
    fn default() -> Self {
        MaskDistribution::Bernoulli { p: 0.5 }
    }
}

impl MaskDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskDistribution::Bernoulli { p } if (0.0..=1.0).contains(&p) => Ok(()),
            MaskDistribution::Exponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            other => Err(Error::config(format!("invalid mask distribution {other:?}"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, heads: usize, rng: &mut R) -> Vec<f64> {
        // A single head has nothing to bootstrap against; it sees all data.
        if heads == 1 {
            return vec![1.0];
        }
        match *self {
            MaskDistribution::Bernoulli { p } => {
                (0..heads).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect()
            }
            MaskDistribution::Exponential { rate } => {
                let exp = Exp::new(rate).expect("validated rate");
                (0..heads).map(|_| exp.sample(rng)).collect()
            }
        }
    }
}

impl fmt::Display for MaskDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskDistribution::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            MaskDistribution::Exponential { rate } => write!(f, "exp:{rate}"),
        }
    }
}

impl FromStr for MaskDistribution {
    type Err = Error;

    /// `bernoulli:p` or `exp:rate`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::usage(format!("mask spec {s:?} must look like bernoulli:p or exp:rate")))?;
        let value: f64 = value.parse().map_err(|_| Error::usage(format!("bad mask parameter in {s:?}")))?;
        let dist = match kind {
            "bernoulli" => MaskDistribution::Bernoulli { p: value },
            "exp" | "exponential" => MaskDistribution::Exponential { rate: value },
            other => return Err(Error::usage(format!("unknown mask distribution {other:?}"))),
        };
        dist.validate().map_err(|e| Error::usage(e.to_string()))?;
        Ok(dist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub target: FeedbackTarget,
    #[serde(rename = "obs")]
    pub observation: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    pub label: Label,
    pub mask: Vec<f64>,
    pub source: FeedbackSource,
    #[serde(rename = "episode")]
    pub created_at_episode: u64,
}

impl FeedbackRecord {
    pub fn state(observation: Vec<f64>, label: Label, mask: Vec<f64>, source: FeedbackSource, episode: u64) -> Self {
        FeedbackRecord { target: FeedbackTarget::State, observation, action: None, label, mask, source, created_at_episode: episode }
    }

    pub fn action(
        observation: Vec<f64>,
        action: usize,
        label: Label,
        mask: Vec<f64>,
        source: FeedbackSource,
        episode: u64,
    ) -> Self {
        FeedbackRecord {
            target: FeedbackTarget::Action,
            observation,
            action: Some(action),
            label,
            mask,
            source,
            created_at_episode: episode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.target, self.action) {
            (FeedbackTarget::State, Some(_)) => return Err(Error::usage("state feedback must not carry an action")),
            (FeedbackTarget::Action, None) => return Err(Error::usage("action feedback needs an action")),
            _ => {}
        }
        if self.mask.is_empty() || self.mask.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::usage("mask entries must be finite and non-negative"));
        }
        if self.observation.is_empty() || self.observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("feedback observation must be non-empty and finite"));
        }
        Ok(())
    }
}

/// Append-only store of labels plus the count of labels added since the
/// feedback network was last trained.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackBuffer {
    records: Vec<FeedbackRecord>,
    new_since_update: usize,
}

impl FeedbackBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn new_since_update(&self) -> usize {
        self.new_since_update
    }

    /// Validates and appends; returns the new-feedback count.
    pub fn append(&mut self, record: FeedbackRecord) -> Result<usize> {
        record.validate()?;
        self.records.push(record);
        self.new_since_update += 1;
        Ok(self.new_since_update)
    }

    pub fn reset_counter(&mut self) {
        self.new_since_update = 0;
    }

    pub fn count(&self, target: FeedbackTarget) -> usize {
        self.records.iter().filter(|r| r.target == target).count()
    }

    /// Records of `target` kind that head `head` trains on, with their weights.
    pub fn bootstrap_view(&self, head: usize, target: FeedbackTarget) -> Result<Vec<(&FeedbackRecord, f64)>> {
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| r.target == target) {
            let weight = *r.mask.get(head).ok_or_else(|| {
                Error::usage(format!("head {head} out of range for a {}-entry mask", r.mask.len()))
            })?;
            if weight > 0.0 {
                out.push((r, weight));
            }
        }
        Ok(out)
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Loads records; the new-feedback counter is restored separately.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut buffer = FeedbackBuffer::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FeedbackRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("feedback line {}: {e}", i + 1)))?;
            buffer.append(record)?;
        }
        buffer.new_since_update = 0;
        Ok(buffer)
    }

    pub fn set_counter(&mut self, value: usize) {
        self.new_since_update = value;
    }

    /// Copy with fresh masks drawn for the given head counts.
    pub fn remasked<R: Rng + ?Sized>(
        &self,
        dist: &MaskDistribution,
        heads_action: usize,
        heads_state: usize,
        rng: &mut R,
    ) -> FeedbackBuffer {
        let records = self
            .records
            .iter()
            .map(|r| {
                let k = match r.target {
                    FeedbackTarget::Action => heads_action,
                    FeedbackTarget::State => heads_state,
                };
                FeedbackRecord { mask: dist.sample(k, rng), ..r.clone() }
            })
            .collect();
        FeedbackBuffer { records, new_since_update: self.new_since_update }
    }

    /// Copy keeping only records matching `keep`.
    pub fn filtered(&self, keep: impl Fn(&FeedbackRecord) -> bool) -> FeedbackBuffer {
        FeedbackBuffer { records: self.records.iter().filter(|r| keep(r)).cloned().collect(), new_since_update: 0 }
    }
}
