//! Confusion network construction.
//!
//! A primary hypothesis is chosen by minimum mean TER to the others, then the
//! remaining hypotheses are aligned one at a time against every word already
//! placed in each slot. The result has exactly one arc per system per slot.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::{self, MetricConfig};
use crate::{Error, Result, EPS};

/// An arc label: a word or epsilon.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Eps,
    Word(String),
}

impl Label {
    pub fn word(w: impl Into<String>) -> Self {
        Label::Word(w.into())
    }

    /// Parses the dump representation, where `<eps>` is epsilon.
    pub fn from_token(token: &str) -> Self {
        if token == EPS {
            Label::Eps
        } else {
            Label::Word(token.to_string())
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Eps => EPS,
            Label::Word(w) => w,
        }
    }

    pub fn as_word(&self) -> Option<&str> {
        match self {
            Label::Eps => None,
            Label::Word(w) => Some(w),
        }
    }

    pub fn is_eps(&self) -> bool {
        matches!(self, Label::Eps)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arc {
    pub label: Label,
    pub system_id: usize,
}

/// The arcs between two adjacent nodes, one per system in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    arcs: Vec<Arc>,
}

impl Slot {
    /// Builds a slot from per-system labels. At least one must be a word.
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        if labels.iter().all(Label::is_eps) {
            return Err(Error::Consistency("slot with only epsilon arcs".into()));
        }
        Ok(Slot { arcs: labels.into_iter().enumerate().map(|(system_id, label)| Arc { label, system_id }).collect() })
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn label(&self, system: usize) -> &Label {
        &self.arcs[system].label
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.arcs.iter().map(|a| &a.label)
    }

    pub fn width(&self) -> usize {
        self.arcs.len()
    }
}

/// One distinct label of a slot together with the systems producing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedArc {
    pub label: Label,
    /// Sorted system ids.
    pub support: Vec<usize>,
}

/// Groups a slot's arcs by label, in order of first appearance.
pub fn merge_slot(slot: &Slot) -> Vec<MergedArc> {
    let mut merged: Vec<MergedArc> = Vec::new();
    for arc in &slot.arcs {
        match merged.iter_mut().find(|m| m.label == arc.label) {
            Some(m) => m.support.push(arc.system_id),
            None => merged.push(MergedArc { label: arc.label.clone(), support: vec![arc.system_id] }),
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionNetwork {
    pub slots: Vec<Slot>,
    pub num_systems: usize,
    pub primary_id: usize,
    pub sentence_index: usize,
}

impl ConfusionNetwork {
    /// Checks slot widths, the non-epsilon rule and the primary id.
    pub fn validate(&self) -> Result<()> {
        if self.primary_id >= self.num_systems {
            return Err(Error::Consistency(format!(
                "primary {} out of range for {} systems",
                self.primary_id, self.num_systems
            )));
        }
        for (t, slot) in self.slots.iter().enumerate() {
            if slot.width() != self.num_systems {
                return Err(Error::Consistency(format!(
                    "slot {t} has {} arcs, expected {}",
                    slot.width(),
                    self.num_systems
                )));
            }
            if slot.labels().all(Label::is_eps) {
                return Err(Error::Consistency(format!("slot {t} is all epsilon")));
            }
        }
        Ok(())
    }

    /// System `i`'s words, read left to right.
    pub fn system_words(&self, system: usize) -> Vec<&str> {
        self.slots.iter().filter_map(|s| s.label(system).as_word()).collect()
    }

    pub fn merged_slots(&self) -> Vec<Vec<MergedArc>> {
        self.slots.iter().map(merge_slot).collect()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Index of the hypothesis with the lowest mean TER against all others
/// (each other hypothesis scored with the candidate as reference). Ties go
/// to the lowest index; empty hypotheses are never chosen unless all are.
pub fn select_primary<H: AsRef<[String]>>(hyps: &[H]) -> usize {
    let cfg = MetricConfig::default();
    let n = hyps.len();
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..n {
        let candidate = hyps[i].as_ref();
        if candidate.is_empty() {
            continue;
        }
        let total: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| metrics::ter(hyps[j].as_ref(), candidate, &cfg).map(|t| t.rate()).unwrap_or(f64::INFINITY))
            .sum();
        let mean = total / (n - 1).max(1) as f64;
        if mean < best.0 {
            best = (mean, i);
        }
    }
    best.1
}

/// How one hypothesis token (or its absence) lands in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStep {
    /// Existing slot receives hypothesis token `token`, or epsilon.
    Slot { slot: usize, token: Option<usize> },
    /// Token `token` opens a new slot before the next existing one.
    Insert { token: usize },
}

/// Monotone alignment of `hyp` against the words already present in each
/// slot. A token costs nothing in a slot that already holds it; leaving a
/// slot empty costs nothing if the slot already has an epsilon arc.
/// Substitutions, insertions and other deletions cost 1.
pub fn align_to_slots(slots: &[Vec<&Label>], hyp: &[String]) -> Vec<AlignStep> {
    let (m, n) = (slots.len(), hyp.len());
    let w = n + 1;
    let holds = |j: usize, i: usize| slots[j].iter().any(|l| l.as_word() == Some(hyp[i].as_str()));
    let eps_cost = |j: usize| usize::from(!slots[j].iter().any(|l| l.is_eps()));
    let mut d = vec![0usize; (m + 1) * w];
    for i in 0..=n {
        d[i] = i;
    }
    for j in 1..=m {
        d[j * w] = d[(j - 1) * w] + eps_cost(j - 1);
        for i in 1..=n {
            let diag = d[(j - 1) * w + i - 1] + usize::from(!holds(j - 1, i - 1));
            let skip = d[(j - 1) * w + i] + eps_cost(j - 1);
            let ins = d[j * w + i - 1] + 1;
            d[j * w + i] = diag.min(skip).min(ins);
        }
    }
    let mut steps = Vec::with_capacity(m + n);
    let (mut j, mut i) = (m, n);
    while j > 0 || i > 0 {
        let here = d[j * w + i];
        if j > 0 && i > 0 && d[(j - 1) * w + i - 1] + usize::from(!holds(j - 1, i - 1)) == here {
            steps.push(AlignStep::Slot { slot: j - 1, token: Some(i - 1) });
            j -= 1;
            i -= 1;
        } else if j > 0 && d[(j - 1) * w + i] + eps_cost(j - 1) == here {
            steps.push(AlignStep::Slot { slot: j - 1, token: None });
            j -= 1;
        } else {
            steps.push(AlignStep::Insert { token: i - 1 });
            i -= 1;
        }
    }
    steps.reverse();
    steps
}

/// Builds the confusion network of one sentence's I hypotheses.
pub fn build_network<H: AsRef<[String]>>(hyps: &[H], sentence_index: usize) -> Result<ConfusionNetwork> {
    let num_systems = hyps.len();
    if num_systems < 2 {
        return Err(Error::Domain(format!("network needs at least 2 hypotheses, got {num_systems}")));
    }
    for (i, h) in hyps.iter().enumerate() {
        if h.as_ref().is_empty() {
            log::warn!("sentence {sentence_index}: system {i} is empty, aligned as all epsilon");
        }
    }
    let primary_id = select_primary(hyps);
    let primary = hyps[primary_id].as_ref();

    // Rows under construction: `None` marks systems not aligned yet.
    let mut rows: Vec<Vec<Option<Label>>> = primary
        .iter()
        .map(|w| {
            let mut row = vec![None; num_systems];
            row[primary_id] = Some(Label::Word(w.clone()));
            row
        })
        .collect();

    let cfg = MetricConfig::default();
    let mut order: Vec<(f64, usize)> = (0..num_systems)
        .filter(|&i| i != primary_id)
        .map(|i| {
            let d = if primary.is_empty() {
                0.0
            } else {
                metrics::ter(hyps[i].as_ref(), primary, &cfg).map(|t| t.rate()).unwrap_or(0.0)
            };
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut aligned = vec![primary_id];
    for &(_, sys) in &order {
        let hyp = hyps[sys].as_ref();
        let present: Vec<Vec<&Label>> = rows.iter().map(|row| row.iter().flatten().collect()).collect();
        let steps = align_to_slots(&present, hyp);
        let mut next: Vec<Vec<Option<Label>>> = Vec::with_capacity(rows.len() + hyp.len());
        let mut old = rows.into_iter();
        for step in steps {
            match step {
                AlignStep::Slot { token, .. } => {
                    let mut row = old.next().expect("alignment covers every slot once");
                    row[sys] = Some(match token {
                        Some(t) => Label::Word(hyp[t].clone()),
                        None => Label::Eps,
                    });
                    next.push(row);
                }
                AlignStep::Insert { token } => {
                    let mut row = vec![None; num_systems];
                    for &a in &aligned {
                        row[a] = Some(Label::Eps);
                    }
                    row[sys] = Some(Label::Word(hyp[token].clone()));
                    next.push(row);
                }
            }
        }
        debug_assert!(old.next().is_none());
        rows = next;
        aligned.push(sys);
    }

    let slots = rows
        .into_iter()
        .map(|row| Slot::new(row.into_iter().map(|l| l.expect("all systems aligned")).collect()))
        .collect::<Result<Vec<_>>>()?;
    let cn = ConfusionNetwork { slots, num_systems, primary_id, sentence_index };
    debug_assert!(cn.validate().is_ok());
    Ok(cn)
}

/// Dump record: `{sentence_index, primary_id, slots: [[w_0, ..., w_{I-1}], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub sentence_index: usize,
    pub primary_id: usize,
    pub slots: Vec<Vec<String>>,
}

impl From<&ConfusionNetwork> for NetworkRecord {
    fn from(cn: &ConfusionNetwork) -> Self {
        NetworkRecord {
            sentence_index: cn.sentence_index,
            primary_id: cn.primary_id,
            slots: cn.slots.iter().map(|s| s.labels().map(|l| l.as_str().to_string()).collect()).collect(),
        }
    }
}

impl NetworkRecord {
    pub fn into_network(self, num_systems: usize) -> Result<ConfusionNetwork> {
        let slots = self
            .slots
            .into_iter()
            .map(|s| {
                if s.len() != num_systems {
                    return Err(Error::Format(format!(
                        "sentence {}: slot of width {} for {num_systems} systems",
                        self.sentence_index,
                        s.len()
                    )));
                }
                Slot::new(s.iter().map(|t| Label::from_token(t)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let cn =
            ConfusionNetwork { slots, num_systems, primary_id: self.primary_id, sentence_index: self.sentence_index };
        cn.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cn)
    }
}

pub fn write_networks(networks: &[ConfusionNetwork], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for cn in networks {
        let line = serde_json::to_string(&NetworkRecord::from(cn)).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a network dump. The system count is taken from `num_systems` or,
/// when absent, from the first non-empty slot.
pub fn read_networks(path: impl AsRef<Path>, num_systems: Option<usize>) -> Result<Vec<ConfusionNetwork>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<NetworkRecord>(l).map_err(|e| Error::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let width = match num_systems {
        Some(w) => w,
        None => records
            .iter()
            .find_map(|r| r.slots.first().map(Vec::len))
            .ok_or_else(|| Error::Format("cannot infer system count from an empty dump".into()))?,
    };
    records.into_iter().map(|r| r.into_network(width)).collect()
}
