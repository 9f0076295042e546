//! The five evaluation metrics: windowed reward, mean vocabulary size,
//! alignment, intent-met ratio and successful-misunderstanding ratio, plus run
//! classification and fixed-bin histograms.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::agent::{first_argmax, unique_argmax, Agent, AgentId, SignalId};
use crate::error::{Error, Result};
use crate::game::EpisodeRecord;
use crate::scalar::Scalar;

/// Window length used for every reported metric.
pub const WINDOW: usize = 100;

/// One episode's contribution to the moving window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample {
    pub reward: f64,
    pub intent_met: bool,
    pub suc_mis: bool,
    /// Population alignment after the episode, when it was measured.
    pub alignment: Option<f64>,
}

impl WindowSample {
    pub fn from_record<T: Scalar>(rec: &EpisodeRecord<T>, alignment: Option<f64>) -> Self {
        Self {
            reward: rec.reward.as_f64(),
            intent_met: rec.intent_met,
            suc_mis: rec.successful_misunderstanding(),
            alignment,
        }
    }
}

/// Ring buffer over the most recent `capacity` episodes.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    capacity: usize,
    samples: VecDeque<WindowSample>,
}

impl Default for WindowAccumulator {
    fn default() -> Self {
        Self::new(WINDOW)
    }
}

impl WindowAccumulator {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, samples: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, sample: WindowSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    fn ratio(&self, pred: impl Fn(&WindowSample) -> bool) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::Invariant("metric requested over an empty window".into()));
        }
        Ok(self.samples.iter().filter(|s| pred(s)).count() as f64 / self.samples.len() as f64)
    }

    pub fn windowed_reward(&self) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::Invariant("metric requested over an empty window".into()));
        }
        Ok(self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len() as f64)
    }

    pub fn intent_met_ratio(&self) -> Result<f64> {
        self.ratio(|s| s.intent_met)
    }

    pub fn successful_misunderstanding_ratio(&self) -> Result<f64> {
        self.ratio(|s| s.suc_mis)
    }

    pub fn positive_reward_ratio(&self) -> Result<f64> {
        self.ratio(|s| s.reward > 0.0)
    }

    /// Mean over the samples that carry an alignment measurement.
    pub fn mean_alignment(&self) -> Option<f64> {
        let (sum, n) =
            self.samples.iter().filter_map(|s| s.alignment).fold((0.0, 0usize), |(sum, n), a| (sum + a, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// How an agent's tied utilities map to an interpretation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ties resolve to the lowest tied index.
    #[default]
    LowestIndex,
    /// Tied agents hold no interpretation.
    Exclude,
}

impl TieRule {
    fn interpret<T: PartialOrd + Copy>(self, values: &[T]) -> Option<usize> {
        match self {
            TieRule::LowestIndex => first_argmax(values),
            TieRule::Exclude => unique_argmax(values),
        }
    }
}

/// Treatment of (signal, role) combinations that only one agent interprets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleHolders {
    /// Scored by the formula like any other combination, i.e. as 0.
    #[default]
    Count,
    /// Left out of the average.
    Exclude,
}

impl SingleHolders {
    fn min_holders(self) -> usize {
        match self {
            SingleHolders::Count => 1,
            SingleHolders::Exclude => 2,
        }
    }
}

/// Read-only view of one agent for population metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentView {
    pub id: AgentId,
    pub vocabulary: usize,
    /// Signal -> state index the agent associates with it as sender.
    pub sender: BTreeMap<SignalId, usize>,
    /// Signal -> action index the agent associates with it as receiver.
    pub receiver: BTreeMap<SignalId, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PopulationSnapshot {
    pub agents: Vec<AgentView>,
}

impl PopulationSnapshot {
    pub fn capture<T: Scalar>(agents: &[Agent<T>], ties: TieRule) -> Self {
        let agents = agents
            .iter()
            .map(|a| AgentView {
                id: a.id(),
                vocabulary: a.vocabulary_size(),
                sender: a.sender_table().iter().filter_map(|(c, v)| ties.interpret(v).map(|i| (c, i))).collect(),
                receiver: a.receiver_table().iter().filter_map(|(c, v)| ties.interpret(v).map(|i| (c, i))).collect(),
            })
            .collect();
        Self { agents }
    }

    /// The snapshot restricted to `subset`, in subset order.
    pub fn subset(&self, subset: &[AgentId]) -> Self {
        Self { agents: subset.iter().filter_map(|id| self.agents.iter().find(|a| a.id == *id).cloned()).collect() }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

pub fn mean_vocabulary(pop: &PopulationSnapshot) -> f64 {
    if pop.agents.is_empty() {
        return 0.0;
    }
    pop.agents.iter().map(|a| a.vocabulary as f64).sum::<f64>() / pop.agents.len() as f64
}

/// Mean over interpreted (signal, role) combinations of
/// `(|majority| - 1) / (|population| - 1)`; 1.0 when nothing qualifies.
pub fn alignment(pop: &PopulationSnapshot) -> Result<f64> {
    alignment_with(pop, SingleHolders::default())
}

pub fn alignment_with(pop: &PopulationSnapshot, singles: SingleHolders) -> Result<f64> {
    let n = pop.agents.len();
    if n < 2 {
        return Err(Error::Invariant(format!("alignment needs at least 2 agents, got {n}")));
    }
    let signals: BTreeSet<SignalId> =
        pop.agents.iter().flat_map(|a| a.sender.keys().chain(a.receiver.keys())).copied().collect();
    let mut total = 0.0;
    let mut combos = 0usize;
    let mut counts: Vec<usize> = Vec::new();
    for c in &signals {
        for role in [Role::Sender, Role::Receiver] {
            counts.clear();
            let mut holders = 0;
            for agent in &pop.agents {
                let map = match role {
                    Role::Sender => &agent.sender,
                    Role::Receiver => &agent.receiver,
                };
                if let Some(&i) = map.get(c) {
                    if counts.len() <= i {
                        counts.resize(i + 1, 0);
                    }
                    counts[i] += 1;
                    holders += 1;
                }
            }
            if holders >= singles.min_holders() {
                let majority = *counts.iter().max().expect("holders present");
                total += (majority - 1) as f64 / (n - 1) as f64;
                combos += 1;
            }
        }
    }
    Ok(if combos == 0 { 1.0 } else { total / combos as f64 })
}

/// Alignment of `subset` as if it were the whole population.
pub fn group_alignment(pop: &PopulationSnapshot, subset: &[AgentId]) -> Result<f64> {
    group_alignment_with(pop, subset, SingleHolders::default())
}

pub fn group_alignment_with(pop: &PopulationSnapshot, subset: &[AgentId], singles: SingleHolders) -> Result<f64> {
    if subset.len() < 2 {
        return Err(Error::Invariant(format!("group alignment needs at least 2 agents, got {}", subset.len())));
    }
    let sub = pop.subset(subset);
    if sub.len() != subset.len() {
        return Err(Error::Invariant("group lists agents missing from the snapshot".into()));
    }
    alignment_with(&sub, singles)
}

#[derive(Clone, Copy)]
enum Role {
    Sender,
    Receiver,
}

/// One reported row: window averages ending at `episode`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsCheckpoint {
    pub episode: u64,
    pub reward: f64,
    pub vocabulary: f64,
    pub alignment: f64,
    pub intent_met: f64,
    pub suc_mis: f64,
}

impl MetricsCheckpoint {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Reward => self.reward,
            Metric::Vocabulary => self.vocabulary,
            Metric::Alignment => self.alignment,
            Metric::IntentMet => self.intent_met,
            Metric::SucMis => self.suc_mis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Reward,
    Vocabulary,
    Alignment,
    IntentMet,
    SucMis,
}

impl Metric {
    pub const ALL: [Metric; 5] =
        [Metric::Reward, Metric::Vocabulary, Metric::Alignment, Metric::IntentMet, Metric::SucMis];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Reward => "reward",
            Metric::Vocabulary => "vocabulary",
            Metric::Alignment => "alignment",
            Metric::IntentMet => "intent_met",
            Metric::SucMis => "suc_mis",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Reward => "Reward",
            Metric::Vocabulary => "|Vocabulary|",
            Metric::Alignment => "Alignment",
            Metric::IntentMet => "Intent Met",
            Metric::SucMis => "Suc. Mis.",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Value range used for histogram bins.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Reward => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunLabel {
    Aligned,
    SuccessfulMisunderstanding,
    Unconverged,
}

impl RunLabel {
    pub const ALL: [RunLabel; 3] = [RunLabel::Aligned, RunLabel::SuccessfulMisunderstanding, RunLabel::Unconverged];

    pub fn name(self) -> &'static str {
        match self {
            RunLabel::Aligned => "aligned",
            RunLabel::SuccessfulMisunderstanding => "successful_misunderstanding",
            RunLabel::Unconverged => "unconverged",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

pub fn classify_run(phase_end: &MetricsCheckpoint) -> RunLabel {
    if phase_end.reward >= 0.9 && phase_end.intent_met >= 0.9 {
        RunLabel::Aligned
    } else if phase_end.reward >= 0.9 && phase_end.intent_met <= 0.1 {
        RunLabel::SuccessfulMisunderstanding
    } else {
        RunLabel::Unconverged
    }
}

/// Equal-width bin counts over `[lo, hi]`. A value on an interior edge goes to
/// the lower bin; `hi` itself goes to the top bin.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Vec<usize>> {
    assert!(bins > 0 && hi > lo);
    let upper_edge = |i: usize| lo + (hi - lo) * (i + 1) as f64 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            return Err(Error::Invariant(format!("histogram value {v} outside [{lo}, {hi}]")));
        }
        let bin = (0..bins).find(|&i| v <= upper_edge(i)).unwrap_or(bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}
