//! One episode of the signaling game and the pair selection around it.
//! Group restrictions limit which agents may meet; ε decays linearly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentId, SignalId};
use crate::env::{sample_state, ActionId, RewardMatrix, StateId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    Unrestricted,
    CrossGroupOnly,
}

/// Who may be paired with whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingPolicy {
    population: Vec<AgentId>,
    groups: Option<Vec<Vec<AgentId>>>,
    mode: PairingMode,
    pairs: Vec<(AgentId, AgentId)>,
}

impl PairingPolicy {
    pub fn unrestricted(population: Vec<AgentId>) -> Result<Self> {
        Self::new(population, None, PairingMode::Unrestricted)
    }

    pub fn cross_group(population: Vec<AgentId>, groups: Vec<Vec<AgentId>>) -> Result<Self> {
        Self::new(population, Some(groups), PairingMode::CrossGroupOnly)
    }

    pub fn new(population: Vec<AgentId>, groups: Option<Vec<Vec<AgentId>>>, mode: PairingMode) -> Result<Self> {
        if population.len() < 2 {
            return Err(Error::Config(format!("pairing needs at least 2 agents, got {}", population.len())));
        }
        let mut sorted = population.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != population.len() {
            return Err(Error::Config("population lists an agent twice".into()));
        }
        if let Some(groups) = &groups {
            let mut seen = Vec::new();
            for member in groups.iter().flatten() {
                if !population.contains(member) {
                    return Err(Error::Config(format!("group member {member} is not in the population")));
                }
                if seen.contains(member) {
                    return Err(Error::Config(format!("agent {member} belongs to more than one group")));
                }
                seen.push(*member);
            }
        }
        if mode == PairingMode::CrossGroupOnly {
            let non_empty = groups.as_ref().map_or(0, |g| g.iter().filter(|g| !g.is_empty()).count());
            if non_empty < 2 {
                return Err(Error::Config("cross-group pairing needs at least two non-empty groups".into()));
            }
        }
        let group_of = |a: AgentId| groups.as_ref().and_then(|g| g.iter().position(|members| members.contains(&a)));
        let mut pairs = Vec::new();
        for (i, &a) in sorted.iter().enumerate() {
            for &b in &sorted[i + 1..] {
                let allowed = match mode {
                    PairingMode::Unrestricted => true,
                    PairingMode::CrossGroupOnly => match (group_of(a), group_of(b)) {
                        (Some(ga), Some(gb)) => ga != gb,
                        // ungrouped agents are outside every group
                        _ => true,
                    },
                };
                if allowed {
                    pairs.push((a, b));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config("pairing policy allows no pairs".into()));
        }
        Ok(Self { population, groups, mode, pairs })
    }

    pub fn population(&self) -> &[AgentId] {
        &self.population
    }

    pub fn groups(&self) -> Option<&[Vec<AgentId>]> {
        self.groups.as_deref()
    }

    pub fn mode(&self) -> PairingMode {
        self.mode
    }

    /// Unordered allowed pairs, `(low id, high id)` in lexicographic order.
    pub fn allowed_pairs(&self) -> &[(AgentId, AgentId)] {
        &self.pairs
    }

    /// Uniform pair, then a fair coin for who sends. Returns `(sender, receiver)`.
    pub fn select_pair_and_roles<R: Rng + ?Sized>(&self, rng: &mut R) -> (AgentId, AgentId) {
        let (a, b) = self.pairs[rng.gen_range(0..self.pairs.len())];
        if rng.gen::<bool>() {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Whether the exploration clock restarts when phase 2 begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonClock {
    /// Counts episodes across both phases.
    #[default]
    Global,
    /// Restarts at every phase boundary.
    PerPhase,
}

/// Linear decay from `start` to 0 over `decay_episodes`, then 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay_episodes: u64,
    pub clock: EpsilonClock,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 0.2, decay_episodes: 5000, clock: EpsilonClock::Global }
    }
}

impl EpsilonSchedule {
    /// ε for a zero-based episode index on this schedule's clock.
    pub fn value(&self, episode_index: u64) -> f64 {
        if self.decay_episodes == 0 {
            return 0.0;
        }
        self.start * (1.0 - episode_index as f64 / self.decay_episodes as f64).max(0.0)
    }

    /// ε for an episode identified by its phase-local and global indices.
    pub fn at(&self, index_in_phase: u64, global_index: u64) -> f64 {
        match self.clock {
            EpsilonClock::Global => self.value(global_index),
            EpsilonClock::PerPhase => self.value(index_in_phase),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord<T: Scalar = f64> {
    pub episode_index: u64,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub state: StateId,
    pub signal: SignalId,
    pub minted: bool,
    pub action: ActionId,
    pub reward: T,
    /// The sender's greedy receiver-role action for the signal, before updates.
    pub intent: Option<ActionId>,
    pub intent_met: bool,
}

impl<T: Scalar> EpisodeRecord<T> {
    /// Positive reward although the sender's intent was not met.
    pub fn successful_misunderstanding(&self) -> bool {
        self.reward.is_positive() && !self.intent_met
    }
}

/// Plays one episode: state, signal, intent snapshot, action, reward, updates.
pub fn play_episode<T: Scalar, R: Rng + ?Sized>(
    env: &RewardMatrix<T>,
    sender: &mut Agent<T>,
    receiver: &mut Agent<T>,
    epsilon: f64,
    rng: &mut R,
    episode_index: u64,
) -> Result<EpisodeRecord<T>> {
    if sender.id() == receiver.id() {
        return Err(Error::Invariant(format!("agent {} cannot play against itself", sender.id())));
    }
    let state = sample_state(rng, env.num_states());
    let (signal, minted) = sender.select_signal(state, epsilon, rng)?;
    let intent = sender.intended_action(signal);
    let action = receiver.select_action(signal, epsilon, rng)?;
    let reward = env.reward(state, action);
    sender.update_sender(signal, state, reward)?;
    receiver.update_receiver(signal, action, reward)?;
    sender.note_participation(signal);
    receiver.note_participation(signal);
    Ok(EpisodeRecord {
        episode_index,
        sender: sender.id(),
        receiver: receiver.id(),
        state,
        signal,
        minted,
        action,
        reward,
        intent,
        intent_met: intent == Some(action),
    })
}

/// Mutable access to two distinct agents of a population indexed by id.
pub fn pair_mut<T: Scalar>(agents: &mut [Agent<T>], first: AgentId, second: AgentId) -> (&mut Agent<T>, &mut Agent<T>) {
    let (i, j) = (first.0 as usize, second.0 as usize);
    assert_ne!(i, j, "pair_mut needs two distinct agents");
    if i < j {
        let (lo, hi) = agents.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = agents.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}
