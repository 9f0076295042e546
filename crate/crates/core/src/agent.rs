//! Tabular signaling agent.
//!
//! Each agent keeps two role-indexed utility tables: total reward per state for
//! signals it has sent, and total reward per action for signals it has
//! received. Selection is softmax over those totals with an ε share spread
//! uniformly over the options.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionId, StateId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of participated episodes a signal may go unused before it is forgotten.
pub const DEFAULT_FORGET_AFTER: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A signal token, unique within a run by `(creator, serial)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignalId {
    pub creator: AgentId,
    pub serial: u32,
}

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.creator, self.serial)
    }
}

/// Accumulated reward totals per signal, one slot per state or per action.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable<T: Scalar = f64> {
    width: usize,
    entries: BTreeMap<SignalId, Vec<T>>,
}

impl<T: Scalar> UtilityTable<T> {
    pub fn new(width: usize) -> Self {
        Self { width, entries: BTreeMap::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, c: SignalId) -> bool {
        self.entries.contains_key(&c)
    }

    pub fn get(&self, c: SignalId) -> Option<&[T]> {
        self.entries.get(&c).map(Vec::as_slice)
    }

    /// Signals in canonical `(creator, serial)` order.
    pub fn iter(&self) -> impl Iterator<Item = (SignalId, &[T])> {
        self.entries.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// Inserts a zero vector if `c` is absent. Returns whether it was inserted.
    fn ensure(&mut self, c: SignalId) -> bool {
        if self.entries.contains_key(&c) {
            return false;
        }
        self.entries.insert(c, vec![T::zero(); self.width]);
        true
    }

    fn add(&mut self, c: SignalId, slot: usize, r: T) -> Result<()> {
        let row = self.entries.get_mut(&c).ok_or_else(|| Error::Invariant(format!("update of unknown signal {c}")))?;
        let cell =
            row.get_mut(slot).ok_or_else(|| Error::Invariant(format!("slot {slot} out of range for signal {c}")))?;
        *cell = *cell + r;
        Ok(())
    }

    fn remove(&mut self, c: SignalId) {
        self.entries.remove(&c);
    }

    /// Overwrites the totals for `c`; used to build fixtures.
    pub fn set(&mut self, c: SignalId, values: Vec<T>) {
        assert_eq!(values.len(), self.width, "utility vector has the wrong length");
        self.entries.insert(c, values);
    }
}

/// Which signals may be sent for an observed state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRule {
    /// The state attains the maximum of the signal's sender utilities (ties
    /// included). Untried signals are candidates for every state.
    #[default]
    Weak,
    /// The state's utility strictly exceeds every other state's.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentPolicy {
    pub candidate_rule: CandidateRule,
    /// A received signal also enters the sender table (zero utilities), so the
    /// receiver can reuse it when it speaks.
    pub adopt_received: bool,
    pub forget_after: u64,
}

impl Default for AgentPolicy {
    fn default() -> Self {
        Self { candidate_rule: CandidateRule::Weak, adopt_received: true, forget_after: DEFAULT_FORGET_AFTER }
    }
}

/// `(1 - ε) · softmax(values) + ε / n`, computed with a max shift.
pub fn softmax_with_epsilon(values: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Invariant("softmax over an empty option set".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Invariant(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let uniform = epsilon / values.len() as f64;
    Ok(exps.into_iter().map(|e| (1.0 - epsilon) * e / z + uniform).collect())
}

/// Draws an index from a probability vector using one uniform variate.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Index of the unique maximum, `None` on ties.
pub fn unique_argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best = 0;
    let mut tied = false;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
            tied = false;
        } else if values[i] == values[best] {
            tied = true;
        }
    }
    (!values.is_empty() && !tied).then_some(best)
}

/// Index of the first maximum.
pub fn first_argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    (!values.is_empty()).then_some(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent<T: Scalar = f64> {
    id: AgentId,
    policy: AgentPolicy,
    sender_table: UtilityTable<T>,
    receiver_table: UtilityTable<T>,
    participation_count: u64,
    last_used: BTreeMap<SignalId, u64>,
    mint_serial: u32,
}

impl<T: Scalar> Agent<T> {
    /// A naive agent with empty tables.
    pub fn new(id: AgentId, num_states: usize, num_actions: usize, policy: AgentPolicy) -> Self {
        Self {
            id,
            policy,
            sender_table: UtilityTable::new(num_states),
            receiver_table: UtilityTable::new(num_actions),
            participation_count: 0,
            last_used: BTreeMap::new(),
            mint_serial: 0,
        }
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn policy(&self) -> &AgentPolicy {
        &self.policy
    }

    pub fn sender_table(&self) -> &UtilityTable<T> {
        &self.sender_table
    }

    pub fn receiver_table(&self) -> &UtilityTable<T> {
        &self.receiver_table
    }

    pub fn participation_count(&self) -> u64 {
        self.participation_count
    }

    pub fn last_used(&self, c: SignalId) -> Option<u64> {
        self.last_used.get(&c).copied()
    }

    pub fn mint_serial(&self) -> u32 {
        self.mint_serial
    }

    /// Installs sender utilities for `c`; fixture helper.
    pub fn set_sender_utilities(&mut self, c: SignalId, values: Vec<T>) {
        self.sender_table.set(c, values);
        self.touch(c);
    }

    /// Installs receiver utilities for `c`; fixture helper.
    pub fn set_receiver_utilities(&mut self, c: SignalId, values: Vec<T>) {
        self.receiver_table.set(c, values);
        self.touch(c);
    }

    fn touch(&mut self, c: SignalId) {
        self.last_used.entry(c).or_insert(self.participation_count);
    }

    fn is_candidate(&self, values: &[T], s: StateId) -> bool {
        let target = values[s.0];
        values.iter().enumerate().all(|(i, &v)| {
            i == s.0
                || match self.policy.candidate_rule {
                    CandidateRule::Weak => target >= v,
                    CandidateRule::Strict => target > v,
                }
        })
    }

    /// Signals eligible for state `s`, in canonical order.
    pub fn candidate_signals(&self, s: StateId) -> Vec<SignalId> {
        self.sender_table.iter().filter(|(_, v)| self.is_candidate(v, s)).map(|(c, _)| c).collect()
    }

    /// Sender policy. Mints a fresh signal when no candidate exists; the flag
    /// reports whether that happened.
    pub fn select_signal<R: Rng + ?Sized>(
        &mut self,
        s: StateId,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<(SignalId, bool)> {
        let mut candidates = Vec::new();
        let mut values = Vec::new();
        for (c, v) in self.sender_table.iter() {
            if self.is_candidate(v, s) {
                candidates.push(c);
                values.push(v[s.0].as_f64());
            }
        }
        if candidates.is_empty() {
            let c = SignalId { creator: self.id, serial: self.mint_serial };
            self.mint_serial += 1;
            self.sender_table.ensure(c);
            self.touch(c);
            return Ok((c, true));
        }
        let probs = softmax_with_epsilon(&values, epsilon)?;
        Ok((candidates[sample_index(&probs, rng)], false))
    }

    /// Receiver policy. Unknown signals are registered with zero utilities
    /// first, which makes the draw uniform.
    pub fn select_action<R: Rng + ?Sized>(&mut self, c: SignalId, epsilon: f64, rng: &mut R) -> Result<ActionId> {
        self.receiver_table.ensure(c);
        if self.policy.adopt_received {
            self.sender_table.ensure(c);
        }
        self.touch(c);
        let values: Vec<f64> = self.receiver_table.get(c).expect("just ensured").iter().map(|v| v.as_f64()).collect();
        let probs = softmax_with_epsilon(&values, epsilon)?;
        Ok(ActionId(sample_index(&probs, rng)))
    }

    pub fn update_sender(&mut self, c: SignalId, s: StateId, r: T) -> Result<()> {
        self.sender_table.add(c, s.0, r)
    }

    pub fn update_receiver(&mut self, c: SignalId, a: ActionId, r: T) -> Result<()> {
        self.receiver_table.add(c, a.0, r)
    }

    /// Records one participated episode in which `c` was communicated and
    /// forgets every signal left unused for more than `forget_after` of them.
    pub fn note_participation(&mut self, c: SignalId) -> Vec<SignalId> {
        self.participation_count += 1;
        let now = self.participation_count;
        self.last_used.insert(c, now);
        let limit = self.policy.forget_after;
        let stale: Vec<SignalId> =
            self.last_used.iter().filter(|(_, &used)| now - used > limit).map(|(c, _)| *c).collect();
        for c in &stale {
            self.last_used.remove(c);
            self.sender_table.remove(*c);
            self.receiver_table.remove(*c);
        }
        stale
    }

    /// State this agent most associates with `c` when sending; `None` when
    /// unknown or tied.
    pub fn sender_interpretation(&self, c: SignalId) -> Option<StateId> {
        self.sender_table.get(c).and_then(unique_argmax).map(StateId)
    }

    /// Action this agent most associates with `c` when receiving; `None` when
    /// unknown or tied.
    pub fn receiver_interpretation(&self, c: SignalId) -> Option<ActionId> {
        self.receiver_table.get(c).and_then(unique_argmax).map(ActionId)
    }

    /// The action this agent would greedily take if it received `c` itself.
    pub fn intended_action(&self, c: SignalId) -> Option<ActionId> {
        self.receiver_interpretation(c)
    }

    pub fn vocabulary(&self) -> BTreeSet<SignalId> {
        self.sender_table.iter().chain(self.receiver_table.iter()).map(|(c, _)| c).collect()
    }

    pub fn vocabulary_size(&self) -> usize {
        // every stored signal has a last-use stamp
        self.last_used.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(creator: u32, serial: u32) -> SignalId {
        SignalId { creator: AgentId(creator), serial }
    }

    fn agent(rule: CandidateRule) -> Agent<i64> {
        Agent::new(AgentId(0), 2, 2, AgentPolicy { candidate_rule: rule, ..AgentPolicy::default() })
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax_with_epsilon(&[0.0, 0.0], 0.2).unwrap(), &[0.5, 0.5], 1e-12));
        let third = 1.0 / 3.0;
        assert!(close(&softmax_with_epsilon(&[5.0, 5.0, 5.0], 0.0).unwrap(), &[third; 3], 1e-12));
        // softmax([1,0,0]) = [e, 1, 1] / (e + 2), then 0.7 p + 0.1
        let e = std::f64::consts::E;
        let z = e + 2.0;
        let expected = [0.7 * e / z + 0.1, 0.7 / z + 0.1, 0.7 / z + 0.1];
        let got = softmax_with_epsilon(&[1.0, 0.0, 0.0], 0.3).unwrap();
        assert!(close(&got, &expected, 1e-12));
        assert!(close(&got, &[0.5033, 0.2483, 0.2483], 1e-4));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_with_epsilon(&[], 0.1).is_err());
        assert!(softmax_with_epsilon(&[1.0], 1.5).is_err());
    }

    #[test]
    fn strict_candidates() {
        let mut a = agent(CandidateRule::Strict);
        assert!(a.candidate_signals(StateId(0)).is_empty());
        a.set_sender_utilities(sig(0, 1), vec![3, 1]);
        a.set_sender_utilities(sig(0, 2), vec![-1, -1]);
        assert_eq!(a.candidate_signals(StateId(0)), vec![sig(0, 1)]);
        let mut b = agent(CandidateRule::Strict);
        b.set_sender_utilities(sig(0, 1), vec![2, 5]);
        assert!(b.candidate_signals(StateId(0)).is_empty());
    }

    #[test]
    fn weak_candidates_admit_ties() {
        let mut a = agent(CandidateRule::Weak);
        a.set_sender_utilities(sig(0, 1), vec![3, 1]);
        a.set_sender_utilities(sig(0, 2), vec![-1, -1]);
        a.set_sender_utilities(sig(0, 3), vec![2, 5]);
        assert_eq!(a.candidate_signals(StateId(0)), vec![sig(0, 1), sig(0, 2)]);
        assert_eq!(a.candidate_signals(StateId(1)), vec![sig(0, 2), sig(0, 3)]);
    }

    #[test]
    fn naive_agent_mints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = agent(CandidateRule::Weak);
        let (c, minted) = a.select_signal(StateId(1), 0.2, &mut rng).unwrap();
        assert_eq!((c, minted), (sig(0, 0), true));
        assert_eq!(a.sender_table().get(c), Some(&[0, 0][..]));
        assert_eq!(a.mint_serial(), 1);
        // the untried signal is now a weak candidate, so no second mint
        let (c2, minted2) = a.select_signal(StateId(0), 0.2, &mut rng).unwrap();
        assert_eq!((c2, minted2), (c, false));
    }

    #[test]
    fn strict_agent_mints_again_for_untried_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = agent(CandidateRule::Strict);
        a.select_signal(StateId(0), 0.0, &mut rng).unwrap();
        let (c, minted) = a.select_signal(StateId(0), 0.0, &mut rng).unwrap();
        assert_eq!((c, minted), (sig(0, 1), true));
    }

    #[test]
    fn single_candidate_always_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = agent(CandidateRule::Strict);
        a.set_sender_utilities(sig(0, 4), vec![1, -2]);
        for _ in 0..100 {
            assert_eq!(a.select_signal(StateId(0), 0.0, &mut rng).unwrap(), (sig(0, 4), false));
        }
    }

    #[test]
    fn signal_frequency_matches_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = agent(CandidateRule::Strict);
        a.set_sender_utilities(sig(0, 1), vec![10, -5]);
        a.set_sender_utilities(sig(0, 2), vec![0, -5]);
        let n = 10_000;
        let hits = (0..n).filter(|_| a.select_signal(StateId(0), 0.0, &mut rng).unwrap().0 == sig(0, 1)).count();
        let expected = 1.0 / (1.0 + (-10f64).exp());
        assert!((hits as f64 / n as f64 - expected).abs() < 0.001);
    }

    #[test]
    fn unknown_signal_gives_uniform_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = agent(CandidateRule::Weak);
        let n = 10_000;
        let zeros =
            (0..n).filter(|i| a.select_action(sig(1, *i as u32 % 7), 0.1, &mut rng).unwrap() == ActionId(0)).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.02);
        assert_eq!(a.receiver_table().get(sig(1, 3)), Some(&[0, 0][..]));
        // adopted into the sender table as well
        assert_eq!(a.sender_table().get(sig(1, 3)), Some(&[0, 0][..]));
    }

    #[test]
    fn saturated_action_and_uniform_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = agent(CandidateRule::Weak);
        a.set_receiver_utilities(sig(1, 0), vec![100, 0]);
        assert!((0..1000).all(|_| a.select_action(sig(1, 0), 0.0, &mut rng).unwrap() == ActionId(0)));
        let probs = softmax_with_epsilon(&[1.0, 1.0, 1.0], 0.2).unwrap();
        assert!(close(&probs, &[1.0 / 3.0; 3], 1e-12));
    }

    #[test]
    fn additive_updates() {
        let mut a = agent(CandidateRule::Weak);
        let c = sig(0, 0);
        a.set_sender_utilities(c, vec![2, 0]);
        a.update_sender(c, StateId(0), -1).unwrap();
        assert_eq!(a.sender_table().get(c), Some(&[1, 0][..]));
        a.update_sender(c, StateId(1), 1).unwrap();
        assert_eq!(a.sender_table().get(c), Some(&[1, 1][..]));
        for _ in 0..10 {
            a.update_sender(c, StateId(1), 1).unwrap();
        }
        assert_eq!(a.sender_table().get(c), Some(&[1, 11][..]));

        let d = sig(1, 0);
        a.set_receiver_utilities(d, vec![2, 0]);
        a.update_receiver(d, ActionId(0), -1).unwrap();
        a.update_receiver(d, ActionId(1), 1).unwrap();
        assert_eq!(a.receiver_table().get(d), Some(&[1, 1][..]));
    }

    #[test]
    fn updating_unknown_signal_is_an_error() {
        let mut a = agent(CandidateRule::Weak);
        assert!(a.update_sender(sig(3, 3), StateId(0), 1).is_err());
        assert!(a.update_receiver(sig(3, 3), ActionId(0), 1).is_err());
    }

    #[test]
    fn forgetting_after_twenty_idle_participations() {
        let mut a = agent(CandidateRule::Weak);
        let old = sig(0, 0);
        let busy = sig(0, 1);
        a.set_sender_utilities(old, vec![1, 0]);
        a.set_sender_utilities(busy, vec![0, 1]);
        for _ in 0..4 {
            a.note_participation(busy);
        }
        a.note_participation(old);
        assert_eq!(a.last_used(old), Some(5));
        for n in 6..=25 {
            assert!(a.note_participation(busy).is_empty(), "purged early at {n}");
        }
        assert_eq!(a.note_participation(busy), vec![old]);
        assert_eq!(a.participation_count(), 26);
        assert_eq!(a.vocabulary(), BTreeSet::from([busy]));
    }

    #[test]
    fn constantly_used_signal_persists() {
        let mut a = agent(CandidateRule::Weak);
        let c = sig(0, 0);
        a.set_sender_utilities(c, vec![1, 0]);
        for _ in 0..200 {
            assert!(a.note_participation(c).is_empty());
        }
        assert_eq!(a.vocabulary_size(), 1);
    }

    #[test]
    fn purge_of_only_signal_empties_vocabulary() {
        let mut a = agent(CandidateRule::Weak);
        let c = sig(0, 0);
        let other = sig(9, 9);
        a.set_sender_utilities(c, vec![1, 0]);
        a.note_participation(c);
        for _ in 0..21 {
            a.note_participation(other);
        }
        assert!(!a.vocabulary().contains(&c));
        assert!(a.sender_table().is_empty());
    }

    #[test]
    fn interpretations() {
        let mut a = agent(CandidateRule::Weak);
        a.set_sender_utilities(sig(0, 0), vec![4, 1]);
        a.set_sender_utilities(sig(0, 1), vec![2, 2]);
        assert_eq!(a.sender_interpretation(sig(0, 0)), Some(StateId(0)));
        assert_eq!(a.sender_interpretation(sig(0, 1)), None);
        assert_eq!(a.sender_interpretation(sig(5, 5)), None);
        a.set_receiver_utilities(sig(1, 0), vec![0, 7]);
        a.set_receiver_utilities(sig(1, 1), vec![3, 3]);
        assert_eq!(a.receiver_interpretation(sig(1, 0)), Some(ActionId(1)));
        assert_eq!(a.intended_action(sig(1, 0)), Some(ActionId(1)));
        assert_eq!(a.intended_action(sig(1, 1)), None);
        assert_eq!(a.intended_action(sig(0, 0)), None);
    }

    #[test]
    fn vocabulary_is_union_of_tables() {
        let mut a = agent(CandidateRule::Weak);
        assert!(a.vocabulary().is_empty());
        a.set_sender_utilities(sig(0, 1), vec![0, 0]);
        a.set_receiver_utilities(sig(0, 1), vec![0, 0]);
        a.set_receiver_utilities(sig(0, 2), vec![0, 0]);
        assert_eq!(a.vocabulary(), BTreeSet::from([sig(0, 1), sig(0, 2)]));
        assert_eq!(a.vocabulary_size(), 2);
    }

    #[test]
    fn argmax_helpers() {
        assert_eq!(unique_argmax(&[1, 3, 2]), Some(1));
        assert_eq!(unique_argmax(&[3, 3, 2]), None);
        assert_eq!(first_argmax(&[3, 3, 2]), Some(0));
        assert_eq!(first_argmax::<i32>(&[]), None);
    }
}
