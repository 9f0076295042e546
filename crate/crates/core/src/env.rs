//! Permutation-structured reward functions over finite state and action
//! spaces, with the samplers that draw them.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of an environment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

/// Index of an action the receiver can perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Dense reward table over states x actions.
///
/// Every row holds exactly one strictly positive cell; all other cells are
/// strictly negative. The table is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix<T: Scalar = f64> {
    num_states: usize,
    num_actions: usize,
    cells: Vec<T>,
    tag: String,
}

impl<T: Scalar> RewardMatrix<T> {
    /// Builds a matrix from explicit rows, checking the one-positive-per-row
    /// invariant.
    pub fn from_rows(tag: impl Into<String>, rows: Vec<Vec<T>>) -> Result<Self> {
        let tag = tag.into();
        let num_states = rows.len();
        if num_states == 0 {
            return Err(Error::InvalidReward(format!("{tag}: matrix has no rows")));
        }
        let num_actions = rows[0].len();
        if num_actions == 0 {
            return Err(Error::InvalidReward(format!("{tag}: matrix has no columns")));
        }
        let mut cells = Vec::with_capacity(num_states * num_actions);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::InvalidReward(format!(
                    "{tag}: row {s} has {} cells, expected {num_actions}",
                    row.len()
                )));
            }
            let positive = row.iter().filter(|v| v.is_positive()).count();
            let negative = row.iter().filter(|v| v.is_negative()).count();
            if positive != 1 || negative != num_actions - 1 {
                return Err(Error::InvalidReward(format!(
                    "{tag}: row {s} must hold exactly one positive cell and only negative cells otherwise"
                )));
            }
            cells.extend(row);
        }
        Ok(Self { num_states, num_actions, cells, tag })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Reward for performing `action` in `state`.
    ///
    /// Panics on out-of-range indices.
    pub fn reward(&self, state: StateId, action: ActionId) -> T {
        assert!(state.0 < self.num_states, "state {state} out of range");
        assert!(action.0 < self.num_actions, "action {action} out of range");
        self.cells[state.0 * self.num_actions + action.0]
    }

    /// The unique rewarded action for `state`.
    pub fn best_action(&self, state: StateId) -> ActionId {
        let row = &self.cells[state.0 * self.num_actions..(state.0 + 1) * self.num_actions];
        ActionId(row.iter().position(|v| v.is_positive()).expect("row invariant"))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.cells.chunks(self.num_actions)
    }
}

fn permutation_tag(sigma: &[usize]) -> String {
    let mut tag = format!("R_{}x{}_perm", sigma.len(), sigma.len());
    for a in sigma {
        tag.push_str(&a.to_string());
    }
    tag
}

/// Reward function that pays `pos` exactly when `action == sigma[state]`.
pub fn make_permutation_reward<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    sigma: &[usize],
    pos: T,
    neg: T,
) -> Result<RewardMatrix<T>> {
    if num_states != num_actions {
        return Err(Error::InvalidReward(format!(
            "permutation rewards need a square space, got {num_states}x{num_actions}"
        )));
    }
    if sigma.len() != num_states {
        return Err(Error::InvalidReward(format!("permutation has {} entries, expected {num_states}", sigma.len())));
    }
    let mut seen = vec![false; num_actions];
    for &a in sigma {
        if a >= num_actions || std::mem::replace(&mut seen[a], true) {
            return Err(Error::InvalidReward(format!("{sigma:?} is not a bijection")));
        }
    }
    if !pos.is_positive() || !neg.is_negative() {
        return Err(Error::InvalidReward(format!("need pos > 0 and neg < 0, got pos={pos} neg={neg}")));
    }
    let rows =
        sigma.iter().map(|&target| (0..num_actions).map(|a| if a == target { pos } else { neg }).collect()).collect();
    RewardMatrix::from_rows(permutation_tag(sigma), rows)
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    // next lexicographic permutation
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// One ±1 matrix per permutation, in lexicographic permutation order.
///
/// For the 2x2 space this yields `R1` (identity) followed by `R2` (swap).
pub fn enumerate_reward_functions<T: Scalar>(num_states: usize, num_actions: usize) -> Result<Vec<RewardMatrix<T>>> {
    if num_states != num_actions {
        return Err(Error::InvalidReward(format!(
            "cannot enumerate permutation rewards over {num_states}x{num_actions}"
        )));
    }
    if num_states == 0 {
        return Err(Error::InvalidReward("empty state space".into()));
    }
    let mut out = Vec::new();
    for sigma in permutations(num_states) {
        let mut m = make_permutation_reward(num_states, num_actions, &sigma, T::one(), -T::one())?;
        if num_states == 2 {
            m.tag = if sigma == [0, 1] { "R1".into() } else { "R2".into() };
        }
        out.push(m);
    }
    Ok(out)
}

/// A non-empty set of reward functions sampled uniformly per repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFamily<T: Scalar = f64> {
    members: Vec<RewardMatrix<T>>,
}

impl<T: Scalar> RewardFamily<T> {
    pub fn new(members: Vec<RewardMatrix<T>>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Config("reward family is empty".into()));
        };
        let (ns, na) = (first.num_states(), first.num_actions());
        if members.iter().any(|m| m.num_states() != ns || m.num_actions() != na) {
            return Err(Error::Config("reward family mixes matrix dimensions".into()));
        }
        Ok(Self { members })
    }

    /// Every permutation reward over an `n`x`n` space.
    pub fn symmetric(n: usize) -> Result<Self> {
        Self::new(enumerate_reward_functions(n, n)?)
    }

    pub fn members(&self) -> &[RewardMatrix<T>] {
        &self.members
    }

    pub fn num_states(&self) -> usize {
        self.members[0].num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.members[0].num_actions()
    }
}

/// Uniform draw from the family; one decision from the stream.
pub fn sample_reward_function<'a, T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    family: &'a RewardFamily<T>,
) -> &'a RewardMatrix<T> {
    &family.members[rng.gen_range(0..family.members.len())]
}

/// Uniform draw over `0..num_states`.
pub fn sample_state<R: Rng + ?Sized>(rng: &mut R, num_states: usize) -> StateId {
    assert!(num_states >= 1, "environment needs at least one state");
    StateId(rng.gen_range(0..num_states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_swap() {
        let r1 = make_permutation_reward(2, 2, &[0, 1], 1.0, -1.0).unwrap();
        assert_eq!(r1.rows().collect::<Vec<_>>(), vec![&[1.0, -1.0][..], &[-1.0, 1.0][..]]);
        assert_eq!(r1.reward(StateId(0), ActionId(0)), 1.0);
        assert_eq!(r1.reward(StateId(0), ActionId(1)), -1.0);
        let r2 = make_permutation_reward(2, 2, &[1, 0], 1, -1).unwrap();
        assert_eq!(r2.rows().collect::<Vec<_>>(), vec![&[-1, 1][..], &[1, -1][..]]);
        assert_eq!(r2.tag(), "R_2x2_perm10");
    }

    #[test]
    fn rotation_3x3() {
        let m = make_permutation_reward(3, 3, &[1, 2, 0], 1, -1).unwrap();
        for s in 0..3 {
            let positives = (0..3).filter(|&a| m.reward(StateId(s), ActionId(a)) > 0).count();
            assert_eq!(positives, 1);
        }
        assert_eq!(m.best_action(StateId(2)), ActionId(0));
    }

    #[test]
    fn rejects_bad_permutations_and_signs() {
        assert!(make_permutation_reward(2, 2, &[0, 0], 1, -1).is_err());
        assert!(make_permutation_reward(2, 2, &[0, 2], 1, -1).is_err());
        assert!(make_permutation_reward(2, 3, &[0, 1], 1, -1).is_err());
        assert!(make_permutation_reward(2, 2, &[0, 1], 0, -1).is_err());
        assert!(make_permutation_reward(2, 2, &[0, 1], 1, 0).is_err());
    }

    #[test]
    fn explicit_rows_are_validated() {
        let asym = RewardMatrix::from_rows("asym", vec![vec![1, -1], vec![-3, 1]]).unwrap();
        assert_eq!(asym.reward(StateId(1), ActionId(0)), -3);
        assert!(RewardMatrix::from_rows("two_pos", vec![vec![1, 1], vec![-1, 1]]).is_err());
        assert!(RewardMatrix::from_rows("zero", vec![vec![1, 0], vec![-1, 1]]).is_err());
        assert!(RewardMatrix::<i64>::from_rows("ragged", vec![vec![1, -1], vec![1]]).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let two = enumerate_reward_functions::<i64>(2, 2).unwrap();
        assert_eq!(two.iter().map(|m| m.tag()).collect::<Vec<_>>(), ["R1", "R2"]);
        assert_eq!(enumerate_reward_functions::<i64>(1, 1).unwrap().len(), 1);
        assert!(enumerate_reward_functions::<i64>(2, 3).is_err());
    }

    #[test]
    fn empty_family_is_rejected() {
        assert!(RewardFamily::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn single_state_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| sample_state(&mut rng, 1) == StateId(0)));
    }

    #[test]
    fn state_sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            counts[sample_state(&mut rng, 2).0] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.5).abs() <= 0.02, "{counts:?}");
        }
    }
}
