//! Multistage scenario trees over realizations of the interruption process.
//!
//! Stage `t` observes `ψ_t`, drawn from the schedule `ζ_{t-1}` decided after
//! seeing `ψ_1..ψ_{t-1}`. Decisions are memoized by observation prefix, so
//! branches that share a history share their decisions.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BernoulliSchedule, Realization};
use crate::{Error, Result};

/// Largest `n·T` for complete enumeration.
pub const TREE_ENUMERATION_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    Complete,
    /// `count` branches drawn by forward simulation; each gets weight `1/count`.
    Sampled {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Branch {
    /// `ψ_1..ψ_T`.
    pub observations: Vec<Realization>,
    /// `ζ_0..ζ_T`.
    pub decisions: Vec<BernoulliSchedule>,
    /// `π^{(k)}`.
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    pub nodes: usize,
    pub depth: usize,
    pub branches: Vec<Branch>,
}

/// `φ(ψ, ζ) = Π ζ_i^{ψ_i} (1 - ζ_i)^{1 - ψ_i}`.
pub fn observation_prob(psi: &Realization, zeta: &BernoulliSchedule) -> Result<f64> {
    zeta.realization_mass(psi)
}

type History = Vec<u64>;

struct Memo<'f, F> {
    decide: &'f mut F,
    cache: HashMap<History, BernoulliSchedule>,
    nodes: usize,
}

impl<F> Memo<'_, F>
where
    F: FnMut(&[Realization]) -> Result<BernoulliSchedule>,
{
    fn get(&mut self, history: &[Realization]) -> Result<BernoulliSchedule> {
        let key: History = history.iter().map(|r| r.mask()).collect();
        if let Some(s) = self.cache.get(&key) {
            return Ok(s.clone());
        }
        let s = (self.decide)(history)?;
        if s.len() != self.nodes {
            return Err(Error::dim("scenario decision", self.nodes, s.len()));
        }
        self.cache.insert(key, s.clone());
        Ok(s)
    }
}

/// Build a tree of `depth` stages over `nodes` reporting slots.
///
/// `decide(history)` returns the schedule used for the next stage; it is
/// called once per distinct history.
pub fn build_scenario_tree<F>(nodes: usize, depth: usize, mode: TreeMode, mut decide: F) -> Result<ScenarioTree>
where
    F: FnMut(&[Realization]) -> Result<BernoulliSchedule>,
{
    if depth == 0 {
        return Err(Error::Config("scenario tree depth must be at least 1".into()));
    }
    if nodes >= 64 {
        return Err(Error::TooLarge { n: nodes, cap: 63 });
    }
    let mut memo = Memo {
        decide: &mut decide,
        cache: HashMap::new(),
        nodes,
    };
    let mut branches = Vec::new();
    match mode {
        TreeMode::Complete => {
            if nodes * depth > TREE_ENUMERATION_CAP {
                return Err(Error::TooLarge {
                    n: nodes * depth,
                    cap: TREE_ENUMERATION_CAP,
                });
            }
            let mut stack: Vec<(Vec<Realization>, f64)> = vec![(Vec::new(), 1.0)];
            while let Some((hist, prob)) = stack.pop() {
                if hist.len() == depth {
                    let mut decisions = Vec::with_capacity(depth + 1);
                    for t in 0..=depth {
                        decisions.push(memo.get(&hist[..t])?);
                    }
                    branches.push(Branch {
                        observations: hist,
                        decisions,
                        prob,
                    });
                    continue;
                }
                let zeta = memo.get(&hist)?;
                // Children in reverse so branches come out in mask order.
                for mask in (0..1u64 << nodes).rev() {
                    let psi = Realization::from_mask(nodes, mask);
                    let phi = observation_prob(&psi, &zeta)?;
                    if phi == 0.0 {
                        continue;
                    }
                    let mut next = hist.clone();
                    next.push(psi);
                    stack.push((next, prob * phi));
                }
            }
        }
        TreeMode::Sampled { count, seed } => {
            if count == 0 {
                return Err(Error::Config("sampled tree needs at least one branch".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let mut hist = Vec::with_capacity(depth);
                let mut decisions = Vec::with_capacity(depth + 1);
                for _ in 0..depth {
                    let zeta = memo.get(&hist)?;
                    let bits = zeta.probs().iter().map(|&p| rng.random::<f64>() < p).collect();
                    decisions.push(zeta);
                    hist.push(Realization::new(bits));
                }
                decisions.push(memo.get(&hist)?);
                branches.push(Branch {
                    observations: hist,
                    decisions,
                    prob: 1.0 / count as f64,
                });
            }
        }
    }
    Ok(ScenarioTree { nodes, depth, branches })
}

impl ScenarioTree {
    pub fn total_prob(&self) -> f64 {
        self.branches.iter().map(|b| b.prob).sum()
    }

    /// `(1/T) Σ_t Pd(ψ_t, ζ_t)` on branch `k`.
    pub fn branch_average_pd<F>(&self, k: usize, mut pd: F) -> Result<f64>
    where
        F: FnMut(&Realization, &BernoulliSchedule) -> Result<f64>,
    {
        let br = self
            .branches
            .get(k)
            .ok_or_else(|| Error::Range(format!("branch {k} of {}", self.branches.len())))?;
        let mut acc = 0.0;
        for t in 1..=self.depth {
            acc += pd(&br.observations[t - 1], &br.decisions[t])?;
        }
        Ok(acc / self.depth as f64)
    }

    /// `Σ_k π^{(k)} · branch_average_pd(k)`.
    pub fn objective<F>(&self, mut pd: F) -> Result<f64>
    where
        F: FnMut(&Realization, &BernoulliSchedule) -> Result<f64>,
    {
        let mut acc = 0.0;
        for k in 0..self.branches.len() {
            acc += self.branches[k].prob * self.branch_average_pd(k, &mut pd)?;
        }
        Ok(acc)
    }

    /// Decisions of branch `k`.
    pub fn solve_per_branch(&self, k: usize) -> Result<&[BernoulliSchedule]> {
        self.branches
            .get(k)
            .map(|b| b.decisions.as_slice())
            .ok_or_else(|| Error::Range(format!("branch {k} of {}", self.branches.len())))
    }

    /// Re-check that branches with equal observation prefixes carry equal decisions.
    pub fn is_non_anticipative(&self) -> bool {
        let mut seen: HashMap<Vec<u64>, &BernoulliSchedule> = HashMap::new();
        for br in &self.branches {
            for t in 0..=self.depth {
                let key: Vec<u64> = br.observations[..t].iter().map(|r| r.mask()).collect();
                match seen.get(&key) {
                    Some(prev) if *prev != &br.decisions[t] => return false,
                    Some(_) => {}
                    None => {
                        seen.insert(key, &br.decisions[t]);
                    }
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_stage_is_flat_realization_set() {
        let z0 = BernoulliSchedule::new(vec![0.3, 0.8, 0.5]).unwrap();
        let tree = build_scenario_tree(3, 1, TreeMode::Complete, |_| Ok(z0.clone())).unwrap();
        assert_eq!(tree.branches.len(), 8);
        for br in &tree.branches {
            let want = z0.realization_mass(&br.observations[0]).unwrap();
            assert!((br.prob - want).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_schedule_has_one_branch() {
        let one = BernoulliSchedule::uniform(3, 1.0).unwrap();
        let tree = build_scenario_tree(3, 2, TreeMode::Complete, |_| Ok(one.clone())).unwrap();
        assert_eq!(tree.branches.len(), 1);
        assert_eq!(tree.branches[0].prob, 1.0);
    }

    #[test]
    fn random_decisions_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tree = build_scenario_tree(3, 2, TreeMode::Complete, |_| {
            BernoulliSchedule::new((0..3).map(|_| rng.random::<f64>()).collect())
        })
        .unwrap();
        assert!((tree.total_prob() - 1.0).abs() < 1e-12);
        assert!(tree.is_non_anticipative());
    }

    #[test]
    fn shared_prefixes_share_decisions() {
        let mut calls = 0;
        let tree = build_scenario_tree(2, 2, TreeMode::Complete, |h| {
            calls += 1;
            let k = h.iter().map(|r| r.mask() as f64).sum::<f64>();
            BernoulliSchedule::new(vec![0.2 + 0.1 * k, 0.6])
        })
        .unwrap();
        // 1 root + 4 first-stage histories + 16 leaves.
        assert_eq!(calls, 21);
        for a in &tree.branches {
            for b in &tree.branches {
                if a.observations[0] == b.observations[0] {
                    assert_eq!(a.decisions[1], b.decisions[1]);
                }
                assert_eq!(a.decisions[0], b.decisions[0]);
            }
        }
    }

    #[test]
    fn oversized_tree_is_rejected() {
        let z = BernoulliSchedule::uniform(9, 0.5).unwrap();
        assert!(matches!(
            build_scenario_tree(9, 2, TreeMode::Complete, |_| Ok(z.clone())),
            Err(Error::TooLarge { .. })
        ));
        let tree = build_scenario_tree(9, 2, TreeMode::Sampled { count: 50, seed: 1 }, |_| Ok(z.clone())).unwrap();
        assert_eq!(tree.branches.len(), 50);
        assert!((tree.total_prob() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn branch_average_uses_stage_decisions() {
        let z = BernoulliSchedule::uniform(1, 0.5).unwrap();
        let tree = build_scenario_tree(1, 3, TreeMode::Complete, |_| Ok(z.clone())).unwrap();
        let avg = tree.objective(|psi, _| Ok(if psi.get(0) { 1.0 } else { 0.0 })).unwrap();
        assert!((avg - 0.5).abs() < 1e-12);
    }
}
