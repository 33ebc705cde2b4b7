//! Exact solver for the courier matching integer program.
//!
//! Every courier takes exactly one of its candidates (the null candidate is
//! always available) and every order is used by at most one courier. The
//! objective is the sum over couriers of immediate reward plus score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OdpError, Result};
use crate::feasibility::CandidateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Index into `CandidateSet::per_courier[c]` for every courier `c`.
    pub chosen: Vec<usize>,
    pub objective: f64,
}

impl Assignment {
    pub fn all_null(n_couriers: usize) -> Self {
        Self {
            chosen: vec![0; n_couriers],
            objective: 0.0,
        }
    }

    /// Number of orders covered by the chosen candidates.
    pub fn matched_orders(&self, cands: &CandidateSet) -> usize {
        self.chosen
            .iter()
            .enumerate()
            .map(|(c, &k)| cands.per_courier[c][k].batch.len())
            .sum()
    }
}

/// All-zero scores shaped like `cands`.
pub fn zero_scores(cands: &CandidateSet) -> Vec<Vec<f64>> {
    cands.per_courier.iter().map(|l| vec![0.0; l.len()]).collect()
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64).max(1)])
    }
    fn from_batch(batch: &[usize], n: usize) -> Self {
        let mut b = Self::new(n);
        for &i in batch {
            b.0[i / 64] |= 1 << (i % 64);
        }
        b
    }
    fn disjoint(&self, other: &Bits) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & b == 0)
    }
    fn or_assign(&mut self, other: &Bits) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a |= b);
    }
    fn xor_assign(&mut self, other: &Bits) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a ^= b);
    }
}

struct Choice {
    idx: usize,
    value: f64,
    mask: Bits,
}

/// Candidate values sorted best-first, with validation.
fn prepare(cands: &CandidateSet, scores: &[Vec<f64>]) -> Result<Vec<Vec<Choice>>> {
    if scores.len() != cands.per_courier.len() {
        return Err(OdpError::Contract(format!(
            "{} score rows for {} couriers",
            scores.len(),
            cands.per_courier.len()
        )));
    }
    let n = cands.n_orders;
    let mut out = Vec::with_capacity(scores.len());
    for (c, (list, row)) in cands.per_courier.iter().zip(scores).enumerate() {
        if row.len() != list.len() {
            return Err(OdpError::Contract(format!("courier {c}: {} scores for {} candidates", row.len(), list.len())));
        }
        if !list.iter().any(|m| m.batch.is_empty()) {
            return Err(OdpError::Contract(format!("courier {c} has no null candidate")));
        }
        let mut opts = Vec::with_capacity(list.len());
        for (k, (m, &s)) in list.iter().zip(row).enumerate() {
            let value = m.reward + s;
            if !value.is_finite() {
                return Err(OdpError::Input(format!("courier {c} candidate {k}: non-finite value {value}")));
            }
            if m.batch.iter().any(|&o| o >= n) {
                return Err(OdpError::Contract(format!("courier {c} candidate {k}: order index out of range")));
            }
            opts.push(Choice {
                idx: k,
                value,
                mask: Bits::from_batch(&m.batch, n),
            });
        }
        opts.sort_by(|a, b| {
            b.value
                .total_cmp(&a.value)
                .then_with(|| list[a.idx].batch.cmp(&list[b.idx].batch))
        });
        out.push(opts);
    }
    Ok(out)
}

fn objective_of(cands: &CandidateSet, scores: &[Vec<f64>], chosen: &[usize]) -> f64 {
    chosen
        .iter()
        .enumerate()
        .map(|(c, &k)| cands.per_courier[c][k].reward + scores[c][k])
        .sum()
}

struct Search<'a> {
    opts: &'a [Vec<Choice>],
    order: Vec<usize>,
    used: Bits,
    current: Vec<usize>,
    best_value: f64,
    best: Vec<usize>,
}

impl Search<'_> {
    fn bound(&self, depth: usize) -> f64 {
        self.order[depth..]
            .iter()
            .map(|&c| {
                self.opts[c]
                    .iter()
                    .find(|o| o.mask.disjoint(&self.used))
                    .map(|o| o.value)
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .sum()
    }

    fn dfs(&mut self, depth: usize, value: f64) {
        if depth == self.order.len() {
            if value > self.best_value {
                self.best_value = value;
                self.best.clone_from(&self.current);
            }
            return;
        }
        if value + self.bound(depth) <= self.best_value {
            return;
        }
        let c = self.order[depth];
        for i in 0..self.opts[c].len() {
            let o = &self.opts[c][i];
            if !o.mask.disjoint(&self.used) {
                continue;
            }
            let (idx, v) = (o.idx, o.value);
            self.used.or_assign(&self.opts[c][i].mask);
            self.current[c] = idx;
            self.dfs(depth + 1, value + v);
            self.used.xor_assign(&self.opts[c][i].mask);
        }
    }
}

/// Optimal assignment by depth-first branch-and-bound.
///
/// The bound adds, for every courier not yet fixed, its best candidate that
/// avoids orders already taken higher up the tree. Couriers are branched in
/// descending order of their best value; candidates best-first.
pub fn solve_matching(cands: &CandidateSet, scores: &[Vec<f64>]) -> Result<Assignment> {
    let opts = prepare(cands, scores)?;
    let n_c = opts.len();
    let mut order: Vec<usize> = (0..n_c).collect();
    order.sort_by(|&a, &b| opts[b][0].value.total_cmp(&opts[a][0].value).then(a.cmp(&b)));
    let mut search = Search {
        opts: &opts,
        order,
        used: Bits::new(cands.n_orders),
        current: vec![0; n_c],
        best_value: f64::NEG_INFINITY,
        best: vec![0; n_c],
    };
    search.dfs(0, 0.0);
    let chosen = search.best;
    let objective = objective_of(cands, scores, &chosen);
    Ok(Assignment { chosen, objective })
}

/// Couriers in index order each take their best candidate that does not
/// clash with orders already taken.
pub fn greedy_matching(cands: &CandidateSet, scores: &[Vec<f64>]) -> Result<Assignment> {
    let opts = prepare(cands, scores)?;
    let mut used = Bits::new(cands.n_orders);
    let mut chosen = Vec::with_capacity(opts.len());
    for list in &opts {
        let o = list
            .iter()
            .find(|o| o.mask.disjoint(&used))
            .expect("null candidate never conflicts");
        used.or_assign(&o.mask);
        chosen.push(o.idx);
    }
    let objective = objective_of(cands, scores, &chosen);
    Ok(Assignment { chosen, objective })
}

#[derive(Serialize)]
struct DumpCandidate<'a> {
    batch: &'a [usize],
    reward: f64,
    score: f64,
}

#[derive(Serialize)]
struct Dump<'a> {
    n_orders: usize,
    couriers: Vec<Vec<DumpCandidate<'a>>>,
    chosen: &'a [usize],
    objective: f64,
}

/// Writes an instance and its solution as JSON for offline inspection.
pub fn dump_instance(path: &Path, cands: &CandidateSet, scores: &[Vec<f64>], assignment: &Assignment) -> Result<()> {
    let dump = Dump {
        n_orders: cands.n_orders,
        couriers: cands
            .per_courier
            .iter()
            .zip(scores)
            .map(|(l, s)| {
                l.iter()
                    .zip(s)
                    .map(|(m, &score)| DumpCandidate {
                        batch: &m.batch,
                        reward: m.reward,
                        score,
                    })
                    .collect()
            })
            .collect(),
        chosen: &assignment.chosen,
        objective: assignment.objective,
    };
    let text = serde_json::to_string_pretty(&dump)?;
    std::fs::write(path, text).map_err(|e| OdpError::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::feasibility::MatchCandidate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn instance(values: Vec<Vec<(Vec<usize>, f64)>>, n_orders: usize) -> CandidateSet {
        CandidateSet {
            per_courier: values
                .into_iter()
                .enumerate()
                .map(|(c, l)| {
                    l.into_iter()
                        .map(|(batch, reward)| MatchCandidate { courier: c, batch, route: None, reward })
                        .collect()
                })
                .collect(),
            n_orders,
        }
    }

    /// Random instance: each courier gets a null candidate plus random
    /// batches of up to three orders.
    pub(crate) fn random_instance(rng: &mut ChaCha8Rng, max_c: usize, max_o: usize) -> CandidateSet {
        let n_c = rng.random_range(1..=max_c);
        let n_o = rng.random_range(0..=max_o);
        let values = (0..n_c)
            .map(|_| {
                let mut l = vec![(vec![], rng.random_range(-5.0..5.0))];
                if n_o > 0 {
                    for _ in 0..rng.random_range(0..8) {
                        let size = rng.random_range(1..=3.min(n_o));
                        let mut b: Vec<usize> = rand::seq::index::sample(rng, n_o, size).into_vec();
                        b.sort_unstable();
                        if !l.iter().any(|(x, _)| *x == b) {
                            l.push((b, rng.random_range(-20.0..40.0)));
                        }
                    }
                }
                l
            })
            .collect();
        instance(values, n_o)
    }

    /// Exhaustive enumeration over the full product of candidate lists.
    pub(crate) fn brute_force(cands: &CandidateSet) -> f64 {
        fn rec(cands: &CandidateSet, c: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if c == cands.per_courier.len() {
                *best = best.max(acc);
                return;
            }
            for m in &cands.per_courier[c] {
                if m.batch.iter().any(|&o| used[o]) {
                    continue;
                }
                m.batch.iter().for_each(|&o| used[o] = true);
                rec(cands, c + 1, used, acc + m.reward, best);
                m.batch.iter().for_each(|&o| used[o] = false);
            }
        }
        let mut best = f64::NEG_INFINITY;
        rec(cands, 0, &mut vec![false; cands.n_orders], 0.0, &mut best);
        best
    }

    fn is_valid(cands: &CandidateSet, a: &Assignment) -> bool {
        let mut used = vec![false; cands.n_orders];
        a.chosen.len() == cands.per_courier.len()
            && a.chosen.iter().enumerate().all(|(c, &k)| {
                k < cands.per_courier[c].len()
                    && cands.per_courier[c][k].batch.iter().all(|&o| !std::mem::replace(&mut used[o], true))
            })
    }

    #[test]
    fn singleton_argmax() {
        let cands = instance(vec![vec![(vec![], 0.0), (vec![0], 5.0)]], 1);
        let a = solve_matching(&cands, &zero_scores(&cands)).unwrap();
        assert_eq!(a.chosen, vec![1]);
        assert_eq!(a.objective, 5.0);
    }

    #[test]
    fn conflict_goes_to_higher_value() {
        let cands = instance(
            vec![vec![(vec![], 0.0), (vec![0], 5.0)], vec![(vec![], 0.0), (vec![0], 7.0)]],
            1,
        );
        let a = solve_matching(&cands, &zero_scores(&cands)).unwrap();
        assert_eq!(a.chosen, vec![0, 1]);
        assert_eq!(a.objective, 7.0);
        let g = greedy_matching(&cands, &zero_scores(&cands)).unwrap();
        assert_eq!(g.objective, 5.0);
        assert!(g.objective < a.objective);
    }

    #[test]
    fn scores_add_to_rewards() {
        let cands = instance(vec![vec![(vec![], 0.0), (vec![0], 5.0)]], 1);
        let a = solve_matching(&cands, &[vec![6.0, 0.0]]).unwrap();
        assert_eq!(a.chosen, vec![0]);
        assert_eq!(a.objective, 6.0);
    }

    #[test]
    fn missing_null_is_contract_error() {
        let cands = instance(vec![vec![(vec![0], 5.0)]], 1);
        assert!(matches!(solve_matching(&cands, &zero_scores(&cands)), Err(OdpError::Contract(_))));
    }

    #[test]
    fn nan_score_is_input_error() {
        let cands = instance(vec![vec![(vec![], 0.0), (vec![0], 5.0)]], 1);
        assert!(matches!(solve_matching(&cands, &[vec![0.0, f64::NAN]]), Err(OdpError::Input(_))));
    }

    #[test]
    fn no_couriers() {
        let cands = instance(vec![], 3);
        let a = solve_matching(&cands, &[]).unwrap();
        assert!(a.chosen.is_empty());
        assert_eq!(a.objective, 0.0);
    }

    #[test]
    fn all_negative_gives_all_null() {
        let cands = instance(
            vec![vec![(vec![], 0.0), (vec![0], -1.0)], vec![(vec![], 0.0), (vec![1], -3.0), (vec![0, 1], -0.5)]],
            2,
        );
        let a = solve_matching(&cands, &zero_scores(&cands)).unwrap();
        assert_eq!(a.chosen, vec![0, 0]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let cands = random_instance(&mut rng, 6, 6);
            let z = zero_scores(&cands);
            let a = solve_matching(&cands, &z).unwrap();
            let g = greedy_matching(&cands, &z).unwrap();
            let want = brute_force(&cands);
            assert!(is_valid(&cands, &a) && is_valid(&cands, &g));
            assert!((a.objective - want).abs() <= 1e-9, "{} vs {want}", a.objective);
            assert!(g.objective <= a.objective + 1e-9);
        }
    }

    #[test]
    fn no_conflicts_greedy_equals_exact() {
        let cands = instance(
            vec![vec![(vec![], 0.0), (vec![0], 2.0)], vec![(vec![], 1.0), (vec![1], 3.0), (vec![2], 4.0)]],
            3,
        );
        let z = zero_scores(&cands);
        assert_eq!(greedy_matching(&cands, &z).unwrap(), solve_matching(&cands, &z).unwrap());
    }

    #[test]
    fn dump_writes_json() {
        let dir = tempfile::tempdir().unwrap();
        let cands = instance(vec![vec![(vec![], 0.0), (vec![0], 5.0)]], 1);
        let z = zero_scores(&cands);
        let a = solve_matching(&cands, &z).unwrap();
        let p = dir.path().join("inst.json");
        dump_instance(&p, &cands, &z, &a).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["objective"], 5.0);
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_optimum(seed in any::<u64>(), k in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cands = random_instance(&mut rng, 5, 5);
            let mut scaled = cands.clone();
            scaled.per_courier.iter_mut().flatten().for_each(|m| m.reward *= k);
            let a = solve_matching(&cands, &zero_scores(&cands)).unwrap();
            let b = solve_matching(&scaled, &zero_scores(&scaled)).unwrap();
            // The scaled optimum, evaluated unscaled, must still be optimal.
            let unscaled: f64 = b.chosen.iter().enumerate().map(|(c, &i)| cands.per_courier[c][i].reward).sum();
            prop_assert!((unscaled - a.objective).abs() <= 1e-9 * (1.0 + a.objective.abs()));
        }
    }
}
