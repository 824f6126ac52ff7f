//! Belief over candidate items, guessing, information gain of clarification
//! questions, and the thresholded retrieval score.

use serde::{Deserialize, Serialize};

use crate::classifier::clamp_prob;
use crate::corpus::ItemId;
use crate::error::{Error, Result};

/// Per-item, per-attribute probabilities stored column-major so an
/// attribute's column over all items is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    num_items: usize,
    num_attributes: usize,
    data: Vec<f64>,
}

impl ProbTable {
    pub fn from_rows(rows: &[Vec<f64>], num_attributes: usize) -> Self {
        let n = rows.len();
        let mut data = vec![0.0; n * num_attributes];
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), num_attributes, "probability row length");
            for (w, &p) in row.iter().enumerate() {
                data[w * n + i] = p;
            }
        }
        ProbTable {
            num_items: n,
            num_attributes,
            data,
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn column(&self, w: usize) -> &[f64] {
        &self.data[w * self.num_items..(w + 1) * self.num_items]
    }

    pub fn get(&self, item: usize, w: usize) -> f64 {
        self.data[w * self.num_items + item]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub b: Vec<f64>,
    pub described: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl BeliefState {
    pub fn new(probs: &ProbTable, described: &[usize]) -> Result<Self> {
        Ok(BeliefState {
            b: compute_belief(probs, described, &[], &[])?,
            described: described.to_vec(),
            positive: Vec::new(),
            negative: Vec::new(),
        })
    }

    /// Folds in a clarification answer for attribute `w`.
    pub fn apply(&mut self, probs: &ProbTable, w: usize, yes: bool) {
        self.b = update_belief(&self.b, probs.column(w), yes);
        if yes {
            self.positive.push(w);
        } else {
            self.negative.push(w);
        }
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn normalize_or_uniform(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|x| *x /= total);
        v
    } else {
        uniform(v.len())
    }
}

/// `b(i) ∝ Π_{W_d} p_w(i) · Π_{W_p} p_w(i) · Π_{W_n} (1 - p_w(i))`, evaluated
/// in log space.
pub fn compute_belief(
    probs: &ProbTable,
    described: &[usize],
    positive: &[usize],
    negative: &[usize],
) -> Result<Vec<f64>> {
    let n = probs.num_items();
    if n == 0 {
        return Err(Error::Empty("active test set"));
    }
    let mut log_b = vec![0.0; n];
    for &w in described.iter().chain(positive) {
        for (lb, &p) in log_b.iter_mut().zip(probs.column(w)) {
            *lb += clamp_prob(p).ln();
        }
    }
    for &w in negative {
        for (lb, &p) in log_b.iter_mut().zip(probs.column(w)) {
            *lb += (1.0 - clamp_prob(p)).ln();
        }
    }
    let max = log_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(uniform(n));
    }
    Ok(normalize_or_uniform(
        log_b.into_iter().map(|l| (l - max).exp()).collect(),
    ))
}

/// Multiplies in the likelihood of one yes/no answer and renormalises.
pub fn update_belief(prev: &[f64], column: &[f64], yes: bool) -> Vec<f64> {
    let next = prev
        .iter()
        .zip(column)
        .map(|(&b, &p)| {
            let p = clamp_prob(p);
            b * if yes { p } else { 1.0 - p }
        })
        .collect();
    normalize_or_uniform(next)
}

/// Index of the maximum belief; ties go to the lowest index.
pub fn guess(b: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in b.iter().enumerate() {
        if v > b[best] {
            best = i;
        }
    }
    best
}

/// Expected information gain of asking about an attribute whose per-item
/// positive probability is `column`:
/// `J = Σ_i Σ_a b(i) P(a|i) ln(P(a|i) / P(a))`.
pub fn info_gain(b: &[f64], column: &[f64]) -> f64 {
    let (mut p_yes, mut p_no) = (0.0, 0.0);
    for (&bi, &p) in b.iter().zip(column) {
        p_yes += bi * p;
        p_no += bi * (1.0 - p);
    }
    let term = |bi: f64, pa: f64, marginal: f64| {
        if pa > 0.0 && marginal > 0.0 {
            bi * pa * (pa / marginal).ln()
        } else {
            0.0
        }
    };
    let mut j = 0.0;
    for (&bi, &p) in b.iter().zip(column) {
        if bi > 0.0 {
            j += term(bi, p, p_yes) + term(bi, 1.0 - p, p_no);
        }
    }
    j.max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub c1: f64,
    pub c2: f64,
    pub rank_cap: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            c1: 0.9,
            c2: 0.1,
            rank_cap: 200,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > self.c2 && self.c2 >= 0.0) {
            return Err(Error::Config(format!(
                "retrieval weights need c1 > c2 >= 0 (got {}, {})",
                self.c1, self.c2
            )));
        }
        if self.rank_cap == 0 {
            return Err(Error::Config("rank_cap must be positive".into()));
        }
        Ok(())
    }
}

/// `c1 · #agreements + c2 · #disagreements` between thresholded decisions and
/// the labels a description implies (positive inside it, negative outside).
pub fn retrieval_score(decisions: &[bool], described: &[usize], config: &RetrievalConfig) -> f64 {
    let mut agree = 0usize;
    for (w, &d) in decisions.iter().enumerate() {
        if d == described.contains(&w) {
            agree += 1;
        }
    }
    let disagree = decisions.len() - agree;
    config.c1 * agree as f64 + config.c2 * disagree as f64
}

/// Items sorted by descending score, ties by ascending id, truncated to
/// `rank_cap`.
pub fn retrieval_rank(
    ids: &[ItemId],
    decisions: &[Vec<bool>],
    described: &[usize],
    config: &RetrievalConfig,
) -> Vec<(ItemId, f64)> {
    let mut scored: Vec<(ItemId, f64)> = ids
        .iter()
        .zip(decisions)
        .map(|(&id, d)| (id, retrieval_score(d, described, config)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(config.rank_cap);
    scored
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSummary {
    pub entropy: f64,
    pub top: f64,
    pub second: f64,
    pub top_gap: f64,
    pub mean: f64,
    pub top_minus_mean: f64,
}

impl BeliefSummary {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.entropy,
            self.top,
            self.second,
            self.top_gap,
            self.mean,
            self.top_minus_mean,
        ]
    }
}

pub fn belief_summary(b: &[f64]) -> BeliefSummary {
    let entropy = -b.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    let (mut top, mut second) = (0.0f64, 0.0f64);
    for &x in b {
        if x > top {
            second = top;
            top = x;
        } else if x > second {
            second = x;
        }
    }
    let mean = if b.is_empty() {
        0.0
    } else {
        b.iter().sum::<f64>() / b.len() as f64
    };
    BeliefSummary {
        entropy: entropy.max(0.0),
        top,
        second,
        top_gap: top - second,
        mean,
        top_minus_mean: top - mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&[f64]]) -> ProbTable {
        let n = cols[0].len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        ProbTable::from_rows(&rows, cols.len())
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn empty_sets_give_uniform_belief() {
        let t = table(&[&[0.3, 0.6, 0.9]]);
        let b = compute_belief(&t, &[], &[], &[]).unwrap();
        assert!(close(&b, &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn description_only_belief() {
        let t = table(&[&[0.8, 0.2]]);
        let b = compute_belief(&t, &[0], &[], &[]).unwrap();
        assert!(close(&b, &[0.8, 0.2], 1e-12));
    }

    #[test]
    fn positive_and_negative_sets() {
        let t = table(&[&[0.9, 0.5], &[0.5, 0.1]]);
        let b = compute_belief(&t, &[], &[0], &[1]).unwrap();
        assert!(close(&b, &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn empty_active_set_is_an_error() {
        let t = ProbTable::from_rows(&[], 2);
        assert!(compute_belief(&t, &[], &[], &[]).is_err());
    }

    #[test]
    fn extreme_products_do_not_underflow() {
        let col = vec![1e-7; 3];
        let cols: Vec<&[f64]> = (0..200).map(|_| col.as_slice()).collect();
        let t = table(&cols);
        let all: Vec<usize> = (0..200).collect();
        let b = compute_belief(&t, &all, &[], &[]).unwrap();
        assert!(close(&b, &[1.0 / 3.0; 3], 1e-12));
    }

    #[test]
    fn update_examples() {
        let b = update_belief(&[0.2, 0.3, 0.5], &[0.5, 0.5, 0.5], true);
        assert!(close(&b, &[0.2, 0.3, 0.5], 1e-15));
        let b = update_belief(&[0.5, 0.5], &[0.9, 0.1], true);
        assert!(close(&b, &[0.9, 0.1], 1e-12));
    }

    #[test]
    fn sequential_updates_match_batch() {
        let t = table(&[&[0.7, 0.2, 0.4], &[0.1, 0.8, 0.5], &[0.6, 0.6, 0.3]]);
        let mut s = BeliefState::new(&t, &[2]).unwrap();
        s.apply(&t, 0, true);
        s.apply(&t, 1, true);
        let batch = compute_belief(&t, &[2], &[0, 1], &[]).unwrap();
        assert!(close(&s.b, &batch, 1e-12));
    }

    #[test]
    fn guess_examples() {
        assert_eq!(guess(&[0.7, 0.3]), 0);
        assert_eq!(guess(&[0.5, 0.5]), 0);
        assert_eq!(guess(&[0.1, 0.45, 0.45]), 1);
        let raw = [0.2, 3.0, 1.5];
        let scaled: Vec<f64> = raw.iter().map(|x| x * 17.5).collect();
        assert_eq!(guess(&raw), guess(&scaled));
    }

    #[test]
    fn info_gain_examples() {
        assert_eq!(info_gain(&[0.25; 4], &[0.3; 4]), 0.0);
        let j = info_gain(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((j - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(info_gain(&[1.0, 0.0], &[0.9, 0.1]), 0.0);
    }

    #[test]
    fn retrieval_agreement_reading() {
        let cfg = RetrievalConfig::default();
        // W_d = {a, b}; decisions a=1, b=0, c=0, d=1
        let s = retrieval_score(&[true, false, false, true], &[0, 1], &cfg);
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn retrieval_rank_order_and_ties() {
        let cfg = RetrievalConfig {
            rank_cap: 10,
            ..RetrievalConfig::default()
        };
        let ids = [7, 3, 5];
        let decisions = vec![vec![true, false], vec![true, true], vec![true, false]];
        let ranked = retrieval_rank(&ids, &decisions, &[0], &cfg);
        let order: Vec<ItemId> = ranked.iter().map(|r| r.0).collect();
        // 5 and 7 fully agree (tie, ascending id); 3 has one disagreement
        assert_eq!(order, vec![5, 7, 3]);
        let capped = retrieval_rank(&ids, &decisions, &[0], &RetrievalConfig { rank_cap: 1, ..cfg });
        assert_eq!(capped.len(), 1);
    }

    #[test]
    fn summary_examples() {
        let s = belief_summary(&[0.25; 4]);
        assert!((s.entropy - 4f64.ln()).abs() < 1e-12);
        assert_eq!(
            (s.top, s.second, s.top_gap, s.mean, s.top_minus_mean),
            (0.25, 0.25, 0.0, 0.25, 0.0)
        );
        let s = belief_summary(&[0.0, 1.0, 0.0]);
        assert_eq!((s.entropy, s.top, s.second), (0.0, 1.0, 0.0));
        let s = belief_summary(&[0.7, 0.2, 0.1]);
        assert!((s.entropy - 0.801_818_3).abs() < 1e-6);
        let s = belief_summary(&[1.0]);
        assert_eq!(s.second, 0.0);
    }
}
