//! Batch evaluation metrics: connectivity ratios, average reward, subgraph
//! F1, format percentage and informativeness averages.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::subgraph::Subgraph;
use crate::verifier::RewardBreakdown;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("batch mixes seed counts: expected m = {expected}, got m = {got}")]
    MixedSeedCount { expected: usize, got: usize },
    #[error("cannot aggregate an empty batch")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Score<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Triple-level precision, recall and F1 of `pred` against `reference`.
/// Empty denominators give 0.
pub fn subgraph_f1<T: Scalar>(pred: &Subgraph<'_>, reference: &Subgraph<'_>) -> F1Score<T> {
    let overlap = pred.triples().intersection(reference.triples()).count();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::of_usize(num) / T::of_usize(den)
        }
    };
    let precision = ratio(overlap, pred.triple_count());
    let recall = ratio(overlap, reference.triple_count());
    let f1 = if precision + recall > T::zero() {
        T::of_usize(2) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    F1Score { precision, recall, f1 }
}

/// Per-query metrics kept for the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRow<T> {
    pub index: usize,
    pub total: T,
    pub format_ok: bool,
    pub connected_seeds: usize,
    pub r_ent: Option<T>,
    pub r_rel: Option<T>,
    pub f1: F1Score<T>,
}

impl<T: Scalar> QueryRow<T> {
    pub fn new(index: usize, reward: &RewardBreakdown<T>, f1: F1Score<T>) -> Self {
        Self {
            index,
            total: reward.total,
            format_ok: reward.r_fmt == 1,
            connected_seeds: reward.connected_seeds,
            r_ent: reward.r_ent,
            r_rel: reward.r_rel,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub n_queries: usize,
    pub m: usize,
    /// Fraction of answers connecting all `m` seeds.
    pub connectivity_ratio: T,
    /// Fraction whose best component holds exactly three seeds (m = 4 only).
    pub triple_ratio: Option<T>,
    /// Fraction whose best component holds exactly two seeds (m >= 3 only).
    pub pairwise_ratio: Option<T>,
    pub avg_reward: T,
    /// Mean per-query F1, times 100.
    pub subgraph_f1: T,
    /// Percentage of well-formed answers.
    pub format_pct: T,
    /// Negated mean relation informativeness over fully connected answers.
    pub i_r: Option<T>,
    /// Negated mean entity informativeness over fully connected answers.
    pub i_e: Option<T>,
    pub n_connected: usize,
}

impl<T: Scalar> EvalReport<T> {
    /// `(connectivity %, average reward, subgraph F1)` as printed in result
    /// tables.
    pub fn table_row(&self) -> String {
        format!(
            "({:.1}%, {:.2}, {:.1})",
            self.connectivity_ratio.to_f64().unwrap_or(f64::NAN) * 100.0,
            self.avg_reward.to_f64().unwrap_or(f64::NAN),
            self.subgraph_f1.to_f64().unwrap_or(f64::NAN),
        )
    }
}

impl<T: Scalar> fmt::Display for EvalReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} m={} {}", self.n_queries, self.m, self.table_row())
    }
}

/// Streaming accumulator. Rows can be pushed in any order and accumulators
/// merged; [`finish`](Self::finish) sorts before summing, so the report does
/// not depend on arrival order.
#[derive(Clone, Debug, Default)]
pub struct EvalAccumulator<T> {
    m: Option<usize>,
    rows: Vec<QueryRow<T>>,
}

fn sorted_sum<T: Scalar>(mut values: Vec<T>) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    values.into_iter().fold(T::zero(), |a, b| a + b)
}

fn mean<T: Scalar>(values: Vec<T>) -> Option<T> {
    let n = values.len();
    (n > 0).then(|| sorted_sum(values) / T::of_usize(n))
}

impl<T: Scalar> EvalAccumulator<T> {
    pub fn new() -> Self {
        Self {
            m: None,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, m: usize, row: QueryRow<T>) -> Result<(), EvalError> {
        match self.m {
            Some(expected) if expected != m => return Err(EvalError::MixedSeedCount { expected, got: m }),
            _ => self.m = Some(m),
        }
        self.rows.push(row);
        Ok(())
    }

    /// Adds one scored answer with its F1 against the reference.
    pub fn push(&mut self, reward: &RewardBreakdown<T>, f1: F1Score<T>) -> Result<(), EvalError> {
        let index = self.rows.len();
        self.push_row(reward.m, QueryRow::new(index, reward, f1))
    }

    pub fn merge(&mut self, other: Self) -> Result<(), EvalError> {
        if let Some(m) = other.m {
            for row in other.rows {
                self.push_row(m, row)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[QueryRow<T>] {
        &self.rows
    }

    pub fn finish(&self) -> Result<EvalReport<T>, EvalError> {
        let m = self.m.ok_or(EvalError::Empty)?;
        let n = self.rows.len();
        let frac = |count: usize| T::of_usize(count) / T::of_usize(n);
        let at = |level: usize| {
            self.rows
                .iter()
                .filter(|r| r.format_ok && r.connected_seeds == level)
                .count()
        };
        let connected: Vec<&QueryRow<T>> = self
            .rows
            .iter()
            .filter(|r| r.format_ok && r.connected_seeds == m)
            .collect();
        let hundred = T::of_usize(100);
        Ok(EvalReport {
            n_queries: n,
            m,
            connectivity_ratio: frac(at(m)),
            triple_ratio: (m >= 4).then(|| frac(at(3))),
            pairwise_ratio: (m >= 3).then(|| frac(at(2))),
            avg_reward: mean(self.rows.iter().map(|r| r.total).collect()).unwrap_or_else(T::zero),
            subgraph_f1: mean(self.rows.iter().map(|r| r.f1.f1).collect()).unwrap_or_else(T::zero) * hundred,
            format_pct: frac(self.rows.iter().filter(|r| r.format_ok).count()) * hundred,
            i_r: mean(connected.iter().filter_map(|r| r.r_rel).collect()).map(|v| -v),
            i_e: mean(connected.iter().filter_map(|r| r.r_ent).collect()).map(|v| -v),
            n_connected: connected.len(),
        })
    }
}

/// One-shot aggregation over `(reward, f1)` pairs.
pub fn aggregate<'a, T: Scalar + 'a, I>(batch: I) -> Result<EvalReport<T>, EvalError>
where
    I: IntoIterator<Item = (&'a RewardBreakdown<T>, F1Score<T>)>,
{
    let mut acc = EvalAccumulator::new();
    for (reward, f1) in batch {
        acc.push(reward, f1)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{KnowledgeGraph, TripleId};
    use crate::verifier::ShortCircuit;

    fn tids(ids: &[usize]) -> Vec<TripleId> {
        ids.iter().map(|&i| TripleId::from_index(i)).collect()
    }

    fn path(n: usize) -> KnowledgeGraph {
        let names: Vec<String> = (0..=n).map(|i| format!("v{i}")).collect();
        KnowledgeGraph::from_triples((0..n).map(|i| (names[i].as_str(), "r", names[i + 1].as_str()))).unwrap()
    }

    fn breakdown(m: usize, fmt_ok: bool, group: usize, total: f64) -> RewardBreakdown<f64> {
        RewardBreakdown {
            r_fmt: if fmt_ok { 1 } else { -1 },
            r_con: fmt_ok.then_some(0),
            r_ent: (fmt_ok && group >= 2).then_some(-1.0),
            r_rel: (fmt_ok && group >= 2).then_some(-0.5),
            total,
            short_circuit: if fmt_ok {
                ShortCircuit::None
            } else {
                ShortCircuit::FormatFail
            },
            m,
            connected_seeds: group,
            oversize: false,
        }
    }

    fn zero_f1() -> F1Score<f64> {
        F1Score {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }

    #[test]
    fn f1_examples() {
        let g = path(6);
        let sub = |ids: &[usize]| Subgraph::from_triples(&g, tids(ids)).unwrap();
        let same = subgraph_f1::<f64>(&sub(&[0, 1]), &sub(&[0, 1]));
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let disjoint = subgraph_f1::<f64>(&sub(&[0]), &sub(&[3]));
        assert_eq!((disjoint.precision, disjoint.recall, disjoint.f1), (0.0, 0.0, 0.0));
        let partial = subgraph_f1::<f64>(&sub(&[0, 1, 2, 3]), &sub(&[0, 1]));
        assert_eq!((partial.precision, partial.recall), (0.5, 1.0));
        assert!((partial.f1 - 2.0 / 3.0).abs() < 1e-12);
        let empty = subgraph_f1::<f64>(&Subgraph::empty(&g), &Subgraph::empty(&g));
        assert_eq!(empty.f1, 0.0);
        assert_eq!(subgraph_f1::<f64>(&Subgraph::empty(&g), &sub(&[0])).precision, 0.0);
    }

    #[test]
    fn all_format_failures_give_the_floor_row() {
        let rows: Vec<_> = (0..500).map(|_| breakdown(2, false, 0, -3.0)).collect();
        let report = aggregate(rows.iter().map(|r| (r, zero_f1()))).unwrap();
        assert_eq!(report.connectivity_ratio, 0.0);
        assert_eq!(report.avg_reward, -3.0);
        assert_eq!(report.subgraph_f1, 0.0);
        assert_eq!(report.format_pct, 0.0);
        assert_eq!(report.i_r, None);
        assert_eq!(report.table_row(), "(0.0%, -3.00, 0.0)");
    }

    #[test]
    fn four_seed_ladder_buckets() {
        let groups = [4, 4, 3, 2, 2, 2, 1, 0];
        let rows: Vec<_> = groups
            .iter()
            .map(|&gsz| breakdown(4, gsz > 0, gsz, gsz as f64 - 2.0))
            .collect();
        let report = aggregate(rows.iter().map(|r| (r, zero_f1()))).unwrap();
        assert_eq!(report.connectivity_ratio, 2.0 / 8.0);
        assert_eq!(report.triple_ratio, Some(1.0 / 8.0));
        assert_eq!(report.pairwise_ratio, Some(3.0 / 8.0));
        assert_eq!(report.format_pct, 7.0 / 8.0 * 100.0);
        assert_eq!(report.n_connected, 2);
        assert_eq!(report.i_r, Some(0.5));
        assert_eq!(report.i_e, Some(1.0));
    }

    #[test]
    fn mixed_seed_counts_are_rejected() {
        let a = breakdown(2, true, 2, 0.5);
        let b = breakdown(3, true, 3, 0.5);
        let err = aggregate([(&a, zero_f1()), (&b, zero_f1())]).unwrap_err();
        assert_eq!(err, EvalError::MixedSeedCount { expected: 2, got: 3 });
        assert_eq!(EvalAccumulator::<f64>::new().finish().unwrap_err(), EvalError::Empty);
    }

    #[test]
    fn merge_matches_single_pass() {
        let rows: Vec<_> = (0..9)
            .map(|i| breakdown(2, i % 3 != 0, 2, 0.1 * i as f64 - 0.3))
            .collect();
        let whole = aggregate(rows.iter().map(|r| (r, zero_f1()))).unwrap();
        let mut left = EvalAccumulator::new();
        let mut right = EvalAccumulator::new();
        for (i, r) in rows.iter().enumerate().rev() {
            if i % 2 == 0 { &mut left } else { &mut right }
                .push(r, zero_f1())
                .unwrap();
        }
        left.merge(right).unwrap();
        assert_eq!(left.finish().unwrap(), whole);
    }
}
