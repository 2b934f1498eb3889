use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Delta1,
    AbsRel,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Delta1 => "delta1",
            Metric::AbsRel => "absrel",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Delta1)
    }
}

/// How exactly equal scores share rank positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Tied entries all take the best position of their group (1, 2, 2, 4).
    #[default]
    Competition,
    /// Tied entries take the mean of their positions (1, 2.5, 2.5, 4).
    Fractional,
}

/// Scores of every method on every (dataset, metric) column.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub methods: Vec<String>,
    pub columns: Vec<(String, Metric)>,
    /// `scores[method][column]`.
    pub scores: Vec<Vec<f64>>,
}

impl ScoreGrid {
    /// Methods and datasets in order of first appearance; each dataset
    /// contributes a δ1 and an AbsRel column.
    pub fn from_reports(reports: &[MetricReport]) -> Result<Self> {
        let mut methods: Vec<String> = Vec::new();
        let mut datasets: Vec<String> = Vec::new();
        let mut cells: HashMap<(&str, &str), &MetricReport> = HashMap::new();
        for r in reports {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
            if !datasets.contains(&r.dataset) {
                datasets.push(r.dataset.clone());
            }
            if cells.insert((&r.method, &r.dataset), r).is_some() {
                return Err(Error::invalid(format!("duplicate report for {} on {}", r.method, r.dataset)));
            }
        }
        let mut holes = Vec::new();
        let mut scores = Vec::with_capacity(methods.len());
        for m in &methods {
            let mut row = Vec::with_capacity(2 * datasets.len());
            for d in &datasets {
                match cells.get(&(m.as_str(), d.as_str())) {
                    Some(r) => row.extend([r.aggregate_delta1, r.aggregate_absrel]),
                    None => {
                        holes.push(format!("{m} on {d}"));
                        row.extend([f64::NAN, f64::NAN]);
                    }
                }
            }
            scores.push(row);
        }
        if !holes.is_empty() {
            return Err(Error::IncompleteGrid(format!("no report for {}", holes.join(", "))));
        }
        let columns = datasets.iter().flat_map(|d| [(d.clone(), Metric::Delta1), (d.clone(), Metric::AbsRel)]).collect();
        Ok(ScoreGrid { methods, columns, scores })
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.columns.is_empty() {
            return Err(Error::IncompleteGrid("grid has no methods or no columns".into()));
        }
        if self.scores.len() != self.methods.len() {
            return Err(Error::IncompleteGrid(format!("{} methods but {} score rows", self.methods.len(), self.scores.len())));
        }
        for (m, row) in self.methods.iter().zip(&self.scores) {
            if row.len() != self.columns.len() {
                return Err(Error::IncompleteGrid(format!("{m} has {} of {} columns", row.len(), self.columns.len())));
            }
            for ((dataset, metric), v) in self.columns.iter().zip(row) {
                if !v.is_finite() {
                    return Err(Error::IncompleteGrid(format!("{m} has no finite {} on {dataset}", metric.name())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRanking {
    pub methods: Vec<String>,
    pub columns: Vec<(String, Metric)>,
    /// `ranks[method][column]`, 1 is best.
    pub ranks: Vec<Vec<f64>>,
    pub average_rank: Vec<f64>,
    /// `average_rank` rounded half-up to one decimal from the exact rank sum.
    pub rounded: Vec<f64>,
}

impl MethodRanking {
    /// Methods ordered best first; ties keep input order.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.methods.len()).collect();
        idx.sort_by(|&a, &b| self.average_rank[a].total_cmp(&self.average_rank[b]));
        idx
    }
}

pub fn average_rank(reports: &[MetricReport]) -> Result<MethodRanking> {
    average_rank_with(&ScoreGrid::from_reports(reports)?, TieRule::default())
}

pub fn average_rank_with(grid: &ScoreGrid, tie: TieRule) -> Result<MethodRanking> {
    grid.validate()?;
    let m = grid.methods.len();
    let mut ranks = vec![vec![0.0; grid.columns.len()]; m];
    for (c, &(_, metric)) in grid.columns.iter().enumerate() {
        let better = |a: f64, b: f64| if metric.higher_is_better() { a > b } else { a < b };
        for i in 0..m {
            let v = grid.scores[i][c];
            let ahead = (0..m).filter(|&j| better(grid.scores[j][c], v)).count();
            let tied = (0..m).filter(|&j| grid.scores[j][c] == v).count();
            ranks[i][c] = match tie {
                TieRule::Competition => (ahead + 1) as f64,
                TieRule::Fractional => ahead as f64 + (tied as f64 + 1.0) / 2.0,
            };
        }
    }
    let n = grid.columns.len() as u64;
    let mut average_rank = Vec::with_capacity(m);
    let mut rounded = Vec::with_capacity(m);
    for row in &ranks {
        // Ranks are multiples of 1/2, so twice their sum is an exact integer.
        let halves: u64 = row.iter().map(|r| (2.0 * r) as u64).sum();
        average_rank.push(halves as f64 / (2 * n) as f64);
        let tenths = (10 * halves + n) / (2 * n);
        rounded.push(tenths as f64 / 10.0);
    }
    Ok(MethodRanking { methods: grid.methods.clone(), columns: grid.columns.clone(), ranks, average_rank, rounded })
}

/// Half-up rounding to `decimals` places, for display of measured values.
pub fn round_half_up(value: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (value * f + 0.5).floor() / f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(scores: Vec<Vec<f64>>, metrics: &[Metric]) -> ScoreGrid {
        ScoreGrid {
            methods: (0..scores.len()).map(|i| format!("m{i}")).collect(),
            columns: metrics.iter().map(|&m| ("d".to_string(), m)).collect(),
            scores,
        }
    }

    #[test]
    fn identical_methods_share_fractional_rank() {
        let g = grid(vec![vec![0.9, 0.1], vec![0.9, 0.1]], &[Metric::Delta1, Metric::AbsRel]);
        let r = average_rank_with(&g, TieRule::Fractional).unwrap();
        assert_eq!(r.ranks, vec![vec![1.5, 1.5], vec![1.5, 1.5]]);
        let r = average_rank_with(&g, TieRule::Competition).unwrap();
        assert_eq!(r.ranks, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn direction_follows_metric() {
        let g = grid(vec![vec![0.9, 0.2], vec![0.8, 0.1]], &[Metric::Delta1, Metric::AbsRel]);
        let r = average_rank_with(&g, TieRule::Competition).unwrap();
        assert_eq!(r.ranks, vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
    }

    #[test]
    fn rounding_is_half_up_on_the_exact_sum() {
        // Rank sums 9, 8 and 7 over 4 columns; 2.25 rounds to 2.3.
        let g = grid(
            vec![vec![1.0, 1.0, 2.0, 3.0], vec![2.0, 2.0, 3.0, 1.0], vec![3.0, 3.0, 1.0, 2.0]],
            &[Metric::Delta1; 4],
        );
        let r = average_rank_with(&g, TieRule::Competition).unwrap();
        assert_eq!(r.average_rank, vec![2.25, 2.0, 1.75]);
        assert_eq!(r.rounded, vec![2.3, 2.0, 1.8]);
    }

    #[test]
    fn holes_are_named() {
        let reports = vec![
            MetricReport::summary("a", "x", 0.9, 0.1),
            MetricReport::summary("a", "y", 0.9, 0.1),
            MetricReport::summary("b", "x", 0.8, 0.2),
        ];
        match average_rank(&reports) {
            Err(Error::IncompleteGrid(msg)) => assert!(msg.contains("b on y"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn monotone_transform_keeps_ranks() {
        let g = grid(vec![vec![0.5, 0.2], vec![0.7, 0.3], vec![0.6, 0.1]], &[Metric::Delta1, Metric::AbsRel]);
        let mut t = g.clone();
        for row in &mut t.scores {
            for v in row.iter_mut() {
                *v = v.exp() * 3.0;
            }
        }
        assert_eq!(average_rank_with(&g, TieRule::Competition).unwrap().ranks, average_rank_with(&t, TieRule::Competition).unwrap().ranks);
    }
}
