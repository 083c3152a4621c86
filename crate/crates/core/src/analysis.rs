//! Aggregations over a finished dataset: guidance-scale selection shares,
//! top-k overlap between scorer rankings, and judge tallies.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::selection::{is_permutation, same_scale};

/// Group label used when the histogram is not split by topic.
pub const ALL_TOPICS: &str = "all";

/// Per-group selection counts and percentages, indexed like
/// [`GuidanceHistogram::scales`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleShares {
    pub total: u64,
    pub counts: Vec<u64>,
    pub percentages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceHistogram {
    pub scales: Vec<f64>,
    pub groups: BTreeMap<String, ScaleShares>,
}

impl GuidanceHistogram {
    /// Scale with the largest share in `group`; ties go to the lower scale.
    pub fn modal_scale(&self, group: &str) -> Option<f64> {
        let shares = self.groups.get(group)?;
        let mut best = 0;
        for (i, &c) in shares.counts.iter().enumerate() {
            if c > shares.counts[best] {
                best = i;
            }
        }
        self.scales.get(best).copied()
    }
}

/// Counts winning guidance scales, optionally per topic, and converts them to
/// percentages of each group's total.
pub fn guidance_histogram<'a, I>(selections: I, scales: &[f64], group_by_topic: bool) -> Result<GuidanceHistogram>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut groups: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (topic, scale) in selections {
        let idx = scales
            .iter()
            .position(|&s| same_scale(s, scale))
            .ok_or_else(|| domain(format!("selected scale {scale} is not configured")))?;
        let key = if group_by_topic { topic } else { ALL_TOPICS };
        groups.entry(key.into()).or_insert_with(|| vec![0; scales.len()])[idx] += 1;
    }
    let groups = groups
        .into_iter()
        .map(|(k, counts)| {
            let total: u64 = counts.iter().sum();
            let percentages = counts
                .iter()
                .map(|&c| 100.0 * c as f64 / total as f64)
                .collect();
            (
                k,
                ScaleShares {
                    total,
                    counts,
                    percentages,
                },
            )
        })
        .collect();
    Ok(GuidanceHistogram {
        scales: scales.to_vec(),
        groups,
    })
}

/// Candidate ordering, best first, produced by one scoring method for one
/// prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerRanking {
    pub prompt_id: String,
    pub method_id: String,
    pub ranking: Vec<usize>,
}

fn index_rankings(rankings: &[ScorerRanking]) -> Result<BTreeMap<&str, &[usize]>> {
    let mut map = BTreeMap::new();
    for r in rankings {
        if !is_permutation(&r.ranking) {
            return Err(domain(format!(
                "ranking for prompt {} ({}) is not a permutation",
                r.prompt_id, r.method_id
            )));
        }
        if map.insert(r.prompt_id.as_str(), r.ranking.as_slice()).is_some() {
            return Err(domain(format!(
                "prompt {} ranked twice by {}",
                r.prompt_id, r.method_id
            )));
        }
    }
    Ok(map)
}

/// Mean over prompts of `|⋂ top-k| / k`, as a percentage, across any number
/// (≥ 2) of methods.
pub fn multi_overlap(methods: &[&[ScorerRanking]], k: usize) -> Result<f64> {
    if methods.len() < 2 {
        return Err(domain("overlap needs at least two methods"));
    }
    if k == 0 {
        return Err(domain("k must be at least 1"));
    }
    let indexed = methods
        .iter()
        .map(|m| index_rankings(m))
        .collect::<Result<Vec<_>>>()?;
    let first = &indexed[0];
    for other in &indexed[1..] {
        if other.len() != first.len() || other.keys().zip(first.keys()).any(|(a, b)| a != b) {
            return Err(domain("methods rank different prompt sets"));
        }
    }
    if first.is_empty() {
        return Err(domain("no prompts to compare"));
    }
    let mut sum = 0.0;
    for (prompt, base) in first {
        let n = base.len();
        if k > n {
            return Err(domain(format!("k = {k} exceeds {n} candidates for prompt {prompt}")));
        }
        let mut common: BTreeSet<usize> = base[..k].iter().copied().collect();
        for other in &indexed[1..] {
            let r = other[prompt];
            if r.len() != n {
                return Err(domain(format!("prompt {prompt}: candidate counts differ")));
            }
            let top: BTreeSet<usize> = r[..k].iter().copied().collect();
            common = common.intersection(&top).copied().collect();
        }
        sum += common.len() as f64 / k as f64;
    }
    Ok(100.0 * sum / first.len() as f64)
}

/// Mean over prompts of `|top-k(a) ∩ top-k(b)| / k`, as a percentage.
pub fn overlap_at_k(rankings_a: &[ScorerRanking], rankings_b: &[ScorerRanking], k: usize) -> Result<f64> {
    multi_overlap(&[rankings_a, rankings_b], k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MethodAWins,
    MethodBWins,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub comparison_id: String,
    pub verdict: Verdict,
}

/// Judge counts with win rates over decisive comparisons and the tie rate over
/// all comparisons. Rates are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeTally {
    pub method_a_wins: u64,
    pub method_b_wins: u64,
    pub ties: u64,
    pub total: u64,
    pub decisive: u64,
    pub method_a_win_rate: f64,
    pub method_b_win_rate: f64,
    pub tie_rate: f64,
    /// Set when every comparison was a tie; both win rates are then 0.
    pub no_decisive_comparisons: bool,
}

impl JudgeTally {
    pub fn from_counts(method_a_wins: u64, method_b_wins: u64, ties: u64) -> Result<Self> {
        let total = method_a_wins + method_b_wins + ties;
        if total == 0 {
            return Err(domain("judge tally needs at least one outcome"));
        }
        let decisive = method_a_wins + method_b_wins;
        let rate = |n: u64, d: u64| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
        Ok(Self {
            method_a_wins,
            method_b_wins,
            ties,
            total,
            decisive,
            method_a_win_rate: rate(method_a_wins, decisive),
            method_b_win_rate: rate(method_b_wins, decisive),
            tie_rate: rate(ties, total),
            no_decisive_comparisons: decisive == 0,
        })
    }
}

pub fn judge_tally(outcomes: &[JudgeOutcome]) -> Result<JudgeTally> {
    let (mut a, mut b, mut t) = (0, 0, 0);
    for o in outcomes {
        match o.verdict {
            Verdict::MethodAWins => a += 1,
            Verdict::MethodBWins => b += 1,
            Verdict::Tie => t += 1,
        }
    }
    JudgeTally::from_counts(a, b, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rank(prompt: &str, method: &str, r: &[usize]) -> ScorerRanking {
        ScorerRanking {
            prompt_id: prompt.to_string(),
            method_id: method.to_string(),
            ranking: r.to_vec(),
        }
    }

    #[test]
    fn histogram_hand_count() {
        let h = guidance_histogram(
            [("art", 7.0), ("art", 7.0), ("art", 5.0)],
            &[5.0, 7.0, 9.0, 11.0],
            false,
        )
        .unwrap();
        let g = &h.groups[ALL_TOPICS];
        assert_eq!(g.counts, vec![1, 2, 0, 0]);
        assert!((g.percentages[0] - 33.333_333).abs() < 1e-4);
        assert!((g.percentages[1] - 66.666_667).abs() < 1e-4);
        assert_eq!(h.modal_scale(ALL_TOPICS), Some(7.0));
    }

    #[test]
    fn histogram_by_topic_and_unknown_scale() {
        let h = guidance_histogram([("art", 7.0), ("school", 5.0)], &[5.0, 7.0], true).unwrap();
        assert_eq!(h.groups.len(), 2);
        assert_eq!(h.groups["school"].percentages, vec![100.0, 0.0]);
        assert!(guidance_histogram([("art", 6.0)], &[5.0, 7.0], true).is_err());
        let empty = guidance_histogram(core::iter::empty(), &[5.0, 7.0], true).unwrap();
        assert!(empty.groups.is_empty());
    }

    #[test]
    fn overlap_hand_examples() {
        let a = [rank("p", "a", &[1, 2, 3, 0])];
        let b = [rank("p", "b", &[2, 1, 3, 0])];
        assert_eq!(overlap_at_k(&a, &b, 2).unwrap(), 100.0);
        assert_eq!(overlap_at_k(&a, &b, 1).unwrap(), 0.0);
        assert_eq!(overlap_at_k(&a, &a, 1).unwrap(), 100.0);
    }

    #[test]
    fn overlap_errors() {
        let a = [rank("p", "a", &[0, 1])];
        let b = [rank("q", "b", &[0, 1])];
        assert!(overlap_at_k(&a, &b, 1).is_err());
        assert!(overlap_at_k(&a, &a, 3).is_err());
        assert!(overlap_at_k(&a, &a, 0).is_err());
        let bad = [rank("p", "a", &[0, 0])];
        assert!(overlap_at_k(&bad, &bad, 1).is_err());
    }

    #[test]
    fn multi_overlap_disjoint_top1() {
        let a = [rank("p", "a", &[0, 1, 2])];
        let b = [rank("p", "b", &[1, 2, 0])];
        let c = [rank("p", "c", &[2, 0, 1])];
        assert_eq!(multi_overlap(&[&a, &b, &c], 1).unwrap(), 0.0);
        assert_eq!(multi_overlap(&[&a, &a, &a], 2).unwrap(), 100.0);
    }

    #[test]
    fn judge_examples() {
        let t = JudgeTally::from_counts(1, 0, 0).unwrap();
        assert_eq!((t.method_a_win_rate, t.tie_rate), (100.0, 0.0));
        let t = JudgeTally::from_counts(0, 0, 5).unwrap();
        assert!(t.no_decisive_comparisons);
        assert_eq!((t.method_a_win_rate, t.method_b_win_rate, t.tie_rate), (0.0, 0.0, 100.0));
        assert!(judge_tally(&[]).is_err());
    }
}
