//! Plurality voting across turn answers, with fuzzy clustering of
//! near-identical diagnosis strings.

use std::collections::BTreeMap;

use super::normalize::TextNormalizer;
use super::similarity::similarity;

/// How two votes are considered the same answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteMode {
    /// Cluster votes whose similarity to a cluster representative meets the
    /// threshold.
    Fuzzy,
    /// Cluster only exactly equal normalized strings.
    Exact,
}

/// Result of a plurality vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    /// Normalized representative of the winning cluster; `None` when there
    /// were no votes.
    pub winner: Option<String>,
    /// Cluster representative -> number of votes in that cluster.
    pub cluster_sizes: BTreeMap<String, usize>,
    /// True when two or more clusters shared the top size and the winner was
    /// chosen by smallest founding turn id.
    pub tie_broken: bool,
}

pub(crate) struct Cluster<I> {
    pub rep: I,
    pub founder: u8,
    pub count: usize,
}

pub(crate) struct ClusterOutcome<I> {
    pub clusters: Vec<Cluster<I>>,
    /// Index into `clusters` of the winning cluster, if any votes were cast.
    pub winner: Option<usize>,
    pub tie_broken: bool,
}

/// Single-linkage-by-representative clustering over votes in ascending turn
/// order: each vote joins the first existing cluster whose representative it
/// matches, otherwise founds a new cluster. The winner is the largest
/// cluster; size ties go to the cluster with the smallest founding turn id.
pub(crate) fn cluster_votes<I: Copy>(
    ordered: &[(u8, I)],
    mut matches: impl FnMut(I, I) -> bool,
) -> ClusterOutcome<I> {
    let mut clusters: Vec<Cluster<I>> = Vec::new();
    for &(turn_id, vote) in ordered {
        match clusters.iter_mut().find(|c| matches(vote, c.rep)) {
            Some(cluster) => cluster.count += 1,
            None => clusters.push(Cluster {
                rep: vote,
                founder: turn_id,
                count: 1,
            }),
        }
    }
    if clusters.is_empty() {
        return ClusterOutcome {
            clusters,
            winner: None,
            tie_broken: false,
        };
    }
    let top = clusters.iter().map(|c| c.count).max().unwrap();
    let tie_broken = clusters.iter().filter(|c| c.count == top).count() > 1;
    let winner = clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.count == top)
        .min_by_key(|(_, c)| c.founder)
        .map(|(i, _)| i);
    ClusterOutcome {
        clusters,
        winner,
        tie_broken,
    }
}

/// Run a plurality vote over raw answer strings keyed by turn id.
///
/// Answers are normalized first; turns that produced no answer should simply
/// be absent from `votes`. Returns `winner: None` when `votes` is empty.
pub fn majority_vote(
    votes: &BTreeMap<u8, String>,
    normalizer: &TextNormalizer,
    threshold: f64,
    mode: VoteMode,
) -> VoteOutcome {
    let texts: Vec<String> = votes.values().map(|v| normalizer.normalize(v)).collect();
    let ordered: Vec<(u8, usize)> = votes
        .keys()
        .copied()
        .enumerate()
        .map(|(i, turn_id)| (turn_id, i))
        .collect();
    let outcome = cluster_votes(&ordered, |a, b| match mode {
        VoteMode::Fuzzy => similarity(&texts[a], &texts[b]) >= threshold,
        VoteMode::Exact => texts[a] == texts[b],
    });
    let cluster_sizes = outcome
        .clusters
        .iter()
        .map(|c| (texts[c.rep].clone(), c.count))
        .collect();
    VoteOutcome {
        winner: outcome
            .winner
            .map(|i| texts[outcome.clusters[i].rep].clone()),
        cluster_sizes,
        tie_broken: outcome.tie_broken,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THRESHOLD: f64 = 0.60;

    fn vote(pairs: &[(u8, &str)]) -> VoteOutcome {
        let votes: BTreeMap<u8, String> = pairs
            .iter()
            .map(|(t, s)| (*t, s.to_string()))
            .collect();
        majority_vote(&votes, &TextNormalizer::default(), THRESHOLD, VoteMode::Fuzzy)
    }

    #[test]
    fn empty_votes_abstain() {
        let out = vote(&[]);
        assert_eq!(out.winner, None);
        assert!(out.cluster_sizes.is_empty());
        assert!(!out.tie_broken);
    }

    #[test]
    fn unanimous_vote_wins() {
        let out = vote(&[(2, "Hypertension"), (7, "hypertension."), (10, "HYPERTENSION")]);
        assert_eq!(out.winner.as_deref(), Some("hypertension"));
        assert_eq!(out.cluster_sizes["hypertension"], 3);
        assert!(!out.tie_broken);
    }

    #[test]
    fn plurality_beats_split_minority() {
        // 3 of 5 turns agree; the others scatter.
        let out = vote(&[
            (2, "chronic kidney disease"),
            (7, "hypertension"),
            (10, "hypertension"),
            (13, "hypertension"),
            (14, "heart failure"),
        ]);
        assert_eq!(out.winner.as_deref(), Some("hypertension"));
        assert_eq!(out.cluster_sizes.len(), 3);
        assert!(!out.tie_broken);
    }

    #[test]
    fn near_duplicates_cluster_together() {
        // similarity("hypertension", "hypertensive") = 10/12 >= 0.60, so the
        // two spellings merge into one cluster and outvote the pair below.
        let out = vote(&[
            (2, "hypertensive"),
            (7, "hypertension"),
            (10, "anemia"),
            (13, "anemia"),
        ]);
        assert_eq!(out.winner.as_deref(), Some("hypertensive"));
        assert_eq!(out.cluster_sizes["hypertensive"], 2);
        assert!(out.tie_broken); // 2 vs 2, founder 2 < founder 10
    }

    #[test]
    fn exact_mode_does_not_merge_near_duplicates() {
        let votes: BTreeMap<u8, String> = [
            (2u8, "hypertensive".to_string()),
            (7, "hypertension".to_string()),
            (10, "anemia".to_string()),
            (13, "anemia".to_string()),
        ]
        .into_iter()
        .collect();
        let out = majority_vote(
            &votes,
            &TextNormalizer::default(),
            THRESHOLD,
            VoteMode::Exact,
        );
        assert_eq!(out.winner.as_deref(), Some("anemia"));
        assert_eq!(out.cluster_sizes.len(), 3);
        assert!(!out.tie_broken);
    }

    #[test]
    fn ties_go_to_smallest_founding_turn() {
        let out = vote(&[(3, "anemia"), (5, "sepsis"), (9, "sepsis"), (11, "anemia")]);
        assert_eq!(out.winner.as_deref(), Some("anemia"));
        assert!(out.tie_broken);
    }

    #[test]
    fn votes_normalize_before_clustering() {
        let out = vote(&[(1, "CHF"), (4, "congestive heart failure"), (6, "sepsis")]);
        assert_eq!(out.winner.as_deref(), Some("congestive heart failure"));
        assert_eq!(out.cluster_sizes["congestive heart failure"], 2);
    }

    #[test]
    fn chained_joins_use_representative_not_last_member() {
        // "ab" founds; "abcd" (sim 0.5 < th) founds its own; a later vote is
        // compared against representatives in creation order.
        let out = vote(&[(1, "ab"), (2, "abcd"), (3, "abc")]);
        // sim("abc","ab") = 1 - 1/3 = 0.667 >= 0.6 joins the first cluster.
        assert_eq!(out.cluster_sizes["ab"], 2);
        assert_eq!(out.cluster_sizes["abcd"], 1);
        assert_eq!(out.winner.as_deref(), Some("ab"));
    }
}
