//! Accuracy scoring for single turns and turn combinations, including the
//! exhaustive subset sweep.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::normalize::TextNormalizer;
use super::similarity::{is_match, similarity};
use super::vote::{cluster_votes, VoteMode};
use super::EvalError;
use crate::corpus::ItemKey;

/// Which half of the dataset a score was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Train => write!(f, "train"),
            Side::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Side::Train),
            "test" => Ok(Side::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

/// Accuracy of one turn subset on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationScore {
    /// Turn ids in ascending order.
    pub turns: Vec<u8>,
    pub split: Side,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

fn pair_key(a: u32, b: u32) -> (u32, u32) {
    if a <= b { (a, b) } else { (b, a) }
}

struct ItemRow {
    key: ItemKey,
    /// One slot per turn id, in `turn_ids` order. `None` means the turn
    /// produced no usable answer for this item.
    votes: Vec<Option<u32>>,
    /// Whether each distinct vote on this item matches the ground truth.
    matches_truth: HashMap<u32, bool>,
}

/// Normalized, interned view of a prediction matrix restricted to one split,
/// with every string comparison the sweep needs precomputed. Scoring a
/// combination is then integer work only, which keeps the exhaustive
/// C(18,5) = 8568 sweep cheap.
pub struct ScoringTable {
    side: Side,
    turn_ids: Vec<u8>,
    turn_pos: BTreeMap<u8, usize>,
    items: Vec<ItemRow>,
    /// Whether two distinct co-occurring votes meet the similarity
    /// threshold. Keyed by (smaller interned id, larger id). Empty in exact
    /// mode.
    pair_match: HashMap<(u32, u32), bool>,
    mode: VoteMode,
}

impl ScoringTable {
    /// Build a table from per-turn answers and per-item ground truths.
    ///
    /// `answers` maps turn id -> item -> raw answer text; items absent from a
    /// turn's map count as missing votes. `truths` defines both the item set
    /// (every key becomes a row) and the acceptable diagnoses.
    pub fn build(
        answers: &BTreeMap<u8, BTreeMap<ItemKey, String>>,
        truths: &BTreeMap<ItemKey, Vec<String>>,
        normalizer: &TextNormalizer,
        threshold: f64,
        mode: VoteMode,
        side: Side,
    ) -> ScoringTable {
        let turn_ids: Vec<u8> = answers.keys().copied().collect();
        let turn_pos: BTreeMap<u8, usize> = turn_ids
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i))
            .collect();

        let mut texts: Vec<String> = Vec::new();
        let mut interned: HashMap<String, u32> = HashMap::new();
        let mut intern = |s: String, texts: &mut Vec<String>| -> u32 {
            if let Some(&id) = interned.get(&s) {
                return id;
            }
            let id = texts.len() as u32;
            texts.push(s.clone());
            interned.insert(s, id);
            id
        };

        let mut items = Vec::with_capacity(truths.len());
        let mut pair_match: HashMap<(u32, u32), bool> = HashMap::new();
        for (key, diagnoses) in truths {
            let norm_truths: Vec<String> =
                diagnoses.iter().map(|d| normalizer.normalize(d)).collect();
            let mut votes = Vec::with_capacity(turn_ids.len());
            for turn_id in &turn_ids {
                let id = answers[turn_id]
                    .get(key)
                    .map(|raw| intern(normalizer.normalize(raw), &mut texts));
                votes.push(id);
            }
            let distinct: Vec<u32> = votes.iter().flatten().copied().sorted().dedup().collect();
            let matches_truth = distinct
                .iter()
                .map(|&id| (id, is_match(&texts[id as usize], &norm_truths, threshold)))
                .collect();
            if mode == VoteMode::Fuzzy {
                for (i, &a) in distinct.iter().enumerate() {
                    for &b in &distinct[i + 1..] {
                        pair_match.entry(pair_key(a, b)).or_insert_with(|| {
                            similarity(&texts[a as usize], &texts[b as usize]) >= threshold
                        });
                    }
                }
            }
            items.push(ItemRow {
                key: key.clone(),
                votes,
                matches_truth,
            });
        }

        ScoringTable {
            side,
            turn_ids,
            turn_pos,
            items,
            pair_match,
            mode,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn turn_ids(&self) -> &[u8] {
        &self.turn_ids
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn item_keys(&self) -> impl Iterator<Item = &ItemKey> {
        self.items.iter().map(|row| &row.key)
    }

    fn votes_match(&self, a: u32, b: u32) -> bool {
        if a == b {
            return true;
        }
        match self.mode {
            VoteMode::Exact => false,
            VoteMode::Fuzzy => self.pair_match[&pair_key(a, b)],
        }
    }

    /// Accuracy of one turn used alone.
    pub fn single_score(&self, turn_id: u8) -> Result<CombinationScore, EvalError> {
        let pos = *self
            .turn_pos
            .get(&turn_id)
            .ok_or(EvalError::UnknownTurn(turn_id))?;
        let correct = self
            .items
            .iter()
            .filter(|row| row.votes[pos].is_some_and(|id| row.matches_truth[&id]))
            .count();
        Ok(self.score_from(vec![turn_id], correct))
    }

    /// Accuracy of a turn subset under plurality voting. An item is correct
    /// when the winning cluster's representative matches its ground truth;
    /// items where every listed turn abstained count as incorrect.
    pub fn combination_score(&self, turns: &[u8]) -> Result<CombinationScore, EvalError> {
        let mut sorted: Vec<u8> = turns.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let positions: Vec<(u8, usize)> = sorted
            .iter()
            .map(|&t| {
                self.turn_pos
                    .get(&t)
                    .map(|&p| (t, p))
                    .ok_or(EvalError::UnknownTurn(t))
            })
            .collect::<Result<_, _>>()?;

        let mut correct = 0;
        let mut ordered: Vec<(u8, u32)> = Vec::with_capacity(positions.len());
        for row in &self.items {
            ordered.clear();
            ordered.extend(
                positions
                    .iter()
                    .filter_map(|&(turn_id, pos)| row.votes[pos].map(|id| (turn_id, id))),
            );
            let outcome = cluster_votes(&ordered, |a, b| self.votes_match(a, b));
            if let Some(winner) = outcome.winner {
                if row.matches_truth[&outcome.clusters[winner].rep] {
                    correct += 1;
                }
            }
        }
        Ok(self.score_from(sorted, correct))
    }

    /// Score every k-subset of the table's turns, sorted by accuracy
    /// descending, then by turn tuple ascending so equal accuracies have a
    /// stable order.
    pub fn sweep(&self, subset_size: usize) -> Result<Vec<CombinationScore>, EvalError> {
        if subset_size == 0 || subset_size > self.turn_ids.len() {
            return Err(EvalError::BadSubsetSize {
                subset_size,
                turn_count: self.turn_ids.len(),
            });
        }
        let mut scores: Vec<CombinationScore> = self
            .turn_ids
            .iter()
            .copied()
            .combinations(subset_size)
            .map(|combo| self.combination_score(&combo))
            .collect::<Result<_, _>>()?;
        scores.sort_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then_with(|| a.turns.cmp(&b.turns))
        });
        Ok(scores)
    }

    fn score_from(&self, turns: Vec<u8>, correct: usize) -> CombinationScore {
        let total = self.items.len();
        let accuracy = if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        };
        CombinationScore {
            turns,
            split: self.side,
            correct,
            total,
            accuracy,
        }
    }
}

const SCORES_HEADER: &str = "turns,split,correct,total,accuracy";

/// Write scores as CSV with a `turns` column of ids joined by `;`.
pub fn save_scores_csv(path: &Path, scores: &[CombinationScore]) -> Result<(), EvalError> {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for score in scores {
        let turns = score.turns.iter().map(u8::to_string).join(";");
        out.push_str(&format!(
            "{turns},{split},{correct},{total},{accuracy:.6}\n",
            split = score.split,
            correct = score.correct,
            total = score.total,
            accuracy = score.accuracy,
        ));
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read back a scores CSV written by [`save_scores_csv`].
pub fn load_scores_csv(path: &Path) -> Result<Vec<CombinationScore>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |line: usize, message: String| EvalError::Malformed {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == SCORES_HEADER => {}
        other => {
            return Err(malformed(
                1,
                format!(
                    "expected header `{SCORES_HEADER}`, found `{}`",
                    other.map(|(_, h)| h).unwrap_or_default()
                ),
            ))
        }
    }
    let mut scores = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let turns = fields[0]
            .split(';')
            .map(|t| t.parse::<u8>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(lineno, format!("bad turn id: {e}")))?;
        let split = fields[1]
            .parse::<Side>()
            .map_err(|e| malformed(lineno, e))?;
        let correct = fields[2]
            .parse::<usize>()
            .map_err(|e| malformed(lineno, format!("bad correct count: {e}")))?;
        let total = fields[3]
            .parse::<usize>()
            .map_err(|e| malformed(lineno, format!("bad total: {e}")))?;
        let accuracy = fields[4]
            .parse::<f64>()
            .map_err(|e| malformed(lineno, format!("bad accuracy: {e}")))?;
        scores.push(CombinationScore {
            turns,
            split,
            correct,
            total,
            accuracy,
        });
    }
    Ok(scores)
}
