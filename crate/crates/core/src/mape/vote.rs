use std::collections::{BTreeMap, VecDeque};

use super::detect::DetectorId;
use crate::model::UnitId;

/// True iff at least `m` of the last `k` scores are 1.
pub fn vote(scores: &[u8], k: usize, m: usize) -> bool {
    assert!(k >= 1 && m <= k, "voter needs k ≥ 1 and m ≤ k");
    let tail = &scores[scores.len().saturating_sub(k)..];
    tail.iter().filter(|&&s| s == 1).count() >= m
}

/// Sliding `m`-of-`k` majority over per-window combined scores.
#[derive(Debug, Clone)]
pub struct Voter {
    pub k: usize,
    pub m: usize,
    window: VecDeque<u8>,
}

impl Voter {
    pub fn new(k: usize, m: usize) -> Self {
        assert!(k >= 1 && m <= k, "voter needs k ≥ 1 and m ≤ k");
        Voter { k, m, window: VecDeque::with_capacity(k) }
    }

    pub fn push(&mut self, score: u8) -> bool {
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(score);
        self.verdict()
    }

    pub fn verdict(&self) -> bool {
        self.window.iter().filter(|&&s| s == 1).count() >= self.m
    }

    pub fn scores(&self) -> impl Iterator<Item = u8> + '_ {
        self.window.iter().copied()
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }
}

/// Per-window verdict of one unit's analyzer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionReport {
    pub unit_id: UnitId,
    pub window_index: u64,
    pub scores: BTreeMap<DetectorId, u8>,
    pub voted: bool,
}

impl DetectionReport {
    /// 1 if any detector scored 1.
    pub fn combined(&self) -> u8 {
        u8::from(self.scores.values().any(|&s| s == 1))
    }
}
