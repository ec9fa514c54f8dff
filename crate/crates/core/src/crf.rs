//! Linear-chain CRF scoring, partition function and Viterbi decoding on
//! plain arrays.
//!
//! Transitions are a row-major `(L + 1) x L` matrix: row `k` scores moving
//! from label `k` into each label, and row `L` scores the move out of the
//! internal START state. There is no STOP state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::log_sum_exp;

/// How a transition score and an emission score combine at one position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrfScoreMode {
    /// `T[y_prev, y] + emission[y]`, the usual linear-chain CRF.
    #[default]
    Additive,
    /// `T[y_prev, y] * emission[y]`.
    Multiplicative,
}

impl CrfScoreMode {
    #[inline]
    pub fn combine(self, transition: f64, emission: f64) -> f64 {
        match self {
            CrfScoreMode::Additive => transition + emission,
            CrfScoreMode::Multiplicative => transition * emission,
        }
    }
}

impl fmt::Display for CrfScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrfScoreMode::Additive => "additive",
            CrfScoreMode::Multiplicative => "multiplicative",
        })
    }
}

impl FromStr for CrfScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(CrfScoreMode::Additive),
            "multiplicative" => Ok(CrfScoreMode::Multiplicative),
            other => Err(Error::Config(format!(
                "crf_score must be additive or multiplicative, got `{other}`"
            ))),
        }
    }
}

/// Borrowed emission and transition scores for one sentence.
#[derive(Clone, Copy, Debug)]
pub struct CrfScores<'a> {
    emissions: &'a [Vec<f64>],
    transitions: &'a [f64],
    labels: usize,
    mode: CrfScoreMode,
}

impl<'a> CrfScores<'a> {
    pub fn new(
        emissions: &'a [Vec<f64>],
        transitions: &'a [f64],
        mode: CrfScoreMode,
    ) -> Result<Self> {
        let Some(first) = emissions.first() else {
            return Err(Error::Contract("CRF over an empty sentence".into()));
        };
        let labels = first.len();
        if labels == 0 {
            return Err(Error::Contract("CRF with an empty label set".into()));
        }
        if let Some(bad) = emissions.iter().position(|e| e.len() != labels) {
            return Err(Error::shape(
                format!("emissions[{bad}]"),
                labels,
                emissions[bad].len(),
            ));
        }
        if transitions.len() != (labels + 1) * labels {
            return Err(Error::shape(
                "transitions",
                format!("{}x{labels}", labels + 1),
                transitions.len(),
            ));
        }
        Ok(CrfScores {
            emissions,
            transitions,
            labels,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    pub fn start(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.labels + to]
    }

    #[inline]
    fn local(&self, i: usize, from: usize, to: usize) -> f64 {
        self.mode
            .combine(self.transition(from, to), self.emissions[i][to])
    }

    /// Unnormalized log score of a labeling, with `y_0 = START`.
    pub fn sequence_score(&self, labels: &[usize]) -> Result<f64> {
        if labels.len() != self.len() {
            return Err(Error::Contract(format!(
                "labeling has {} entries for a sentence of length {}",
                labels.len(),
                self.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.labels) {
            return Err(Error::Contract(format!(
                "label index {bad} out of range (|L| = {})",
                self.labels
            )));
        }
        let mut prev = self.start();
        let mut score = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            score += self.local(i, prev, y);
            prev = y;
        }
        Ok(score)
    }

    /// Forward-algorithm log partition in `O(n |L|^2)`.
    pub fn log_partition(&self) -> f64 {
        let l = self.labels;
        let mut alpha: Vec<f64> = (0..l).map(|j| self.local(0, self.start(), j)).collect();
        let mut next = vec![0.0; l];
        let mut scratch = vec![0.0; l];
        for i in 1..self.len() {
            for (j, slot) in next.iter_mut().enumerate() {
                for k in 0..l {
                    scratch[k] = alpha[k] + self.local(i, k, j);
                }
                *slot = log_sum_exp(&scratch);
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        log_sum_exp(&alpha)
    }

    /// Negative log likelihood of `gold`. Always non-negative.
    pub fn nll(&self, gold: &[usize]) -> Result<f64> {
        Ok(self.log_partition() - self.sequence_score(gold)?)
    }

    /// Max-plus decoding with backpointers. Ties go to the lowest label index.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let l = self.labels;
        let n = self.len();
        let mut delta: Vec<f64> = (0..l).map(|j| self.local(0, self.start(), j)).collect();
        let mut back = vec![vec![0usize; l]; n];
        let mut next = vec![0.0; l];
        for i in 1..n {
            for j in 0..l {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (k, &d) in delta.iter().enumerate() {
                    let s = d + self.local(i, k, j);
                    if s > best {
                        best = s;
                        arg = k;
                    }
                }
                next[j] = best;
                back[i][j] = arg;
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let mut last = 0;
        for j in 1..l {
            if delta[j] > delta[last] {
                last = j;
            }
        }
        let best = delta[last];
        let mut path = vec![0; n];
        path[n - 1] = last;
        for i in (1..n).rev() {
            path[i - 1] = back[i][path[i]];
        }
        (path, best)
    }
}
