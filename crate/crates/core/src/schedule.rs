//! Which subdomains train in each outer round.
//!
//! `Parallel` keeps every subdomain active (additive Schwarz), `Alternating`
//! sweeps one subdomain at a time in ascending order (multiplicative), and
//! `Colored` / `Explicit` cover the hybrids in between. Indices are 0-based.

use std::collections::BTreeSet;

use crate::error::{FbpinnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Parallel { n_sub: usize },
    Alternating { n_sub: usize },
    /// Colors are visited in the given order, one color per round.
    Colored { n_sub: usize, colors: Vec<Vec<usize>> },
    /// Round `r` uses `rounds[r mod len]`.
    Explicit { n_sub: usize, rounds: Vec<Vec<usize>> },
}

/// Active subdomains for one round; everything else is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub round: usize,
    pub active: Vec<usize>,
}

impl ActiveSet {
    pub fn contains(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }
}

fn check_subset(n_sub: usize, set: &[usize], what: &str) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(FbpinnError::InvalidSchedule(format!("{what} is empty")));
    }
    let sorted: BTreeSet<usize> = set.iter().copied().collect();
    if sorted.len() != set.len() {
        return Err(FbpinnError::InvalidSchedule(format!("{what} repeats an index")));
    }
    if let Some(bad) = sorted.iter().find(|&&j| j >= n_sub) {
        return Err(FbpinnError::InvalidSchedule(format!(
            "{what} names subdomain {bad} but only {n_sub} exist"
        )));
    }
    Ok(sorted.into_iter().collect())
}

fn check_count(n_sub: usize) -> Result<()> {
    if n_sub == 0 {
        Err(FbpinnError::InvalidSchedule("no subdomains".into()))
    } else {
        Ok(())
    }
}

impl Schedule {
    pub fn parallel(n_sub: usize) -> Result<Self> {
        check_count(n_sub)?;
        Ok(Schedule::Parallel { n_sub })
    }

    pub fn alternating(n_sub: usize) -> Result<Self> {
        check_count(n_sub)?;
        Ok(Schedule::Alternating { n_sub })
    }

    /// Colors must be disjoint and together cover every subdomain.
    pub fn colored(n_sub: usize, colors: Vec<Vec<usize>>) -> Result<Self> {
        check_count(n_sub)?;
        if colors.is_empty() {
            return Err(FbpinnError::InvalidSchedule("no colors given".into()));
        }
        let mut seen = vec![false; n_sub];
        let mut checked = Vec::with_capacity(colors.len());
        for (c, color) in colors.iter().enumerate() {
            let set = check_subset(n_sub, color, &format!("color {c}"))?;
            for &j in &set {
                if std::mem::replace(&mut seen[j], true) {
                    return Err(FbpinnError::InvalidSchedule(format!(
                        "subdomain {j} appears in more than one color"
                    )));
                }
            }
            checked.push(set);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(FbpinnError::InvalidSchedule(format!(
                "subdomain {missing} has no color"
            )));
        }
        Ok(Schedule::Colored {
            n_sub,
            colors: checked,
        })
    }

    /// Two colors: even indices, then odd indices.
    pub fn red_black(n_sub: usize) -> Result<Self> {
        if n_sub < 2 {
            return Self::parallel(n_sub);
        }
        let even = (0..n_sub).step_by(2).collect();
        let odd = (1..n_sub).step_by(2).collect();
        Self::colored(n_sub, vec![even, odd])
    }

    pub fn explicit(n_sub: usize, rounds: Vec<Vec<usize>>) -> Result<Self> {
        check_count(n_sub)?;
        if rounds.is_empty() {
            return Err(FbpinnError::InvalidSchedule("explicit schedule has no rounds".into()));
        }
        let rounds = rounds
            .iter()
            .enumerate()
            .map(|(r, set)| check_subset(n_sub, set, &format!("round {r}")))
            .collect::<Result<_>>()?;
        Ok(Schedule::Explicit { n_sub, rounds })
    }

    pub fn n_sub(&self) -> usize {
        match self {
            Schedule::Parallel { n_sub }
            | Schedule::Alternating { n_sub }
            | Schedule::Colored { n_sub, .. }
            | Schedule::Explicit { n_sub, .. } => *n_sub,
        }
    }

    /// Number of rounds after which the schedule repeats.
    pub fn period(&self) -> usize {
        match self {
            Schedule::Parallel { .. } => 1,
            Schedule::Alternating { n_sub } => *n_sub,
            Schedule::Colored { colors, .. } => colors.len(),
            Schedule::Explicit { rounds, .. } => rounds.len(),
        }
    }

    pub fn active_set(&self, round: usize) -> ActiveSet {
        let active = match self {
            Schedule::Parallel { n_sub } => (0..*n_sub).collect(),
            Schedule::Alternating { n_sub } => vec![round % n_sub],
            Schedule::Colored { colors, .. } => colors[round % colors.len()].clone(),
            Schedule::Explicit { rounds, .. } => rounds[round % rounds.len()].clone(),
        };
        ActiveSet { round, active }
    }
}
