//! Semi-Markov path simulation by thinning, right-censoring and dataset I/O.

mod io;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{HazardSet, Model, StateSpace};
use crate::seed::{item_rng, stage_seed};

pub use io::{read_dataset, read_dataset_file, write_dataset, write_dataset_file};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// Fully observed trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub initial: usize,
    pub jumps: Vec<Jump>,
    pub horizon: f64,
    /// Time of entry into a state without exits, if that happened before the horizon.
    pub absorption: Option<f64>,
}

impl StatePath {
    pub fn state_at(&self, t: f64) -> usize {
        state_at(self.initial, &self.jumps, t)
    }
}

fn state_at(initial: usize, jumps: &[Jump], t: f64) -> usize {
    jumps
        .iter()
        .take_while(|j| j.time <= t)
        .last()
        .map_or(initial, |j| j.to)
}

/// A trajectory observed up to the censoring time `R` (`+inf` if uncensored).
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredObservation {
    pub id: u64,
    pub initial: usize,
    pub jumps: Vec<Jump>,
    pub censoring: f64,
    /// Absorption occurred at or before `R`.
    pub absorbed: bool,
}

impl CensoredObservation {
    /// State after all jumps at or before `t`.
    pub fn state_at(&self, t: f64) -> usize {
        state_at(self.initial, &self.jumps, t)
    }

    /// First jump from the pre-exercise into the post-exercise set.
    pub fn exercise(&self, states: &StateSpace) -> Option<Jump> {
        self.jumps
            .iter()
            .find(|j| states.is_exercise(j.from, j.to))
            .copied()
    }

    pub fn validate(&self, states: &StateSpace) -> Result<()> {
        let n = states.len();
        let bad = |msg: String| Err(Error::invalid(format!("observation {}: {msg}", self.id)));
        if self.initial >= n {
            return bad(format!("initial state {} out of range", self.initial));
        }
        if !(self.censoring > 0.0) {
            return bad(format!(
                "censoring time {} must be positive",
                self.censoring
            ));
        }
        let mut current = self.initial;
        let mut last = 0.0;
        for j in &self.jumps {
            if j.from >= n || j.to >= n || j.from == j.to {
                return bad(format!("invalid transition {} -> {}", j.from, j.to));
            }
            if j.from != current {
                return bad(format!(
                    "jump at {} leaves {} but path is in {}",
                    j.time, j.from, current
                ));
            }
            if !(j.time > last) || !j.time.is_finite() {
                return bad(format!("jump times not strictly increasing at {}", j.time));
            }
            if j.time > self.censoring {
                return bad(format!(
                    "jump at {} after censoring time {}",
                    j.time, self.censoring
                ));
            }
            if states.is_post(j.from) && states.is_pre(j.to) {
                return bad(format!("jump at {} leaves the post-exercise set", j.time));
            }
            if states.is_absorbing(j.from) {
                return bad(format!("jump at {} out of an absorbing state", j.time));
            }
            current = j.to;
            last = j.time;
        }
        Ok(())
    }
}

/// Censoring distribution, independent of the state process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Censoring {
    None,
    Uniform { lo: f64, hi: f64 },
}

impl Censoring {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Censoring::None => f64::INFINITY,
            Censoring::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

impl std::str::FromStr for Censoring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Censoring::None);
        }
        let parse = || -> Option<Censoring> {
            let rest = s.strip_prefix("unif:")?;
            let (a, b) = rest.split_once(',')?;
            let lo: f64 = a.trim().parse().ok()?;
            let hi: f64 = b.trim().parse().ok()?;
            (lo > 0.0 && hi > lo && hi.is_finite()).then_some(Censoring::Uniform { lo, hi })
        };
        parse().ok_or_else(|| {
            Error::config(format!(
                "invalid censoring spec {s:?}; expected none or unif:lo,hi"
            ))
        })
    }
}

/// Samples a path by thinning against the per-state bound on the total exit intensity.
pub fn sample_path<R: Rng>(
    hazards: &HazardSet,
    z0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<StatePath> {
    let mut jumps = Vec::new();
    let mut state = z0;
    let mut entry = 0.0;
    let mut t = 0.0;
    let mut absorption = None;
    loop {
        let rates = hazards.from_state(state);
        let bound = hazards.bound(state, horizon);
        if !bound.is_finite() {
            return Err(Error::config(format!(
                "unbounded hazard out of state {state}"
            )));
        }
        if rates.is_empty() {
            if state != z0 || !jumps.is_empty() {
                absorption = Some(entry);
            }
            break;
        }
        if bound == 0.0 {
            break;
        }
        let exp = Exp::new(bound).map_err(|e| Error::config(e.to_string()))?;
        t += exp.sample(rng);
        if t > horizon {
            break;
        }
        let u = t - entry;
        let total = hazards.total(state, t, u);
        let v: f64 = rng.random::<f64>() * bound;
        if v >= total {
            continue;
        }
        let mut acc = 0.0;
        let mut to = rates[rates.len() - 1].0;
        for (k, r) in rates {
            acc += r.intensity(t, u);
            if v < acc {
                to = *k;
                break;
            }
        }
        jumps.push(Jump {
            time: t,
            from: state,
            to,
        });
        state = to;
        entry = t;
    }
    Ok(StatePath {
        initial: z0,
        jumps,
        horizon,
        absorption,
    })
}

/// Reproducible single path for a seed.
pub fn simulate_path(hazards: &HazardSet, z0: usize, horizon: f64, seed: u64) -> Result<StatePath> {
    let mut rng = item_rng(stage_seed(seed, "paths"), 0);
    sample_path(hazards, z0, horizon, &mut rng)
}

/// Truncates a path at `r`, keeping jumps at or before `r`.
pub fn censor(path: &StatePath, id: u64, r: f64, states: &StateSpace) -> CensoredObservation {
    let jumps: Vec<Jump> = path.jumps.iter().filter(|j| j.time <= r).copied().collect();
    let last = jumps.last().map_or(path.initial, |j| j.to);
    let absorbed = !jumps.is_empty() && states.is_absorbing(last);
    CensoredObservation {
        id,
        initial: path.initial,
        jumps,
        censoring: r,
        absorbed,
    }
}

/// Uncensored paths with ids `0..n`.
pub fn simulate_paths(model: &Model, n: usize, seed: u64) -> Result<Vec<StatePath>> {
    let stage = stage_seed(seed, "paths");
    (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = item_rng(stage, id);
            sample_path(
                &model.hazards,
                model.states.initial(),
                model.horizon,
                &mut rng,
            )
        })
        .collect()
}

/// Simulated dataset with ids `0..n`; path and censoring streams are independent.
pub fn simulate_dataset(
    model: &Model,
    n: usize,
    seed: u64,
    censoring: Censoring,
) -> Result<Vec<CensoredObservation>> {
    let paths = simulate_paths(model, n, seed)?;
    let stage = stage_seed(seed, "censoring");
    Ok(paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = i as u64;
            let r = censoring.sample(&mut item_rng(stage, id));
            censor(p, id, r, &model.states)
        })
        .collect())
}
