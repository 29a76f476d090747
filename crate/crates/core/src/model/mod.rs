//! State space, transition rates, payments and scaling factors.

mod basis;
mod config;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basis::{
    free_policy_factor, solve_equivalence_benefit, technical_reserves, ReserveTable, TechnicalBasis,
};
pub use config::{ModelConfig, FREEPOLICY6_TOML};

/// Finite state space split into pre-exercise states `J0` and post-exercise states `J1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
    pre: Vec<bool>,
    absorbing: Vec<bool>,
    initial: usize,
}

impl StateSpace {
    pub fn new(
        labels: Vec<String>,
        pre: Vec<bool>,
        absorbing: Vec<bool>,
        initial: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::config("state space is empty"));
        }
        if pre.len() != n || absorbing.len() != n {
            return Err(Error::config(
                "state flags do not match the number of labels",
            ));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l == "CENSOR" || l.contains(',') {
                return Err(Error::config(format!("invalid state label {l:?}")));
            }
            if labels[..i].contains(l) {
                return Err(Error::config(format!("duplicate state label {l:?}")));
            }
        }
        if initial >= n || !pre[initial] {
            return Err(Error::config(
                "initial state must belong to the pre-exercise set",
            ));
        }
        Ok(Self {
            labels,
            pre,
            absorbing,
            initial,
        })
    }

    /// States labelled `1..=n`, the first `n_pre` of them pre-exercise.
    pub fn numbered(n: usize, pre: &[usize], absorbing: &[usize]) -> Result<Self> {
        let labels = (1..=n).map(|i| i.to_string()).collect();
        let pre_flags = (0..n).map(|i| pre.contains(&i)).collect();
        let abs_flags = (0..n).map(|i| absorbing.contains(&i)).collect();
        Self::new(labels, pre_flags, abs_flags, 0)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, j: usize) -> &str {
        &self.labels[j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_pre(&self, j: usize) -> bool {
        self.pre[j]
    }

    pub fn is_post(&self, j: usize) -> bool {
        !self.pre[j]
    }

    pub fn is_absorbing(&self, j: usize) -> bool {
        self.absorbing[j]
    }

    pub fn pre_flags(&self) -> &[bool] {
        &self.pre
    }

    /// Whether a jump `j -> k` exercises the option.
    pub fn is_exercise(&self, j: usize, k: usize) -> bool {
        self.pre[j] && !self.pre[k]
    }

    /// The same space with an extra absorbing post-exercise state appended.
    pub fn with_cemetery(&self, label: &str) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.push(label.to_string());
        let mut pre = self.pre.clone();
        pre.push(false);
        let mut absorbing = self.absorbing.clone();
        absorbing.push(true);
        Self::new(labels, pre, absorbing, self.initial)
    }
}

/// Transition intensity as a function of calendar time `t` and duration `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rate {
    Zero,
    Constant {
        value: f64,
    },
    /// `value` on `[start, end)`.
    Window {
        value: f64,
        start: f64,
        end: f64,
    },
    /// `a + 10^(b + c (t + age_offset))`.
    Makeham10 {
        a: f64,
        b: f64,
        c: f64,
        #[serde(default)]
        age_offset: f64,
    },
    /// `(base + bump 1[u_start, u_end)(u)) 1{t < t_end}`.
    DurationStep {
        base: f64,
        bump: f64,
        u_start: f64,
        u_end: f64,
        #[serde(default = "infinity")]
        t_end: f64,
    },
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl Rate {
    pub fn intensity(&self, t: f64, u: f64) -> f64 {
        match *self {
            Rate::Zero => 0.0,
            Rate::Constant { value } => value,
            Rate::Window { value, start, end } => {
                if t >= start && t < end {
                    value
                } else {
                    0.0
                }
            }
            Rate::Makeham10 {
                a,
                b,
                c,
                age_offset,
            } => a + 10f64.powf(b + c * (t + age_offset)),
            Rate::DurationStep {
                base,
                bump,
                u_start,
                u_end,
                t_end,
            } => {
                if t >= t_end {
                    0.0
                } else if u >= u_start && u < u_end {
                    base + bump
                } else {
                    base
                }
            }
        }
    }

    /// Upper bound of the intensity on `[0, horizon] x [0, horizon]`.
    pub fn bound(&self, horizon: f64) -> f64 {
        match *self {
            Rate::Zero => 0.0,
            Rate::Constant { value } | Rate::Window { value, .. } => value.max(0.0),
            Rate::Makeham10 { .. } => self.intensity(0.0, 0.0).max(self.intensity(horizon, 0.0)),
            Rate::DurationStep { base, bump, .. } => base.max(base + bump).max(0.0),
        }
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        let b = self.bound(horizon);
        if !b.is_finite() {
            return Err(Error::config(format!(
                "rate {self:?} is unbounded on the horizon"
            )));
        }
        let negative = match *self {
            Rate::Constant { value } | Rate::Window { value, .. } => value < 0.0,
            Rate::Makeham10 { a, .. } => a < 0.0,
            Rate::DurationStep { base, bump, .. } => base < 0.0 || base + bump < 0.0,
            Rate::Zero => false,
        };
        if negative {
            return Err(Error::config(format!(
                "rate {self:?} takes negative values"
            )));
        }
        Ok(())
    }
}

/// All transition intensities of a semi-Markov model.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardSet {
    n_states: usize,
    from: Vec<Vec<(usize, Rate)>>,
}

impl HazardSet {
    pub fn new(
        states: &StateSpace,
        rates: Vec<(usize, usize, Rate)>,
        horizon: f64,
    ) -> Result<Self> {
        let n = states.len();
        let mut from = vec![Vec::new(); n];
        for (j, k, rate) in rates {
            if j >= n || k >= n || j == k {
                return Err(Error::config(format!("invalid transition {j} -> {k}")));
            }
            if states.is_post(j) && states.is_pre(k) && rate != Rate::Zero {
                return Err(Error::config(format!(
                    "transition {} -> {} leaves the post-exercise set",
                    states.label(j),
                    states.label(k)
                )));
            }
            if states.is_absorbing(j) && rate != Rate::Zero {
                return Err(Error::config(format!(
                    "absorbing state {} has an outgoing rate",
                    states.label(j)
                )));
            }
            rate.validate(horizon)?;
            if from[j].iter().any(|(kk, _)| *kk == k) {
                return Err(Error::config(format!("duplicate rate {j} -> {k}")));
            }
            from[j].push((k, rate));
        }
        Ok(Self { n_states: n, from })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn from_state(&self, j: usize) -> &[(usize, Rate)] {
        &self.from[j]
    }

    pub fn total(&self, j: usize, t: f64, u: f64) -> f64 {
        self.from[j].iter().map(|(_, r)| r.intensity(t, u)).sum()
    }

    /// Bound on the total exit intensity of `j` used for thinning.
    pub fn bound(&self, j: usize, horizon: f64) -> f64 {
        self.from[j].iter().map(|(_, r)| r.bound(horizon)).sum()
    }

    /// A copy with every rate multiplied by zero, keeping the structure.
    pub fn zeroed(&self) -> Self {
        Self {
            n_states: self.n_states,
            from: self
                .from
                .iter()
                .map(|v| v.iter().map(|(k, _)| (*k, Rate::Zero)).collect())
                .collect(),
        }
    }
}

/// Transition payment `b_jk(t)`.
#[derive(Debug, Clone)]
pub enum PayFn {
    Constant(f64),
    /// Technical reserve `V*(t)`.
    TechnicalReserve(Arc<ReserveTable>),
    /// Technical reserve of benefits only `V*+(t)`.
    BenefitReserve(Arc<ReserveTable>),
}

impl PayFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            PayFn::Constant(c) => *c,
            PayFn::TechnicalReserve(table) => table.reserve(t),
            PayFn::BenefitReserve(table) => table.benefit_reserve(t),
        }
    }

    fn scaled(&self, factor: f64) -> PayFn {
        match self {
            PayFn::Constant(c) => PayFn::Constant(c * factor),
            PayFn::TechnicalReserve(t) => PayFn::TechnicalReserve(Arc::new(t.scaled(factor))),
            PayFn::BenefitReserve(t) => PayFn::BenefitReserve(Arc::new(t.scaled(factor))),
        }
    }
}

/// Constant payment rate on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSegment {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
}

/// Sojourn payment measure `B_j`: piecewise-constant rates plus lump sums.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SojournMeasure {
    pub segments: Vec<RateSegment>,
    pub lumps: Vec<(f64, f64)>,
}

impl SojournMeasure {
    /// `B_j(t) = B_j((0, t])`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for s in &self.segments {
            let hi = t.min(s.end);
            if hi > s.start {
                v += s.rate * (hi - s.start);
            }
        }
        for (time, amount) in &self.lumps {
            if *time <= t {
                v += amount;
            }
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(|s| s.rate == 0.0) && self.lumps.iter().all(|l| l.1 == 0.0)
    }
}

/// Scaling factor `rho(t, j, k)` applied from the exercise time onwards.
#[derive(Clone)]
pub enum Scaling {
    One,
    Constant(f64),
    /// `V*(t) / V*+(t)` from a technical basis.
    FreePolicy(Arc<ReserveTable>),
    Custom(Arc<dyn Fn(f64, usize, usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scaling::One => write!(f, "One"),
            Scaling::Constant(c) => write!(f, "Constant({c})"),
            Scaling::FreePolicy(_) => write!(f, "FreePolicy"),
            Scaling::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Scaling {
    pub fn rho(&self, t: f64, j: usize, k: usize) -> f64 {
        match self {
            Scaling::One => 1.0,
            Scaling::Constant(c) => *c,
            Scaling::FreePolicy(table) => table.free_policy_factor(t),
            Scaling::Custom(f) => f(t, j, k),
        }
    }

    pub fn custom(f: impl Fn(f64, usize, usize) -> f64 + Send + Sync + 'static) -> Self {
        Scaling::Custom(Arc::new(f))
    }
}

/// Whether the transition payment at the exercise time itself is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpConvention {
    /// `H(tau) = rho`: the exercise payment is scaled.
    #[default]
    Right,
    /// `H(tau-) = 1`: the exercise payment is paid in full.
    Left,
}

impl std::str::FromStr for JumpConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "right" => Ok(JumpConvention::Right),
            "left" => Ok(JumpConvention::Left),
            other => Err(Error::config(format!("unknown jump convention {other:?}"))),
        }
    }
}

/// Contractual payments: lump sum at zero, sojourn measures, transition payments, scaling.
#[derive(Debug, Clone)]
pub struct PaymentSpec {
    pub b0: f64,
    pub sojourn: Vec<SojournMeasure>,
    transition: Vec<Option<PayFn>>,
    pub scaling: Scaling,
    n_states: usize,
}

impl PaymentSpec {
    pub fn new(n_states: usize, b0: f64, scaling: Scaling) -> Self {
        Self {
            b0,
            sojourn: vec![SojournMeasure::default(); n_states],
            transition: vec![None; n_states * n_states],
            scaling,
            n_states,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn set_transition(&mut self, j: usize, k: usize, f: PayFn) {
        self.transition[j * self.n_states + k] = Some(f);
    }

    pub fn transition(&self, j: usize, k: usize) -> Option<&PayFn> {
        self.transition[j * self.n_states + k].as_ref()
    }

    pub fn b(&self, j: usize, k: usize, t: f64) -> f64 {
        self.transition(j, k).map_or(0.0, |f| f.eval(t))
    }

    pub fn rho(&self, t: f64, j: usize, k: usize) -> f64 {
        self.scaling.rho(t, j, k)
    }

    /// Pairs `(j, k)` with a transition payment.
    pub fn transition_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n_states * self.n_states)
            .filter(|i| self.transition[*i].is_some())
            .map(|i| (i / self.n_states, i % self.n_states))
            .collect()
    }

    /// Same payments multiplied by `factor` (scaling unchanged).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.b0 *= factor;
        for m in &mut out.sojourn {
            for s in &mut m.segments {
                s.rate *= factor;
            }
            for l in &mut m.lumps {
                l.1 *= factor;
            }
        }
        for f in out.transition.iter_mut().flatten() {
            *f = f.scaled(factor);
        }
        out
    }

    /// Same spec on a state space extended by appended states without payments.
    pub fn extended(&self, n_states: usize) -> Self {
        let mut out = PaymentSpec::new(n_states, self.b0, self.scaling.clone());
        for j in 0..self.n_states {
            out.sojourn[j] = self.sojourn[j].clone();
            for k in 0..self.n_states {
                if let Some(f) = self.transition(j, k) {
                    out.set_transition(j, k, f.clone());
                }
            }
        }
        out
    }

    fn validate(&self, states: &StateSpace, horizon: f64) -> Result<()> {
        if self.sojourn.len() != states.len() {
            return Err(Error::config("payment spec does not match the state space"));
        }
        for m in &self.sojourn {
            if m.lumps.iter().any(|(t, _)| *t <= 0.0) {
                return Err(Error::config("sojourn lump sums must lie after time 0"));
            }
        }
        let steps = 1000;
        for i in 0..=steps {
            let t = horizon * i as f64 / steps as f64;
            for j in 0..states.len() {
                for k in 0..states.len() {
                    if !states.is_exercise(j, k) {
                        continue;
                    }
                    let r = self.rho(t, j, k);
                    if !r.is_finite() || r < 0.0 {
                        return Err(Error::config(format!(
                            "scaling factor {r} at t = {t} is not a finite nonnegative number"
                        )));
                    }
                }
            }
            for f in self.transition.iter().flatten() {
                if !f.eval(t).is_finite() {
                    return Err(Error::config(format!(
                        "transition payment unbounded at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A complete model: states, intensities for simulation, payments and horizon.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub states: StateSpace,
    pub hazards: HazardSet,
    pub payments: PaymentSpec,
    pub horizon: f64,
    pub basis: Option<TechnicalBasis>,
    pub benefit_rate: Option<f64>,
}

impl Model {
    pub fn new(
        name: impl Into<String>,
        states: StateSpace,
        hazards: HazardSet,
        payments: PaymentSpec,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        payments.validate(&states, horizon)?;
        Ok(Self {
            name: name.into(),
            states,
            hazards,
            payments,
            horizon,
            basis: None,
            benefit_rate: None,
        })
    }

    /// Loads a model from a TOML file, or the built-in preset when `spec` is `freepolicy6`.
    pub fn load(spec: &str) -> Result<Self> {
        if spec == "freepolicy6" {
            return Self::freepolicy6();
        }
        let text = std::fs::read_to_string(spec)?;
        ModelConfig::parse(&text)?.build()
    }

    /// Six-state free-policy and surrender model.
    pub fn freepolicy6() -> Result<Self> {
        ModelConfig::parse(FREEPOLICY6_TOML)?.build()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, label: &str) -> Result<usize> {
        self.states
            .index_of(label)
            .ok_or_else(|| Error::config(format!("unknown state {label:?}")))
    }
}
