use serde::{Deserialize, Serialize};

use super::Rate;
use crate::error::{Error, Result};

/// First-order survival-model basis used for technical reserves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnicalBasis {
    pub mortality: Rate,
    #[serde(default)]
    pub interest: f64,
    pub retirement: f64,
    pub premium_rate: f64,
    pub initial_premium: f64,
    #[serde(default = "default_payment_horizon")]
    pub payment_horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_payment_horizon() -> f64 {
    70.0
}

fn default_step() -> f64 {
    1.0 / 512.0
}

impl TechnicalBasis {
    /// Age 40 at inception, premiums of 10,000 a year until 25, initial premium 100,000.
    pub fn freepolicy6() -> Self {
        Self {
            mortality: Rate::Makeham10 {
                a: 0.005,
                b: 5.728 - 10.0,
                c: 0.038,
                age_offset: 40.0,
            },
            interest: 0.0,
            retirement: 25.0,
            premium_rate: 10_000.0,
            initial_premium: 100_000.0,
            payment_horizon: default_payment_horizon(),
            step: default_step(),
        }
    }

    fn node_index(&self, t: f64, what: &str) -> Result<usize> {
        let x = t / self.step;
        if (x - x.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "{what} = {t} is not a multiple of the quadrature step {}",
                self.step
            )));
        }
        Ok(x.round() as usize)
    }
}

/// Survival-weighted annuity integrals of a basis on its quadrature grid.
#[derive(Debug, Clone)]
pub struct ReserveTable {
    basis: TechnicalBasis,
    benefit_rate: f64,
    factor: f64,
    retirement_idx: usize,
    end_idx: usize,
    cum_hazard: Vec<f64>,
    weight: Vec<f64>,
    cum_weight: Vec<f64>,
}

impl ReserveTable {
    pub fn new(basis: &TechnicalBasis, benefit_rate: f64) -> Result<Self> {
        if !(basis.step > 0.0) {
            return Err(Error::config("quadrature step must be positive"));
        }
        if benefit_rate < 0.0 || !benefit_rate.is_finite() {
            return Err(Error::invalid(format!(
                "benefit rate must be nonnegative, got {benefit_rate}"
            )));
        }
        if !(basis.retirement >= 0.0 && basis.payment_horizon > basis.retirement) {
            return Err(Error::config(
                "payment horizon must exceed the retirement time",
            ));
        }
        let retirement_idx = basis.node_index(basis.retirement, "retirement")?;
        let end_idx = basis.node_index(basis.payment_horizon, "payment horizon")?;
        let h = basis.step;
        let mu: Vec<f64> = (0..=end_idx)
            .map(|k| basis.mortality.intensity(k as f64 * h, 0.0))
            .collect();
        let mut cum_hazard = vec![0.0; end_idx + 1];
        for k in 1..=end_idx {
            cum_hazard[k] = cum_hazard[k - 1] + 0.5 * h * (mu[k - 1] + mu[k]);
        }
        let weight: Vec<f64> = cum_hazard
            .iter()
            .enumerate()
            .map(|(k, m)| (-m - basis.interest * k as f64 * h).exp())
            .collect();
        let mut cum_weight = vec![0.0; end_idx + 1];
        for k in 1..=end_idx {
            cum_weight[k] = cum_weight[k - 1] + 0.5 * h * (weight[k - 1] + weight[k]);
        }
        Ok(Self {
            basis: basis.clone(),
            benefit_rate,
            factor: 1.0,
            retirement_idx,
            end_idx,
            cum_hazard,
            weight,
            cum_weight,
        })
    }

    pub fn basis(&self) -> &TechnicalBasis {
        &self.basis
    }

    pub fn benefit_rate(&self) -> f64 {
        self.benefit_rate
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.factor *= factor;
        out
    }

    fn node(&self, k: usize) -> f64 {
        k as f64 * self.basis.step
    }

    /// Discounted survival weight at an arbitrary time, inserting `t` as a trapezoid node.
    fn weight_at(&self, t: f64) -> (usize, f64) {
        let k = ((t / self.basis.step).floor() as usize).min(self.end_idx);
        let xk = self.node(k);
        if t == xk {
            return (k, self.weight[k]);
        }
        let mu_k = self.basis.mortality.intensity(xk, 0.0);
        let mu_t = self.basis.mortality.intensity(t, 0.0);
        let m = self.cum_hazard[k] + 0.5 * (t - xk) * (mu_k + mu_t);
        (k, (-m - self.basis.interest * t).exp())
    }

    /// `∫_{max(t, x_lo)}^{x_hi} w(s) ds / w(t)`.
    fn annuity(&self, t: f64, lo: usize, hi: usize) -> f64 {
        let t = t.max(0.0);
        if t >= self.node(hi) {
            return 0.0;
        }
        let (k, wt) = self.weight_at(t);
        let integral = if t <= self.node(lo) {
            self.cum_weight[hi] - self.cum_weight[lo]
        } else {
            let next = k + 1;
            let piece = 0.5 * (self.node(next) - t) * (wt + self.weight[next]);
            piece + self.cum_weight[hi] - self.cum_weight[next]
        };
        integral / wt
    }

    pub fn retirement_annuity(&self, t: f64) -> f64 {
        self.annuity(t, self.retirement_idx, self.end_idx)
    }

    pub fn premium_annuity(&self, t: f64) -> f64 {
        self.annuity(t, 0, self.retirement_idx)
    }

    /// `V*+(t)`.
    pub fn benefit_reserve(&self, t: f64) -> f64 {
        self.factor * self.benefit_rate * self.retirement_annuity(t)
    }

    /// `V*(t)`: benefits less future premiums.
    pub fn reserve(&self, t: f64) -> f64 {
        self.factor
            * (self.benefit_rate * self.retirement_annuity(t)
                - self.basis.premium_rate * self.premium_annuity(t))
    }

    /// `V*(t) / V*+(t)`; NaN where the benefit reserve vanishes.
    pub fn free_policy_factor(&self, t: f64) -> f64 {
        let plus = self.benefit_rate * self.retirement_annuity(t);
        if plus == 0.0 {
            return f64::NAN;
        }
        (self.benefit_rate * self.retirement_annuity(t)
            - self.basis.premium_rate * self.premium_annuity(t))
            / plus
    }
}

fn check_time(basis: &TechnicalBasis, t: f64) -> Result<()> {
    if !(0.0..=basis.payment_horizon).contains(&t) {
        return Err(Error::OutOfRange(format!(
            "t = {t} outside [0, {}]",
            basis.payment_horizon
        )));
    }
    Ok(())
}

/// Returns `(V*(t), V*+(t))` for the given benefit rate.
pub fn technical_reserves(basis: &TechnicalBasis, benefit_rate: f64, t: f64) -> Result<(f64, f64)> {
    check_time(basis, t)?;
    let table = ReserveTable::new(basis, benefit_rate)?;
    Ok((table.reserve(t), table.benefit_reserve(t)))
}

/// `V*(t) / V*+(t)`.
pub fn free_policy_factor(basis: &TechnicalBasis, benefit_rate: f64, t: f64) -> Result<f64> {
    check_time(basis, t)?;
    let table = ReserveTable::new(basis, benefit_rate)?;
    let plus = table.benefit_reserve(t);
    if plus == 0.0 {
        return Err(Error::invalid(format!(
            "benefit reserve vanishes at t = {t}; free policy factor undefined"
        )));
    }
    Ok(table.reserve(t) / plus)
}

/// Benefit rate from retirement onwards that balances the initial premium and the
/// premium stream at time zero. Bisection to 1e-6 relative accuracy.
pub fn solve_equivalence_benefit(basis: &TechnicalBasis) -> Result<f64> {
    let table = ReserveTable::new(basis, 0.0)?;
    let a_ret = table.retirement_annuity(0.0);
    let a_prem = table.premium_annuity(0.0);
    let f = |beta: f64| beta * a_ret - basis.premium_rate * a_prem - basis.initial_premium;
    let lo = 0.0;
    let mut hi = 1.0;
    let f_lo = f(lo);
    while f(hi) <= 0.0 && hi < 1e15 {
        hi *= 2.0;
    }
    let f_hi = f(hi);
    if f_lo > 0.0 || f_hi <= 0.0 || !f_hi.is_finite() {
        return Err(Error::NoSignChange { lo, hi, f_lo, f_hi });
    }
    if f_lo == 0.0 {
        return Ok(0.0);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
        if b - a <= 1e-6 * 0.5 * (a + b) * 1e-3 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}
