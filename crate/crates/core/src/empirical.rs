//! Empirical at-risk, counting and censoring processes in one and two time
//! arguments.
//!
//! Ties follow the counting-process conventions: a jump at `s` is observed
//! when `s <= R`, an individual is at risk at `t` when `t < R`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Scaling, StateSpace};
use crate::simulate::CensoredObservation;
use crate::timegrid::{EventGrid, Step1D, Step2D};

const CHUNK: usize = 512;

/// One observation with all times replaced by grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedObservation {
    pub id: u64,
    pub initial: usize,
    /// `(grid index, from, to)` of the jumps on the horizon.
    pub jumps: Vec<(usize, usize, usize)>,
    /// Grid index of the censoring time if it lies on the horizon.
    pub censor: Option<usize>,
    /// Grid index of the exercise and the scaling factor applied from then on.
    pub exercise: Option<(usize, f64)>,
}

impl IndexedObservation {
    /// `H` at grid index `m`.
    pub fn h(&self, m: usize) -> f64 {
        match self.exercise {
            Some((e, rho)) if m >= e => rho,
            _ => 1.0,
        }
    }

    /// Index one past the last at-risk grid point.
    pub fn at_risk_end(&self, len: usize) -> usize {
        self.censor.unwrap_or(len)
    }

    /// At-risk sojourns `(state, start, end)` as half-open index ranges.
    pub fn sojourns(&self, len: usize) -> Vec<(usize, usize, usize)> {
        let end = self.at_risk_end(len);
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut state = self.initial;
        let mut start = 0;
        for &(a, _, to) in &self.jumps {
            let e = a.min(end);
            if e > start {
                out.push((state, start, e));
            }
            state = to;
            start = a;
        }
        if end > start {
            out.push((state, start, end));
        }
        out
    }

    /// State after all jumps at or before grid index `m`.
    pub fn state_at(&self, m: usize) -> usize {
        self.jumps
            .iter()
            .take_while(|j| j.0 <= m)
            .last()
            .map_or(self.initial, |j| j.2)
    }
}

/// A dataset indexed on its merged event grid.
#[derive(Debug, Clone)]
pub struct IndexedData {
    grid: EventGrid,
    states: StateSpace,
    obs: Vec<IndexedObservation>,
}

impl IndexedData {
    /// Grid = `{0, horizon}` ∪ jump and censoring times on `(0, horizon]` ∪ `extra`.
    ///
    /// Observations are ordered by id so results do not depend on input order.
    pub fn new(
        dataset: &[CensoredObservation],
        states: &StateSpace,
        scaling: &Scaling,
        horizon: f64,
        extra: &[f64],
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid(
                "empty dataset: empirical averages are undefined",
            ));
        }
        let mut sorted: Vec<&CensoredObservation> = dataset.iter().collect();
        sorted.sort_by_key(|o| o.id);
        if sorted.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::invalid("duplicate observation ids"));
        }
        for o in &sorted {
            o.validate(states)?;
            if o.initial != states.initial() {
                return Err(Error::invalid(format!(
                    "observation {} starts in {} instead of {}",
                    o.id,
                    states.label(o.initial),
                    states.label(states.initial())
                )));
            }
        }
        let points = sorted
            .iter()
            .flat_map(|o| o.jumps.iter().map(|j| j.time).chain([o.censoring]))
            .chain(extra.iter().copied());
        let grid = EventGrid::from_points(points, horizon)?;
        let index = |t: f64| grid.index_of(t).expect("event time on grid");
        let obs = sorted
            .iter()
            .map(|o| {
                let jumps: Vec<(usize, usize, usize)> = o
                    .jumps
                    .iter()
                    .filter(|j| j.time <= horizon)
                    .map(|j| (index(j.time), j.from, j.to))
                    .collect();
                let exercise = o
                    .jumps
                    .iter()
                    .find(|j| j.time <= horizon && states.is_exercise(j.from, j.to))
                    .map(|j| (index(j.time), scaling.rho(j.time, j.from, j.to)));
                IndexedObservation {
                    id: o.id,
                    initial: o.initial,
                    jumps,
                    censor: (o.censoring <= horizon).then(|| index(o.censoring)),
                    exercise,
                }
            })
            .collect();
        Ok(Self {
            grid,
            states: states.clone(),
            obs,
        })
    }

    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn observations(&self) -> &[IndexedObservation] {
        &self.obs
    }

    pub fn n(&self) -> usize {
        self.obs.len()
    }

    /// Transitions `(j, k)` observed at least once.
    pub fn observed_transitions(&self) -> Vec<(usize, usize)> {
        let s = self.states.len();
        let mut seen = vec![false; s * s];
        for o in &self.obs {
            for &(_, j, k) in &o.jumps {
                seen[j * s + k] = true;
            }
        }
        (0..s * s)
            .filter(|i| seen[*i])
            .map(|i| (i / s, i % s))
            .collect()
    }
}

/// Sparse additive contributions `(index, value)` collected by [`chunked_sum`].
#[derive(Debug, Default)]
pub(crate) struct Sink(Vec<(usize, f64)>);

impl Sink {
    pub(crate) fn add(&mut self, index: usize, value: f64) {
        self.0.push((index, value));
    }
}

/// Parallel map over chunks of items, then an ordered sequential fold of the
/// contributions into a dense vector, so sums are bit-stable across thread
/// counts and cost is linear in the number of contributions.
pub(crate) fn chunked_sum<T, F>(items: &[T], width: usize, f: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&T, &mut Sink) + Sync,
{
    let partials: Vec<Sink> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sink = Sink::default();
            for item in chunk {
                f(item, &mut sink);
            }
            sink
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        for (i, v) in p.0 {
            total[i] += v;
        }
    }
    total
}

/// One-dimensional empirical processes with their unscaled twins.
#[derive(Debug, Clone)]
pub struct Empirical1D {
    grid: EventGrid,
    n: usize,
    n_states: usize,
    initial: usize,
    pre: Vec<bool>,
    at_risk: [Vec<Step1D>; 2],
    events: [Vec<Step1D>; 2],
    censored: [Vec<Step1D>; 2],
}

/// Selects the scaled (`H`-weighted) or unscaled version of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Scaled,
    Unscaled,
}

impl Weight {
    fn slot(self) -> usize {
        match self {
            Weight::Scaled => 0,
            Weight::Unscaled => 1,
        }
    }
}

impl Empirical1D {
    pub fn build(data: &IndexedData) -> Result<Self> {
        let len = data.grid.len();
        let s = data.states.len();
        // layout per weight: at-risk differences (s * (len + 1)), events (s * s * len), censored (s * len)
        let block = s * (len + 1) + s * s * len + s * len;
        let sums = chunked_sum(&data.obs, 2 * block, |o, buf| {
            for (slot, scaled) in [(0, true), (1, false)] {
                let base = slot * block;
                let h = |m: usize| if scaled { o.h(m) } else { 1.0 };
                for (state, a, b) in o.sojourns(len) {
                    let w = h(a);
                    buf.add(base + state * (len + 1) + a, w);
                    buf.add(base + state * (len + 1) + b, -w);
                }
                let ev = base + s * (len + 1);
                for &(a, j, k) in &o.jumps {
                    buf.add(ev + (j * s + k) * len + a, h(a));
                }
                if let Some(c) = o.censor {
                    let cs = ev + s * s * len;
                    buf.add(cs + o.state_at(c) * len + c, h(c));
                }
            }
        });
        let n = data.n() as f64;
        let cumulative = |xs: &[f64]| -> Step1D {
            let mut acc = 0.0;
            let v = xs[..len]
                .iter()
                .map(|x| {
                    acc += x;
                    acc / n
                })
                .collect();
            Step1D::new(data.grid.clone(), v).expect("grid length")
        };
        let mut at_risk: [Vec<Step1D>; 2] = Default::default();
        let mut events: [Vec<Step1D>; 2] = Default::default();
        let mut censored: [Vec<Step1D>; 2] = Default::default();
        for slot in 0..2 {
            let base = slot * block;
            at_risk[slot] = (0..s)
                .map(|j| cumulative(&sums[base + j * (len + 1)..base + (j + 1) * (len + 1)]))
                .collect();
            let ev = base + s * (len + 1);
            events[slot] = (0..s * s)
                .map(|i| cumulative(&sums[ev + i * len..ev + (i + 1) * len]))
                .collect();
            let cs = ev + s * s * len;
            censored[slot] = (0..s)
                .map(|j| cumulative(&sums[cs + j * len..cs + (j + 1) * len]))
                .collect();
        }
        Ok(Self {
            grid: data.grid.clone(),
            n: data.n(),
            n_states: s,
            initial: data.states.initial(),
            pre: data.states.pre_flags().to_vec(),
            at_risk,
            events,
            censored,
        })
    }

    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_pre(&self, j: usize) -> bool {
        self.pre[j]
    }

    /// `I_j(t)`: average of `H(t) 1{Z_t = j} 1{t < R}`.
    pub fn at_risk(&self, w: Weight, j: usize) -> &Step1D {
        &self.at_risk[w.slot()][j]
    }

    /// `N_jk(t)`: average of `∫_0^t H(s) 1{s <= R} N_jk(ds)`.
    pub fn events(&self, w: Weight, j: usize, k: usize) -> &Step1D {
        &self.events[w.slot()][j * self.n_states + k]
    }

    /// `C_j(t)`: average of `H(R) 1{Z_R = j} 1{R <= t}`.
    pub fn censored(&self, w: Weight, j: usize) -> &Step1D {
        &self.censored[w.slot()][j]
    }

    /// Largest deviation in the one-dimensional link identities.
    pub fn link_deviation(&self) -> f64 {
        let s = self.n_states;
        let sc = Weight::Scaled;
        let mut worst: f64 = 0.0;
        for j in 0..s {
            for m in 0..self.grid.len() {
                let mut rhs = -self.censored(sc, j).value(m);
                if self.pre[j] {
                    if j == self.initial {
                        rhs += 1.0;
                    }
                    for k in (0..s).filter(|k| *k != j) {
                        if self.pre[k] {
                            rhs += self.events(sc, k, j).value(m) - self.events(sc, j, k).value(m);
                        } else {
                            rhs -= self.events(Weight::Unscaled, j, k).value(m);
                        }
                    }
                } else {
                    for k in (0..s).filter(|k| *k != j) {
                        rhs += self.events(sc, k, j).value(m);
                        if !self.pre[k] {
                            rhs -= self.events(sc, j, k).value(m);
                        }
                    }
                }
                worst = worst.max((self.at_risk(sc, j).value(m) - rhs).abs());
            }
        }
        worst
    }

    /// Writes every curve as `<kind>_<labels>.csv` into `dir`.
    pub fn write_csv_dir(&self, dir: &Path, states: &StateSpace) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |name: String, f: &Step1D| -> Result<()> {
            let file = std::fs::File::create(dir.join(name))?;
            f.write_csv(std::io::BufWriter::new(file))
        };
        for (w, tag) in [(Weight::Scaled, "scaled"), (Weight::Unscaled, "unscaled")] {
            for j in 0..self.n_states {
                let lj = states.label(j);
                write(format!("at_risk_{tag}_{lj}.csv"), self.at_risk(w, j))?;
                write(format!("censored_{tag}_{lj}.csv"), self.censored(w, j))?;
                for k in 0..self.n_states {
                    if k != j && self.events(w, j, k).values().iter().any(|v| *v != 0.0) {
                        write(
                            format!("events_{tag}_{lj}_{}.csv", states.label(k)),
                            self.events(w, j, k),
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-individual integer step function stored as jumps `(index, size)`.
#[derive(Debug, Clone, Default, PartialEq)]
struct IntStep(Vec<(usize, i64)>);

impl IntStep {
    fn constant(v: i64) -> Self {
        if v == 0 {
            IntStep(vec![])
        } else {
            IntStep(vec![(0, v)])
        }
    }

    fn push(&mut self, at: usize, d: i64) {
        if d != 0 {
            self.0.push((at, d));
        }
    }

    fn normalized(mut self) -> Self {
        self.0.sort_by_key(|x| x.0);
        let mut out: Vec<(usize, i64)> = Vec::with_capacity(self.0.len());
        for (a, d) in self.0 {
            match out.last_mut() {
                Some(last) if last.0 == a => last.1 += d,
                _ => out.push((a, d)),
            }
        }
        out.retain(|x| x.1 != 0);
        IntStep(out)
    }

    fn value_at(&self, m: usize) -> i64 {
        self.0.iter().take_while(|x| x.0 <= m).map(|x| x.1).sum()
    }

    fn add(&self, other: &IntStep, sign: i64) -> IntStep {
        let mut v = self.clone();
        v.0.extend(other.0.iter().map(|(a, d)| (*a, sign * d)));
        v.normalized()
    }

    fn mul(&self, other: &IntStep) -> IntStep {
        let mut points: Vec<usize> = self.0.iter().chain(&other.0).map(|x| x.0).collect();
        points.sort_unstable();
        points.dedup();
        let mut out = IntStep::default();
        let mut prev = 0;
        for p in points {
            let v = self.value_at(p) * other.value_at(p);
            out.push(p, v - prev);
            prev = v;
        }
        out
    }
}

/// Square difference array for sums of tensor products of step functions.
struct Quadrants {
    len: usize,
    buf: Vec<i64>,
}

impl Quadrants {
    fn new(len: usize) -> Self {
        Self {
            len,
            buf: vec![0; len * len],
        }
    }

    fn add_tensor(&mut self, f: &IntStep, g: &IntStep, sign: i64) {
        for &(a, da) in &f.0 {
            if a >= self.len {
                continue;
            }
            for &(b, db) in &g.0 {
                if b < self.len {
                    self.buf[a * self.len + b] += sign * da * db;
                }
            }
        }
    }

    fn integrate(mut self) -> Vec<i64> {
        let l = self.len;
        for i in 0..l {
            for j in 1..l {
                self.buf[i * l + j] += self.buf[i * l + j - 1];
            }
        }
        for i in 1..l {
            for j in 0..l {
                self.buf[i * l + j] += self.buf[(i - 1) * l + j];
            }
        }
        self.buf
    }
}

/// Per-individual step functions needed by the two-dimensional processes.
#[derive(Debug, Clone)]
struct Individual {
    /// `1{Z_t = j, t < R}` per state.
    occupancy: Vec<IntStep>,
    /// `N_jk(t ∧ R)` per pair, flattened.
    counts: Vec<IntStep>,
    /// `1{t < R}`.
    at_risk: IntStep,
    /// At-risk sojourn rectangles' 1-D pieces `(state, start, end)`.
    sojourns: Vec<(usize, usize, usize)>,
    jumps: Vec<(usize, usize, usize)>,
}

/// Two-dimensional empirical processes, materialized on demand.
#[derive(Debug, Clone)]
pub struct Empirical2D {
    grid: EventGrid,
    n_states: usize,
    initial: usize,
    individuals: Vec<Individual>,
}

/// Aggregated increment `ΔN_jk` of the two-dimensional counting process at `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SparseCell {
    pub a: usize,
    pub b: usize,
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub count: u32,
}

impl Empirical2D {
    pub fn build(data: &IndexedData) -> Result<Self> {
        let len = data.grid.len();
        let s = data.states.len();
        let individuals = data
            .obs
            .iter()
            .map(|o| {
                let sojourns = o.sojourns(len);
                let mut occupancy = vec![IntStep::default(); s];
                for &(j, a, b) in &sojourns {
                    occupancy[j].push(a, 1);
                    if b < len {
                        occupancy[j].push(b, -1);
                    }
                }
                let mut counts = vec![IntStep::default(); s * s];
                for &(a, j, k) in &o.jumps {
                    counts[j * s + k].push(a, 1);
                }
                let mut at_risk = IntStep::constant(1);
                if let Some(c) = o.censor {
                    at_risk.push(c, -1);
                }
                Individual {
                    occupancy: occupancy.into_iter().map(IntStep::normalized).collect(),
                    counts: counts.into_iter().map(IntStep::normalized).collect(),
                    at_risk: at_risk.normalized(),
                    sojourns,
                    jumps: o.jumps.clone(),
                }
            })
            .collect();
        Ok(Self {
            grid: data.grid.clone(),
            n_states: s,
            initial: data.states.initial(),
            individuals,
        })
    }

    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    fn surface(&self, f: impl Fn(&Individual, &mut Quadrants)) -> Step2D {
        let len = self.grid.len();
        let mut q = Quadrants::new(len);
        for ind in &self.individuals {
            f(ind, &mut q);
        }
        let n = self.n() as f64;
        let values = q.integrate().into_iter().map(|v| v as f64 / n).collect();
        Step2D::new(self.grid.clone(), self.grid.clone(), values).expect("square grid")
    }

    fn pair(&self, j: usize, k: usize) -> usize {
        j * self.n_states + k
    }

    /// `I_j(t1, t2)`: average of `1{Z_t1 = j1} 1{Z_t2 = j2} 1{t1 < R, t2 < R}`.
    pub fn at_risk(&self, j: (usize, usize)) -> Step2D {
        self.surface(|ind, q| q.add_tensor(&ind.occupancy[j.0], &ind.occupancy[j.1], 1))
    }

    /// `N_jk(t1, t2)`: average of `N_{j1k1}(t1 ∧ R) N_{j2k2}(t2 ∧ R)`.
    pub fn events(&self, j: (usize, usize), k: (usize, usize)) -> Step2D {
        let (p1, p2) = (self.pair(j.0, k.0), self.pair(j.1, k.1));
        self.surface(|ind, q| q.add_tensor(&ind.counts[p1], &ind.counts[p2], 1))
    }

    /// `N^1_jk(t1, t2)`: average of `N_jk(t1 ∧ R) 1{R <= max(t1, t2)}`.
    pub fn events1(&self, j: usize, k: usize) -> Step2D {
        let p = self.pair(j, k);
        let one = IntStep::constant(1);
        self.surface(|ind, q| {
            q.add_tensor(&ind.counts[p], &one, 1);
            q.add_tensor(&ind.counts[p].mul(&ind.at_risk), &ind.at_risk, -1);
        })
    }

    /// `N^2_jk(t1, t2)`: average of `N_jk(t2 ∧ R) 1{R <= max(t1, t2)}`.
    pub fn events2(&self, j: usize, k: usize) -> Step2D {
        let p = self.pair(j, k);
        let one = IntStep::constant(1);
        self.surface(|ind, q| {
            q.add_tensor(&one, &ind.counts[p], 1);
            q.add_tensor(&ind.at_risk, &ind.counts[p].mul(&ind.at_risk), -1);
        })
    }

    /// `N^3_jk(t1, t2)`: `N_jk(t1, t2)` restricted to `R <= max(t1, t2)`.
    pub fn events3(&self, j: (usize, usize), k: (usize, usize)) -> Step2D {
        let (p1, p2) = (self.pair(j.0, k.0), self.pair(j.1, k.1));
        self.surface(|ind, q| {
            q.add_tensor(&ind.counts[p1], &ind.counts[p2], 1);
            q.add_tensor(
                &ind.counts[p1].mul(&ind.at_risk),
                &ind.counts[p2].mul(&ind.at_risk),
                -1,
            );
        })
    }

    /// Average of `1{R <= max(t1, t2)}`.
    pub fn censored_by(&self) -> Step2D {
        let one = IntStep::constant(1);
        self.surface(|ind, q| {
            q.add_tensor(&one, &one, 1);
            q.add_tensor(&ind.at_risk, &ind.at_risk, -1);
        })
    }

    /// Increments of all two-dimensional counting processes, one entry per
    /// distinct `(a, b, from, to)`, sorted.
    pub fn sparse_increments(&self) -> Vec<SparseCell> {
        let mut cells: Vec<SparseCell> = Vec::new();
        for ind in &self.individuals {
            for &(a, j1, k1) in &ind.jumps {
                for &(b, j2, k2) in &ind.jumps {
                    cells.push(SparseCell {
                        a,
                        b,
                        from: (j1, j2),
                        to: (k1, k2),
                        count: 1,
                    });
                }
            }
        }
        cells.sort_unstable();
        let mut out: Vec<SparseCell> = Vec::with_capacity(cells.len());
        for c in cells {
            match out.last_mut() {
                Some(l) if (l.a, l.b, l.from, l.to) == (c.a, c.b, c.from, c.to) => l.count += 1,
                _ => out.push(c),
            }
        }
        out
    }

    /// `n I_j(x, y)` at each query point, by an offline sweep over rectangles.
    pub fn at_risk_counts(&self, j: (usize, usize), points: &[(usize, usize)]) -> Vec<i64> {
        let len = self.grid.len();
        // (x, y_lo, y_hi, delta)
        let mut edges: Vec<(usize, usize, usize, i64)> = Vec::new();
        for ind in &self.individuals {
            for &(s1, a1, b1) in &ind.sojourns {
                if s1 != j.0 {
                    continue;
                }
                for &(s2, a2, b2) in &ind.sojourns {
                    if s2 != j.1 {
                        continue;
                    }
                    edges.push((a1, a2, b2, 1));
                    if b1 < len {
                        edges.push((b1, a2, b2, -1));
                    }
                }
            }
        }
        edges.sort_unstable();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_unstable_by_key(|i| points[*i]);
        let mut fenwick = Fenwick::new(len + 1);
        let mut out = vec![0; points.len()];
        let mut e = 0;
        for i in order {
            let (x, y) = points[i];
            while e < edges.len() && edges[e].0 <= x {
                let (_, lo, hi, d) = edges[e];
                fenwick.add(lo, d);
                fenwick.add(hi, -d);
                e += 1;
            }
            out[i] = fenwick.prefix(y);
        }
        out
    }

    /// Largest deviation in the two-dimensional link identity for the pair `j`,
    /// evaluated on the whole grid in exact integer arithmetic.
    pub fn link_deviation(&self, j: (usize, usize)) -> f64 {
        let s = self.n_states;
        let len = self.grid.len();
        let z0 = self.initial;
        let (j1, j2) = j;
        let one = IntStep::constant(1);
        let mut q = Quadrants::new(len);
        for ind in &self.individuals {
            let c = |a: usize, b: usize| &ind.counts[a * s + b];
            let d_minus = |f: &IntStep, g: &IntStep, q: &mut Quadrants, sign: i64| {
                // f(t1) g(t2) 1{R <= max(t1, t2)}
                q.add_tensor(f, g, sign);
                q.add_tensor(&f.mul(&ind.at_risk), &g.mul(&ind.at_risk), -sign);
            };
            q.add_tensor(&ind.occupancy[j1], &ind.occupancy[j2], 1);
            if z0 == j1 && z0 == j2 {
                q.add_tensor(&one, &one, -1);
                d_minus(&one, &one, &mut q, 1);
            }
            let net = |jj: usize| {
                let mut m = IntStep::default();
                for k in (0..s).filter(|k| *k != jj) {
                    m = m.add(c(k, jj), 1).add(c(jj, k), -1);
                }
                m
            };
            if z0 == j2 {
                let m1 = net(j1);
                q.add_tensor(&m1, &one, -1);
                d_minus(&m1, &one, &mut q, 1);
            }
            if z0 == j1 {
                let m2 = net(j2);
                q.add_tensor(&one, &m2, -1);
                d_minus(&one, &m2, &mut q, 1);
            }
            for k1 in (0..s).filter(|k| *k != j1) {
                for k2 in (0..s).filter(|k| *k != j2) {
                    let terms = [
                        (c(k1, j1), c(k2, j2), 1),
                        (c(j1, k1), c(j2, k2), 1),
                        (c(j1, k1), c(k2, j2), -1),
                        (c(k1, j1), c(j2, k2), -1),
                    ];
                    for (f, g, sign) in terms {
                        if f.0.is_empty() || g.0.is_empty() {
                            continue;
                        }
                        q.add_tensor(f, g, -sign);
                        d_minus(f, g, &mut q, sign);
                    }
                }
            }
        }
        let worst = q.integrate().into_iter().map(i64::abs).max().unwrap_or(0);
        worst as f64 / self.n() as f64
    }
}

struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, i: usize, d: i64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += d;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, i: usize) -> i64 {
        let mut i = i + 1;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Maximum deviations of the link identities of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport {
    pub one_dim: f64,
    /// `((j1, j2), deviation)` for every pair of states.
    pub two_dim: Vec<((usize, usize), f64)>,
}

impl LinkReport {
    pub fn max_deviation(&self) -> f64 {
        self.two_dim
            .iter()
            .map(|x| x.1)
            .fold(self.one_dim, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W, states: &StateSpace) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["identity", "max_abs_deviation"])?;
        w.write_record(["one_dimensional".to_string(), self.one_dim.to_string()])?;
        for ((a, b), d) in &self.two_dim {
            w.write_record([
                format!("pair_{}_{}", states.label(*a), states.label(*b)),
                d.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks every one- and two-dimensional link identity on the grid.
pub fn check_links(e1: &Empirical1D, e2: &Empirical2D) -> Result<LinkReport> {
    e1.grid.check_same(&e2.grid, "check_links")?;
    if e1.n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let s = e1.n_states;
    let two_dim = (0..s * s)
        .map(|i| {
            let j = (i / s, i % s);
            (j, e2.link_deviation(j))
        })
        .collect();
    Ok(LinkReport {
        one_dim: e1.link_deviation(),
        two_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Jump;
    use proptest::prelude::*;

    fn states() -> StateSpace {
        StateSpace::numbered(3, &[0], &[2]).unwrap()
    }

    fn obs(id: u64, jumps: &[(f64, usize, usize)], r: f64) -> CensoredObservation {
        CensoredObservation {
            id,
            initial: 0,
            jumps: jumps
                .iter()
                .map(|&(time, from, to)| Jump { time, from, to })
                .collect(),
            censoring: r,
            absorbed: false,
        }
    }

    fn data(ds: &[CensoredObservation], scaling: Scaling) -> IndexedData {
        IndexedData::new(ds, &states(), &scaling, 10.0, &[]).unwrap()
    }

    #[test]
    fn constant_path() {
        let d = data(&[obs(0, &[], f64::INFINITY)], Scaling::One);
        let e = Empirical1D::build(&d).unwrap();
        assert!(e
            .at_risk(Weight::Scaled, 0)
            .values()
            .iter()
            .all(|v| *v == 1.0));
        for j in 0..3 {
            for k in 0..3 {
                assert!(e
                    .events(Weight::Scaled, j, k)
                    .values()
                    .iter()
                    .all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn single_scaled_exercise() {
        let d = data(
            &[obs(0, &[(1.0, 0, 1)], f64::INFINITY)],
            Scaling::Constant(0.5),
        );
        let e = Empirical1D::build(&d).unwrap();
        let ev = e.events(Weight::Scaled, 0, 1);
        assert_eq!(ev.at(0.5).unwrap(), 0.0);
        assert_eq!(ev.at(1.0).unwrap(), 0.5);
        assert_eq!(e.events(Weight::Unscaled, 0, 1).at(1.0).unwrap(), 1.0);
        assert_eq!(e.at_risk(Weight::Scaled, 1).at(1.0).unwrap(), 0.5);
        assert_eq!(e.at_risk(Weight::Scaled, 1).at(0.99).unwrap(), 0.0);
        assert_eq!(e.at_risk(Weight::Scaled, 0).at(1.0).unwrap(), 0.0);
    }

    #[test]
    fn tie_rule_at_censoring() {
        let d = data(
            &[obs(0, &[(2.0, 0, 1)], 2.0), obs(1, &[], 2.0)],
            Scaling::One,
        );
        let e = Empirical1D::build(&d).unwrap();
        assert_eq!(e.events(Weight::Unscaled, 0, 1).at(2.0).unwrap(), 0.5);
        assert_eq!(e.at_risk(Weight::Unscaled, 0).at(1.99).unwrap(), 1.0);
        assert_eq!(e.at_risk(Weight::Unscaled, 0).at(2.0).unwrap(), 0.0);
        assert_eq!(e.at_risk(Weight::Unscaled, 1).at(2.0).unwrap(), 0.0);
        assert_eq!(e.censored(Weight::Unscaled, 1).at(2.0).unwrap(), 0.5);
        assert_eq!(e.censored(Weight::Unscaled, 0).at(2.0).unwrap(), 0.5);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(IndexedData::new(&[], &states(), &Scaling::One, 10.0, &[]).is_err());
    }

    #[test]
    fn no_events_surface() {
        let ds = vec![
            obs(0, &[], 3.0),
            obs(1, &[], 6.0),
            obs(2, &[], f64::INFINITY),
        ];
        let d = data(&ds, Scaling::One);
        let e2 = Empirical2D::build(&d).unwrap();
        let i = e2.at_risk((0, 0));
        for (a, &t1) in d.grid().times().iter().enumerate() {
            for (b, &t2) in d.grid().times().iter().enumerate() {
                let frac = ds.iter().filter(|o| o.censoring > t1.max(t2)).count() as f64 / 3.0;
                assert_eq!(i.value(a, b), frac);
            }
        }
        assert!(e2.events((0, 0), (1, 1)).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_jump_surface() {
        let ds = vec![obs(0, &[(4.0, 0, 1)], f64::INFINITY), obs(1, &[], 8.0)];
        let d = data(&ds, Scaling::One);
        let e2 = Empirical2D::build(&d).unwrap();
        let f = e2.events((0, 0), (1, 1));
        for &t1 in d.grid().times() {
            for &t2 in d.grid().times() {
                let expected = if t1 >= 4.0 && t2 >= 4.0 { 0.5 } else { 0.0 };
                assert_eq!(f.at(t1, t2).unwrap(), expected);
            }
        }
    }

    fn random_dataset(seed: u64, n: usize) -> Vec<CensoredObservation> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n as u64)
            .map(|id| {
                let mut jumps = Vec::new();
                let r = if rng.random_bool(0.3) {
                    f64::INFINITY
                } else {
                    (rng.random_range(1..20) as f64) * 0.5
                };
                let t1 = (rng.random_range(1..20) as f64) * 0.5;
                if t1 <= r && rng.random_bool(0.8) {
                    let to = if rng.random_bool(0.5) { 1 } else { 2 };
                    jumps.push((t1, 0, to));
                    let t2 = t1 + (rng.random_range(1..10) as f64) * 0.5;
                    if to == 1 && t2 <= r && rng.random_bool(0.7) {
                        jumps.push((t2, 1, 2));
                    }
                }
                obs(id, &jumps, r)
            })
            .collect()
    }

    fn brute(ds: &[CensoredObservation], f: impl Fn(&CensoredObservation) -> f64) -> f64 {
        ds.iter().map(f).sum::<f64>() / ds.len() as f64
    }

    fn count(o: &CensoredObservation, j: usize, k: usize, t: f64) -> f64 {
        o.jumps
            .iter()
            .filter(|x| x.from == j && x.to == k && x.time <= t.min(o.censoring))
            .count() as f64
    }

    #[test]
    fn surfaces_match_brute_force() {
        let ds = random_dataset(5, 5);
        let d = data(&ds, Scaling::One);
        let e2 = Empirical2D::build(&d).unwrap();
        let times = d.grid().times().to_vec();
        let pairs = [(0, 1), (0, 2), (1, 2)];
        for j1 in 0..3 {
            for j2 in 0..3 {
                let s = e2.at_risk((j1, j2));
                for (a, &t1) in times.iter().enumerate() {
                    for (b, &t2) in times.iter().enumerate() {
                        let v = brute(&ds, |o| {
                            f64::from(u8::from(
                                o.state_at(t1) == j1
                                    && o.state_at(t2) == j2
                                    && t1 < o.censoring
                                    && t2 < o.censoring,
                            ))
                        });
                        assert_eq!(s.value(a, b), v);
                    }
                }
            }
        }
        for &(j1, k1) in &pairs {
            for &(j2, k2) in &pairs {
                let n = e2.events((j1, j2), (k1, k2));
                let n3 = e2.events3((j1, j2), (k1, k2));
                let n1 = e2.events1(j1, k1);
                let n2 = e2.events2(j2, k2);
                for (a, &t1) in times.iter().enumerate() {
                    for (b, &t2) in times.iter().enumerate() {
                        let d = |o: &CensoredObservation| {
                            f64::from(u8::from(o.censoring <= t1.max(t2)))
                        };
                        let v = brute(&ds, |o| count(o, j1, k1, t1) * count(o, j2, k2, t2));
                        assert_eq!(n.value(a, b), v);
                        let v3 = brute(&ds, |o| count(o, j1, k1, t1) * count(o, j2, k2, t2) * d(o));
                        assert_eq!(n3.value(a, b), v3);
                        assert_eq!(n1.value(a, b), brute(&ds, |o| count(o, j1, k1, t1) * d(o)));
                        assert_eq!(n2.value(a, b), brute(&ds, |o| count(o, j2, k2, t2) * d(o)));
                    }
                }
            }
        }
    }

    #[test]
    fn increment_matches_four_corner_oracle() {
        let ds = random_dataset(8, 3);
        let d = data(&ds, Scaling::One);
        let e2 = Empirical2D::build(&d).unwrap();
        let f = e2.events((0, 1), (1, 2));
        let t = d.grid().times();
        let direct =
            |a: usize, b: usize| brute(&ds, |o| count(o, 0, 1, t[a]) * count(o, 1, 2, t[b]));
        for a in 0..t.len() - 1 {
            for b in 0..t.len() - 1 {
                let inc = crate::timegrid::increment_2d(&f, (a, b)).unwrap();
                let oracle =
                    direct(a + 1, b + 1) - direct(a + 1, b) - direct(a, b + 1) + direct(a, b);
                assert_eq!(inc, oracle);
            }
        }
    }

    #[test]
    fn sparse_increments_and_corner_counts() {
        let ds = random_dataset(21, 40);
        let d = data(&ds, Scaling::One);
        let e2 = Empirical2D::build(&d).unwrap();
        let cells = e2.sparse_increments();
        let l = d.grid().len();
        for c in &cells {
            let n = e2.events(c.from, c.to);
            let inc = crate::timegrid::increment_2d(&n, (c.a - 1, c.b - 1)).unwrap();
            assert!((inc * 40.0 - f64::from(c.count)).abs() < 1e-9);
        }
        let total: u32 = cells.iter().map(|c| c.count).sum();
        let direct: usize = ds.iter().map(|o| o.jumps.len() * o.jumps.len()).sum();
        assert_eq!(total as usize, direct);
        let points: Vec<(usize, usize)> =
            (0..l).flat_map(|a| (0..l).map(move |b| (a, b))).collect();
        for j in [(0, 0), (0, 1), (1, 2)] {
            let dense = e2.at_risk(j);
            let counts = e2.at_risk_counts(j, &points);
            for (p, c) in points.iter().zip(counts) {
                assert!((dense.value(p.0, p.1) * 40.0 - c as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetry_of_counting_surfaces() {
        let ds = random_dataset(13, 30);
        let d = data(&ds, Scaling::One);
        let e2 = Empirical2D::build(&d).unwrap();
        let a = e2.events((0, 1), (1, 2));
        let b = e2.events((1, 0), (2, 1));
        let l = d.grid().len();
        for i in 0..l {
            for j in 0..l {
                assert_eq!(a.value(i, j), b.value(j, i));
            }
        }
    }

    #[test]
    fn scaled_equals_unscaled_when_rho_is_one() {
        let ds = random_dataset(3, 50);
        let e = Empirical1D::build(&data(&ds, Scaling::One)).unwrap();
        for j in 0..3 {
            assert_eq!(e.at_risk(Weight::Scaled, j), e.at_risk(Weight::Unscaled, j));
            assert_eq!(
                e.censored(Weight::Scaled, j),
                e.censored(Weight::Unscaled, j)
            );
            for k in 0..3 {
                assert_eq!(
                    e.events(Weight::Scaled, j, k),
                    e.events(Weight::Unscaled, j, k)
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn links_hold_on_random_data(seed in 0u64..1000, rho in 0.0f64..2.0) {
            let ds = random_dataset(seed, 12);
            let d = data(&ds, Scaling::Constant(rho));
            let e1 = Empirical1D::build(&d).unwrap();
            let e2 = Empirical2D::build(&d).unwrap();
            let report = check_links(&e1, &e2).unwrap();
            prop_assert!(report.max_deviation() <= 1e-12, "{report:?}");
        }

        #[test]
        fn mass_conservation(seed in 0u64..1000) {
            let ds = random_dataset(seed, 15);
            let e = Empirical1D::build(&data(&ds, Scaling::One)).unwrap();
            for m in 0..e.grid().len() {
                let total: f64 = (0..3)
                    .map(|j| e.at_risk(Weight::Unscaled, j).value(m) + e.censored(Weight::Unscaled, j).value(m))
                    .sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn scaled_events_bounded_by_rho(seed in 0u64..1000, rho in 0.0f64..3.0) {
            let ds = random_dataset(seed, 15);
            let e = Empirical1D::build(&data(&ds, Scaling::Constant(rho))).unwrap();
            let sup = rho.max(1.0);
            for j in 0..3 {
                for k in 0..3 {
                    let last = e.grid().len() - 1;
                    prop_assert!(e.events(Weight::Scaled, j, k).value(last)
                        <= sup * e.events(Weight::Unscaled, j, k).value(last) + 1e-12);
                }
            }
        }
    }
}
