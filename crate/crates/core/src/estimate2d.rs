//! Two-dimensional Nelson–Aalen hazards and the two-dimensional Aalen–Johansen
//! estimator.
//!
//! The occupation surfaces solve a Volterra difference system on the product
//! grid. It is filled gnomon by gnomon: after step `g` the values on
//! `{min(a, b) = g}` are known, stored as one row `p(a, g), a >= g` and one
//! column `p(g, b), b > g` per surface. Only the surfaces that the requested
//! pairs depend on are carried, so memory stays linear in the grid size.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::empirical::Empirical2D;
use crate::error::{Error, Result};
use crate::estimate1d::OccupationCurve;
use crate::model::StateSpace;
use crate::timegrid::{EventGrid, Step2D};

/// Gnomons with fewer cells than this are updated on the calling thread.
const PAR_MIN_CELLS: usize = 1 << 14;

/// Hazard increment `ΔΛ_xy` on the cell with upper-right corner `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardEntry {
    pub a: usize,
    pub b: usize,
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub dlambda: f64,
}

/// Sparse two-dimensional cumulative hazards.
#[derive(Debug, Clone)]
pub struct HazardBundle2D {
    grid: EventGrid,
    n_states: usize,
    eps: f64,
    entries: Vec<HazardEntry>,
    warnings: usize,
}

/// `ΔΛ = ΔN / (I(t_{a-1}, t_{b-1}) ∨ eps)` for every observed pair of jumps.
pub fn nelson_aalen_2d(e: &Empirical2D, n_states: usize, eps: f64) -> Result<HazardBundle2D> {
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    let cells = e.sparse_increments();
    let n = e.n() as f64;
    let sources: BTreeSet<(usize, usize)> = cells.iter().map(|c| c.from).collect();
    let sources: Vec<(usize, usize)> = sources.into_iter().collect();
    let risk: Vec<Vec<i64>> = sources
        .par_iter()
        .map(|x| {
            let points: Vec<(usize, usize)> = cells
                .iter()
                .filter(|c| c.from == *x)
                .map(|c| (c.a - 1, c.b - 1))
                .collect();
            e.at_risk_counts(*x, &points)
        })
        .collect();
    let mut cursor = vec![0usize; sources.len()];
    let mut warnings = 0;
    let mut entries = Vec::with_capacity(cells.len());
    for c in &cells {
        let s = sources.binary_search(&c.from).expect("source listed");
        let at_risk = risk[s][cursor[s]] as f64 / n;
        cursor[s] += 1;
        let denom = at_risk.max(eps);
        let dlambda = if denom > 0.0 {
            f64::from(c.count) / n / denom
        } else {
            warnings += 1;
            0.0
        };
        entries.push(HazardEntry {
            a: c.a,
            b: c.b,
            from: c.from,
            to: c.to,
            dlambda,
        });
    }
    if warnings > 0 {
        log::warn!("{warnings} two-dimensional events met an empty risk set and were dropped");
    }
    Ok(HazardBundle2D {
        grid: e.grid().clone(),
        n_states,
        eps,
        entries,
        warnings,
    })
}

impl HazardBundle2D {
    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn entries(&self) -> &[HazardEntry] {
        &self.entries
    }

    /// One-dimensional transitions appearing in either coordinate.
    pub fn transitions(&self) -> BTreeSet<(usize, usize)> {
        self.entries
            .iter()
            .flat_map(|e| [(e.from.0, e.to.0), (e.from.1, e.to.1)])
            .collect()
    }

    /// Dense cumulative surface `Λ_xy`.
    pub fn cumulative(&self, from: (usize, usize), to: (usize, usize)) -> Step2D {
        let l = self.grid.len();
        let mut v = vec![0.0; l * l];
        for e in self.entries.iter().filter(|e| e.from == from && e.to == to) {
            v[e.a * l + e.b] += e.dlambda;
        }
        for a in 0..l {
            for b in 1..l {
                v[a * l + b] += v[a * l + b - 1];
            }
        }
        for a in 1..l {
            for b in 0..l {
                v[a * l + b] += v[(a - 1) * l + b];
            }
        }
        Step2D::new(self.grid.clone(), self.grid.clone(), v).expect("square grid")
    }
}

/// Pairs whose surfaces are needed to compute those in `targets`.
pub fn dependency_closure(
    targets: &[(usize, usize)],
    transitions: &BTreeSet<(usize, usize)>,
) -> Vec<(usize, usize)> {
    let into = |j: usize| -> Vec<usize> {
        transitions
            .iter()
            .filter(|t| t.1 == j)
            .map(|t| t.0)
            .collect()
    };
    let mut seen: BTreeSet<(usize, usize)> = targets.iter().copied().collect();
    let mut stack: Vec<(usize, usize)> = targets.to_vec();
    while let Some((j1, j2)) = stack.pop() {
        let (k1s, k2s) = (into(j1), into(j2));
        let mut add = |p: (usize, usize)| {
            if seen.insert(p) {
                stack.push(p);
            }
        };
        for &k1 in &k1s {
            add((k1, j2));
            for &k2 in &k2s {
                add((k1, k2));
            }
        }
        for &k2 in &k2s {
            add((j1, k2));
        }
    }
    seen.into_iter().collect()
}

/// Coefficient of an accumulator term as a function of `(t_a, t_b)`.
pub type CellWeight = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Extra surface `Σ_cells w(t_a, t_b) p_x(a-1, b-1) ΔΛ_xy` with zero boundary,
/// summed over the listed `(x, y, w)` terms.
#[derive(Clone, Default)]
pub struct Accumulator {
    pub terms: Vec<((usize, usize), (usize, usize), CellWeight)>,
}

impl std::fmt::Debug for Accumulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.terms.iter().map(|t| (t.0, t.1)))
            .finish()
    }
}

impl Accumulator {
    pub fn sources(&self) -> Vec<(usize, usize)> {
        self.terms.iter().map(|t| t.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    Sequential,
    #[default]
    Parallel,
}

/// Values on the current gnomon. Surfaces are the closure pairs followed by
/// the accumulators.
pub struct GnomonView<'a> {
    pub g: usize,
    pairs: &'a [(usize, usize)],
    rows: &'a [Vec<f64>],
    cols: &'a [Vec<f64>],
}

impl GnomonView<'_> {
    fn surface(&self, pair: (usize, usize)) -> usize {
        self.pairs.binary_search(&pair).expect("pair in closure")
    }

    /// `p(a, g)` for `a >= g`.
    pub fn pair_row(&self, pair: (usize, usize)) -> &[f64] {
        &self.rows[self.surface(pair)]
    }

    /// `p(g, b)` for `b > g`.
    pub fn pair_col(&self, pair: (usize, usize)) -> &[f64] {
        &self.cols[self.surface(pair)]
    }

    pub fn acc_row(&self, i: usize) -> &[f64] {
        &self.rows[self.pairs.len() + i]
    }

    pub fn acc_col(&self, i: usize) -> &[f64] {
        &self.cols[self.pairs.len() + i]
    }
}

struct Contribution {
    source: usize,
    target: usize,
    factor: f64,
}

/// Runs the gnomon recursion, calling `visit` once per gnomon with the
/// freshly computed values.
pub fn sweep(
    bundle: &HazardBundle2D,
    boundary: &OccupationCurve,
    z0: usize,
    targets: &[(usize, usize)],
    accumulators: &[Accumulator],
    mode: SweepMode,
    mut visit: impl FnMut(&GnomonView<'_>),
) -> Result<Vec<(usize, usize)>> {
    bundle
        .grid
        .check_same(boundary.grid(), "two-dimensional boundary")?;
    let s = bundle.n_states;
    if boundary.n_states() != s {
        return Err(Error::invalid("boundary has a different number of states"));
    }
    let mut wanted: Vec<(usize, usize)> = targets.to_vec();
    wanted.extend(accumulators.iter().flat_map(Accumulator::sources));
    for p in &wanted {
        if p.0 >= s || p.1 >= s {
            return Err(Error::invalid(format!("pair {p:?} out of range")));
        }
    }
    let pairs = dependency_closure(&wanted, &bundle.transitions());
    let np = pairs.len();
    let ns = np + accumulators.len();
    let l = bundle.grid.len();
    let times = bundle.grid.times();
    let index = |p: (usize, usize)| pairs.binary_search(&p).ok();

    // contributions per entry, bucketed by gnomon
    let mut buckets: Vec<Vec<(usize, bool, f64, Vec<Contribution>)>> = Vec::new();
    buckets.resize_with(l, Vec::new);
    for e in &bundle.entries {
        let Some(src) = index(e.from) else { continue };
        let (x, y) = (e.from, e.to);
        let mut contribs = Vec::new();
        for (t, f) in [(y, 1.0), ((y.0, x.1), -1.0), ((x.0, y.1), -1.0), (x, 1.0)] {
            if let Some(target) = index(t) {
                contribs.push(Contribution {
                    source: src,
                    target,
                    factor: f,
                });
            }
        }
        for (i, acc) in accumulators.iter().enumerate() {
            for (ax, ay, w) in &acc.terms {
                if *ax == x && *ay == y {
                    let c = w(times[e.a], times[e.b]);
                    if c != 0.0 {
                        contribs.push(Contribution {
                            source: src,
                            target: np + i,
                            factor: c,
                        });
                    }
                }
            }
        }
        if contribs.is_empty() || e.dlambda == 0.0 {
            continue;
        }
        let g = e.a.min(e.b);
        let on_row = e.b == g;
        let pos = if on_row { e.a } else { e.b };
        buckets[g].push((pos, on_row, e.dlambda, contribs));
    }

    let mut rows = vec![vec![0.0; l]; ns];
    let mut cols = vec![vec![0.0; l]; ns];
    for (i, &(j1, j2)) in pairs.iter().enumerate() {
        let p1 = boundary.state(j1).values();
        let p2 = boundary.state(j2).values();
        if j2 == z0 {
            rows[i].copy_from_slice(p1);
        }
        if j1 == z0 {
            cols[i].copy_from_slice(p2);
        }
    }
    visit(&GnomonView {
        g: 0,
        pairs: &pairs,
        rows: &rows,
        cols: &cols,
    });

    let mut drow = vec![vec![0.0; l]; ns];
    let mut dcol = vec![vec![0.0; l]; ns];
    for g in 1..l {
        for (pos, on_row, dl, contribs) in &buckets[g] {
            let (pos, on_row, dl) = (*pos, *on_row, *dl);
            for c in contribs {
                let src = if on_row {
                    rows[c.source][pos - 1]
                } else {
                    cols[c.source][pos - 1]
                };
                let v = c.factor * src * dl;
                if on_row {
                    drow[c.target][pos] += v;
                } else {
                    dcol[c.target][pos] += v;
                }
            }
        }
        let update =
            |row: &mut Vec<f64>, col: &mut Vec<f64>, dr: &mut Vec<f64>, dc: &mut Vec<f64>| {
                let cr = col[g] - row[g - 1];
                let rc = row[g] - row[g - 1];
                let corner = dr[g];
                let do_row = |row: &mut Vec<f64>, dr: &mut Vec<f64>| {
                    let mut acc = cr;
                    for a in g..l {
                        acc += dr[a];
                        dr[a] = 0.0;
                        row[a] += acc;
                    }
                };
                let do_col = |col: &mut Vec<f64>, dc: &mut Vec<f64>| {
                    let mut acc = rc + corner;
                    col[g] = 0.0;
                    for b in g + 1..l {
                        acc += dc[b];
                        dc[b] = 0.0;
                        col[b] += acc;
                    }
                };
                match mode {
                    SweepMode::Sequential => {
                        do_row(row, dr);
                        do_col(col, dc);
                    }
                    SweepMode::Parallel if l - g >= PAR_MIN_CELLS => {
                        rayon::join(|| do_row(row, dr), || do_col(col, dc));
                    }
                    SweepMode::Parallel => {
                        do_row(row, dr);
                        do_col(col, dc);
                    }
                }
            };
        let small = (l - g) * ns < PAR_MIN_CELLS;
        match mode {
            SweepMode::Sequential => {
                for i in 0..ns {
                    update(&mut rows[i], &mut cols[i], &mut drow[i], &mut dcol[i]);
                }
            }
            SweepMode::Parallel if small => {
                for i in 0..ns {
                    update(&mut rows[i], &mut cols[i], &mut drow[i], &mut dcol[i]);
                }
            }
            SweepMode::Parallel => {
                rows.par_iter_mut()
                    .zip(cols.par_iter_mut())
                    .zip(drow.par_iter_mut().zip(dcol.par_iter_mut()))
                    .for_each(|((r, c), (dr, dc))| update(r, c, dr, dc));
            }
        }
        visit(&GnomonView {
            g,
            pairs: &pairs,
            rows: &rows,
            cols: &cols,
        });
    }
    Ok(pairs)
}

/// Dense occupation surfaces for the requested pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface2D {
    surfaces: Vec<((usize, usize), Step2D)>,
}

impl Surface2D {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.surfaces.iter().map(|s| s.0).collect()
    }

    pub fn get(&self, pair: (usize, usize)) -> Result<&Step2D> {
        self.surfaces
            .iter()
            .find(|s| s.0 == pair)
            .map(|s| &s.1)
            .ok_or_else(|| Error::MissingSurface(format!("({}, {})", pair.0, pair.1)))
    }

    /// Long-format CSV: `j1,j2,t1,t2,p`.
    pub fn write_csv<W: Write>(&self, out: W, states: &StateSpace) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j1", "j2", "t1", "t2", "p"])?;
        for ((j1, j2), s) in &self.surfaces {
            let (t1, t2) = (s.grid1().times(), s.grid2().times());
            for (a, x) in t1.iter().enumerate() {
                for (b, y) in t2.iter().enumerate() {
                    w.write_record([
                        states.label(*j1).to_string(),
                        states.label(*j2).to_string(),
                        x.to_string(),
                        y.to_string(),
                        s.value(a, b).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Two-dimensional Aalen–Johansen surfaces for `pairs`, with the unscaled
/// one-dimensional estimator as boundary.
pub fn aalen_johansen_2d(
    bundle: &HazardBundle2D,
    boundary: &OccupationCurve,
    z0: usize,
    pairs: &[(usize, usize)],
    mode: SweepMode,
) -> Result<Surface2D> {
    let l = bundle.grid.len();
    let mut dense: Vec<Vec<f64>> = vec![vec![0.0; l * l]; pairs.len()];
    sweep(bundle, boundary, z0, pairs, &[], mode, |v| {
        let g = v.g;
        for (i, p) in pairs.iter().enumerate() {
            let (row, col) = (v.pair_row(*p), v.pair_col(*p));
            for a in g..l {
                dense[i][a * l + g] = row[a];
            }
            for b in g + 1..l {
                dense[i][g * l + b] = col[b];
            }
        }
    })?;
    Ok(Surface2D {
        surfaces: pairs
            .iter()
            .zip(dense)
            .map(|(p, v)| {
                let s =
                    Step2D::new(bundle.grid.clone(), bundle.grid.clone(), v).expect("square grid");
                (*p, s)
            })
            .collect(),
    })
}
