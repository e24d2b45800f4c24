//! Oracles for sub-problems, built from a parent oracle by a change of
//! variables. They let recursion continue without retraining.

use super::{positive_scales, FunctionOracle, OracleKind, SharedOracle};
use crate::data::DataTable;
use crate::expr::{Expression, GradWrt};

/// Pointwise transform of the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMap {
    Negate,
    /// `ln f`, for positive `f`.
    Log,
}

pub struct MappedOracle {
    parent: SharedOracle,
    map: OutputMap,
}

impl MappedOracle {
    pub fn new(parent: SharedOracle, map: OutputMap) -> MappedOracle {
        MappedOracle { parent, map }
    }
}

impl FunctionOracle for MappedOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::Derived
    }

    fn n_vars(&self) -> usize {
        self.parent.n_vars()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = self.parent.value(x);
        match self.map {
            OutputMap::Negate => -v,
            OutputMap::Log if v > 0.0 => v.ln(),
            OutputMap::Log => f64::NAN,
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        if !self.parent.gradient(x, out) {
            return false;
        }
        let k = match self.map {
            OutputMap::Negate => -1.0,
            OutputMap::Log => {
                let v = self.parent.value(x);
                if !(v > 0.0) {
                    return false;
                }
                1.0 / v
            }
        };
        out.iter_mut().for_each(|g| *g *= k);
        true
    }

    fn scales(&self) -> &[f64] {
        self.parent.scales()
    }
}

/// `scale · f(x embedded at fixed coordinates) + offset`: the parent with
/// some inputs held at anchor values.
pub struct SliceOracle {
    parent: SharedOracle,
    /// Parent-space point; entries listed in `free` are overwritten.
    anchor: Vec<f64>,
    free: Vec<usize>,
    scale: f64,
    offset: f64,
    scales: Vec<f64>,
}

impl SliceOracle {
    pub fn new(parent: SharedOracle, anchor: Vec<f64>, free: Vec<usize>, scale: f64, offset: f64) -> SliceOracle {
        let scales = free.iter().map(|&j| parent.scales()[j]).collect();
        SliceOracle {
            parent,
            anchor,
            free,
            scale,
            offset,
            scales,
        }
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.anchor.clone();
        for (k, &j) in self.free.iter().enumerate() {
            p[j] = x[k];
        }
        p
    }
}

impl FunctionOracle for SliceOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::Derived
    }

    fn n_vars(&self) -> usize {
        self.free.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.scale * self.parent.value(&self.embed(x)) + self.offset
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut g = vec![0.0; self.parent.n_vars()];
        if !self.parent.gradient(&self.embed(x), &mut g) {
            return false;
        }
        for (k, &j) in self.free.iter().enumerate() {
            out[k] = self.scale * g[j];
        }
        true
    }

    fn scales(&self) -> &[f64] {
        &self.scales
    }

    fn values(&self, rows: &[f64]) -> Vec<f64> {
        let n = self.free.len();
        let flat: Vec<f64> = rows.chunks(n).flat_map(|x| self.embed(x)).collect();
        self.parent
            .values(&flat)
            .into_iter()
            .map(|v| self.scale * v + self.offset)
            .collect()
    }

    fn gradients(&self, rows: &[f64], out: &mut [f64]) -> Vec<bool> {
        let n = self.free.len();
        let pn = self.parent.n_vars();
        let flat: Vec<f64> = rows.chunks(n).flat_map(|x| self.embed(x)).collect();
        let mut g = vec![0.0; flat.len()];
        let ok = self.parent.gradients(&flat, &mut g);
        for (r, dst) in out.chunks_mut(n).enumerate() {
            for (k, &j) in self.free.iter().enumerate() {
                dst[k] = self.scale * g[r * pn + j];
            }
        }
        ok
    }
}

/// The parent seen through a new variable `u = h(x_S)` that replaces the
/// subset `S`: inputs are `(u, rest...)`. A parent point on the level set
/// `h = u` is found by one-dimensional root finding, starting from the
/// sample row whose `h` is closest to `u`.
pub struct SubstitutedOracle {
    parent: SharedOracle,
    inner: Expression,
    subset: Vec<usize>,
    rest: Vec<usize>,
    /// `(h(row), row)` sorted by `h`, rows in parent space.
    starts: Vec<(f64, Vec<f64>)>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    scales: Vec<f64>,
}

const MAX_STARTS: usize = 4096;
const BISECTIONS: usize = 200;

impl SubstitutedOracle {
    /// `parent_table` supplies start rows and the search box; `sub_table`
    /// is the substituted table, used for step scales.
    pub fn new(
        parent: SharedOracle,
        inner: Expression,
        subset: Vec<usize>,
        parent_table: &DataTable,
        sub_table: &DataTable,
    ) -> SubstitutedOracle {
        let n = parent_table.n_vars();
        let rest = (0..n).filter(|j| !subset.contains(j)).collect();
        let stride = parent_table.len().div_ceil(MAX_STARTS).max(1);
        let mut stack = Vec::new();
        let mut starts: Vec<(f64, Vec<f64>)> = (0..parent_table.len())
            .step_by(stride)
            .filter_map(|i| {
                let r = parent_table.row(i);
                let v = inner.eval_with(r, &mut stack);
                v.is_finite().then(|| (v, r.to_vec()))
            })
            .collect();
        starts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bounds = parent_table.bounds();
        // A small margin lets the level set leave the sampled box slightly.
        let lo = bounds.iter().map(|(a, b)| a - 0.05 * (b - a)).collect();
        let hi = bounds.iter().map(|(a, b)| b + 0.05 * (b - a)).collect();
        SubstitutedOracle {
            parent,
            inner,
            subset,
            rest,
            starts,
            lo,
            hi,
            scales: positive_scales(sub_table),
        }
    }

    /// A parent point with `h = u` and the remaining inputs from `x`, plus
    /// the pivot coordinate that was solved for.
    pub fn lift(&self, x: &[f64]) -> Option<(Vec<f64>, usize)> {
        let u = x[0];
        if !u.is_finite() || self.starts.is_empty() {
            return None;
        }
        let at = self.starts.partition_point(|s| s.0 < u);
        let mut stack = Vec::new();
        // Try the nearest start rows on either side.
        let candidates = [at, at.wrapping_sub(1), at + 1, at.wrapping_sub(2)];
        for &c in &candidates {
            let Some((_, row)) = self.starts.get(c) else { continue };
            let mut p = row.clone();
            for (k, &j) in self.rest.iter().enumerate() {
                p[j] = x[k + 1];
            }
            for &pivot in &self.subset {
                if let Some(t) = self.solve(&mut p, pivot, u, &mut stack) {
                    p[pivot] = t;
                    return Some((p, pivot));
                }
            }
        }
        None
    }

    fn solve(&self, p: &mut [f64], pivot: usize, u: f64, stack: &mut Vec<f64>) -> Option<f64> {
        level_root(&self.inner, p, pivot, u, (self.lo[pivot], self.hi[pivot]), stack)
    }
}

/// Solves `inner(p) = u` for coordinate `pivot` of `p` inside `[lo, hi]`,
/// starting from the current value. `p` is left unchanged.
pub(crate) fn level_root(
    inner: &Expression,
    p: &mut [f64],
    pivot: usize,
    u: f64,
    (lo, hi): (f64, f64),
    stack: &mut Vec<f64>,
) -> Option<f64> {
    let t0 = p[pivot];
    let mut phi = |t: f64, p: &mut [f64]| {
        p[pivot] = t;
        let v = inner.eval_with(p, stack) - u;
        p[pivot] = t0;
        v
    };
    let f0 = phi(t0, p);
    if f0 == 0.0 {
        return Some(t0);
    }
    if !f0.is_finite() {
        return None;
    }
    let mut step = 1e-3 * (hi - lo).max(f64::MIN_POSITIVE);
    let (mut a, mut fa) = (t0, f0);
    // Expand outward in both directions until the sign changes.
    let bracket = 'grow: loop {
        if step > 2.0 * (hi - lo) {
            break None;
        }
        for t in [t0 - step, t0 + step] {
            if t < lo || t > hi {
                continue;
            }
            let ft = phi(t, p);
            if ft.is_finite() && ft.signum() != f0.signum() {
                break 'grow Some((t, ft));
            }
        }
        step *= 2.0;
    };
    let (mut b, mut fb) = bracket?;
    for _ in 0..BISECTIONS {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = phi(m, p);
        if !fm.is_finite() {
            return None;
        }
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    // Reject brackets around a pole rather than a root.
    let t = if fa.abs() < fb.abs() { a } else { b };
    let resid = phi(t, p).abs();
    (resid <= 1e-9 * (1.0 + u.abs())).then_some(t)
}

impl FunctionOracle for SubstitutedOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::Derived
    }

    fn n_vars(&self) -> usize {
        1 + self.rest.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self.lift(x) {
            Some((p, _)) => self.parent.value(&p),
            None => f64::NAN,
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let Some((p, pivot)) = self.lift(x) else {
            return false;
        };
        let mut g = vec![0.0; self.parent.n_vars()];
        if !self.parent.gradient(&p, &mut g) {
            return false;
        }
        let Some((_, hg)) = self.inner.eval_grad(&p, GradWrt::Vars(p.len())) else {
            return false;
        };
        if hg[pivot] == 0.0 {
            return false;
        }
        // Moving u with the other subset inputs fixed moves only the pivot.
        out[0] = g[pivot] / hg[pivot];
        for (k, &j) in self.rest.iter().enumerate() {
            out[k + 1] = g[j];
        }
        out.iter().all(|v| v.is_finite())
    }

    fn scales(&self) -> &[f64] {
        &self.scales
    }

    fn values(&self, rows: &[f64]) -> Vec<f64> {
        let n = self.n_vars();
        let lifted: Vec<Option<Vec<f64>>> = rows.chunks(n).map(|x| self.lift(x).map(|l| l.0)).collect();
        let pn = self.parent.n_vars();
        let flat: Vec<f64> = lifted
            .iter()
            .flat_map(|l| l.clone().unwrap_or_else(|| vec![f64::NAN; pn]))
            .collect();
        let vals = self.parent.values(&flat);
        vals.into_iter()
            .zip(&lifted)
            .map(|(v, l)| if l.is_some() { v } else { f64::NAN })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BasisSet;
    use crate::surrogate::ExactOracle;
    use std::sync::Arc;

    #[test]
    fn substituted_oracle_follows_level_sets() {
        let basis = BasisSet::with_variables(["a", "b", "c"]).unwrap();
        let f = Expression::parse_infix("sin(a*b)+c*c", &basis).unwrap();
        let h = Expression::parse_infix("a*b", &basis).unwrap();
        let rows = (0..200).map(|i| {
            let x = vec![0.5 + (i % 10) as f64 * 0.1, 0.2 + (i / 10) as f64 * 0.05, (i % 7) as f64 * 0.3 - 1.0];
            let y = f.evaluate(&x).unwrap().unwrap();
            (x, y)
        });
        let t = DataTable::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap().0;
        let parent: SharedOracle = Arc::new(ExactOracle::for_table(f, &t));
        let (sub, _) = t.substitute_variable(&h, &[0, 1], "u").unwrap();
        let o = SubstitutedOracle::new(parent, h, vec![0, 1], &t, &sub);
        let mut g = [0.0; 2];
        for (u, c) in [(0.3, 0.5), (0.71, -0.2), (1.2, 0.9)] {
            let v = o.value(&[u, c]);
            assert!((v - (u.sin() + c * c)).abs() < 1e-12, "{u} {v}");
            assert!(o.gradient(&[u, c], &mut g));
            assert!((g[0] - u.cos()).abs() < 1e-9);
            assert!((g[1] - 2.0 * c).abs() < 1e-12);
        }
        let vals = o.values(&[0.3, 0.5, 0.71, -0.2]);
        assert!((vals[1] - (0.71f64.sin() + 0.04)).abs() < 1e-12);
    }

    #[test]
    fn slices_and_maps() {
        let basis = BasisSet::with_variables(["a", "b"]).unwrap();
        let f = Expression::parse_infix("exp(a)*b", &basis).unwrap();
        let parent: SharedOracle = Arc::new(ExactOracle::new(f, 2, vec![1.0, 1.0]));
        let s = SliceOracle::new(parent.clone(), vec![0.0, 2.0], vec![0], 0.5, 1.0);
        assert!((s.value(&[1.0]) - (1f64.exp() + 1.0)).abs() < 1e-12);
        let mut g = [0.0];
        assert!(s.gradient(&[1.0], &mut g));
        assert!((g[0] - 1f64.exp()).abs() < 1e-12);
        let l = MappedOracle::new(parent, OutputMap::Log);
        assert!((l.value(&[0.5, 3.0]) - (0.5 + 3f64.ln())).abs() < 1e-12);
        let mut g = [0.0; 2];
        assert!(l.gradient(&[0.5, 3.0], &mut g));
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(l.value(&[0.5, -1.0]).is_nan());
    }
}
