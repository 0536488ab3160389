//! Local Lipschitz moduli on grids: discrete ball suprema with an a-priori
//! inflation so that node values bound the continuous supremum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::torus::ScalarField;

/// Which derivative a modulus controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModulusOrder {
    First,
    Second,
}

/// A nonnegative grid function `h` with `|g(x) - g(y)| <= h(y)|x - y|` for
/// `|x - y| < r`, where `g` is the function it was built from.
#[derive(Clone, Debug)]
pub struct ModulusField {
    pub order: ModulusOrder,
    pub r: f64,
    /// Radius of the ball supremum (before grid widening).
    pub radius: f64,
    pub field: ScalarField,
}

impl ModulusField {
    /// Value at an arbitrary point: the nearest node's value, which already
    /// covers every point within half a cell diagonal.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.field.values[self.field.grid.nearest_node(x)]
    }

    pub fn l1_norm(&self) -> f64 {
        self.field.lp_norm(1.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.field.lp_norm(2.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.field.sup_norm()
    }
}

/// Builds a modulus from node magnitudes of the controlling derivative `deriv`
/// and of the next derivative `next`, for a ball of radius `radius`.
///
/// Nodes are searched out to `radius + √d h`, which contains the nearest node of
/// every point of `B_{radius + √d h / 2}(y)`; the value is then raised by
/// `√d h · max(next)` over the same ball.
pub fn build_modulus(
    order: ModulusOrder,
    r: f64,
    radius: f64,
    deriv: &ScalarField,
    next: &ScalarField,
) -> ModulusField {
    let grid = &deriv.grid;
    let reach = (grid.dim() as f64).sqrt() * grid.spacing();
    let a = ball_max(deriv, radius + reach);
    let b = ball_max(next, radius + reach);
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x + reach * y).collect();
    ModulusField { order, r, radius, field: ScalarField { grid: grid.clone(), values } }
}

/// Max of `f` over all nodes within torus distance `radius` of each node.
pub fn ball_max(f: &ScalarField, radius: f64) -> ScalarField {
    let grid = &f.grid;
    let n = grid.n();
    let d = grid.dim();
    let rho = radius / grid.spacing();
    let rint = rho.floor() as i64;

    // Offsets along the leading d-1 axes, grouped by the half-width they allow
    // along the last axis.
    let mut by_width: std::collections::BTreeMap<usize, Vec<[i64; 2]>> = Default::default();
    let lead_range = |k: usize| if k < d - 1 { -rint..=rint } else { 0..=0 };
    for o0 in lead_range(0) {
        for o1 in lead_range(1) {
            let rem = rho * rho - (o0 * o0 + o1 * o1) as f64;
            if rem < 0.0 {
                continue;
            }
            let w = (rem.sqrt() + 1e-9).floor() as usize;
            by_width.entry(w).or_default().push([o0, o1]);
        }
    }

    let rows = grid.len() / n;
    let mut out = vec![f64::NEG_INFINITY; grid.len()];
    for (&w, offsets) in &by_width {
        let slid = sliding_max_rows(&f.values, n, w);
        out.par_chunks_mut(n).enumerate().for_each(|(row, dst)| {
            let lead = row_lead_index(row, n, d);
            for o in offsets {
                let src_row = shift_row(lead, o, n, d);
                let src = &slid[src_row * n..(src_row + 1) * n];
                for (x, &y) in dst.iter_mut().zip(src) {
                    if y > *x {
                        *x = y;
                    }
                }
            }
        });
    }
    debug_assert_eq!(rows * n, out.len());
    ScalarField { grid: grid.clone(), values: out }
}

fn row_lead_index(row: usize, n: usize, d: usize) -> [usize; 2] {
    match d {
        1 => [0, 0],
        2 => [row, 0],
        _ => [row / n, row % n],
    }
}

fn shift_row(lead: [usize; 2], o: &[i64; 2], n: usize, d: usize) -> usize {
    let ni = n as i64;
    let a = (lead[0] as i64 + o[0]).rem_euclid(ni) as usize;
    let b = (lead[1] as i64 + o[1]).rem_euclid(ni) as usize;
    match d {
        1 => 0,
        2 => a,
        _ => a * n + b,
    }
}

/// Periodic running max with half-width `w` along contiguous rows of length `n`.
fn sliding_max_rows(values: &[f64], n: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(n).zip(values.par_chunks(n)).for_each(|(dst, row)| {
        if 2 * w + 1 >= n {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            dst.fill(m);
            return;
        }
        // van Herk / Gil-Werman over the periodically extended row.
        let win = 2 * w + 1;
        let len = n + 2 * w;
        let ext: Vec<f64> = (0..len).map(|j| row[(j + n - w) % n]).collect();
        let mut pre = ext.clone();
        let mut suf = ext.clone();
        for j in 1..len {
            if j % win != 0 {
                pre[j] = pre[j].max(pre[j - 1]);
            }
        }
        for j in (0..len - 1).rev() {
            if (j + 1) % win != 0 {
                suf[j] = suf[j].max(suf[j + 1]);
            }
        }
        for (j, v) in dst.iter_mut().enumerate() {
            *v = suf[j].max(pre[j + win - 1]);
        }
    });
    out
}

/// Supremum of a tabulated nonnegative radial magnitude `q(s)` over radius
/// intervals, i.e. the exact ball supremum of a radial function's magnitude.
#[derive(Clone, Debug)]
pub struct RadialSup {
    support: f64,
    step: f64,
    /// Cell upper bounds: level `l` holds maxima over `2^l` consecutive cells.
    table: Vec<Vec<f64>>,
}

impl RadialSup {
    /// Tabulates `q` on `[0, support]` with `cells` cells. Each cell value is the
    /// larger endpoint value plus the endpoint difference, plus a relative margin,
    /// which bounds the in-cell maximum of a smooth profile at this resolution.
    pub fn new(q: impl Fn(f64) -> f64, support: f64, cells: usize) -> Self {
        let step = support / cells as f64;
        let samples: Vec<f64> = (0..=cells).map(|j| q(j as f64 * step).abs()).collect();
        let peak = samples.iter().copied().fold(0.0, f64::max);
        let base: Vec<f64> = samples.windows(2).map(|p| p[0].max(p[1]) + (p[1] - p[0]).abs() + 1e-9 * peak).collect();
        let mut table = vec![base];
        while table.last().unwrap().len() > 1 {
            let prev = table.last().unwrap();
            let half = 1usize << (table.len() - 1);
            let next: Vec<f64> = (0..prev.len().saturating_sub(half)).map(|i| prev[i].max(prev[i + half])).collect();
            if next.is_empty() {
                break;
            }
            table.push(next);
        }
        Self { support, step, table }
    }

    /// Upper bound of `q` on `[a, b] ∩ [0, support]`; zero if the intersection is empty.
    pub fn sup(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        let b = b.min(self.support);
        if a > b {
            return 0.0;
        }
        let cells = self.table[0].len();
        let i0 = ((a / self.step).floor() as usize).min(cells - 1);
        let i1 = ((b / self.step).floor() as usize).min(cells - 1);
        let span = i1 - i0 + 1;
        let lvl = (usize::BITS - 1 - span.leading_zeros()) as usize;
        let w = 1usize << lvl;
        self.table[lvl][i0].max(self.table[lvl][i1 + 1 - w])
    }

    /// Supremum of the radial magnitude over the ball of radius `radius` about a point at distance `dist` from the centre.
    pub fn ball_sup(&self, dist: f64, radius: f64) -> f64 {
        self.sup(dist - radius, dist + radius)
    }
}
