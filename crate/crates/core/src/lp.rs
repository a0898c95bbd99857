//! Dense two-phase simplex for the small linear programs that arise in cone
//! and face computations (a few dozen rows and columns).
//!
//! Variables are free unless marked nonnegative. Pivoting follows Bland's
//! rule, so the method terminates on degenerate problems, which are the norm
//! here: almost every cone LP has a zero right-hand side.

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
const MAX_PIVOTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
    /// Pivot budget exhausted; only reachable through numerical trouble.
    Stalled,
}

impl LpResult {
    pub fn optimal(&self) -> Option<(&[f64], f64)> {
        match self {
            LpResult::Optimal { x, value } => Some((x, *value)),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, LpResult::Optimal { .. } | LpResult::Unbounded)
    }
}

/// A linear program `min/max cᵀx` over linear rows.
#[derive(Debug, Clone)]
pub struct Lp {
    n: usize,
    nonneg: Vec<bool>,
    rows: Vec<(Vec<f64>, Cmp, f64)>,
}

impl Lp {
    /// `n` free variables and no constraints.
    pub fn new(n: usize) -> Self {
        Lp {
            n,
            nonneg: vec![false; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds a fresh free variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.n += 1;
        self.nonneg.push(false);
        for (a, _, _) in &mut self.rows {
            a.push(0.0);
        }
        self.n - 1
    }

    pub fn set_nonneg(&mut self, j: usize) {
        self.nonneg[j] = true;
    }

    pub fn add_row(&mut self, coeffs: &[f64], cmp: Cmp, rhs: f64) {
        assert_eq!(coeffs.len(), self.n, "row length must match variable count");
        self.rows.push((coeffs.to_vec(), cmp, rhs));
    }

    /// Adds `lo <= x_j <= hi` (either bound may be infinite).
    pub fn bound(&mut self, j: usize, lo: f64, hi: f64) {
        let mut e = vec![0.0; self.n];
        e[j] = 1.0;
        if lo.is_finite() {
            if lo == 0.0 {
                self.nonneg[j] = true;
            } else {
                self.add_row(&e, Cmp::Ge, lo);
            }
        }
        if hi.is_finite() {
            self.add_row(&e, Cmp::Le, hi);
        }
    }

    pub fn minimize(&self, c: &[f64]) -> LpResult {
        assert_eq!(c.len(), self.n);
        self.solve(c)
    }

    pub fn maximize(&self, c: &[f64]) -> LpResult {
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        match self.solve(&neg) {
            LpResult::Optimal { x, value } => LpResult::Optimal { x, value: -value },
            other => other,
        }
    }

    /// Feasibility check; returns a feasible point if one exists.
    pub fn feasible_point(&self) -> Option<Vec<f64>> {
        match self.solve(&vec![0.0; self.n]) {
            LpResult::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }

    fn solve(&self, c: &[f64]) -> LpResult {
        // Column layout: structural columns (free variables split into
        // positive and negative parts), slacks, artificials.
        let mut col_of: Vec<(usize, Option<usize>)> = Vec::with_capacity(self.n);
        let mut ncols = 0;
        for j in 0..self.n {
            if self.nonneg[j] {
                col_of.push((ncols, None));
                ncols += 1;
            } else {
                col_of.push((ncols, Some(ncols + 1)));
                ncols += 2;
            }
        }
        let n_struct = ncols;
        let m = self.rows.len();
        let n_slack = self.rows.iter().filter(|r| r.1 != Cmp::Eq).count();
        let art0 = n_struct + n_slack;
        let total = art0 + m;
        let width = total + 1;

        let mut t = vec![0.0; m * width];
        let mut basis = vec![0usize; m];
        let mut slack = n_struct;
        for (i, (a, cmp, rhs)) in self.rows.iter().enumerate() {
            let row = &mut t[i * width..(i + 1) * width];
            for j in 0..self.n {
                let (p, q) = col_of[j];
                row[p] = a[j];
                if let Some(q) = q {
                    row[q] = -a[j];
                }
            }
            match cmp {
                Cmp::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
                Cmp::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                Cmp::Eq => {}
            }
            row[total] = *rhs;
            if *rhs < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            row[art0 + i] = 1.0;
            basis[i] = art0 + i;
        }

        let mut tab = Tableau {
            t,
            width,
            m,
            basis,
            allowed: total,
        };

        // Phase 1: minimize the sum of artificials.
        let mut cost1 = vec![0.0; total];
        for v in cost1.iter_mut().skip(art0) {
            *v = 1.0;
        }
        match tab.run(&cost1) {
            Phase::Optimal => {}
            Phase::Unbounded => return LpResult::Stalled,
            Phase::Stalled => return LpResult::Stalled,
        }
        let infeas: f64 = (0..tab.m)
            .filter(|&i| tab.basis[i] >= art0)
            .map(|i| tab.rhs(i))
            .sum();
        let scale = self
            .rows
            .iter()
            .map(|r| r.2.abs())
            .fold(1.0, f64::max);
        if infeas > FEAS_TOL * scale {
            return LpResult::Infeasible;
        }

        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.m {
            if tab.basis[i] >= art0 {
                let pivot_col = (0..art0).find(|&j| tab.at(i, j).abs() > PIVOT_TOL);
                match pivot_col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => tab.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
        tab.allowed = art0;

        // Phase 2.
        let mut cost2 = vec![0.0; total];
        for j in 0..self.n {
            let (p, q) = col_of[j];
            cost2[p] = c[j];
            if let Some(q) = q {
                cost2[q] = -c[j];
            }
        }
        match tab.run(&cost2) {
            Phase::Optimal => {}
            Phase::Unbounded => return LpResult::Unbounded,
            Phase::Stalled => return LpResult::Stalled,
        }

        let mut colval = vec![0.0; total];
        for i in 0..tab.m {
            colval[tab.basis[i]] = tab.rhs(i);
        }
        let x: Vec<f64> = (0..self.n)
            .map(|j| {
                let (p, q) = col_of[j];
                colval[p] - q.map(|q| colval[q]).unwrap_or(0.0)
            })
            .collect();
        let value = x.iter().zip(c).map(|(a, b)| a * b).sum();
        LpResult::Optimal { x, value }
    }
}

/// Decides whether the cone `{z : rows of lp}` (homogeneous constraints)
/// contains a point whose `visible` coordinates are not all zero.
///
/// Returns such a point, scaled so that the visible part has max-norm 1, or
/// `None` when the visible projection of the cone is `{0}`. The decision is
/// exact up to LP tolerances: each visible coordinate is maximized and
/// minimized over the cone intersected with the unit box.
pub fn nonzero_in_cone(lp: &Lp, visible: &[usize], tol: f64) -> Option<Vec<f64>> {
    let mut boxed = lp.clone();
    for &k in visible {
        let mut e = vec![0.0; boxed.n];
        e[k] = 1.0;
        boxed.add_row(&e, Cmp::Le, 1.0);
        boxed.add_row(&e, Cmp::Ge, -1.0);
    }
    for &k in visible {
        for sign in [1.0, -1.0] {
            let mut c = vec![0.0; boxed.n];
            c[k] = sign;
            if let LpResult::Optimal { x, value } = boxed.maximize(&c) {
                if value > tol {
                    let scale = visible.iter().map(|&j| x[j].abs()).fold(0.0, f64::max);
                    return Some(x.iter().map(|v| v / scale).collect());
                }
            }
        }
    }
    None
}

enum Phase {
    Optimal,
    Unbounded,
    Stalled,
}

struct Tableau {
    t: Vec<f64>,
    width: usize,
    m: usize,
    basis: Vec<usize>,
    /// Columns with index >= allowed may not enter the basis.
    allowed: usize,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for (v, pv) in self.t[i * w..(i + 1) * w].iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                self.t[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.t.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.m -= 1;
    }

    fn run(&mut self, cost: &[f64]) -> Phase {
        let ncols = self.width - 1;
        for _ in 0..MAX_PIVOTS {
            // Reduced costs r_j = c_j - c_B^T column_j.
            let mut entering = None;
            for j in 0..self.allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j];
                for i in 0..self.m {
                    r -= cost[self.basis[i]] * self.at(i, j);
                }
                if r < -PIVOT_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Phase::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, j);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[k])
                            {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Phase::Unbounded;
            };
            debug_assert!(j < ncols);
            self.pivot(r, j);
        }
        Phase::Stalled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximization() {
        // max 3x + 2y, x + y <= 4, x + 3y <= 6, x,y >= 0 -> (4, 0), value 12
        let mut lp = Lp::new(2);
        lp.set_nonneg(0);
        lp.set_nonneg(1);
        lp.add_row(&[1.0, 1.0], Cmp::Le, 4.0);
        lp.add_row(&[1.0, 3.0], Cmp::Le, 6.0);
        let (x, v) = match lp.maximize(&[3.0, 2.0]) {
            LpResult::Optimal { x, value } => (x, value),
            other => panic!("{other:?}"),
        };
        assert!((v - 12.0).abs() < 1e-12);
        assert!((x[0] - 4.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + y s.t. x - y = -3, x >= -5 (free y) -> x = -5, y = -2
        let mut lp = Lp::new(2);
        lp.add_row(&[1.0, -1.0], Cmp::Eq, -3.0);
        lp.add_row(&[1.0, 0.0], Cmp::Ge, -5.0);
        let (x, v) = match lp.minimize(&[1.0, 1.0]) {
            LpResult::Optimal { x, value } => (x, value),
            other => panic!("{other:?}"),
        };
        assert!((x[0] + 5.0).abs() < 1e-12 && (x[1] + 2.0).abs() < 1e-12);
        assert!((v + 7.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = Lp::new(1);
        lp.add_row(&[1.0], Cmp::Le, -1.0);
        lp.add_row(&[1.0], Cmp::Ge, 1.0);
        assert_eq!(lp.minimize(&[1.0]), LpResult::Infeasible);

        let mut lp = Lp::new(1);
        lp.add_row(&[1.0], Cmp::Le, 1.0);
        assert_eq!(lp.minimize(&[1.0]), LpResult::Unbounded);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = Lp::new(2);
        lp.add_row(&[1.0, 1.0], Cmp::Eq, 1.0);
        lp.add_row(&[2.0, 2.0], Cmp::Eq, 2.0);
        lp.bound(0, 0.0, 1.0);
        lp.bound(1, 0.0, 1.0);
        let (_, v) = lp.maximize(&[1.0, 0.0]).optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cone_nontriviality() {
        // {(u, v) : u - v = 0, u >= 0}: nontrivial
        let mut lp = Lp::new(2);
        lp.add_row(&[1.0, -1.0], Cmp::Eq, 0.0);
        lp.add_row(&[1.0, 0.0], Cmp::Ge, 0.0);
        let z = nonzero_in_cone(&lp, &[0, 1], 1e-9).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        // {(u, v) : u + v = 0, u >= 0, v >= 0}: only zero
        let mut lp = Lp::new(2);
        lp.add_row(&[1.0, 1.0], Cmp::Eq, 0.0);
        lp.set_nonneg(0);
        lp.set_nonneg(1);
        assert!(nonzero_in_cone(&lp, &[0, 1], 1e-9).is_none());
    }

    #[test]
    fn degenerate_cone_program_terminates() {
        // maximize v1 over {v : v1 <= 0, v1 + v2 <= 0, v1 - v2 <= 0, |v| <= 1}
        let mut lp = Lp::new(2);
        lp.add_row(&[1.0, 0.0], Cmp::Le, 0.0);
        lp.add_row(&[1.0, 1.0], Cmp::Le, 0.0);
        lp.add_row(&[1.0, -1.0], Cmp::Le, 0.0);
        lp.bound(0, -1.0, 1.0);
        lp.bound(1, -1.0, 1.0);
        let (_, v) = lp.maximize(&[1.0, 0.0]).optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!(v.abs() < 1e-12);
        let (_, v) = lp.minimize(&[1.0, 0.0]).optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }
}
