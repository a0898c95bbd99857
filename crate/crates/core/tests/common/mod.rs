//! Random instance families shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scd_stability::catalog::GSpec;
use scd_stability::problem::ProblemInstance;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gauss_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gauss(rng))
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gauss(rng))
}

/// Parenthesized literal that parses back to the same float.
pub fn lit(v: f64) -> String {
    format!("({v})")
}

/// `(x_j - x̄_j)` as text.
pub fn shifted(j: usize, xbar: &DVector<f64>) -> String {
    format!("(x{} - {})", j + 1, lit(xbar[j]))
}

/// Data of a polyhedral instance `g = δ_C`, `C = {y : A y <= c}` with
/// `F(x) = ȳ + M(x - x̄) + ½ s ⊙ (x₁ - x̄₁)²` and a quadratic `f` made
/// stationary at `x̄`.
#[derive(Debug, Clone)]
pub struct PolyData {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub eq_rows: Vec<usize>,
    pub ybar: DVector<f64>,
    pub ystar: DVector<f64>,
    pub xbar: DVector<f64>,
    pub m_lin: DMatrix<f64>,
    pub curv: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl PolyData {
    pub fn instance(&self) -> ProblemInstance {
        let n = self.xbar.len();
        let m = self.ybar.len();
        let big_f: Vec<String> = (0..m)
            .map(|i| {
                let mut t = lit(self.ybar[i]);
                for j in 0..n {
                    t.push_str(&format!(" + {}*{}", lit(self.m_lin[(i, j)]), shifted(j, &self.xbar)));
                }
                if self.curv[i] != 0.0 {
                    t.push_str(&format!(" + 0.5*{}*{}^2", lit(self.curv[i]), shifted(0, &self.xbar)));
                }
                t
            })
            .collect();
        let grad = -(self.m_lin.transpose() * &self.ystar);
        let mut f = String::from("0");
        for j in 0..n {
            f.push_str(&format!(" + {}*{}", lit(grad[j]), shifted(j, &self.xbar)));
            for k in 0..n {
                f.push_str(&format!(
                    " + 0.5*{}*{}*{}",
                    lit(self.hess[(j, k)]),
                    shifted(j, &self.xbar),
                    shifted(k, &self.xbar)
                ));
            }
        }
        let refs: Vec<&str> = big_f.iter().map(String::as_str).collect();
        let g = GSpec::polyhedral(self.a.clone(), self.c.clone(), self.eq_rows.clone()).unwrap();
        ProblemInstance::new(&f, &refs, g, self.xbar.clone(), self.ystar.clone()).unwrap()
    }
}

/// Random polyhedral instance with `n, m <= 6` and at most 8 rows, mixing
/// degenerate multipliers, rank-deficient Jacobians and indefinite Hessians.
pub fn random_poly(rng: &mut ChaCha8Rng) -> PolyData {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    let k = rng.random_range(1..=8);
    let a = gauss_mat(rng, k, m);
    let ybar = gauss_vec(rng, m);
    let mut c = &a * &ybar;
    let mut eq_rows = Vec::new();
    let mut ystar = DVector::zeros(m);
    for i in 0..k {
        let u: f64 = rng.random();
        if u < 0.35 {
            c[i] += rng.random_range(0.1..1.0);
        } else if u < 0.45 {
            eq_rows.push(i);
            ystar += a.row(i).transpose() * gauss(rng);
        } else if rng.random::<f64>() < 0.7 {
            ystar += a.row(i).transpose() * rng.random_range(0.1..2.0);
        }
    }
    let xbar = gauss_vec(rng, n);
    let m_lin = if rng.random::<f64>() < 0.25 && n.min(m) > 1 {
        let r = rng.random_range(1..n.min(m));
        gauss_mat(rng, m, r) * gauss_mat(rng, r, n)
    } else {
        gauss_mat(rng, m, n)
    };
    let curv = DVector::from_fn(m, |_, _| if rng.random::<f64>() < 0.5 { gauss(rng) } else { 0.0 });
    let b = gauss_mat(rng, n, n);
    let shift = [-1.5, 0.0, 0.5][rng.random_range(0..3)];
    let hess = &b * b.transpose() * 0.5 + DMatrix::identity(n, n) * shift;
    PolyData {
        a,
        c,
        eq_rows,
        ybar,
        ystar,
        xbar,
        m_lin,
        curv,
        hess,
    }
}

pub fn bundled(name: &str) -> ProblemInstance {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
    ProblemInstance::from_path(&path).unwrap()
}

pub fn bundled_names() -> Vec<String> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    names
}
