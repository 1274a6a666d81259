//! Small dense primal-dual interior-point solver for one PSD block plus a
//! nonnegative orthant.
//!
//! Primal: `min ⟨C,X⟩ + c_lᵀx  s.t. ⟨A_i,X⟩ + a_iᵀx = b_i,  X ⪰ 0, x ≥ 0`.
//! Dual:   `max bᵀy  s.t. C - Σ y_i A_i = Z ⪰ 0,  c_l - Σ y_i a_i = z ≥ 0`.
//!
//! Infeasible-start path following with the HKM search direction and a
//! Mehrotra predictor-corrector step.

use std::io::Write;

use nalgebra::Cholesky;

use crate::linalg::{self, Mat, Vector};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// Symmetric sparse matrix stored as upper-triangle triplets `(r, c, v)`, `r ≤ c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseSym {
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `v` at `(r, c)` and its mirror. Repeated positions accumulate.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == r && e.1 == c) {
            e.2 += v;
        } else {
            self.entries.push((r, c, v));
        }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `⟨A, X⟩`.
    pub fn inner(&self, x: &Mat) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * x[(r, c)] } else { 2.0 * v * x[(r, c)] })
            .sum()
    }

    /// Both triangles as `(r, c, v)`.
    fn full(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for &(r, c, v) in &self.entries {
            out.push((r, c, v));
            if r != c {
                out.push((c, r, v));
            }
        }
        out
    }

    pub fn to_dense(&self, size: usize) -> Mat {
        let mut m = Mat::zeros(size, size);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }

    fn frob(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraint {
    pub a: SparseSym,
    /// Coefficients on the orthant variables.
    pub a_lp: Vec<(usize, f64)>,
    pub b: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    /// Order of the PSD block.
    pub block: usize,
    /// Number of orthant variables.
    pub lp: usize,
    pub c: SparseSym,
    pub c_lp: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Mat,
    pub x_lp: Vector,
    pub y: Vector,
    pub z: Mat,
    pub z_lp: Vector,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// `|pobj - dobj| / (1 + |pobj| + |dobj|)`.
    pub rel_gap: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub max_iter: usize,
    /// Stop as soon as gap and infeasibilities are below this.
    pub tol: f64,
    /// Accept a solution at the iteration cap or on stall if the gap is below this.
    pub accept_gap: f64,
    pub step_factor: f64,
    pub exec: Execution,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            max_iter: 200,
            tol: 1e-8,
            accept_gap: 1e-6,
            step_factor: 0.95,
            exec: Execution::Sequential,
        }
    }
}

impl SdpProblem {
    pub fn new(block: usize, lp: usize) -> Self {
        SdpProblem {
            block,
            lp,
            c: SparseSym::new(),
            c_lp: vec![0.0; lp],
            constraints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::Config("SDP block size must be positive".into()));
        }
        if self.c_lp.len() != self.lp {
            return Err(Error::dim("SDP orthant cost", self.lp, self.c_lp.len()));
        }
        let in_block = |s: &SparseSym| s.entries().iter().all(|&(_, c, v)| c < self.block && v.is_finite());
        if !in_block(&self.c) {
            return Err(Error::Config("SDP cost entry outside the block".into()));
        }
        for (i, con) in self.constraints.iter().enumerate() {
            if !in_block(&con.a) || con.a_lp.iter().any(|&(k, v)| k >= self.lp || !v.is_finite()) {
                return Err(Error::Config(format!("SDP constraint {i} references an invalid entry")));
            }
            if !con.b.is_finite() {
                return Err(Error::Config(format!("SDP constraint {i} has a non-finite bound")));
            }
        }
        Ok(())
    }

    fn apply(&self, x: &Mat, xl: &Vector) -> Vector {
        Vector::from_iterator(
            self.constraints.len(),
            self.constraints
                .iter()
                .map(|c| c.a.inner(x) + c.a_lp.iter().map(|&(k, v)| v * xl[k]).sum::<f64>()),
        )
    }

    fn adjoint(&self, y: &Vector) -> (Mat, Vector) {
        let mut m = Mat::zeros(self.block, self.block);
        let mut l = Vector::zeros(self.lp);
        for (yi, con) in y.iter().zip(&self.constraints) {
            for &(r, c, v) in con.a.entries() {
                m[(r, c)] += yi * v;
                if r != c {
                    m[(c, r)] += yi * v;
                }
            }
            for &(k, v) in &con.a_lp {
                l[k] += yi * v;
            }
        }
        (m, l)
    }

    /// Write the instance in SDPA sparse format. The primal here is the SDPA
    /// dual form with `F0 = -C`, `F_i = A_i`, `c = b`; the orthant is a
    /// diagonal block of negative size.
    pub fn write_sdpa<W: Write>(&self, mut out: W, comment: &str) -> std::io::Result<()> {
        for line in comment.lines() {
            writeln!(out, "\"{line}")?;
        }
        writeln!(out, "{}", self.constraints.len())?;
        let blocks = if self.lp > 0 { 2 } else { 1 };
        writeln!(out, "{blocks}")?;
        if self.lp > 0 {
            writeln!(out, "{} -{}", self.block, self.lp)?;
        } else {
            writeln!(out, "{}", self.block)?;
        }
        let b: Vec<String> = self.constraints.iter().map(|c| format!("{:e}", c.b)).collect();
        writeln!(out, "{}", b.join(" "))?;
        for &(r, c, v) in self.c.entries() {
            if v != 0.0 {
                writeln!(out, "0 1 {} {} {:e}", r + 1, c + 1, -v)?;
            }
        }
        for (k, &v) in self.c_lp.iter().enumerate() {
            if v != 0.0 {
                writeln!(out, "0 2 {} {} {:e}", k + 1, k + 1, -v)?;
            }
        }
        for (i, con) in self.constraints.iter().enumerate() {
            for &(r, c, v) in con.a.entries() {
                if v != 0.0 {
                    writeln!(out, "{} 1 {} {} {:e}", i + 1, r + 1, c + 1, v)?;
                }
            }
            for &(k, v) in &con.a_lp {
                if v != 0.0 {
                    writeln!(out, "{} 2 {} {} {:e}", i + 1, k + 1, k + 1, v)?;
                }
            }
        }
        Ok(())
    }
}

/// Largest step in `(0, 1]`-free units keeping `X + αΔX ⪰ 0` given `chol(X)`.
fn max_step_psd(x_chol: &Cholesky<f64, nalgebra::Dyn>, dx: &Mat) -> f64 {
    let l = x_chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&Mat::identity(l.nrows(), l.nrows()))
        .unwrap_or_else(|| Mat::identity(l.nrows(), l.nrows()));
    let m = linalg::symmetrize(&(&linv * dx * linv.transpose()));
    let lam = linalg::min_eigenvalue(&m);
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn max_step_lp(x: &Vector, dx: &Vector) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn chol(m: &Mat) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    linalg::symmetrize(m).cholesky()
}

/// Solve an [`SdpProblem`].
pub fn sdp_solve(prob: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    prob.validate()?;
    let s = prob.block;
    let nl = prob.lp;
    let m = prob.constraints.len();
    let b = Vector::from_iterator(m, prob.constraints.iter().map(|c| c.b));
    let c_mat = prob.c.to_dense(s);
    let c_lp = Vector::from_column_slice(&prob.c_lp);
    let full: Vec<Vec<(usize, usize, f64)>> = prob.constraints.iter().map(|c| c.a.full()).collect();
    let mut lp_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nl];
    for (i, con) in prob.constraints.iter().enumerate() {
        for &(k, v) in &con.a_lp {
            lp_cols[k].push((i, v));
        }
    }

    // Starting point scaled to the data.
    let a_norms: Vec<f64> = prob
        .constraints
        .iter()
        .map(|c| (c.a.frob().powi(2) + c.a_lp.iter().map(|&(_, v)| v * v).sum::<f64>()).sqrt())
        .collect();
    let dim = (s + nl) as f64;
    let mut xi0: f64 = 10.0f64.max(dim.sqrt());
    for (i, &an) in a_norms.iter().enumerate() {
        xi0 = xi0.max(dim * (1.0 + b[i].abs()) / (1.0 + an));
    }
    let c_norm = (prob.c.frob().powi(2) + c_lp.norm_squared()).sqrt();
    let eta0 = 10.0f64
        .max(dim.sqrt())
        .max(c_norm)
        .max(a_norms.iter().cloned().fold(0.0, f64::max));
    let mut x = Mat::identity(s, s) * xi0;
    let mut xl = Vector::from_element(nl, xi0);
    let mut z = Mat::identity(s, s) * eta0;
    let mut zl = Vector::from_element(nl, eta0);
    let mut y = Vector::zeros(m);

    let b_norm = b.norm();
    let mut best: Option<SdpSolution> = None;
    for iter in 0..=opts.max_iter {
        let ax = prob.apply(&x, &xl);
        let rp = &b - ax;
        let (aty, aty_l) = prob.adjoint(&y);
        let rd = linalg::symmetrize(&(&c_mat - aty - &z));
        let rdl = &c_lp - aty_l - &zl;
        let pobj = prob.c.inner(&x) + c_lp.dot(&xl);
        let dobj = b.dot(&y);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = (rd.norm_squared() + rdl.norm_squared()).sqrt() / (1.0 + c_norm);
        let sol = SdpSolution {
            x: x.clone(),
            x_lp: xl.clone(),
            y: y.clone(),
            z: z.clone(),
            z_lp: zl.clone(),
            primal_obj: pobj,
            dual_obj: dobj,
            rel_gap,
            primal_infeas: pinf,
            dual_infeas: dinf,
            iterations: iter,
        };
        if rel_gap <= opts.tol && pinf <= opts.tol && dinf <= opts.tol {
            return Ok(sol);
        }
        // Certificates: a growing dual objective with a nearly feasible dual
        // means the primal is infeasible, and vice versa.
        if dobj > 1e10 * (1.0 + b_norm) && dinf < 1e-6 {
            return Err(Error::Infeasible(format!(
                "primal infeasible: dual objective {dobj:e} diverges with dual residual {dinf:e}"
            )));
        }
        if pobj < -1e10 * (1.0 + c_norm) && pinf < 1e-6 {
            return Err(Error::Solver(format!(
                "primal unbounded: objective {pobj:e} diverges with primal residual {pinf:e}"
            )));
        }
        let score = |q: &SdpSolution| q.rel_gap.max(q.primal_infeas).max(q.dual_infeas);
        if best.as_ref().is_none_or(|bst| score(&sol) < score(bst)) {
            best = Some(sol);
        }
        if iter == opts.max_iter {
            break;
        }

        let mu = (x.dot(&z) + xl.dot(&zl)) / dim;
        let Some(zc) = chol(&z) else { break };
        let w = linalg::symmetrize(&zc.inverse());
        let Some(xc) = chol(&x) else { break };
        let dl = xl.component_div(&zl);

        // Schur complement M_ij = Tr(A_i X A_j W) + (A_l diag(x/z) A_lᵀ)_ij.
        let rows = par::map_indices(opts.exec, m, |i| {
            let mut row = vec![0.0; m];
            // P = A_i X and Q = W A_i are only needed through entries, so
            // accumulate Σ A_i[a,b] X[b,c] A_j[c,d] W[d,a] directly.
            for (j, rj) in row.iter_mut().enumerate().skip(i) {
                let mut acc = 0.0;
                for &(a, bb, va) in &full[i] {
                    for &(c, d, vc) in &full[j] {
                        acc += va * x[(bb, c)] * vc * w[(d, a)];
                    }
                }
                *rj = acc;
            }
            row
        });
        let mut mm = Mat::zeros(m, m);
        for (i, row) in rows.into_iter().enumerate() {
            for j in i..m {
                mm[(i, j)] = row[j];
                mm[(j, i)] = row[j];
            }
        }
        for (k, col) in lp_cols.iter().enumerate() {
            for &(i, vi) in col {
                for &(j, vj) in col {
                    mm[(i, j)] += dl[k] * vi * vj;
                }
            }
        }
        let mchol = match mm.clone().cholesky() {
            Some(c) => c,
            None => {
                let ridge = 1e-12 * mm.diagonal().amax().max(1e-300);
                let mut r = mm.clone();
                for i in 0..m {
                    r[(i, i)] += ridge;
                }
                match r.cholesky() {
                    Some(c) => c,
                    None => break,
                }
            }
        };

        let direction = |target: f64, corr: Option<(&Mat, &Vector)>| {
            // G = (target·I - corr) W - X; g_l = (target - corr_l) / z - x.
            let mut g = Mat::identity(s, s) * target;
            let mut gl = Vector::from_element(nl, target);
            if let Some((cm, cl)) = corr {
                g -= cm;
                gl -= cl;
            }
            let g = &g * &w - &x;
            let gl = gl.component_div(&zl) - &xl;
            let h = &g - &x * &rd * &w;
            let hl = &gl - dl.component_mul(&rdl);
            let rhs = &rp - prob.apply(&linalg::symmetrize(&h), &hl);
            let dy = mchol.solve(&rhs);
            let (ady, ady_l) = prob.adjoint(&dy);
            let dz = linalg::symmetrize(&(&rd - ady));
            let dzl = &rdl - ady_l;
            let dx = linalg::symmetrize(&(&g - &x * &dz * &w));
            let dxl = &gl - dl.component_mul(&dzl);
            (dx, dxl, dy, dz, dzl)
        };
        let steps = |dx: &Mat, dxl: &Vector, dz: &Mat, dzl: &Vector| {
            let ap = max_step_psd(&xc, dx).min(max_step_lp(&xl, dxl));
            let ad = max_step_psd(&zc, dz).min(max_step_lp(&zl, dzl));
            (ap, ad)
        };

        // Predictor.
        let (dx_a, dxl_a, _, dz_a, dzl_a) = direction(0.0, None);
        let (ap, ad) = steps(&dx_a, &dxl_a, &dz_a, &dzl_a);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = ((&x + &dx_a * ap).dot(&(&z + &dz_a * ad)) + (&xl + &dxl_a * ap).dot(&(&zl + &dzl_a * ad))) / dim;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let corr = &dx_a * &dz_a;
        let corr_l = dxl_a.component_mul(&dzl_a);
        let (dx, dxl, dy, dz, dzl) = direction(sigma * mu, Some((&corr, &corr_l)));
        let (ap, ad) = steps(&dx, &dxl, &dz, &dzl);
        let ap = (opts.step_factor * ap).min(1.0);
        let ad = (opts.step_factor * ad).min(1.0);
        x = linalg::symmetrize(&(&x + &dx * ap));
        xl += &dxl * ap;
        y += &dy * ad;
        z = linalg::symmetrize(&(&z + &dz * ad));
        zl += &dzl * ad;
        if ap.max(ad) < 1e-12 {
            break;
        }
    }
    match best {
        Some(b) if b.rel_gap <= opts.accept_gap && b.primal_infeas <= 1e-6 && b.dual_infeas <= 1e-6 => Ok(b),
        Some(b) => Err(Error::Solver(format!(
            "no convergence after {} iterations: gap {:e}, primal residual {:e}, dual residual {:e}",
            b.iterations, b.rel_gap, b.primal_infeas, b.dual_infeas
        ))),
        None => Err(Error::Solver("no iterate produced".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace_one(c: &Mat) -> SdpProblem {
        let s = c.nrows();
        let mut p = SdpProblem::new(s, 0);
        for i in 0..s {
            for j in i..s {
                if c[(i, j)] != 0.0 {
                    p.c.add(i, j, c[(i, j)]);
                }
            }
        }
        let mut a = SparseSym::new();
        for i in 0..s {
            a.add(i, i, 1.0);
        }
        p.constraints.push(Constraint {
            a,
            a_lp: vec![],
            b: 1.0,
        });
        p
    }

    #[test]
    fn diagonal_cost_picks_smallest_entry() {
        let c = Mat::from_diagonal(&Vector::from_vec(vec![3.0, -1.5, 2.0, 0.5]));
        let sol = sdp_solve(&trace_one(&c), &SdpOptions::default()).unwrap();
        assert!((sol.primal_obj + 1.5).abs() < 1e-7);
        assert!(sol.rel_gap <= 1e-6);
    }

    #[test]
    fn trace_one_gives_min_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let g = Mat::from_fn(5, 5, |_, _| rng.random::<f64>() - 0.5);
            let c = linalg::symmetrize(&(&g + g.transpose()));
            let sol = sdp_solve(&trace_one(&c), &SdpOptions::default()).unwrap();
            assert!((sol.primal_obj - linalg::min_eigenvalue(&c)).abs() < 1e-6);
        }
    }

    #[test]
    fn two_by_two_matches_boundary_parameterization() {
        // min ⟨C,X⟩ s.t. tr X = t, random C.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (c11, c12, c22) = (
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let bnd = 0.5 + rng.random::<f64>();
            let mut p = SdpProblem::new(2, 0);
            p.c.add(0, 0, c11);
            p.c.add(0, 1, c12);
            p.c.add(1, 1, c22);
            let mut a = SparseSym::new();
            a.add(0, 0, 1.0);
            a.add(1, 1, 1.0);
            p.constraints.push(Constraint {
                a,
                a_lp: vec![],
                b: bnd,
            });
            let sol = sdp_solve(&p, &SdpOptions::default()).unwrap();
            // Oracle: extreme points of {X ⪰ 0, tr X = bnd} are bnd·vvᵀ, v = (cos θ, sin θ).
            let mut best = f64::INFINITY;
            let steps = 200_000;
            for k in 0..steps {
                let th = std::f64::consts::PI * k as f64 / steps as f64;
                let (c, s) = (th.cos(), th.sin());
                best = best.min(bnd * (c11 * c * c + 2.0 * c12 * c * s + c22 * s * s));
            }
            assert!((sol.primal_obj - best).abs() < 1e-5, "{} vs {}", sol.primal_obj, best);
        }
    }

    #[test]
    fn orthant_variables_act_as_slacks() {
        // min -X11 s.t. X11 + s = 2, X22 = 1, s ≥ 0 → -2.
        let mut p = SdpProblem::new(2, 1);
        p.c.add(0, 0, -1.0);
        let mut a = SparseSym::new();
        a.add(0, 0, 1.0);
        p.constraints.push(Constraint {
            a,
            a_lp: vec![(0, 1.0)],
            b: 2.0,
        });
        let mut a = SparseSym::new();
        a.add(1, 1, 1.0);
        p.constraints.push(Constraint {
            a,
            a_lp: vec![],
            b: 1.0,
        });
        let sol = sdp_solve(&p, &SdpOptions::default()).unwrap();
        assert!((sol.primal_obj + 2.0).abs() < 1e-7);
        assert!(sol.x_lp[0].abs() < 1e-6);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        // X11 = -1 with X ⪰ 0.
        let mut p = SdpProblem::new(1, 0);
        let mut a = SparseSym::new();
        a.add(0, 0, 1.0);
        p.constraints.push(Constraint {
            a,
            a_lp: vec![],
            b: -1.0,
        });
        assert!(matches!(
            sdp_solve(&p, &SdpOptions::default()),
            Err(Error::Infeasible(_)) | Err(Error::Solver(_))
        ));
    }

    #[test]
    fn unbounded_problem_is_reported() {
        // min -X12 s.t. X11 = 1 is unbounded (X22 free to grow).
        let mut p = SdpProblem::new(2, 0);
        p.c.add(0, 1, -1.0);
        let mut a = SparseSym::new();
        a.add(0, 0, 1.0);
        p.constraints.push(Constraint {
            a,
            a_lp: vec![],
            b: 1.0,
        });
        assert!(sdp_solve(&p, &SdpOptions::default()).is_err());
    }

    #[test]
    fn sdpa_dump_layout() {
        let mut p = SdpProblem::new(2, 1);
        p.c.add(1, 1, 2.0);
        let mut a = SparseSym::new();
        a.add(0, 1, 0.5);
        p.constraints.push(Constraint {
            a,
            a_lp: vec![(0, 1.0)],
            b: 3.0,
        });
        let mut buf = Vec::new();
        p.write_sdpa(&mut buf, "toy").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "\"toy");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert_eq!(lines[3], "2 -1");
        assert!(lines.contains(&"0 1 2 2 -2e0"));
        assert!(lines.contains(&"1 1 1 2 5e-1"));
        assert!(lines.contains(&"1 2 1 1 1e0"));
    }
}
