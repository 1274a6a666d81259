//! Deflection-criterion schedule design.
//!
//! Under the first-order approximations the deflection of the fused
//! statistic becomes `πᵀDπ / ‖π‖` with `π = v ∘ p`, `v = C_{u_L u} w` and
//! `D = diag(Δμ / v)`. That fractional program is solved by intersecting the
//! feasible polytope with spheres `‖π‖ = r`, relaxing each sphere problem to
//! an SDP with RLT cuts, and sweeping `r`.

use crate::linalg::{self, Mat, Vector};
use crate::model::BernoulliSchedule;
use crate::moments::MomentSet;
use crate::optimize::sdp::{sdp_solve, Constraint, SdpOptions, SdpProblem, SparseSym};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// Largest schedule length accepted by the SDP route.
pub const SDP_MAX_N: usize = 64;

#[derive(Debug, Clone)]
pub struct DcProgram {
    /// Diagonal of `D_μ`: `v ∘ Δμ`.
    pub d_mu: Vector,
    /// Diagonal of `D_σ`: `v²`, floored.
    pub d_sigma: Vector,
    /// Diagonal of `D = D_μ D_σ⁻¹`.
    pub d: Vector,
    /// `√D_σ`, the per-slot upper bound on `π`.
    pub scale: Vector,
}

/// Build the diagonal program from the moment set and fusion weights.
pub fn dc_matrices(mom: &MomentSet, w: &Vector) -> Result<DcProgram> {
    let cross = mom.cross_cov(None);
    if w.len() != cross.ncols() {
        return Err(Error::dim("dc_matrices weights", cross.ncols(), w.len()));
    }
    let v = &cross * w;
    let dmu = mom.mean_shift();
    let raw = v.map(|x| x * x);
    let top = raw.max();
    if !(top > 0.0) {
        return Err(Error::Degenerate("fusion weights give zero report sensitivity".into()));
    }
    if let Some(i) = raw.iter().position(|&x| x == 0.0) {
        let (k, l) = (i / (mom.memory + 1) + 1, i % (mom.memory + 1));
        return Err(Error::Degenerate(format!(
            "slot {} (node {k}, lag {l}) has zero sensitivity",
            i + 1
        )));
    }
    let floor = 1e-12 * top;
    let d_sigma = raw.map(|x| x.max(floor));
    let scale = d_sigma.map(f64::sqrt);
    let d_mu = v.component_mul(&dmu);
    let d = d_mu.component_div(&d_sigma);
    Ok(DcProgram {
        d_mu,
        d_sigma,
        d,
        scale,
    })
}

impl DcProgram {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// `πᵀDπ / ‖π‖` (zero at the origin).
    pub fn objective(&self, pi: &Vector) -> f64 {
        let nrm = pi.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        pi.iter().zip(self.d.iter()).map(|(p, d)| d * p * p).sum::<f64>() / nrm
    }

    pub fn p_to_pi(&self, p: &[f64]) -> Vector {
        Vector::from_iterator(self.n(), p.iter().zip(self.scale.iter()).map(|(p, s)| p * s))
    }

    pub fn pi_to_p(&self, pi: &Vector) -> Vec<f64> {
        pi.iter()
            .zip(self.scale.iter())
            .map(|(p, s)| (p / s).clamp(0.0, 1.0))
            .collect()
    }

    /// Objective at a schedule.
    pub fn objective_at_p(&self, p: &[f64]) -> f64 {
        self.objective(&self.p_to_pi(p))
    }

    /// Largest `‖π‖` over `0 ⪯ p ⪯ 1, 1ᵀp ≤ budget`. The maximum of a convex
    /// function over this polytope sits at a vertex: the largest scales at
    /// one plus at most one fractional entry.
    pub fn max_radius(&self, budget: f64) -> f64 {
        let mut s2: Vec<f64> = self.d_sigma.iter().cloned().collect();
        s2.sort_by(|a, b| b.total_cmp(a));
        let budget = budget.clamp(0.0, s2.len() as f64);
        let full = budget.floor() as usize;
        let frac = budget - full as f64;
        let mut r2: f64 = s2[..full].iter().sum();
        if full < s2.len() {
            r2 += frac * frac * s2[full];
        }
        r2.sqrt()
    }

    /// Map a candidate `π` to a feasible schedule: nonnegative, radius
    /// `r` when given, box-clipped, then scaled down into the budget.
    pub fn feasible_schedule(&self, pi: &Vector, radius: Option<f64>, budget: f64) -> Option<Vec<f64>> {
        let mut pi = pi.map(|x| x.max(0.0));
        let nrm = pi.norm();
        if !(nrm > 0.0) {
            return None;
        }
        if let Some(r) = radius {
            pi *= r / nrm;
        }
        let mut p = self.pi_to_p(&pi);
        let total: f64 = p.iter().sum();
        if total > budget {
            let s = budget / total;
            p.iter_mut().for_each(|x| *x *= s);
        }
        Some(p)
    }
}

/// Variable layout of the lifted sphere problem.
#[derive(Debug, Clone, Copy)]
pub struct QcqpLayout {
    pub n: usize,
    /// Internal rescaling: `π = unit · π'`.
    pub unit: f64,
}

/// Lift the sphere problem at radius `r` into an SDP over
/// `Y = [[1, πᵀ], [π, V]] ⪰ 0` with RLT cuts for the box `0 ⪯ π ⪯ d`.
pub fn qcqp_sdp_problem(prog: &DcProgram, r: f64, budget: f64) -> Result<(SdpProblem, QcqpLayout)> {
    let n = prog.n();
    if n > SDP_MAX_N {
        return Err(Error::TooLarge { n, cap: SDP_MAX_N });
    }
    let unit = prog.scale.max();
    let d: Vec<f64> = prog.scale.iter().map(|s| s / unit).collect();
    let rr = r / unit;
    let lp = 1 + n * (n + 1) / 2 + n * n + n * (n - 1) / 2;
    let mut p = SdpProblem::new(n + 1, lp);
    let dmax = prog.d.amax().max(1e-300);
    for i in 0..n {
        p.c.add(i + 1, i + 1, -prog.d[i] / dmax);
    }
    let mut slack = 0usize;
    let mut push = |p: &mut SdpProblem, a: SparseSym, with_slack: bool, b: f64| {
        let a_lp = if with_slack {
            slack += 1;
            vec![(slack - 1, 1.0)]
        } else {
            vec![]
        };
        p.constraints.push(Constraint { a, a_lp, b });
    };

    let mut a = SparseSym::new();
    a.add(0, 0, 1.0);
    push(&mut p, a, false, 1.0);

    let mut a = SparseSym::new();
    for i in 0..n {
        a.add(i + 1, i + 1, 1.0);
    }
    push(&mut p, a, false, rr * rr);

    let mut a = SparseSym::new();
    for (i, di) in d.iter().enumerate() {
        a.add(0, i + 1, 0.5 / di);
    }
    push(&mut p, a, true, budget);

    // -V_ij + d_j π_i + d_i π_j ≤ d_i d_j
    for i in 0..n {
        for j in i..n {
            let mut a = SparseSym::new();
            if i == j {
                a.add(i + 1, i + 1, -1.0);
                a.add(0, i + 1, d[i]);
            } else {
                a.add(i + 1, j + 1, -0.5);
                a.add(0, i + 1, 0.5 * d[j]);
                a.add(0, j + 1, 0.5 * d[i]);
            }
            push(&mut p, a, true, d[i] * d[j]);
        }
    }
    // V_ij - d_j π_i ≤ 0
    for i in 0..n {
        for j in 0..n {
            let mut a = SparseSym::new();
            if i == j {
                a.add(i + 1, i + 1, 1.0);
            } else {
                a.add(i + 1, j + 1, 0.5);
            }
            a.add(0, i + 1, -0.5 * d[j]);
            push(&mut p, a, true, 0.0);
        }
    }
    // V_ij ≥ 0
    for i in 0..n {
        for j in i + 1..n {
            let mut a = SparseSym::new();
            a.add(i + 1, j + 1, -0.5);
            push(&mut p, a, true, 0.0);
        }
    }
    debug_assert_eq!(slack, lp);
    Ok((p, QcqpLayout { n, unit }))
}

/// Solution of one sphere relaxation.
#[derive(Debug, Clone)]
pub struct QcqpSdpSolution {
    pub v: Mat,
    pub pi: Vector,
    /// Relaxation value `max Tr(DV)` in the original units.
    pub value: f64,
    pub rel_gap: f64,
}

/// Solve the relaxation of `max πᵀDπ` on `‖π‖ = r` within the polytope.
pub fn solve_qcqp_sdp(prog: &DcProgram, r: f64, budget: f64, opts: &SdpOptions) -> Result<QcqpSdpSolution> {
    let (p, layout) = qcqp_sdp_problem(prog, r, budget)?;
    let sol = sdp_solve(&p, opts)?;
    let n = layout.n;
    let u = layout.unit;
    let pi = Vector::from_iterator(n, (0..n).map(|i| sol.x[(0, i + 1)] * u));
    let v = Mat::from_fn(n, n, |i, j| sol.x[(i + 1, j + 1)] * u * u);
    let value = (0..n).map(|i| prog.d[i] * v[(i, i)]).sum();
    Ok(QcqpSdpSolution {
        v,
        pi,
        value,
        rel_gap: sol.rel_gap,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub radii: usize,
    pub refine_steps: usize,
    /// Smallest radius as a fraction of the largest reachable one.
    pub min_fraction: f64,
    /// Projected-gradient iterations applied to the best candidates.
    pub polish_steps: usize,
    pub sdp: SdpOptions,
    pub exec: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            radii: 64,
            refine_steps: 8,
            min_fraction: 1e-2,
            polish_steps: 200,
            sdp: SdpOptions::default(),
            exec: Execution::available(),
        }
    }
}

/// One evaluated radius.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub radius: f64,
    /// `φ*(r) = value / r` of the relaxation.
    pub phi: f64,
    /// True objective of the best candidate extracted at this radius.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub schedule: BernoulliSchedule,
    pub objective: f64,
    pub radius: f64,
    pub points: Vec<SweepPoint>,
}

fn candidates(prog: &DcProgram, sol: &QcqpSdpSolution, r: f64, budget: f64) -> Option<(Vec<f64>, f64)> {
    let mut cands = vec![sol.pi.clone()];
    let e = linalg::symmetrize(&sol.v).symmetric_eigen();
    let (mut k, mut top) = (0, f64::NEG_INFINITY);
    for (i, &l) in e.eigenvalues.iter().enumerate() {
        if l > top {
            top = l;
            k = i;
        }
    }
    if top > 0.0 {
        let mut u: Vector = e.eigenvectors.column(k).into();
        if u.sum() < 0.0 {
            u = -u;
        }
        cands.push(u * top.sqrt());
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for c in cands {
        for radius in [Some(r), None] {
            if let Some(p) = prog.feasible_schedule(&c, radius, budget) {
                let obj = prog.objective_at_p(&p);
                if best.as_ref().is_none_or(|b| obj > b.1) {
                    best = Some((p, obj));
                }
            }
        }
    }
    best
}

const POLISH_STARTS: usize = 4;

/// Polytope vertices that fill the budget greedily, ranking slots by
/// `d_i s_i²`, by `d_i` and by `s_i²`. Symmetric instances relax to symmetric
/// SDP solutions, which are stationary for the gradient step; these starts
/// break the tie.
fn greedy_starts(prog: &DcProgram, budget: f64) -> Vec<Vec<f64>> {
    let n = prog.n();
    let keys: [&dyn Fn(usize) -> f64; 3] = [&|i| prog.d[i] * prog.scale[i] * prog.scale[i], &|i| prog.d[i], &|i| {
        prog.scale[i] * prog.scale[i]
    }];
    keys.iter()
        .map(|key| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
            let mut p = vec![0.0; n];
            let mut left = budget;
            for i in order {
                p[i] = left.clamp(0.0, 1.0);
                left -= p[i];
            }
            p
        })
        .collect()
}

/// The incumbent pushed slightly off any symmetric point.
fn tilted(p: &[f64], budget: f64) -> Vec<f64> {
    let n = p.len() as f64;
    let tilt: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, x)| x + 0.05 * ((i as f64 + 0.5) / n - 0.5))
        .collect();
    project_to_polytope(&tilt, budget)
}

/// Euclidean projection onto `0 ⪯ p ⪯ 1, 1ᵀp ≤ budget`.
pub fn project_to_polytope(p: &[f64], budget: f64) -> Vec<f64> {
    let clipped: Vec<f64> = p.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return clipped;
    }
    let shifted = |t: f64| -> f64 { p.iter().map(|x| (x - t).clamp(0.0, 1.0)).sum() };
    let mut lo = 0.0f64.min(p.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0);
    let mut hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shifted(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    p.iter().map(|x| (x - hi).clamp(0.0, 1.0)).collect()
}

/// Projected gradient ascent on the true objective with backtracking.
fn polish(prog: &DcProgram, mut p: Vec<f64>, budget: f64, steps: usize) -> (Vec<f64>, f64) {
    let mut f = prog.objective_at_p(&p);
    let mut step = 1.0;
    for _ in 0..steps {
        let pi = prog.p_to_pi(&p);
        let nrm = pi.norm();
        if nrm == 0.0 {
            break;
        }
        let quad: f64 = pi.iter().zip(prog.d.iter()).map(|(x, d)| d * x * x).sum();
        let grad: Vec<f64> = (0..p.len())
            .map(|i| prog.scale[i] * (2.0 * prog.d[i] * pi[i] / nrm - quad * pi[i] / nrm.powi(3)))
            .collect();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        let mut improved = false;
        let mut t = step;
        for _ in 0..40 {
            let trial: Vec<f64> = p.iter().zip(&grad).map(|(x, g)| x + t * g / gnorm).collect();
            let trial = project_to_polytope(&trial, budget);
            let ft = prog.objective_at_p(&trial);
            if ft > f {
                p = trial;
                f = ft;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        step = (2.0 * t).min(1.0);
    }
    (p, f)
}

/// Sweep the sphere radius, solve each relaxation and keep the best
/// extracted schedule.
pub fn solve_dc_sweep(prog: &DcProgram, budget: f64, opts: &SweepOptions) -> Result<SweepResult> {
    let n = prog.n();
    if n > SDP_MAX_N {
        return Err(Error::TooLarge { n, cap: SDP_MAX_N });
    }
    let r_max = prog.max_radius(budget);
    if !(r_max > 0.0) {
        return Err(Error::Degenerate("budget admits only p = 0".into()));
    }
    let count = opts.radii.max(2);
    let r_min = r_max * opts.min_fraction.clamp(1e-9, 1.0);
    // Keep the outermost radius strictly inside the reachable set.
    let r_top = r_max * (1.0 - 1e-6);
    let radius_at = |k: usize| r_min * (r_top / r_min).powf(k as f64 / (count - 1) as f64);

    let eval = |r: f64| -> Option<(SweepPoint, Vec<f64>)> {
        match solve_qcqp_sdp(prog, r, budget, &opts.sdp) {
            Ok(sol) => {
                let (p, obj) = candidates(prog, &sol, r, budget)?;
                Some((
                    SweepPoint {
                        radius: r,
                        phi: sol.value / r,
                        objective: obj,
                    },
                    p,
                ))
            }
            Err(e) => {
                log::warn!("radius {r:.6e}: relaxation skipped ({e})");
                None
            }
        }
    };
    let results = par::map_indices(opts.exec, count, |k| eval(radius_at(k)));
    let mut points = Vec::new();
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut best: Option<(usize, Vec<f64>, f64, f64)> = None;
    for (k, res) in results.into_iter().enumerate() {
        if let Some((pt, p)) = res {
            if best.as_ref().is_none_or(|b| pt.objective > b.2) {
                best = Some((k, p.clone(), pt.objective, pt.radius));
            }
            starts.push((p, pt.objective));
            points.push(pt);
        }
    }
    let Some((k, mut p_best, mut obj_best, mut r_best)) = best else {
        return Err(Error::Solver("every radius of the sweep failed".into()));
    };

    // Golden-section refinement between the neighbours of the incumbent.
    let (mut a, mut b) = (radius_at(k.saturating_sub(1)), radius_at((k + 1).min(count - 1)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut score = |r: f64, points: &mut Vec<SweepPoint>| -> f64 {
        match eval(r) {
            Some((pt, p)) => {
                points.push(pt);
                if pt.objective > obj_best {
                    obj_best = pt.objective;
                    p_best = p;
                    r_best = r;
                }
                pt.objective
            }
            None => f64::NEG_INFINITY,
        }
    };
    if opts.refine_steps > 0 && b > a {
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = score(c, &mut points);
        let mut fd = score(d, &mut points);
        for _ in 2..opts.refine_steps {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = score(c, &mut points);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = score(d, &mut points);
            }
        }
    }
    if opts.polish_steps > 0 {
        starts.push((p_best.clone(), obj_best));
        starts.sort_by(|x, y| y.1.total_cmp(&x.1));
        starts.dedup_by(|x, y| x.0.iter().zip(&y.0).all(|(a, b)| (a - b).abs() < 1e-9));
        starts.truncate(POLISH_STARTS);
        let extra = greedy_starts(prog, budget).into_iter().chain([tilted(&p_best, budget)]);
        let extra: Vec<_> = extra
            .map(|p| {
                let f = prog.objective_at_p(&p);
                (p, f)
            })
            .collect();
        for (p0, _) in starts.into_iter().chain(extra) {
            let (p, obj) = polish(prog, p0, budget, opts.polish_steps);
            if obj > obj_best {
                obj_best = obj;
                r_best = prog.p_to_pi(&p).norm();
                p_best = p;
            }
        }
    }
    points.sort_by(|x, y| x.radius.total_cmp(&y.radius));
    Ok(SweepResult {
        schedule: BernoulliSchedule::new(p_best)?,
        objective: obj_best,
        radius: r_best,
        points,
    })
}
