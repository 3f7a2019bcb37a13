//! Primal-dual interior-point solver for linear matrix inequalities
//!
//! ```text
//! minimize    cᵀy
//! subject to  C_b + Σ_j y_j G_{b,j} ⪰ 0    for every block b
//! ```
//!
//! where each block is either a real symmetric PSD cone or a vector of
//! nonnegative scalars. The iteration is the infeasible-start HKM direction
//! with Mehrotra predictor-corrector steps; the Schur complement system is
//! dense and factored with a blocked Cholesky on top of GEMM.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse symmetric matrix given by its upper-triangle entries `(i, j, v)`,
/// `i ≤ j`. For nonnegative blocks only diagonal entries are used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SymSparse {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` at `(i, j)` and, implicitly, `(j, i)`.
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.entries.push((a, b, v));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        self.add_to(&mut m, 1.0);
        m
    }

    fn add_to(&self, m: &mut DMatrix<f64>, scale: f64) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += scale * v;
            if i != j {
                m[(j, i)] += scale * v;
            }
        }
    }

    /// `<S, X>` for symmetric `X`.
    fn inner(&self, x: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * x[(i, i)] } else { v * (x[(i, j)] + x[(j, i)]) })
            .sum()
    }

    fn frobenius(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Psd,
    Nonneg,
}

/// One conic constraint `C + Σ_j y_j G_j ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    pub name: String,
    pub kind: BlockKind,
    pub dim: usize,
    pub constant: SymSparse,
    /// `(variable, G_j)` pairs; variables not listed have zero coefficient.
    pub coeffs: Vec<(usize, SymSparse)>,
}

impl LmiBlock {
    pub fn new(name: impl Into<String>, kind: BlockKind, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            dim,
            constant: SymSparse::new(),
            coeffs: Vec::new(),
        }
    }

    /// Merges coefficient lists that mention the same variable twice.
    fn canonical(&self) -> (Vec<usize>, Vec<SymSparse>) {
        let mut order: Vec<usize> = (0..self.coeffs.len()).collect();
        order.sort_by_key(|&i| self.coeffs[i].0);
        let mut vars: Vec<usize> = Vec::new();
        let mut mats: Vec<SymSparse> = Vec::new();
        for i in order {
            let (v, ref g) = self.coeffs[i];
            if g.is_empty() {
                continue;
            }
            if vars.last() == Some(&v) {
                if let Some(last) = mats.last_mut() {
                    last.entries.extend_from_slice(&g.entries);
                }
            } else {
                vars.push(v);
                mats.push(g.clone());
            }
        }
        (vars, mats)
    }
}

/// Linear objective over LMI constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
}

impl LmiProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            blocks: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::InvalidInput("objective length differs from variable count".into()));
        }
        for b in &self.blocks {
            let ok = |s: &SymSparse| s.entries.iter().all(|&(i, j, v)| i < b.dim && j < b.dim && v.is_finite());
            if !ok(&b.constant) {
                return Err(Error::InvalidInput(format!("block '{}' constant out of range", b.name)));
            }
            for (v, g) in &b.coeffs {
                if *v >= self.num_vars || !ok(g) {
                    return Err(Error::InvalidInput(format!("block '{}' references invalid data", b.name)));
                }
                if b.kind == BlockKind::Nonneg && g.entries.iter().any(|&(i, j, _)| i != j) {
                    return Err(Error::InvalidInput(format!("nonnegative block '{}' has off-diagonal data", b.name)));
                }
            }
        }
        Ok(())
    }

    /// Slack `C_b + Σ y_j G_{b,j}` of each block.
    pub fn slacks(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|b| {
                let mut s = b.constant.to_dense(b.dim);
                for (v, g) in &b.coeffs {
                    g.add_to(&mut s, y[*v]);
                }
                s
            })
            .collect()
    }

    /// Most negative eigenvalue over all blocks at `y` (0 if all feasible).
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        self.slacks(y)
            .iter()
            .zip(&self.blocks)
            .map(|(s, b)| match b.kind {
                BlockKind::Psd => crate::matrixcore::min_eigenvalue_sym(s),
                BlockKind::Nonneg => (0..b.dim).map(|i| s[(i, i)]).fold(f64::INFINITY, f64::min),
            })
            .fold(0.0f64, |a, v| a.min(v))
            .abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance on primal/dual residuals and duality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Scales the default starting point; lets callers re-solve from a
    /// different initial iterate.
    pub start_scale: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            step_fraction: 0.95,
            start_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub y: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Relative complementarity `<X, Z> / (1 + |pobj| + |dobj|)`.
    pub gap: f64,
    pub wall_ms: f64,
}

/// Per-block data fixed for the whole solve.
struct Prepared {
    kind: BlockKind,
    dim: usize,
    constant: DMatrix<f64>,
    vars: Vec<usize>,
    mats: Vec<SymSparse>,
}

/// Iterate for one block: dense matrices for PSD blocks, diagonal vectors
/// stored as `n×1` matrices for nonnegative blocks.
#[derive(Clone)]
struct BlockState {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

fn prepare(problem: &LmiProblem) -> Vec<Prepared> {
    problem
        .blocks
        .iter()
        .map(|b| {
            let (vars, mats) = b.canonical();
            let constant = match b.kind {
                BlockKind::Psd => b.constant.to_dense(b.dim),
                BlockKind::Nonneg => {
                    let mut c = DMatrix::zeros(b.dim, 1);
                    for &(i, _, v) in &b.constant.entries {
                        c[(i, 0)] += v;
                    }
                    c
                }
            };
            Prepared {
                kind: b.kind,
                dim: b.dim,
                constant,
                vars,
                mats,
            }
        })
        .collect()
}

/// `Σ_j y_j G_j` restricted to one block.
fn apply_g(p: &Prepared, y: &DVector<f64>) -> DMatrix<f64> {
    let mut out = match p.kind {
        BlockKind::Psd => DMatrix::zeros(p.dim, p.dim),
        BlockKind::Nonneg => DMatrix::zeros(p.dim, 1),
    };
    for (v, g) in p.vars.iter().zip(&p.mats) {
        let s = y[*v];
        if s == 0.0 {
            continue;
        }
        match p.kind {
            BlockKind::Psd => g.add_to(&mut out, s),
            BlockKind::Nonneg => {
                for &(i, _, c) in &g.entries {
                    out[(i, 0)] += s * c;
                }
            }
        }
    }
    out
}

/// Adds `<G_j, X>` for every variable of the block into `acc`.
fn adjoint_into(p: &Prepared, x: &DMatrix<f64>, acc: &mut DVector<f64>) {
    for (v, g) in p.vars.iter().zip(&p.mats) {
        acc[*v] += match p.kind {
            BlockKind::Psd => g.inner(x),
            BlockKind::Nonneg => g.entries.iter().map(|&(i, _, c)| c * x[(i, 0)]).sum(),
        };
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest `α ≤ 1` keeping `S + α·D` in the cone, scaled by `fraction`.
fn step_length(kind: BlockKind, s: &DMatrix<f64>, d: &DMatrix<f64>, fraction: f64) -> Option<f64> {
    match kind {
        BlockKind::Nonneg => {
            let mut a = f64::INFINITY;
            for (si, di) in s.iter().zip(d.iter()) {
                if *di < 0.0 {
                    a = a.min(-si / di);
                }
            }
            Some((fraction * a).min(1.0))
        }
        BlockKind::Psd => {
            let chol = Cholesky::new(s.clone())?;
            let l = chol.l();
            // λ_min(L⁻¹ D L⁻ᵀ)
            let t = l.solve_lower_triangular(d)?;
            let t = l.solve_lower_triangular(&t.transpose())?;
            let lam = crate::matrixcore::min_eigenvalue_sym(&t);
            if lam >= 0.0 {
                Some(1.0)
            } else {
                Some((fraction * -1.0 / lam).min(1.0))
            }
        }
    }
}

/// In-place lower Cholesky of a symmetric positive-definite matrix using
/// panel factorization and GEMM trailing updates. Only the lower triangle is
/// referenced; returns `false` if a pivot is not positive.
pub fn blocked_cholesky(a: &mut DMatrix<f64>) -> bool {
    const NB: usize = 96;
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let b = NB.min(n - k);
        let diag = a.view((k, k), (b, b)).into_owned();
        let Some(c) = Cholesky::new(diag) else {
            return false;
        };
        let l11 = c.l();
        a.view_mut((k, k), (b, b)).copy_from(&l11);
        let rest = n - k - b;
        if rest > 0 {
            // L21 = A21 L11⁻ᵀ  ⇔  L11 L21ᵀ = A21ᵀ
            let a21t = a.view((k + b, k), (rest, b)).transpose();
            let Some(l21t) = l11.solve_lower_triangular(&a21t) else {
                return false;
            };
            let l21 = l21t.transpose();
            a.view_mut((k + b, k), (rest, b)).copy_from(&l21);
            // trailing update of the lower triangle, one block column at a time
            let mut j = 0;
            while j < rest {
                let w = NB.min(rest - j);
                let lower = l21.rows(j, rest - j);
                let top = l21.rows(j, w);
                let mut target = a.view_mut((k + b + j, k + b + j), (rest - j, w));
                target.gemm(-1.0, &lower, &top.transpose(), 1.0);
                j += w;
            }
        }
        k += b;
    }
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    true
}

fn cholesky_solve(l: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let t = l.solve_lower_triangular(rhs)?;
    l.tr_solve_lower_triangular(&t)
}

/// Solves the LMI problem.
/// Refinement passes applied to each Newton direction.
const REFINE_STEPS: usize = 2;

pub fn solve(problem: &LmiProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    problem.validate()?;
    let start = Instant::now();
    let m = problem.num_vars;
    let blocks = prepare(problem);
    let c = DVector::from_column_slice(&problem.objective);
    let n_total: f64 = blocks.iter().map(|b| b.dim as f64).sum::<f64>().max(1.0);
    let norm_c = c.norm();
    let norm_cb = blocks.iter().map(|b| b.constant.norm_squared()).sum::<f64>().sqrt();

    // starting point
    let mut state: Vec<BlockState> = blocks
        .iter()
        .map(|b| {
            let nb = b.dim as f64;
            let max_g = b.mats.iter().map(|g| g.frobenius()).fold(0.0, f64::max);
            let xi = b
                .vars
                .iter()
                .zip(&b.mats)
                .map(|(v, g)| nb * (1.0 + c[*v].abs()) / (1.0 + g.frobenius()))
                .fold(10f64.max(nb.sqrt()), f64::max);
            let eta = 10f64.max(nb.sqrt()).max(max_g).max(b.constant.norm());
            let (xi, eta) = (xi * opts.start_scale, eta * opts.start_scale);
            match b.kind {
                BlockKind::Psd => BlockState {
                    x: DMatrix::identity(b.dim, b.dim) * xi,
                    z: DMatrix::identity(b.dim, b.dim) * eta,
                },
                BlockKind::Nonneg => BlockState {
                    x: DMatrix::from_element(b.dim, 1, xi),
                    z: DMatrix::from_element(b.dim, 1, eta),
                },
            }
        })
        .collect();
    let mut y = DVector::zeros(m);

    let finish = |status, y: &DVector<f64>, it, pinf, dinf, gap, dual_obj| SdpSolution {
        status,
        objective: c.dot(y),
        y: y.iter().copied().collect(),
        dual_objective: dual_obj,
        iterations: it,
        primal_residual: pinf,
        dual_residual: dinf,
        gap,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };

    let mut best: Option<(f64, DVector<f64>, f64, f64, f64, f64)> = None;
    let mut stall = 0usize;
    for it in 0..opts.max_iter {
        // residuals: G*(X) = c and Z = C + G(y)
        let mut gx = DVector::zeros(m);
        for (b, s) in blocks.iter().zip(&state) {
            adjoint_into(b, &s.x, &mut gx);
        }
        let rp = &gx - &c;
        let rd: Vec<DMatrix<f64>> = blocks
            .iter()
            .zip(&state)
            .map(|(b, s)| &b.constant + apply_g(b, &y) - &s.z)
            .collect();
        let pobj = c.dot(&y);
        let dobj = -blocks.iter().zip(&state).map(|(b, s)| inner(&b.constant, &s.x)).sum::<f64>();
        let xz: f64 = state.iter().map(|s| inner(&s.x, &s.z)).sum();
        let mu = xz / n_total;
        let pinf = rp.norm() / (1.0 + norm_c);
        let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + norm_cb);
        // complementarity gap; equals pobj − dobj on feasible iterates
        let gap = xz.abs() / (1.0 + pobj.abs() + dobj.abs());
        log::trace!("iter {it}: pobj {pobj:.9e} dobj {dobj:.9e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e}");
        if pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol {
            return Ok(finish(SolveStatus::Optimal, &y, it, pinf, dinf, gap, dobj));
        }
        let merit = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, y.clone(), pinf, dinf, gap, dobj));
        }
        // infeasibility certificate: X ⪰ 0, G*(X) ≈ 0, <C, X> < 0
        let cx = -dobj;
        if cx < 0.0 {
            let ratio = gx.norm() / -cx;
            let xnorm: f64 = state.iter().map(|s| s.x.norm_squared()).sum::<f64>().sqrt();
            if ratio < 1e-8 || (ratio < 1e-5 && xnorm > 1e10) {
                return Ok(finish(SolveStatus::Infeasible, &y, it, pinf, dinf, gap, dobj));
            }
        }

        // Schur complement M_ij = tr(G_i X G_j Z⁻¹)
        let mut mat = DMatrix::zeros(m, m);
        let mut factors = Vec::with_capacity(blocks.len());
        for (b, s) in blocks.iter().zip(&state) {
            match b.kind {
                BlockKind::Psd => {
                    let (Some(cx_), Some(cz)) = (Cholesky::new(s.x.clone()), Cholesky::new(s.z.clone())) else {
                        return Ok(best_or_fail(best, &c, it, &start));
                    };
                    let lx = cx_.l();
                    let zinv = cz.inverse();
                    // Z⁻¹ = Q Qᵀ with Q = Lz⁻ᵀ
                    let lz = cz.l();
                    let q = match lz.solve_lower_triangular(&DMatrix::identity(b.dim, b.dim)) {
                        Some(li) => li.transpose(),
                        None => return Ok(best_or_fail(best, &c, it, &start)),
                    };
                    schur_psd(b, &lx, &q, &mut mat);
                    factors.push(zinv);
                }
                BlockKind::Nonneg => {
                    let w = s.x.zip_map(&s.z, |x, z| x / z);
                    schur_nonneg(b, &w, &mut mat);
                    factors.push(s.z.map(|z| 1.0 / z));
                }
            }
        }
        // Factor as is; on rank loss (e.g. unused variables) retry with a
        // growing diagonal shift and let refinement absorb it.
        let scale = (0..m).map(|i| mat[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut factored = mat.clone();
        let mut shift = 0.0;
        while !blocked_cholesky(&mut factored) {
            shift = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
            if shift > 1e-6 * scale {
                return Ok(best_or_fail(best, &c, it, &start));
            }
            factored.copy_from(&mat);
            for i in 0..m {
                factored[(i, i)] += shift;
            }
        }
        let mat = factored;

        let solve_dir = |rc: &[DMatrix<f64>]| -> Option<(DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
            // rhs = Rp + G*(Rc Z⁻¹ − X Rd Z⁻¹)
            let mut rhs = rp.clone();
            let mut tmp = DVector::zeros(m);
            let mut pieces = Vec::with_capacity(blocks.len());
            for (((b, s), zi), (rci, rdi)) in blocks.iter().zip(&state).zip(&factors).zip(rc.iter().zip(&rd)) {
                let k = match b.kind {
                    BlockKind::Psd => sym(&((rci - &s.x * rdi) * zi)),
                    BlockKind::Nonneg => (rci - s.x.component_mul(rdi)).component_mul(zi),
                };
                adjoint_into(b, &k, &mut tmp);
                pieces.push(k);
            }
            rhs += tmp;
            let mut dy = cholesky_solve(&mat, &rhs)?;
            // Iterative refinement against the unfactored operator: the
            // primal residual of the step is G*(ΔX) + Rp = rhs − M dy.
            let mut refine = 0;
            loop {
                let mut dzs = Vec::with_capacity(blocks.len());
                let mut dxs = Vec::with_capacity(blocks.len());
                for (((b, s), zi), (rci, rdi)) in blocks.iter().zip(&state).zip(&factors).zip(rc.iter().zip(&rd)) {
                    let dz = rdi + apply_g(b, &dy);
                    let dx = match b.kind {
                        BlockKind::Psd => sym(&((rci - &s.x * &dz) * zi)),
                        BlockKind::Nonneg => (rci - s.x.component_mul(&dz)).component_mul(zi),
                    };
                    dzs.push(dz);
                    dxs.push(dx);
                }
                if refine == REFINE_STEPS {
                    return Some((dy, dxs, dzs));
                }
                let mut e = rp.clone();
                for (b, dx) in blocks.iter().zip(&dxs) {
                    adjoint_into(b, dx, &mut e);
                }
                if e.norm() <= 1e-14 * (1.0 + rhs.norm()) {
                    return Some((dy, dxs, dzs));
                }
                dy += cholesky_solve(&mat, &e)?;
                refine += 1;
            }
        };
        let steps = |dxs: &[DMatrix<f64>], dzs: &[DMatrix<f64>], frac: f64| -> Option<(f64, f64)> {
            let mut ap = 1.0f64;
            let mut ad = 1.0f64;
            for ((b, s), (dx, dz)) in blocks.iter().zip(&state).zip(dxs.iter().zip(dzs)) {
                ap = ap.min(step_length(b.kind, &s.x, dx, frac)?);
                ad = ad.min(step_length(b.kind, &s.z, dz, frac)?);
            }
            Some((ap, ad))
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> = blocks
            .iter()
            .zip(&state)
            .map(|(b, s)| match b.kind {
                BlockKind::Psd => -(&s.x * &s.z),
                BlockKind::Nonneg => -s.x.component_mul(&s.z),
            })
            .collect();
        let Some((_, dxa, dza)) = solve_dir(&rc_aff) else {
            return Ok(best_or_fail(best, &c, it, &start));
        };
        let Some((apa, ada)) = steps(&dxa, &dza, 1.0) else {
            return Ok(best_or_fail(best, &c, it, &start));
        };
        let mu_aff: f64 = state
            .iter()
            .zip(dxa.iter().zip(&dza))
            .map(|(s, (dx, dz))| inner(&(&s.x + dx * apa), &(&s.z + dz * ada)))
            .sum::<f64>()
            / n_total;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rc: Vec<DMatrix<f64>> = blocks
            .iter()
            .zip(&state)
            .zip(dxa.iter().zip(&dza))
            .map(|((b, s), (dx, dz))| match b.kind {
                BlockKind::Psd => {
                    DMatrix::identity(b.dim, b.dim) * (sigma * mu) - &s.x * &s.z - dx * dz
                }
                BlockKind::Nonneg => {
                    DMatrix::from_element(b.dim, 1, sigma * mu) - s.x.component_mul(&s.z) - dx.component_mul(dz)
                }
            })
            .collect();
        let Some((dy, dx, dz)) = solve_dir(&rc) else {
            return Ok(best_or_fail(best, &c, it, &start));
        };
        let frac = opts.step_fraction;
        let Some((ap, ad)) = steps(&dx, &dz, frac) else {
            return Ok(best_or_fail(best, &c, it, &start));
        };
        for ((s, dxi), dzi) in state.iter_mut().zip(&dx).zip(&dz) {
            s.x += dxi * ap;
            s.z += dzi * ad;
            if s.x.ncols() > 1 {
                s.x = sym(&s.x);
                s.z = sym(&s.z);
            }
        }
        y += dy * ad;
        log::trace!("  step ap {ap:.3e} ad {ad:.3e} mu {mu:.3e} sigma {sigma:.3e}");
        if ap.max(ad) < 1e-8 {
            stall += 1;
            if stall > 5 {
                return Ok(best_or_fail(best, &c, it, &start));
            }
        } else {
            stall = 0;
        }
    }
    Ok(best_or_fail(best, &c, opts.max_iter, &start))
}

fn best_or_fail(
    best: Option<(f64, DVector<f64>, f64, f64, f64, f64)>,
    c: &DVector<f64>,
    it: usize,
    start: &Instant,
) -> SdpSolution {
    let (_, y, pinf, dinf, gap, dobj) =
        best.unwrap_or_else(|| (f64::INFINITY, DVector::zeros(c.len()), f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::NAN));
    SdpSolution {
        status: SolveStatus::NumericalFailure,
        objective: c.dot(&y),
        y: y.iter().copied().collect(),
        dual_objective: dobj,
        iterations: it,
        primal_residual: pinf,
        dual_residual: dinf,
        gap,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Adds `tr(G_i X G_j Z⁻¹) = <Lxᵀ G_i Q, Lxᵀ G_j Q>` for the block's
/// variables, where `X = Lx Lxᵀ` and `Z⁻¹ = Q Qᵀ`.
fn schur_psd(b: &Prepared, lx: &DMatrix<f64>, q: &DMatrix<f64>, mat: &mut DMatrix<f64>) {
    let n = b.dim;
    let nv = b.vars.len();
    if nv == 0 {
        return;
    }
    let lxt = lx.transpose();
    let mut w = DMatrix::zeros(n * n, nv);
    for (col, g) in b.mats.iter().enumerate() {
        let wi = if g.entries.len() > 2 * n {
            &lxt * g.to_dense(n) * q
        } else {
            let mut acc = DMatrix::zeros(n, n);
            for &(i, j, v) in &g.entries {
                // v (e_i e_jᵀ + e_j e_iᵀ) for i ≠ j, v e_i e_iᵀ otherwise
                acc.ger(v, &lxt.column(i), &q.row(j).transpose(), 1.0);
                if i != j {
                    acc.ger(v, &lxt.column(j), &q.row(i).transpose(), 1.0);
                }
            }
            acc
        };
        w.set_column(col, &DVector::from_column_slice(wi.as_slice()));
    }
    let local = w.tr_mul(&w);
    scatter(&b.vars, &local, mat);
}

fn schur_nonneg(b: &Prepared, ratio: &DMatrix<f64>, mat: &mut DMatrix<f64>) {
    let nv = b.vars.len();
    if nv == 0 {
        return;
    }
    let mut w = DMatrix::zeros(b.dim, nv);
    for (col, g) in b.mats.iter().enumerate() {
        for &(i, _, v) in &g.entries {
            w[(i, col)] += v * ratio[(i, 0)].sqrt();
        }
    }
    let local = w.tr_mul(&w);
    scatter(&b.vars, &local, mat);
}

fn scatter(vars: &[usize], local: &DMatrix<f64>, mat: &mut DMatrix<f64>) {
    let contiguous = vars.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous {
        let (o, n) = (vars[0], vars.len());
        let mut view = mat.view_mut((o, o), (n, n));
        view += local;
        return;
    }
    for (a, &va) in vars.iter().enumerate() {
        for (b, &vb) in vars.iter().enumerate() {
            mat[(va, vb)] += local[(a, b)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn blocked_cholesky_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 5, 96, 97, 250] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let spd = &a * a.transpose() + DMatrix::identity(n, n) * n as f64;
            let mut l = spd.clone();
            assert!(blocked_cholesky(&mut l));
            let err = (&l * l.transpose() - &spd).norm() / spd.norm();
            assert!(err < 1e-13, "n={n}: {err}");
        }
    }

    #[test]
    fn blocked_cholesky_rejects_indefinite() {
        let mut a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 2.0]));
        assert!(!blocked_cholesky(&mut a));
    }

    /// minimize y s.t. y ≥ 2 (nonneg block) → 2
    #[test]
    fn scalar_lp() {
        let mut p = LmiProblem::new(1);
        p.objective[0] = 1.0;
        let mut b = LmiBlock::new("lb", BlockKind::Nonneg, 1);
        b.constant.push(0, 0, -2.0);
        let mut g = SymSparse::new();
        g.push(0, 0, 1.0);
        b.coeffs.push((0, g));
        p.blocks.push(b);
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.y[0] - 2.0).abs() < 1e-6);
    }

    /// minimize t s.t. [[a, 1],[1, t]] ⪰ 0 with fixed a = 4 → t = 1/4
    #[test]
    fn schur_epigraph_of_inverse() {
        let mut p = LmiProblem::new(1);
        p.objective[0] = 1.0;
        let mut b = LmiBlock::new("schur", BlockKind::Psd, 2);
        b.constant.push(0, 0, 4.0);
        b.constant.push(0, 1, 1.0);
        let mut g = SymSparse::new();
        g.push(1, 1, 1.0);
        b.coeffs.push((0, g));
        p.blocks.push(b);
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.y[0] - 0.25).abs() < 1e-6, "{}", s.y[0]);
    }

    /// minimize −(y1 + y2) s.t. [[1, 0],[0, 1]] − [[y1, y2],[y2, ?]] style
    /// problem: max Σ eigenvalue weights. Here: min −tr(Y) over Y = [[y0,y1],[y1,y2]]
    /// with I − Y ⪰ 0 and Y ⪰ 0 → optimum Y = I, objective −2.
    #[test]
    fn matrix_box() {
        let mut p = LmiProblem::new(3);
        p.objective = vec![-1.0, 0.0, -1.0];
        let mut upper = LmiBlock::new("I-Y", BlockKind::Psd, 2);
        let mut lower = LmiBlock::new("Y", BlockKind::Psd, 2);
        upper.constant.push(0, 0, 1.0);
        upper.constant.push(1, 1, 1.0);
        for (v, (i, j)) in [(0, (0, 0)), (1, (0, 1)), (2, (1, 1))] {
            let mut g = SymSparse::new();
            g.push(i, j, -1.0);
            upper.coeffs.push((v, g));
            let mut g = SymSparse::new();
            g.push(i, j, 1.0);
            lower.coeffs.push((v, g));
        }
        p.blocks.push(upper);
        p.blocks.push(lower);
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective + 2.0).abs() < 1e-6);
        assert!(s.y[1].abs() < 1e-5);
    }

    #[test]
    fn detects_infeasibility() {
        // y ≥ 1 and y ≤ 0
        let mut p = LmiProblem::new(1);
        p.objective[0] = 1.0;
        let mut b = LmiBlock::new("bounds", BlockKind::Nonneg, 2);
        b.constant.push(0, 0, -1.0);
        let mut g = SymSparse::new();
        g.push(0, 0, 1.0);
        g.push(1, 1, -1.0);
        b.coeffs.push((0, g));
        p.blocks.push(b);
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    /// Random feasible LMI: optimum matches a re-solve from another start and
    /// satisfies the constraints; the objective is bounded below by the
    /// value at the generating point minus the reported gap.
    #[test]
    fn random_problem_resolve_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let m = 6;
        let mut p = LmiProblem::new(m);
        let mut blk = LmiBlock::new("rand", BlockKind::Psd, n);
        // C = I ensures y = 0 is strictly feasible; add a norm bound so the
        // problem is bounded
        for i in 0..n {
            blk.constant.push(i, i, 1.0);
        }
        for v in 0..m {
            let mut g = SymSparse::new();
            for i in 0..n {
                for j in i..n {
                    g.push(i, j, rng.random_range(-1.0..1.0));
                }
            }
            blk.coeffs.push((v, g));
        }
        p.blocks.push(blk);
        let mut bound = LmiBlock::new("box", BlockKind::Nonneg, 2 * m);
        for v in 0..m {
            bound.constant.push(2 * v, 2 * v, 3.0);
            bound.constant.push(2 * v + 1, 2 * v + 1, 3.0);
            let mut g = SymSparse::new();
            g.push(2 * v, 2 * v, 1.0);
            g.push(2 * v + 1, 2 * v + 1, -1.0);
            bound.coeffs.push((v, g));
        }
        p.blocks.push(bound);
        p.objective = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = solve(&p, &opts()).unwrap();
        let b = solve(&p, &SolverOptions { start_scale: 37.0, ..opts() }).unwrap();
        assert_eq!(a.status, SolveStatus::Optimal);
        assert_eq!(b.status, SolveStatus::Optimal);
        assert!((a.objective - b.objective).abs() <= 1e-5 * a.objective.abs().max(1.0));
        assert!(p.max_violation(&a.y) < 1e-6);
        assert!(a.objective <= 1e-7);
    }
}
