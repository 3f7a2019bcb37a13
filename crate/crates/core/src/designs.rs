//! CRB-minimizing transmit covariance designs posed as linear matrix
//! inequalities.
//!
//! * `P1` (optimal): full augmented covariance `R̃_l` on every subcarrier.
//! * `P2` (orthogonal): subcarrier `l` is used only by node `l mod N`.
//! * `P3` (beamforming): orthogonal subcarriers and one sensing covariance
//!   per node shared by all of its subcarriers.
//!
//! All three minimize `Σ_i t_i` over the `2K` target coordinates with Schur
//! epigraph blocks `[[F, e_i], [e_iᵀ, t_i]] ⪰ 0`. Epigraph variables are not
//! part of [`variable_count`]; they add `2K` scalars to every problem.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::comms::ChannelSet;
use crate::error::{Error, Result};
use crate::fim::{self, CovarianceSet, FimAffineMap, HermPart, Mode};
use crate::matrixcore::{psd_project, HermitianMatrix};
use crate::scenario::Scenario;
use crate::sdp::{self, BlockKind, LmiBlock, LmiProblem, SdpSolution, SolveStatus, SolverOptions, SymSparse};

/// Largest problem (in counted scalar variables) the builders accept.
pub const MAX_VARIABLES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    P1,
    P2,
    P3,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::P1, Family::P2, Family::P3];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::P1 => "p1",
            Family::P2 => "p2",
            Family::P3 => "p3",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Family::P1 => "optimal",
            Family::P2 => "orthogonal",
            Family::P3 => "beamforming",
        }
    }

    /// Whether subcarriers are interleaved across nodes.
    pub fn is_orthogonal(self) -> bool {
        self != Family::P1
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "optimal" => Ok(Family::P1),
            "p2" | "orthogonal" => Ok(Family::P2),
            "p3" | "beamforming" => Ok(Family::P3),
            other => Err(Error::InvalidInput(format!("unknown design family '{other}' (expected p1, p2 or p3)"))),
        }
    }
}

/// Number of real scalars in the covariance variables of a design.
pub fn variable_count(family: Family, mt: usize, nodes: usize, subcarriers: usize, users: usize) -> usize {
    let m2 = mt * mt;
    match family {
        Family::P1 => m2 * nodes * nodes * subcarriers + m2 * nodes * users * subcarriers,
        Family::P2 => m2 * (subcarriers + users * subcarriers),
        Family::P3 => m2 * (nodes + users * subcarriers),
    }
}

/// Node that owns subcarrier `l` in the orthogonal designs.
pub fn owner(l: usize, nodes: usize) -> usize {
    l % nodes
}

/// Everything that defines one design problem.
#[derive(Debug, Clone)]
pub struct DesignSpec<'a> {
    pub family: Family,
    pub scenario: &'a Scenario<f64>,
    pub channels: &'a ChannelSet,
    /// Linear SINR threshold; `None` drops the SINR constraints and the
    /// communication covariances stay at zero.
    pub gamma: Option<f64>,
    pub mode: Mode,
}

impl<'a> DesignSpec<'a> {
    /// Threshold taken from the scenario's power configuration.
    pub fn new(family: Family, scenario: &'a Scenario<f64>, channels: &'a ChannelSet, mode: Mode) -> Self {
        Self {
            family,
            scenario,
            channels,
            gamma: Some(scenario.power.sinr_threshold),
            mode,
        }
    }

    pub fn with_gamma_db(mut self, db: f64) -> Self {
        self.gamma = Some(crate::num::db_to_linear(db));
        self
    }

    pub fn sensing_only(mut self) -> Self {
        self.gamma = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let scn = self.scenario;
        scn.validate()?;
        let ch = self.channels;
        if (ch.nodes, ch.users, ch.subcarriers, ch.antennas) != (scn.n(), scn.u(), scn.l(), scn.mt()) {
            return Err(Error::InvalidInput(format!(
                "channel set is {}x{}x{}x{} but the scenario needs {}x{}x{}x{}",
                ch.nodes,
                ch.users,
                ch.subcarriers,
                ch.antennas,
                scn.n(),
                scn.u(),
                scn.l(),
                scn.mt()
            )));
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidInput(format!("SINR threshold must be positive, got {g}")));
            }
        }
        match self.family {
            Family::P2 if scn.l() < scn.n() => Err(Error::InvalidConfig(format!(
                "orthogonal design needs at least one subcarrier per node (L = {}, N = {})",
                scn.l(),
                scn.n()
            ))),
            Family::P3 if scn.l() % scn.n() != 0 => Err(Error::InvalidConfig(format!(
                "beamforming design needs L to be a multiple of N (L = {}, N = {})",
                scn.l(),
                scn.n()
            ))),
            _ => Ok(()),
        }
    }

    pub fn variable_count(&self) -> usize {
        let s = self.scenario;
        variable_count(self.family, s.mt(), s.n(), s.l(), s.u())
    }
}

/// Real scalars of one Hermitian matrix variable: `dim` diagonal entries,
/// then `(Re, Im)` for every `p < q` in row-major order. The physical matrix
/// is `scale` times the decoded one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermVar {
    pub offset: usize,
    pub dim: usize,
    pub scale: f64,
}

impl HermVar {
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Variable index of `(p, q, part)`, `p ≤ q`.
    pub fn index(&self, p: usize, q: usize, part: HermPart) -> usize {
        debug_assert!(p <= q && q < self.dim);
        if p == q {
            return self.offset + p;
        }
        let d = self.dim;
        let pair = p * (2 * d - p - 1) / 2 + (q - p - 1);
        self.offset + d + 2 * pair + usize::from(part == HermPart::Im)
    }

    /// `(p, q, part, index)` for every scalar of the sub-block starting at
    /// `off` with size `sub`, with `p`, `q` relative to `off`.
    fn scalars(&self, off: usize, sub: usize) -> Vec<(usize, usize, HermPart, usize)> {
        let mut out = Vec::with_capacity(sub * sub);
        for p in 0..sub {
            for q in p..sub {
                let (gp, gq) = (off + p, off + q);
                if p == q {
                    out.push((p, q, HermPart::Diag, self.index(gp, gq, HermPart::Diag)));
                } else {
                    out.push((p, q, HermPart::Re, self.index(gp, gq, HermPart::Re)));
                    out.push((p, q, HermPart::Im, self.index(gp, gq, HermPart::Im)));
                }
            }
        }
        out
    }

    /// Physical Hermitian matrix from the solver vector.
    pub fn decode(&self, y: &[f64]) -> HermitianMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::from_element(d, d, Complex::new(0.0, 0.0));
        for p in 0..d {
            m[(p, p)] = Complex::new(self.scale * y[self.index(p, p, HermPart::Diag)], 0.0);
            for q in (p + 1)..d {
                let z = Complex::new(y[self.index(p, q, HermPart::Re)], y[self.index(p, q, HermPart::Im)]) * self.scale;
                m[(p, q)] = z;
                m[(q, p)] = z.conj();
            }
        }
        HermitianMatrix::symmetrized(m)
    }
}

/// Where each design variable lives in the solver vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum VarLayout {
    /// `r_tilde[l]`, `comm[n][u][l]`.
    P1 { r_tilde: Vec<HermVar>, comm: Vec<Vec<Vec<HermVar>>> },
    /// `r[l]` is the owner's block on subcarrier `l`; `comm[u][l]`.
    P2 { r: Vec<HermVar>, comm: Vec<Vec<HermVar>> },
    /// `r_bar[n]` is node `n`'s averaged covariance; `comm[u][l]`.
    P3 { r_bar: Vec<HermVar>, comm: Vec<Vec<HermVar>> },
}

impl VarLayout {
    fn all(&self) -> Vec<&HermVar> {
        match self {
            VarLayout::P1 { r_tilde, comm } => r_tilde.iter().chain(comm.iter().flatten().flatten()).collect(),
            VarLayout::P2 { r, comm } => r.iter().chain(comm.iter().flatten()).collect(),
            VarLayout::P3 { r_bar, comm } => r_bar.iter().chain(comm.iter().flatten()).collect(),
        }
    }

    /// Scalars actually instantiated for covariance variables.
    pub fn covariance_scalars(&self) -> usize {
        self.all().iter().map(|v| v.len()).sum()
    }
}

/// Decoded covariance variables of a design.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignVariables {
    P1 {
        r_tilde: Vec<HermitianMatrix<f64>>,
        comm: Vec<Vec<Vec<HermitianMatrix<f64>>>>,
    },
    P2 {
        r: Vec<HermitianMatrix<f64>>,
        comm: Vec<Vec<HermitianMatrix<f64>>>,
    },
    P3 {
        r_bar: Vec<HermitianMatrix<f64>>,
        comm: Vec<Vec<HermitianMatrix<f64>>>,
    },
}

impl DesignVariables {
    pub fn family(&self) -> Family {
        match self {
            DesignVariables::P1 { .. } => Family::P1,
            DesignVariables::P2 { .. } => Family::P2,
            DesignVariables::P3 { .. } => Family::P3,
        }
    }

    /// Communication covariance of user `u` on subcarrier `l` at its
    /// transmitting node (the owner for orthogonal designs).
    fn orth_comm(comm: &[Vec<HermitianMatrix<f64>>], n: usize, nodes: usize, u: usize, l: usize, mt: usize) -> HermitianMatrix<f64> {
        if owner(l, nodes) == n {
            comm[u][l].clone()
        } else {
            HermitianMatrix::zeros(mt)
        }
    }

    /// Covariances the transmitter actually realizes. For `P3` the owner's
    /// block on subcarrier `l` is `(N/L)(R̄ − Σ_l Σ_u R_c) + Σ_u R_{c,l}`.
    pub fn transmit_covariances(&self, scn: &Scenario<f64>) -> CovarianceSet<f64> {
        let (n_nodes, users, subs, mt) = (scn.n(), scn.u(), scn.l(), scn.mt());
        match self {
            DesignVariables::P1 { r_tilde, comm } => CovarianceSet {
                r_tilde: r_tilde.clone(),
                comm: comm.clone(),
            },
            DesignVariables::P2 { r, comm } => {
                let r_tilde = (0..subs).map(|l| place_block(&r[l], owner(l, n_nodes), n_nodes, mt)).collect();
                CovarianceSet {
                    r_tilde,
                    comm: per_node_comm(comm, n_nodes, users, subs, mt),
                }
            }
            DesignVariables::P3 { r_bar, comm } => {
                let sensing = p3_sensing(r_bar, comm, scn);
                let r_tilde = (0..subs)
                    .map(|l| {
                        let n = owner(l, n_nodes);
                        let mut b = sensing[n].clone();
                        for cu in comm.iter() {
                            b = &b + &cu[l];
                        }
                        place_block(&b, n, n_nodes, mt)
                    })
                    .collect();
                CovarianceSet {
                    r_tilde,
                    comm: per_node_comm(comm, n_nodes, users, subs, mt),
                }
            }
        }
    }

    /// Covariances seen by the relaxed FIM: equal to the transmit covariances
    /// except for `P3`, whose FIM uses `(N/L)·R̄` on every owned subcarrier.
    pub fn fim_covariances(&self, scn: &Scenario<f64>) -> CovarianceSet<f64> {
        match self {
            DesignVariables::P3 { r_bar, comm } => {
                let (n_nodes, subs, mt) = (scn.n(), scn.l(), scn.mt());
                let w = n_nodes as f64 / subs as f64;
                let r_tilde = (0..subs)
                    .map(|l| {
                        let n = owner(l, n_nodes);
                        place_block(&r_bar[n].scale(w), n, n_nodes, mt)
                    })
                    .collect();
                CovarianceSet {
                    r_tilde,
                    comm: per_node_comm(comm, n_nodes, scn.u(), subs, mt),
                }
            }
            _ => self.transmit_covariances(scn),
        }
    }

    /// Communication covariance `R_{c,n,u,l}` (zero for non-owners).
    pub fn comm(&self, n: usize, u: usize, l: usize, scn: &Scenario<f64>) -> HermitianMatrix<f64> {
        match self {
            DesignVariables::P1 { comm, .. } => comm[n][u][l].clone(),
            DesignVariables::P2 { comm, .. } | DesignVariables::P3 { comm, .. } => {
                Self::orth_comm(comm, n, scn.n(), u, l, scn.mt())
            }
        }
    }
}

/// `(N/L)(R̄_n − Σ_{l owned} Σ_u R_{c,u,l})` for every node.
pub(crate) fn p3_sensing(
    r_bar: &[HermitianMatrix<f64>],
    comm: &[Vec<HermitianMatrix<f64>>],
    scn: &Scenario<f64>,
) -> Vec<HermitianMatrix<f64>> {
    let (n_nodes, subs) = (scn.n(), scn.l());
    let w = n_nodes as f64 / subs as f64;
    (0..n_nodes)
        .map(|n| {
            let mut s = r_bar[n].clone();
            for l in (0..subs).filter(|&l| owner(l, n_nodes) == n) {
                for cu in comm {
                    s = &s - &cu[l];
                }
            }
            s.scale(w)
        })
        .collect()
}

fn place_block(b: &HermitianMatrix<f64>, n: usize, nodes: usize, mt: usize) -> HermitianMatrix<f64> {
    let mut r = HermitianMatrix::zeros(mt * nodes);
    r.set_principal_block(n * mt, b);
    r
}

fn per_node_comm(
    comm: &[Vec<HermitianMatrix<f64>>],
    nodes: usize,
    users: usize,
    subs: usize,
    mt: usize,
) -> Vec<Vec<Vec<HermitianMatrix<f64>>>> {
    (0..nodes)
        .map(|n| {
            (0..users)
                .map(|u| (0..subs).map(|l| DesignVariables::orth_comm(comm, n, nodes, u, l, mt)).collect())
                .collect()
        })
        .collect()
}

/// An assembled design problem ready for the conic solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignProblem {
    pub family: Family,
    pub mode: String,
    pub gamma: Option<f64>,
    pub layout: VarLayout,
    /// Solver indices of `t_1..t_2K`.
    pub epigraph: Vec<usize>,
    /// Diagonal equilibration of the position-space FIM.
    pub equilibration: Vec<f64>,
    /// CRB of the isotropic reference covariance; the objective is divided
    /// by it.
    pub crb_reference: f64,
    pub lmi: LmiProblem,
}

impl DesignProblem {
    /// JSON debug dump of blocks, affine maps and the variable layout.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Physical epigraph values `t_i` from a solver vector.
    pub fn epigraph_values(&self, y: &[f64]) -> Vec<f64> {
        self.epigraph
            .iter()
            .enumerate()
            .map(|(i, &v)| y[v] * self.equilibration[i] * self.equilibration[i])
            .collect()
    }

    /// Decodes the covariance variables; each block is PSD-projected and the
    /// largest relative drift `‖P(X) − X‖_F / tr X` is returned alongside.
    pub fn decode(&self, y: &[f64]) -> (DesignVariables, f64) {
        let mut drift = 0.0f64;
        let mut dec = |v: &HermVar| {
            let raw = v.decode(y);
            let proj = psd_project(&raw);
            let tr = raw.trace().abs();
            let d = (&proj - &raw).frobenius_norm();
            if tr > 0.0 {
                drift = drift.max(d / tr);
            }
            proj
        };
        let vars = match &self.layout {
            VarLayout::P1 { r_tilde, comm } => DesignVariables::P1 {
                r_tilde: r_tilde.iter().map(&mut dec).collect(),
                comm: comm
                    .iter()
                    .map(|a| a.iter().map(|b| b.iter().map(&mut dec).collect()).collect())
                    .collect(),
            },
            VarLayout::P2 { r, comm } => DesignVariables::P2 {
                r: r.iter().map(&mut dec).collect(),
                comm: comm.iter().map(|a| a.iter().map(&mut dec).collect()).collect(),
            },
            VarLayout::P3 { r_bar, comm } => DesignVariables::P3 {
                r_bar: r_bar.iter().map(&mut dec).collect(),
                comm: comm.iter().map(|a| a.iter().map(&mut dec).collect()).collect(),
            },
        };
        (vars, drift)
    }
}

struct Builder {
    next: usize,
}

impl Builder {
    fn herm(&mut self, dim: usize, scale: f64) -> HermVar {
        let v = HermVar {
            offset: self.next,
            dim,
            scale,
        };
        self.next += v.len();
        v
    }

    fn scalar(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }
}

/// Adds `w · X[off.., off..]` (size `sub`) to the realified Hermitian block
/// at complex offset `at`; `cd` is the complex dimension of the block.
fn embed(block: &mut LmiBlock, cd: usize, var: &HermVar, off: usize, sub: usize, at: usize, w: f64) {
    let w = w * var.scale;
    for (p, q, part, idx) in var.scalars(off, sub) {
        let (p, q) = (at + p, at + q);
        let mut g = SymSparse::new();
        match part {
            HermPart::Diag => {
                g.push(p, p, w);
                g.push(cd + p, cd + p, w);
            }
            HermPart::Re => {
                g.push(p, q, w);
                g.push(cd + p, cd + q, w);
            }
            HermPart::Im => {
                g.push(p, cd + q, -w);
                g.push(q, cd + p, w);
            }
        }
        block.coeffs.push((idx, g));
    }
}

/// `w · hᴴ X[off.., off..] h` as `(variable, coefficient)` pairs.
fn quad_coeffs(var: &HermVar, off: usize, h: &nalgebra::DVector<Complex<f64>>, w: f64) -> Vec<(usize, f64)> {
    let w = w * var.scale;
    var.scalars(off, h.len())
        .into_iter()
        .map(|(p, q, part, idx)| {
            let c = h[p].conj() * h[q];
            let v = match part {
                HermPart::Diag => c.re,
                HermPart::Re => 2.0 * c.re,
                HermPart::Im => -2.0 * c.im,
            };
            (idx, w * v)
        })
        .collect()
}

/// Appends a row `constant + Σ coeffs ≥ 0` to a nonnegative block, scaled so
/// its largest magnitude is one.
fn push_row(block: &mut LmiBlock, constant: f64, coeffs: &[(usize, f64)]) {
    let big = coeffs.iter().map(|c| c.1.abs()).fold(constant.abs(), f64::max);
    let s = if big > 0.0 { 1.0 / big } else { 1.0 };
    let row = block.dim;
    block.dim += 1;
    block.constant.push(row, row, constant * s);
    for &(v, c) in coeffs {
        let mut g = SymSparse::new();
        g.push(row, row, c * s);
        block.coeffs.push((v, g));
    }
}

/// Builds the LMI for `spec`.
pub fn build(spec: &DesignSpec) -> Result<DesignProblem> {
    spec.validate()?;
    let count = spec.variable_count();
    if count > MAX_VARIABLES {
        return Err(Error::TooLarge {
            vars: count,
            limit: MAX_VARIABLES,
        });
    }
    let scn = spec.scenario;
    let (n_nodes, k, users, subs, mt) = (scn.n(), scn.k(), scn.u(), scn.l(), scn.mt());
    let pt = scn.power.per_antenna_power;
    let s = pt / subs as f64;

    // Equilibration from the isotropic full-power reference.
    let reference = reference_covariances(spec.family, scn);
    let fim_ref = fim::evaluate_crb(&reference, scn, spec.mode)?;
    let dim = fim_ref.fim_theta.nrows();
    let mut equil = Vec::with_capacity(dim);
    for i in 0..dim {
        let d = fim_ref.fim_theta[(i, i)];
        if !(d > 0.0) {
            return Err(Error::Unidentifiable(f64::INFINITY));
        }
        equil.push(1.0 / d.sqrt());
    }
    let crb_ref = fim_ref.crb_position;

    let mut b = Builder { next: 0 };
    let layout = match spec.family {
        Family::P1 => VarLayout::P1 {
            r_tilde: (0..subs).map(|_| b.herm(mt * n_nodes, s)).collect(),
            comm: (0..n_nodes)
                .map(|_| (0..users).map(|_| (0..subs).map(|_| b.herm(mt, s)).collect()).collect())
                .collect(),
        },
        Family::P2 => VarLayout::P2 {
            r: (0..subs).map(|_| b.herm(mt, s * n_nodes as f64)).collect(),
            comm: (0..users).map(|_| (0..subs).map(|_| b.herm(mt, s)).collect()).collect(),
        },
        Family::P3 => VarLayout::P3 {
            r_bar: (0..n_nodes).map(|_| b.herm(mt, pt)).collect(),
            comm: (0..users).map(|_| (0..subs).map(|_| b.herm(mt, s)).collect()).collect(),
        },
    };
    if layout.covariance_scalars() != count {
        return Err(Error::Internal(format!(
            "instantiated {} covariance scalars, expected {count}",
            layout.covariance_scalars()
        )));
    }
    let epigraph: Vec<usize> = (0..2 * k).map(|_| b.scalar()).collect();
    let mut lmi = LmiProblem::new(b.next);
    for (i, &t) in epigraph.iter().enumerate() {
        lmi.objective[t] = equil[i] * equil[i] / crb_ref;
    }

    // FIM coefficient of every covariance scalar that enters the FIM.
    let map = FimAffineMap::theta(scn, spec.mode)?;
    let mut fim_terms: Vec<(usize, DMatrix<f64>)> = Vec::new();
    let mut add_fim = |idx: usize, c: DMatrix<f64>, w: f64| {
        let e = DMatrix::from_fn(dim, dim, |i, j| c[(i, j)] * equil[i] * equil[j] * w);
        fim_terms.push((idx, e));
    };
    match &layout {
        VarLayout::P1 { r_tilde, .. } => {
            for (l, v) in r_tilde.iter().enumerate() {
                for (p, q, part, idx) in v.scalars(0, v.dim) {
                    add_fim(idx, map.coeff(l, p, q, part), v.scale);
                }
            }
        }
        VarLayout::P2 { r, .. } => {
            for (l, v) in r.iter().enumerate() {
                let o = owner(l, n_nodes) * mt;
                for (p, q, part, idx) in v.scalars(0, mt) {
                    add_fim(idx, map.coeff(l, o + p, o + q, part), v.scale);
                }
            }
        }
        VarLayout::P3 { r_bar, .. } => {
            let w = n_nodes as f64 / subs as f64;
            for (n, v) in r_bar.iter().enumerate() {
                let o = n * mt;
                for (p, q, part, idx) in v.scalars(0, mt) {
                    let mut c = DMatrix::zeros(dim, dim);
                    for l in (0..subs).filter(|&l| owner(l, n_nodes) == n) {
                        c += map.coeff(l, o + p, o + q, part);
                    }
                    add_fim(idx, c, v.scale * w);
                }
            }
        }
    }
    for (i, &t) in epigraph.iter().enumerate() {
        let mut blk = LmiBlock::new(format!("epigraph[{i}]"), BlockKind::Psd, dim + 1);
        blk.constant.push(i, dim, 1.0);
        let mut gt = SymSparse::new();
        gt.push(dim, dim, 1.0);
        blk.coeffs.push((t, gt));
        for (idx, c) in &fim_terms {
            let mut g = SymSparse::new();
            for a in 0..dim {
                for bb in a..dim {
                    g.push(a, bb, c[(a, bb)]);
                }
            }
            blk.coeffs.push((*idx, g));
        }
        lmi.blocks.push(blk);
    }

    let mut power = LmiBlock::new("power", BlockKind::Nonneg, 0);
    let mut sinr = LmiBlock::new("sinr", BlockKind::Nonneg, 0);
    let noise = scn.comm_noise_per_subcarrier();
    let sinr_weight = spec.gamma.map(|g| 1.0 + 1.0 / g);

    match &layout {
        VarLayout::P1 { r_tilde, comm } => {
            let cd = mt * n_nodes;
            for (l, v) in r_tilde.iter().enumerate() {
                let mut blk = LmiBlock::new(format!("psd r_tilde[l={l}]"), BlockKind::Psd, 2 * cd);
                embed(&mut blk, cd, v, 0, cd, 0, 1.0);
                lmi.blocks.push(blk);
            }
            for n in 0..n_nodes {
                for l in 0..subs {
                    for u in 0..users {
                        comm_psd(&mut lmi, &comm[n][u][l], n, u, l);
                    }
                    let mut blk = LmiBlock::new(format!("sensing n={n} l={l}"), BlockKind::Psd, 2 * mt);
                    embed(&mut blk, mt, &r_tilde[l], n * mt, mt, 0, 1.0);
                    for cu in comm[n].iter() {
                        embed(&mut blk, mt, &cu[l], 0, mt, 0, -1.0);
                    }
                    lmi.blocks.push(blk);
                }
                for a in 0..mt {
                    let coeffs: Vec<(usize, f64)> = r_tilde
                        .iter()
                        .map(|v| (v.index(n * mt + a, n * mt + a, HermPart::Diag), -v.scale))
                        .collect();
                    push_row(&mut power, pt, &coeffs);
                }
            }
            if let Some(w) = sinr_weight {
                for l in 0..subs {
                    for u in 0..users {
                        let mut coeffs = Vec::new();
                        for n in 0..n_nodes {
                            let h = spec.channels.get(n, u, l);
                            coeffs.extend(quad_coeffs(&comm[n][u][l], 0, h, w));
                            coeffs.extend(quad_coeffs(&r_tilde[l], n * mt, h, -1.0));
                        }
                        push_row(&mut sinr, -noise, &coeffs);
                    }
                }
            }
        }
        VarLayout::P2 { r, comm } => {
            for l in 0..subs {
                let n = owner(l, n_nodes);
                for u in 0..users {
                    comm_psd(&mut lmi, &comm[u][l], n, u, l);
                }
                let mut blk = LmiBlock::new(format!("sensing n={n} l={l}"), BlockKind::Psd, 2 * mt);
                embed(&mut blk, mt, &r[l], 0, mt, 0, 1.0);
                for cu in comm.iter() {
                    embed(&mut blk, mt, &cu[l], 0, mt, 0, -1.0);
                }
                lmi.blocks.push(blk);
                if let Some(w) = sinr_weight {
                    for u in 0..users {
                        let h = spec.channels.get(n, u, l);
                        let mut coeffs = quad_coeffs(&comm[u][l], 0, h, w);
                        coeffs.extend(quad_coeffs(&r[l], 0, h, -1.0));
                        push_row(&mut sinr, -noise, &coeffs);
                    }
                }
            }
            for n in 0..n_nodes {
                for a in 0..mt {
                    let coeffs: Vec<(usize, f64)> = (0..subs)
                        .filter(|&l| owner(l, n_nodes) == n)
                        .map(|l| (r[l].index(a, a, HermPart::Diag), -r[l].scale))
                        .collect();
                    push_row(&mut power, pt, &coeffs);
                }
            }
        }
        VarLayout::P3 { r_bar, comm } => {
            let w_avg = n_nodes as f64 / subs as f64;
            for n in 0..n_nodes {
                let owned: Vec<usize> = (0..subs).filter(|&l| owner(l, n_nodes) == n).collect();
                let mut blk = LmiBlock::new(format!("sensing n={n}"), BlockKind::Psd, 2 * mt);
                embed(&mut blk, mt, &r_bar[n], 0, mt, 0, 1.0);
                for &l in &owned {
                    for u in 0..users {
                        comm_psd(&mut lmi, &comm[u][l], n, u, l);
                        embed(&mut blk, mt, &comm[u][l], 0, mt, 0, -1.0);
                    }
                }
                lmi.blocks.push(blk);
                for a in 0..mt {
                    push_row(&mut power, pt, &[(r_bar[n].index(a, a, HermPart::Diag), -r_bar[n].scale)]);
                }
                if let Some(w) = sinr_weight {
                    for &l in &owned {
                        for u in 0..users {
                            let h = spec.channels.get(n, u, l);
                            // U_l = (N/L)(R̄ − Σ_{l'} Σ_u' R_c) + Σ_u' R_{c,l}
                            let mut coeffs = quad_coeffs(&comm[u][l], 0, h, w);
                            coeffs.extend(quad_coeffs(&r_bar[n], 0, h, -w_avg));
                            for &l2 in &owned {
                                for cu in comm.iter() {
                                    let c = if l2 == l { w_avg - 1.0 } else { w_avg };
                                    coeffs.extend(quad_coeffs(&cu[l2], 0, h, c));
                                }
                            }
                            push_row(&mut sinr, -noise, &coeffs);
                        }
                    }
                }
            }
        }
    }
    lmi.blocks.push(power);
    if sinr.dim > 0 {
        lmi.blocks.push(sinr);
    }
    lmi.validate()?;
    Ok(DesignProblem {
        family: spec.family,
        mode: spec.mode.as_str().to_string(),
        gamma: spec.gamma,
        layout,
        epigraph,
        equilibration: equil[..2 * k].to_vec(),
        crb_reference: crb_ref,
        lmi,
    })
}

fn comm_psd(lmi: &mut LmiProblem, v: &HermVar, n: usize, u: usize, l: usize) {
    let mut blk = LmiBlock::new(format!("psd comm n={n} u={u} l={l}"), BlockKind::Psd, 2 * v.dim);
    embed(&mut blk, v.dim, v, 0, v.dim, 0, 1.0);
    lmi.blocks.push(blk);
}

/// Feasible full-power isotropic covariances for the family's structure.
pub fn reference_covariances(family: Family, scn: &Scenario<f64>) -> CovarianceSet<f64> {
    let (n_nodes, subs, mt) = (scn.n(), scn.l(), scn.mt());
    let pt = scn.power.per_antenna_power;
    match family {
        Family::P1 => CovarianceSet::isotropic(scn, pt / subs as f64),
        Family::P2 | Family::P3 => {
            // every node spreads its budget over the subcarriers it owns
            let mut counts = vec![0usize; n_nodes];
            for l in 0..subs {
                counts[owner(l, n_nodes)] += 1;
            }
            let r_tilde = (0..subs)
                .map(|l| {
                    let n = owner(l, n_nodes);
                    let b = HermitianMatrix::identity(mt).scale(pt / counts[n] as f64);
                    place_block(&b, n, n_nodes, mt)
                })
                .collect();
            CovarianceSet {
                r_tilde,
                comm: vec![vec![vec![HermitianMatrix::zeros(mt); subs]; scn.u()]; n_nodes],
            }
        }
    }
}

/// Outcome of one design solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub family: Family,
    pub mode: Mode,
    pub gamma: Option<f64>,
    pub status: SolveStatus,
    /// Relaxed optimum `Σ t_i` in m².
    pub objective: f64,
    /// Position CRB of the decoded relaxed covariances (FIM view), m².
    pub crb: Option<f64>,
    pub variables: Option<DesignVariables>,
    pub epigraph: Vec<f64>,
    /// Largest relative PSD-projection drift applied while decoding.
    pub psd_drift: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn rcrb(&self, targets: usize) -> Option<f64> {
        self.crb.map(|c| fim::rcrb(c, targets))
    }
}

/// Builds and solves a design with default solver options.
pub fn solve(spec: &DesignSpec) -> Result<SolveReport> {
    solve_with(spec, &SolverOptions::default())
}

pub fn solve_with(spec: &DesignSpec, opts: &SolverOptions) -> Result<SolveReport> {
    let started = std::time::Instant::now();
    let problem = build(spec)?;
    let sol = sdp::solve(&problem.lmi, opts)?;
    let mut report = finish(spec, &problem, &sol)?;
    report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn finish(spec: &DesignSpec, problem: &DesignProblem, sol: &SdpSolution) -> Result<SolveReport> {
    let mut report = SolveReport {
        family: spec.family,
        mode: spec.mode,
        gamma: spec.gamma,
        status: sol.status,
        objective: sol.objective * problem.crb_reference,
        crb: None,
        variables: None,
        epigraph: Vec::new(),
        psd_drift: 0.0,
        iterations: sol.iterations,
        wall_ms: sol.wall_ms,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
    };
    if sol.status == SolveStatus::Infeasible {
        report.objective = f64::INFINITY;
        return Ok(report);
    }
    let (vars, drift) = problem.decode(&sol.y);
    if drift > 1e-7 {
        log::warn!("{} solution needed a PSD projection of relative size {drift:e}", spec.family);
    }
    let cov = vars.fim_covariances(spec.scenario);
    report.crb = match fim::evaluate_crb(&cov, spec.scenario, spec.mode) {
        Ok(b) => Some(b.crb_position),
        Err(Error::Unidentifiable(c)) => {
            log::warn!("decoded {} solution is unidentifiable (condition {c:e})", spec.family);
            None
        }
        Err(e) => return Err(e),
    };
    report.epigraph = problem.epigraph_values(&sol.y);
    report.psd_drift = drift;
    report.variables = Some(vars);
    Ok(report)
}
