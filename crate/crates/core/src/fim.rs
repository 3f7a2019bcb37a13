//! Fisher information for noncoherent distributed target localization.
//!
//! The received mean at node `n`, subcarrier `l` is
//! `μ_{n,l} = Σ_m Σ_k b_{n,m}^k a_r(θ_n^k) a_t(θ_m^k)ᵀ x_{m,l} d_l(τ_n^k + τ_m^k)`,
//! so every derivative `∂μ_{n,l}/∂ψ` is a linear operator `D_{ψ,n,l}` applied
//! to the stacked transmit vector `x̃_l`. The FIM entry is then
//! `(2/σ²) Σ_{n,l} Re tr(D_aᴴ D_b R̃_l)` with `σ² = σ_s²/L`, which is linear
//! in the covariances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::matrixcore::HermitianMatrix;
use crate::num::{cj, cone, creal, czero, lit, to_f64, Real};
use crate::scenario::{
    delay_derivative, delay_vector, geometry_jacobian, steering, steering_derivative, LinkGeometry,
    Scenario,
};

/// Condition number above which the position-space FIM is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Which measurements the localizer exploits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Angles and delays.
    Hybrid,
    /// Delays only (array-response derivatives removed).
    TofOnly,
    /// Angles only (delay derivatives removed).
    AoaOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Hybrid, Mode::TofOnly, Mode::AoaOnly];

    fn uses_angles(self) -> bool {
        self != Mode::TofOnly
    }

    fn uses_delays(self) -> bool {
        self != Mode::AoaOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::TofOnly => "tof",
            Mode::AoaOnly => "aoa",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Mode::Hybrid),
            "tof" | "tof_only" => Ok(Mode::TofOnly),
            "aoa" | "aoa_only" => Ok(Mode::AoaOnly),
            other => Err(Error::InvalidInput(format!("unknown localization mode '{other}'"))),
        }
    }
}

/// Index layout of the raw parameter vector `Ψ = [θ, τ, Re b, Im b]`.
///
/// Angles and delays are node-major (`n·K + k`); amplitudes run `n` outer,
/// `m` middle, `k` inner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub nodes: usize,
    pub targets: usize,
}

impl ParamLayout {
    pub fn new(nodes: usize, targets: usize) -> Self {
        Self { nodes, targets }
    }

    pub fn kn(&self) -> usize {
        self.nodes * self.targets
    }

    pub fn kn2(&self) -> usize {
        self.kn() * self.nodes
    }

    pub fn psi_dim(&self) -> usize {
        2 * self.kn() + 2 * self.kn2()
    }

    pub fn theta_dim(&self) -> usize {
        2 * self.targets + 2 * self.kn2()
    }

    pub fn angle(&self, n: usize, k: usize) -> usize {
        n * self.targets + k
    }

    pub fn delay(&self, n: usize, k: usize) -> usize {
        self.kn() + n * self.targets + k
    }

    pub fn amp_re(&self, n: usize, m: usize, k: usize) -> usize {
        2 * self.kn() + (n * self.nodes + m) * self.targets + k
    }

    pub fn amp_im(&self, n: usize, m: usize, k: usize) -> usize {
        self.amp_re(n, m, k) + self.kn2()
    }
}

/// Transmit covariances: augmented per-subcarrier `R̃_l` (node blocks of size
/// `M_t`) and per-node, per-user, per-subcarrier communication covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet<T: Real> {
    pub r_tilde: Vec<HermitianMatrix<T>>,
    /// Indexed `[n][u][l]`.
    pub comm: Vec<Vec<Vec<HermitianMatrix<T>>>>,
}

impl<T: Real> CovarianceSet<T> {
    /// Spatially white, uncorrelated across nodes, no communication part.
    pub fn isotropic(scn: &Scenario<T>, per_antenna_per_subcarrier: T) -> Self {
        let dim = scn.mt() * scn.n();
        let r = HermitianMatrix::from_diagonal(&vec![per_antenna_per_subcarrier; dim]);
        Self {
            r_tilde: vec![r; scn.l()],
            comm: vec![vec![vec![HermitianMatrix::zeros(scn.mt()); scn.l()]; scn.u()]; scn.n()],
        }
    }

    /// Node block `R_{ij,l}`.
    pub fn block(&self, l: usize, i: usize, j: usize, mt: usize) -> DMatrix<Complex<T>> {
        self.r_tilde[l].block(i * mt, j * mt, mt, mt)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            r_tilde: self.r_tilde.iter().map(|r| r.scale(s)).collect(),
            comm: self
                .comm
                .iter()
                .map(|per_u| per_u.iter().map(|per_l| per_l.iter().map(|r| r.scale(s)).collect()).collect())
                .collect(),
        }
    }

    pub fn check_dims(&self, scn: &Scenario<T>) -> Result<()> {
        let dim = scn.mt() * scn.n();
        if self.r_tilde.len() != scn.l() || self.r_tilde.iter().any(|r| r.dim() != dim) {
            return Err(Error::InvalidInput(format!(
                "expected {} augmented covariances of dimension {dim}",
                scn.l()
            )));
        }
        Ok(())
    }

    /// Per-antenna transmit power summed over subcarriers, stacked by node.
    pub fn antenna_powers(&self) -> Vec<T> {
        let dim = self.r_tilde.first().map_or(0, |r| r.dim());
        let mut p = vec![T::zero(); dim];
        for r in &self.r_tilde {
            for (acc, d) in p.iter_mut().zip(r.diagonal()) {
                *acc += d;
            }
        }
        p
    }
}

/// Left/right factor selector for [`expected_link_gram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    /// `a_t` with `d_l`.
    V,
    /// `ȧ_t` with `d_l`.
    VDotTheta,
    /// `a_t` with `ḋ_l`.
    VDotTau,
}

/// Cached steering/delay responses for one scenario.
pub struct Responses<T: Real> {
    links: LinkGeometry<T>,
    /// `[n][k]`
    ar: Vec<Vec<DVector<Complex<T>>>>,
    ar_dot: Vec<Vec<DVector<Complex<T>>>>,
    at: Vec<Vec<DVector<Complex<T>>>>,
    at_dot: Vec<Vec<DVector<Complex<T>>>>,
    /// `[n][m][k]` over subcarriers, using the bistatic delay.
    d: Vec<Vec<Vec<DVector<Complex<T>>>>>,
    d_dot: Vec<Vec<Vec<DVector<Complex<T>>>>>,
}

impl<T: Real> Responses<T> {
    pub fn new(scn: &Scenario<T>) -> Result<Self> {
        let links = scn.geometry.links()?;
        let (n_nodes, k_t) = (scn.n(), scn.k());
        let (d0, lam) = (scn.ofdm.antenna_spacing, scn.ofdm.carrier_wavelength);
        let per_nk = |f: &dyn Fn(T) -> DVector<Complex<T>>| -> Vec<Vec<DVector<Complex<T>>>> {
            (0..n_nodes)
                .map(|n| (0..k_t).map(|k| f(links.theta[n][k])).collect())
                .collect()
        };
        let ar = per_nk(&|t| steering(t, scn.mr(), d0, lam));
        let ar_dot = per_nk(&|t| steering_derivative(t, scn.mr(), d0, lam));
        let at = per_nk(&|t| steering(t, scn.mt(), d0, lam));
        let at_dot = per_nk(&|t| steering_derivative(t, scn.mt(), d0, lam));
        let per_nmk = |f: &dyn Fn(T) -> DVector<Complex<T>>| {
            (0..n_nodes)
                .map(|n| {
                    (0..n_nodes)
                        .map(|m| (0..k_t).map(|k| f(links.bistatic_tau(n, m, k))).collect())
                        .collect()
                })
                .collect()
        };
        let d = per_nmk(&|tau| delay_vector(tau, scn.l(), scn.ofdm.bandwidth));
        let d_dot = per_nmk(&|tau| delay_derivative(tau, scn.l(), scn.ofdm.bandwidth));
        Ok(Self {
            links,
            ar,
            ar_dot,
            at,
            at_dot,
            d,
            d_dot,
        })
    }

    pub fn links(&self) -> &LinkGeometry<T> {
        &self.links
    }

    fn tx(&self, kind: LinkKind, m: usize, k: usize) -> &DVector<Complex<T>> {
        match kind {
            LinkKind::VDotTheta => &self.at_dot[m][k],
            _ => &self.at[m][k],
        }
    }

    fn delay(&self, kind: LinkKind, n: usize, m: usize, k: usize) -> &DVector<Complex<T>> {
        match kind {
            LinkKind::VDotTau => &self.d_dot[n][m][k],
            _ => &self.d[n][m][k],
        }
    }
}

/// `E[V_{n,i}ᴴ V_{n,j}]` (or a derivative variant) as a `K×K` matrix.
///
/// `V_{n,m}` is `L×K` with entries `a_t(θ_m^k)ᵀ x_{m,l} · d_l(τ_n^k+τ_m^k)`;
/// the expectation over the transmit symbols only needs the covariance block
/// `R_{ij,l} = E[x_{i,l} x_{j,l}ᴴ]`.
pub fn expected_link_gram<T: Real>(
    i: usize,
    j: usize,
    n: usize,
    left: LinkKind,
    right: LinkKind,
    cov: &CovarianceSet<T>,
    scn: &Scenario<T>,
    resp: &Responses<T>,
) -> Result<DMatrix<Complex<T>>> {
    cov.check_dims(scn)?;
    let (k_t, mt) = (scn.k(), scn.mt());
    if i >= scn.n() || j >= scn.n() || n >= scn.n() {
        return Err(Error::InvalidInput("node index out of range".into()));
    }
    let mut out = DMatrix::from_element(k_t, k_t, czero());
    for l in 0..scn.l() {
        // E[conj(uᵀx_i)(vᵀx_j)] = vᵀ R_{ji} conj(u)
        let r_ji = cov.block(l, j, i, mt);
        for k in 0..k_t {
            let u = resp.tx(left, i, k).map(|z| z.conj());
            let r_u = &r_ji * u;
            let gi = resp.delay(left, n, i, k)[l].conj();
            for kp in 0..k_t {
                let v = resp.tx(right, j, kp);
                let s = v.iter().zip(r_u.iter()).fold(czero::<T>(), |acc, (a, b)| acc + *a * *b);
                out[(k, kp)] += s * gi * resp.delay(right, n, j, kp)[l];
            }
        }
    }
    Ok(out)
}

/// `D_{ψ,n,l}` for every `ψ`: each is `M_r × M_t N`, acting on `x̃_l`.
pub fn derivative_operators<T: Real>(
    scn: &Scenario<T>,
    resp: &Responses<T>,
    mode: Mode,
    n: usize,
    l: usize,
) -> Vec<DMatrix<Complex<T>>> {
    let (n_nodes, k_t, mt, mr) = (scn.n(), scn.k(), scn.mt(), scn.mr());
    let lay = ParamLayout::new(n_nodes, k_t);
    let mut ops = vec![DMatrix::from_element(mr, mt * n_nodes, czero()); lay.psi_dim()];
    let amps = &scn.power.amplitudes;
    for m in 0..n_nodes {
        let cols = m * mt;
        for k in 0..k_t {
            let b = amps.get(n, m, k);
            let d = resp.d[n][m][k][l];
            let ar = &resp.ar[n][k];
            let at = &resp.at[m][k];
            let base = ar * at.transpose();
            let mut add = |p: usize, blk: &DMatrix<Complex<T>>| {
                let mut view = ops[p].view_mut((0, cols), (mr, mt));
                view += blk;
            };
            if mode.uses_angles() {
                add(lay.angle(n, k), &(&resp.ar_dot[n][k] * at.transpose() * (b * d)));
                add(lay.angle(m, k), &(ar * resp.at_dot[m][k].transpose() * (b * d)));
            }
            if mode.uses_delays() {
                let blk = &base * (b * resp.d_dot[n][m][k][l]);
                add(lay.delay(n, k), &blk);
                add(lay.delay(m, k), &blk);
            }
            add(lay.amp_re(n, m, k), &(&base * d));
            add(lay.amp_im(n, m, k), &(&base * (cj::<T>() * d)));
        }
    }
    ops
}

/// FIM over `Ψ` via the derivative operators.
pub fn assemble_fim_psi<T: Real>(cov: &CovarianceSet<T>, scn: &Scenario<T>, mode: Mode) -> Result<DMatrix<T>> {
    cov.check_dims(scn)?;
    let resp = Responses::new(scn)?;
    let lay = ParamLayout::new(scn.n(), scn.k());
    let p = lay.psi_dim();
    let rows = scn.mr() * scn.mt() * scn.n();
    let mut acc = DMatrix::from_element(p, p, czero::<T>());
    for l in 0..scn.l() {
        let r = cov.r_tilde[l].as_matrix();
        for n in 0..scn.n() {
            let ops = derivative_operators(scn, &resp, mode, n, l);
            let mut q1 = DMatrix::from_element(rows, p, czero());
            let mut q2 = DMatrix::from_element(rows, p, czero());
            for (a, d) in ops.iter().enumerate() {
                q1.set_column(a, &DVector::from_column_slice(d.as_slice()));
                let dr = d * r;
                q2.set_column(a, &DVector::from_column_slice(dr.as_slice()));
            }
            acc += q1.adjoint() * q2;
        }
    }
    Ok(finish(acc, scn))
}

fn finish<T: Real>(acc: DMatrix<Complex<T>>, scn: &Scenario<T>) -> DMatrix<T> {
    let scale = lit::<T>(2.0) / scn.sense_noise_per_subcarrier();
    let re = acc.map(|z| z.re * scale);
    (&re + re.transpose()) * lit::<T>(0.5)
}

#[derive(Clone, Copy)]
enum Rx {
    A,
    ADot,
}

/// One summand of `∂μ_n/∂ψ`: `c · r_{n,k} (u_{m,k}ᵀ x_m) g_{n,m,k}`.
#[derive(Clone, Copy)]
struct Term<T: Real> {
    m: usize,
    k: usize,
    c: Complex<T>,
    rx: Rx,
    tx: LinkKind,
}

fn terms_for<T: Real>(scn: &Scenario<T>, mode: Mode, n: usize, psi: usize) -> Vec<Term<T>> {
    let (n_nodes, k_t) = (scn.n(), scn.k());
    let lay = ParamLayout::new(n_nodes, k_t);
    let amps = &scn.power.amplitudes;
    let kn = lay.kn();
    let mut out = Vec::new();
    if psi < kn {
        if !mode.uses_angles() {
            return out;
        }
        let (p, k) = (psi / k_t, psi % k_t);
        if p == n {
            for m in 0..n_nodes {
                out.push(Term { m, k, c: amps.get(n, m, k), rx: Rx::ADot, tx: LinkKind::V });
            }
        }
        out.push(Term { m: p, k, c: amps.get(n, p, k), rx: Rx::A, tx: LinkKind::VDotTheta });
    } else if psi < 2 * kn {
        if !mode.uses_delays() {
            return out;
        }
        let (p, k) = ((psi - kn) / k_t, (psi - kn) % k_t);
        for m in 0..n_nodes {
            let mult = (n == p) as u8 + (m == p) as u8;
            if mult > 0 {
                let c = amps.get(n, m, k) * lit::<T>(mult as f64);
                out.push(Term { m, k, c, rx: Rx::A, tx: LinkKind::VDotTau });
            }
        }
    } else {
        let idx = psi - 2 * kn;
        let (imag, idx) = if idx >= lay.kn2() { (true, idx - lay.kn2()) } else { (false, idx) };
        let (nn, m, k) = (idx / (n_nodes * k_t), (idx / k_t) % n_nodes, idx % k_t);
        if nn == n {
            let c = if imag { cj() } else { cone() };
            out.push(Term { m, k, c, rx: Rx::A, tx: LinkKind::V });
        }
    }
    out
}

/// FIM over `Ψ` assembled from the block structure: Hadamard-type products
/// of receive-array Gram entries with expected link Grams.
///
/// Algebraically equal to [`assemble_fim_psi`]; kept as an independent route
/// used for cross-checking.
pub fn assemble_fim_psi_blockwise<T: Real>(
    cov: &CovarianceSet<T>,
    scn: &Scenario<T>,
    mode: Mode,
) -> Result<DMatrix<T>> {
    cov.check_dims(scn)?;
    let resp = Responses::new(scn)?;
    let n_nodes = scn.n();
    let p = ParamLayout::new(n_nodes, scn.k()).psi_dim();
    let kinds = [LinkKind::V, LinkKind::VDotTheta, LinkKind::VDotTau];
    let kind_ix = |k: LinkKind| kinds.iter().position(|&x| x == k).unwrap_or(0);
    let mut acc = DMatrix::from_element(p, p, czero::<T>());
    for n in 0..n_nodes {
        let mut grams = vec![None; n_nodes * n_nodes * 9];
        let mut gram = |i: usize, j: usize, a: LinkKind, b: LinkKind| -> Result<DMatrix<Complex<T>>> {
            let slot = ((i * n_nodes + j) * 3 + kind_ix(a)) * 3 + kind_ix(b);
            if grams[slot].is_none() {
                grams[slot] = Some(expected_link_gram(i, j, n, a, b, cov, scn, &resp)?);
            }
            Ok(grams[slot].clone().unwrap_or_else(|| DMatrix::zeros(0, 0)))
        };
        let terms: Vec<Vec<Term<T>>> = (0..p).map(|a| terms_for(scn, mode, n, a)).collect();
        for a in 0..p {
            for b in a..p {
                let mut s = czero();
                for ta in &terms[a] {
                    for tb in &terms[b] {
                        let ra = match ta.rx {
                            Rx::A => &resp.ar[n][ta.k],
                            Rx::ADot => &resp.ar_dot[n][ta.k],
                        };
                        let rb = match tb.rx {
                            Rx::A => &resp.ar[n][tb.k],
                            Rx::ADot => &resp.ar_dot[n][tb.k],
                        };
                        let rr = ra.dotc(rb);
                        let g = gram(ta.m, tb.m, ta.tx, tb.tx)?;
                        s += ta.c.conj() * tb.c * rr * g[(ta.k, tb.k)];
                    }
                }
                acc[(a, b)] += s;
                if a != b {
                    acc[(b, a)] += s.conj();
                }
            }
        }
    }
    Ok(finish(acc, scn))
}

/// Part of a Hermitian matrix a real decision scalar controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HermPart {
    /// Real diagonal entry `(p, p)`.
    Diag,
    /// Real part of `(p, q)`, `p < q`.
    Re,
    /// Imaginary part of `(p, q)`, `p < q`.
    Im,
}

/// Which covariance entries a design exposes to the FIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineScope {
    /// Every entry of every `R̃_l`.
    Full,
    /// Only the owning node's diagonal block `R_{n̄n̄,l}`, `n̄ = l mod N`.
    Orthogonal,
}

/// One real decision scalar and the constant matrix it multiplies.
#[derive(Debug, Clone)]
pub struct AffineTerm<T: Real> {
    pub subcarrier: usize,
    pub p: usize,
    pub q: usize,
    pub part: HermPart,
    pub coeff: DMatrix<T>,
}

/// FIM as a linear function of the covariance entries, optionally already
/// chained to the position-space parameters through the Jacobian.
#[derive(Debug, Clone)]
pub struct FimAffineMap<T: Real> {
    dim: usize,
    scale: T,
    /// `cols[l][n][p]` is `M_r × dim`: column `p` of every derivative operator.
    cols: Vec<Vec<Vec<DMatrix<Complex<T>>>>>,
    tx_dim: usize,
    nodes: usize,
    mt: usize,
}

impl<T: Real> FimAffineMap<T> {
    /// Coefficients of `fim_psi`.
    pub fn psi(scn: &Scenario<T>, mode: Mode) -> Result<Self> {
        Self::build(scn, mode, None)
    }

    /// Coefficients of `fim_theta = J fim_psi Jᵀ`.
    pub fn theta(scn: &Scenario<T>, mode: Mode) -> Result<Self> {
        let j = geometry_jacobian(&scn.geometry)?;
        Self::build(scn, mode, Some(j))
    }

    fn build(scn: &Scenario<T>, mode: Mode, jac: Option<DMatrix<T>>) -> Result<Self> {
        let resp = Responses::new(scn)?;
        let tx_dim = scn.mt() * scn.n();
        let jt = jac.map(|j| j.transpose().map(creal));
        let mut cols = Vec::with_capacity(scn.l());
        let mut dim = ParamLayout::new(scn.n(), scn.k()).psi_dim();
        for l in 0..scn.l() {
            let mut per_n = Vec::with_capacity(scn.n());
            for n in 0..scn.n() {
                let ops = derivative_operators(scn, &resp, mode, n, l);
                let per_p: Vec<DMatrix<Complex<T>>> = (0..tx_dim)
                    .map(|p| {
                        let c = DMatrix::from_fn(scn.mr(), ops.len(), |r, a| ops[a][(r, p)]);
                        match &jt {
                            Some(jt) => c * jt,
                            None => c,
                        }
                    })
                    .collect();
                per_n.push(per_p);
            }
            cols.push(per_n);
        }
        if let Some(c) = cols.first().and_then(|v| v.first()).and_then(|v| v.first()) {
            dim = c.ncols();
        }
        Ok(Self {
            dim,
            scale: lit::<T>(2.0) / scn.sense_noise_per_subcarrier(),
            cols,
            tx_dim,
            nodes: scn.n(),
            mt: scn.mt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subcarriers(&self) -> usize {
        self.cols.len()
    }

    /// Coefficient of the Hermitian scalar `(p, q, part)` of `R̃_l`.
    pub fn coeff(&self, l: usize, p: usize, q: usize, part: HermPart) -> DMatrix<T> {
        let mut k_qp = DMatrix::from_element(self.dim, self.dim, czero::<T>());
        for per_p in &self.cols[l] {
            k_qp += per_p[q].adjoint() * &per_p[p];
        }
        let s = self.scale;
        let out = match part {
            HermPart::Diag => k_qp.map(|z| z.re * s),
            HermPart::Re => {
                let t = k_qp.map(|z| z.re);
                (&t + t.transpose()) * s
            }
            HermPart::Im => {
                // −Im K_qp + Im K_pq, and K_pq = K_qpᴴ
                let t = k_qp.map(|z| z.im);
                -(&t + t.transpose()) * s
            }
        };
        symmetrize(out)
    }

    /// All coefficients in `scope`, in a fixed order (subcarrier, then row
    /// `p`, then column `q ≥ p`; diagonal, real, imaginary).
    pub fn terms(&self, scope: AffineScope) -> Vec<AffineTerm<T>> {
        let mut out = Vec::new();
        for l in 0..self.subcarriers() {
            let range = match scope {
                AffineScope::Full => 0..self.tx_dim,
                AffineScope::Orthogonal => {
                    let nb = l % self.nodes;
                    nb * self.mt..(nb + 1) * self.mt
                }
            };
            for p in range.clone() {
                for q in range.clone().filter(|&q| q >= p) {
                    let parts: &[HermPart] = if p == q { &[HermPart::Diag] } else { &[HermPart::Re, HermPart::Im] };
                    for &part in parts {
                        out.push(AffineTerm {
                            subcarrier: l,
                            p,
                            q,
                            part,
                            coeff: self.coeff(l, p, q, part),
                        });
                    }
                }
            }
        }
        out
    }

    /// `Σ coeff · value` for the given covariances.
    pub fn evaluate(&self, cov: &CovarianceSet<T>) -> DMatrix<T> {
        let mut f = DMatrix::zeros(self.dim, self.dim);
        for l in 0..self.subcarriers() {
            let r = &cov.r_tilde[l];
            for p in 0..self.tx_dim {
                f += self.coeff(l, p, p, HermPart::Diag) * r.get(p, p).re;
                for q in (p + 1)..self.tx_dim {
                    let z = r.get(p, q);
                    f += self.coeff(l, p, q, HermPart::Re) * z.re;
                    f += self.coeff(l, p, q, HermPart::Im) * z.im;
                }
            }
        }
        f
    }
}

fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * lit::<T>(0.5)
}

/// FIM in raw and position coordinates plus the localization CRB.
#[derive(Debug, Clone)]
pub struct FimBundle<T: Real> {
    pub fim_psi: DMatrix<T>,
    pub jacobian: DMatrix<T>,
    pub fim_theta: DMatrix<T>,
    /// Trace of the `2K×2K` position block of `fim_theta⁻¹`, in m².
    pub crb_position: T,
    /// `CRB(x_k) + CRB(y_k)` per target.
    pub per_target: Vec<T>,
    pub mode: Mode,
}

impl<T: Real> FimBundle<T> {
    /// Root CRB per position coordinate: `sqrt(crb_position / 2K)`.
    pub fn rcrb(&self) -> T {
        rcrb(self.crb_position, self.per_target.len())
    }
}

/// `sqrt(crb / 2K)` in meters.
pub fn rcrb<T: Real>(crb: T, targets: usize) -> T {
    (crb / lit(2.0 * targets as f64)).sqrt()
}

/// Inverse of a symmetric positive-definite matrix after symmetric diagonal
/// equilibration; fails when the equilibrated condition number exceeds
/// [`MAX_CONDITION`].
pub fn equilibrated_inverse<T: Real>(f: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = f.nrows();
    let diag: Vec<T> = (0..n).map(|i| f[(i, i)]).collect();
    if diag.iter().any(|&d| !(d > T::zero())) {
        return Err(Error::Unidentifiable(f64::INFINITY));
    }
    let s: Vec<T> = diag.iter().map(|d| T::one() / d.sqrt()).collect();
    let fe = DMatrix::from_fn(n, n, |i, j| f[(i, j)] * s[i] * s[j]);
    let fe = symmetrize(fe);
    let eig = SymmetricEigen::new(fe);
    let lo = eig.eigenvalues.iter().copied().fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b));
    let hi = eig.eigenvalues.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let cond = if lo > T::zero() { to_f64(hi / lo) } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Unidentifiable(cond));
    }
    let inv_e = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| T::one() / v))
        * eig.eigenvectors.transpose();
    Ok(DMatrix::from_fn(n, n, |i, j| inv_e[(i, j)] * s[i] * s[j]))
}

/// Chain rule to position space and the position-block CRB.
pub fn position_crb<T: Real>(fim_psi: &DMatrix<T>, jacobian: &DMatrix<T>) -> Result<(DMatrix<T>, T, Vec<T>)> {
    if jacobian.ncols() != fim_psi.nrows() {
        return Err(Error::InvalidInput(format!(
            "Jacobian has {} columns, FIM has dimension {}",
            jacobian.ncols(),
            fim_psi.nrows()
        )));
    }
    let fim_theta = symmetrize(jacobian * fim_psi * jacobian.transpose());
    let (crb, per) = crb_from_theta(&fim_theta, targets_from_dims(jacobian)?)?;
    Ok((fim_theta, crb, per))
}

fn targets_from_dims<T: Real>(j: &DMatrix<T>) -> Result<usize> {
    // rows = 2K + 2KN², cols = 2KN + 2KN²
    let (rows, cols) = (j.nrows(), j.ncols());
    for n in 1..=64usize {
        for k in 1..=64usize {
            if rows == 2 * k + 2 * k * n * n && cols == 2 * k * n + 2 * k * n * n {
                return Ok(k);
            }
        }
    }
    Err(Error::InvalidInput(format!("Jacobian shape {rows}x{cols} does not match any (K, N)")))
}

/// Position CRB from a position-space FIM whose first `2K` rows are
/// `x_1..x_K, y_1..y_K`.
pub fn crb_from_theta<T: Real>(fim_theta: &DMatrix<T>, targets: usize) -> Result<(T, Vec<T>)> {
    let inv = equilibrated_inverse(fim_theta)?;
    let per: Vec<T> = (0..targets)
        .map(|k| inv[(k, k)] + inv[(targets + k, targets + k)])
        .collect();
    let total = per.iter().fold(T::zero(), |a, &b| a + b);
    Ok((total, per))
}

/// Full evaluation: FIM over `Ψ`, Jacobian, position FIM and CRB.
pub fn evaluate_crb<T: Real>(cov: &CovarianceSet<T>, scn: &Scenario<T>, mode: Mode) -> Result<FimBundle<T>> {
    let fim_psi = assemble_fim_psi(cov, scn, mode)?;
    let jacobian = geometry_jacobian(&scn.geometry)?;
    let fim_theta = symmetrize(&jacobian * &fim_psi * jacobian.transpose());
    let (crb_position, per_target) = crb_from_theta(&fim_theta, scn.k())?;
    Ok(FimBundle {
        fim_psi,
        jacobian,
        fim_theta,
        crb_position,
        per_target,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::presets::ScenarioParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_scenario(k: usize, n_nodes: usize, seed: u64) -> Scenario<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..n_nodes)
            .map(|i| {
                let a = -0.3 - 2.5 * i as f64 / n_nodes as f64 + rng.random_range(-0.2..0.2);
                [50.0 * a.cos(), 50.0 * a.sin()]
            })
            .collect();
        let targets = (0..k)
            .map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-10.0..20.0)])
            .collect();
        ScenarioParams {
            nodes,
            targets,
            users: vec![[0.0, -20.0]],
            antennas: 2,
            subcarriers: 4,
            amplitude_seed: seed,
            ..ScenarioParams::default()
        }
        .build()
    }

    fn random_cov(scn: &Scenario<f64>, rng: &mut ChaCha8Rng) -> CovarianceSet<f64> {
        let dim = scn.mt() * scn.n();
        let mut cov = CovarianceSet::isotropic(scn, 0.0);
        for r in cov.r_tilde.iter_mut() {
            let w = DMatrix::from_fn(dim, dim, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            *r = HermitianMatrix::gram(&w);
        }
        cov
    }

    fn random_low_rank_cov(scn: &Scenario<f64>, rank: usize, rng: &mut ChaCha8Rng) -> CovarianceSet<f64> {
        let dim = scn.mt() * scn.n();
        let mut cov = CovarianceSet::isotropic(scn, 0.0);
        for r in cov.r_tilde.iter_mut() {
            let w = DMatrix::from_fn(dim, rank, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            *r = HermitianMatrix::gram(&w);
        }
        cov
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn two_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, n) in [(1, 1), (1, 2), (2, 2), (1, 3)] {
            let scn = small_scenario(k, n, 10 + n as u64);
            let cov = random_cov(&scn, &mut rng);
            for mode in Mode::ALL {
                let a = assemble_fim_psi(&cov, &scn, mode).unwrap();
                let b = assemble_fim_psi_blockwise(&cov, &scn, mode).unwrap();
                assert!(rel(&a, &b) < 1e-10, "K={k} N={n} {mode:?}: {}", rel(&a, &b));
            }
        }
    }

    #[test]
    fn fim_is_symmetric_psd_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scn = small_scenario(2, 2, 5);
        let cov = random_cov(&scn, &mut rng);
        let f = assemble_fim_psi(&cov, &scn, Mode::Hybrid).unwrap();
        assert_eq!(f, f.transpose());
        let lo = crate::matrixcore::min_eigenvalue_sym(&f);
        assert!(lo >= -1e-8 * f.trace());
        let f2 = assemble_fim_psi(&cov.scale(2.0), &scn, Mode::Hybrid).unwrap();
        assert!(rel(&f2, &(&f * 2.0)) < 1e-13);
        let cov_b = random_cov(&scn, &mut rng);
        let mut sum = cov.clone();
        for (a, b) in sum.r_tilde.iter_mut().zip(&cov_b.r_tilde) {
            *a = &*a + b;
        }
        let fb = assemble_fim_psi(&cov_b, &scn, Mode::Hybrid).unwrap();
        let fs = assemble_fim_psi(&sum, &scn, Mode::Hybrid).unwrap();
        assert!(rel(&fs, &(&f + &fb)) < 1e-12);
    }

    #[test]
    fn zero_covariance_gives_zero_gram() {
        let scn = small_scenario(2, 2, 6);
        let resp = Responses::new(&scn).unwrap();
        let cov = CovarianceSet::isotropic(&scn, 0.0);
        let g = expected_link_gram(0, 1, 0, LinkKind::V, LinkKind::VDotTau, &cov, &scn, &resp).unwrap();
        assert!(g.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn link_gram_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scn = small_scenario(2, 2, 8);
        let resp = Responses::new(&scn).unwrap();
        let cov = random_cov(&scn, &mut rng);
        let g1 = expected_link_gram(1, 0, 1, LinkKind::VDotTheta, LinkKind::V, &cov, &scn, &resp).unwrap();
        let g3 = expected_link_gram(1, 0, 1, LinkKind::VDotTheta, LinkKind::V, &cov.scale(3.0), &scn, &resp).unwrap();
        assert!((&g3 - &g1 * Complex::new(3.0, 0.0)).norm() < 1e-12 * g1.norm().max(1.0));
    }

    /// Monte-Carlo oracle: build `V_{n,m}` from random symbol draws and
    /// average `V_{n,i}ᴴ V_{n,j}`.
    #[test]
    fn link_gram_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scn = small_scenario(2, 2, 10);
        let resp = Responses::new(&scn).unwrap();
        // single-stream covariances keep the cross-node correlation strong
        // relative to the sampling noise of 10^4 draws
        let cov = random_low_rank_cov(&scn, 1, &mut rng);
        let (mt, l_n, k_t) = (scn.mt(), scn.l(), scn.k());
        let factors: Vec<DMatrix<Complex<f64>>> = cov
            .r_tilde
            .iter()
            .map(|r| crate::matrixcore::factorize_psd(r, 1e-12).unwrap())
            .collect();
        let draws = 10_000;
        let (i, j, n) = (0, 1, 1);
        let cases = [(LinkKind::V, LinkKind::V), (LinkKind::VDotTheta, LinkKind::VDotTau)];
        let mut est = vec![DMatrix::from_element(k_t, k_t, czero::<f64>()); cases.len()];
        for _ in 0..draws {
            let xs: Vec<DVector<Complex<f64>>> = factors
                .iter()
                .map(|w| {
                    let z = DVector::from_fn(w.ncols(), |_, _| {
                        let (a, b): (f64, f64) = (
                            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                        );
                        Complex::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
                    });
                    w * z
                })
                .collect();
            for (c, &(left, right)) in cases.iter().enumerate() {
                let v = |m: usize, kind: LinkKind| {
                    DMatrix::from_fn(l_n, k_t, |l, k| {
                        let x = xs[l].rows(m * mt, mt);
                        resp.tx(kind, m, k).dot(&x) * resp.delay(kind, n, m, k)[l]
                    })
                };
                est[c] += v(i, left).adjoint() * v(j, right);
            }
        }
        for (c, &(left, right)) in cases.iter().enumerate() {
            let mc = &est[c] / Complex::new(draws as f64, 0.0);
            let exact = expected_link_gram(i, j, n, left, right, &cov, &scn, &resp).unwrap();
            let err = (&mc - &exact).norm() / exact.norm();
            assert!(err < 0.02, "case {c}: {err}");
        }
    }

    #[test]
    fn affine_map_reconstructs_fim() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scn = small_scenario(2, 2, 12);
        let cov = random_cov(&scn, &mut rng);
        for mode in Mode::ALL {
            let map = FimAffineMap::psi(&scn, mode).unwrap();
            let direct = assemble_fim_psi(&cov, &scn, mode).unwrap();
            assert!(rel(&map.evaluate(&cov), &direct) < 1e-10);
            let map_t = FimAffineMap::theta(&scn, mode).unwrap();
            let j = geometry_jacobian(&scn.geometry).unwrap();
            let ft = &j * &direct * j.transpose();
            assert!(rel(&map_t.evaluate(&cov), &ft) < 1e-10);
        }
        let zero = CovarianceSet::isotropic(&scn, 0.0);
        assert!(FimAffineMap::psi(&scn, Mode::Hybrid).unwrap().evaluate(&zero).norm() == 0.0);
    }

    #[test]
    fn orthogonal_scope_lists_only_owned_blocks() {
        let scn = small_scenario(1, 2, 13);
        let map = FimAffineMap::psi(&scn, Mode::Hybrid).unwrap();
        let mt = scn.mt();
        let terms = map.terms(AffineScope::Orthogonal);
        assert_eq!(terms.len(), scn.l() * mt * mt);
        for t in &terms {
            let owner = t.subcarrier % scn.n();
            assert_eq!(t.p / mt, owner);
            assert_eq!(t.q / mt, owner);
        }
        assert_eq!(map.terms(AffineScope::Full).len(), scn.l() * (mt * scn.n()).pow(2));
    }

    #[test]
    fn crb_of_diagonal_position_block() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 4.0, 1.0, 1.0]));
        let (crb, per) = crb_from_theta(&f, 1).unwrap();
        assert!((crb - 0.5f64).abs() < 1e-15);
        assert_eq!(per.len(), 1);
    }

    #[test]
    fn crb_scales_inversely_with_power() {
        let scn = small_scenario(1, 2, 14);
        let cov = CovarianceSet::isotropic(&scn, 1.0);
        let a = evaluate_crb(&cov, &scn, Mode::Hybrid).unwrap();
        let b = evaluate_crb(&cov.scale(5.0), &scn, Mode::Hybrid).unwrap();
        assert!((a.crb_position / b.crb_position - 5.0).abs() < 1e-9);
    }

    #[test]
    fn single_node_tof_single_antenna_is_unidentifiable() {
        let mut p = ScenarioParams {
            nodes: vec![[0.0, -50.0]],
            antennas: 1,
            subcarriers: 4,
            ..ScenarioParams::default()
        };
        p.amplitude_seed = 2;
        let scn = p.build();
        let cov = CovarianceSet::isotropic(&scn, 1.0);
        assert!(matches!(
            evaluate_crb(&cov, &scn, Mode::TofOnly),
            Err(Error::Unidentifiable(_))
        ));
    }

    #[test]
    fn hybrid_beats_each_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for s in 0..5 {
            let scn = small_scenario(1, 2, 100 + s);
            let cov = random_cov(&scn, &mut rng);
            let h = evaluate_crb(&cov, &scn, Mode::Hybrid).unwrap().crb_position;
            let t = evaluate_crb(&cov, &scn, Mode::TofOnly).unwrap().crb_position;
            let a = evaluate_crb(&cov, &scn, Mode::AoaOnly).unwrap().crb_position;
            assert!(h <= t * (1.0 + 1e-9) && h <= a * (1.0 + 1e-9), "{h} {t} {a}");
        }
    }

    #[test]
    fn position_crb_matches_evaluate() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let scn = small_scenario(2, 2, 17);
        let cov = random_cov(&scn, &mut rng);
        let b = evaluate_crb(&cov, &scn, Mode::Hybrid).unwrap();
        let (ft, crb, _) = position_crb(&b.fim_psi, &b.jacobian).unwrap();
        assert!(rel(&ft, &b.fim_theta) < 1e-14);
        assert!((crb - b.crb_position).abs() <= 1e-12 * crb);
    }

    #[test]
    fn single_precision_fim_tracks_double() {
        let scn = small_scenario(1, 2, 18);
        let cov = CovarianceSet::isotropic(&scn, 1.0);
        let f64_crb = evaluate_crb(&cov, &scn, Mode::AoaOnly).unwrap().crb_position;
        let p = ScenarioParams {
            nodes: scn.geometry.nodes.clone(),
            targets: scn.geometry.targets.clone(),
            antennas: 2,
            subcarriers: 4,
            amplitude_seed: 18,
            ..ScenarioParams::default()
        };
        let s64 = p.build();
        let s32 = Scenario::<f32> {
            ofdm: crate::scenario::OfdmConfig::new(0.1, 10e6, 4, 2),
            geometry: crate::scenario::Geometry::new(
                s64.geometry.nodes.iter().map(|p| [p[0] as f32, p[1] as f32]).collect(),
                s64.geometry.targets.iter().map(|p| [p[0] as f32, p[1] as f32]).collect(),
                vec![],
            ),
            power: crate::scenario::PowerConfig {
                per_antenna_power: 100.0,
                comm_noise: 1.0,
                sense_noise: 1.0,
                sinr_threshold: 10.0,
                amplitudes: crate::scenario::Amplitudes::from_values(
                    2,
                    1,
                    s64.power.amplitudes.values().iter().map(|z| Complex::new(z.re as f32, z.im as f32)).collect(),
                )
                .unwrap(),
            },
            channel_seed: 0,
        };
        let cov32 = CovarianceSet::isotropic(&s32, 1.0f32);
        let c32 = evaluate_crb(&cov32, &s32, Mode::AoaOnly).unwrap().crb_position as f64;
        assert!((c32 - f64_crb).abs() < 1e-3 * f64_crb, "{c32} vs {f64_crb}");
    }
}
