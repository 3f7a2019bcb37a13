//! Realizable precoders from relaxed covariance solutions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::comms::{average_sinr, ChannelSet, PrecoderSet, SensingPrecoders, C64};
use crate::designs::{owner, p3_sensing, DesignVariables, Family};
use crate::error::{Error, Result};
use crate::fim::{self, Mode};
use crate::matrixcore::{factorize_psd, psd_project, psd_projection_distance, HermitianMatrix, DEFAULT_RANK_TOL};
use crate::scenario::Scenario;

/// Projection distance (relative to trace) above which a P1 extraction is
/// flagged as degraded.
pub const DEGRADED_PROJECTION: f64 = 0.05;

/// Largest PSD violation (relative to trace) tolerated in orthogonal-design
/// sensing residuals before it is treated as solver drift.
pub const SENSING_PSD_TOL: f64 = 1e-7;

/// `w = R_c h / sqrt(hᴴ R_c h)`, which preserves the useful power
/// `|hᴴw|² = hᴴ R_c h`.
pub fn extract_comm(r_c: &HermitianMatrix<f64>, h: &DVector<C64>) -> Result<DVector<C64>> {
    let q = r_c.quad_form(h);
    let floor = 1e-12 * r_c.trace().abs() * h.norm_squared();
    if !(q > floor) {
        return Err(Error::DegenerateExtraction(format!(
            "hᴴR_c h = {q:e} is not above {floor:e}"
        )));
    }
    Ok(r_c.as_matrix() * h * Complex::new(1.0 / q.sqrt(), 0.0))
}

/// Communication precoder, or a zero vector when the covariance carries no
/// power at all (sensing-only designs).
fn comm_or_zero(r_c: &HermitianMatrix<f64>, h: &DVector<C64>, scale: f64) -> Result<DVector<C64>> {
    if r_c.trace() <= 1e-12 * scale {
        return Ok(DVector::from_element(h.len(), Complex::new(0.0, 0.0)));
    }
    extract_comm(r_c, h)
}

/// Sensing factor of one subcarrier (or one node for the beamforming design).
#[derive(Debug, Clone, PartialEq)]
pub struct SensingFactor {
    pub w: DMatrix<C64>,
    /// Frobenius distance removed by the PSD projection.
    pub projection_distance: f64,
    /// Projection distance above [`DEGRADED_PROJECTION`] of the trace.
    pub degraded: bool,
}

/// Augmented block-diagonal communication precoder `W̃_c,l` (`M_t N × N U`).
pub fn augmented_comm(per_node: &[Vec<DVector<C64>>], mt: usize) -> DMatrix<C64> {
    let nodes = per_node.len();
    let users = per_node.first().map_or(0, Vec::len);
    let mut w = DMatrix::from_element(mt * nodes, nodes * users, Complex::new(0.0, 0.0));
    for (n, ws) in per_node.iter().enumerate() {
        for (u, v) in ws.iter().enumerate() {
            w.view_mut((n * mt, n * users + u), (mt, 1)).copy_from(v);
        }
    }
    w
}

/// Shared-sequence sensing factor for the optimal design: project
/// `R̃_l − W̃_c W̃_cᴴ` onto the PSD cone, then factorize.
pub fn extract_sense_p1(r_tilde: &HermitianMatrix<f64>, w_c: &DMatrix<C64>) -> Result<SensingFactor> {
    let resid = r_tilde - &HermitianMatrix::gram(w_c);
    let dist = psd_projection_distance(&resid);
    let proj = psd_project(&resid);
    let w = factorize_psd(&proj, DEFAULT_RANK_TOL)?;
    let tr = r_tilde.trace().abs();
    Ok(SensingFactor {
        w,
        projection_distance: dist,
        degraded: tr > 0.0 && dist > DEGRADED_PROJECTION * tr,
    })
}

/// Direct factorization of a residual that must already be PSD.
fn factor_exact(resid: &HermitianMatrix<f64>, reference_trace: f64) -> Result<DMatrix<C64>> {
    let lo = resid.min_eigenvalue();
    let floor = SENSING_PSD_TOL * reference_trace.abs();
    if lo < -floor {
        return Err(Error::Internal(format!(
            "sensing residual has eigenvalue {lo:e} below -{floor:e}; solver drift"
        )));
    }
    factorize_psd(&psd_project(resid), DEFAULT_RANK_TOL)
}

/// Per-node sensing factor for the orthogonal design:
/// `W_s W_sᴴ = R_{n̄n̄,l} − Ŵ_c Ŵ_cᴴ`.
pub fn extract_sense_p2(r: &HermitianMatrix<f64>, w_c: &[DVector<C64>]) -> Result<DMatrix<C64>> {
    let mut resid = r.clone();
    for w in w_c {
        resid = &resid - &HermitianMatrix::outer(w);
    }
    factor_exact(&resid, r.trace())
}

/// Block-level beamformer: `W_s W_sᴴ = (N/L)(R̄ − Σ_l Σ_u R_{c,u,l})`,
/// `comm_owned` holding the node's communication covariances.
pub fn extract_sense_p3(
    r_bar: &HermitianMatrix<f64>,
    comm_owned: &[&HermitianMatrix<f64>],
    nodes: usize,
    subcarriers: usize,
) -> Result<DMatrix<C64>> {
    let mut resid = r_bar.clone();
    for c in comm_owned {
        resid = &resid - c;
    }
    factor_exact(&resid.scale(nodes as f64 / subcarriers as f64), r_bar.trace())
}

/// Precoders plus quality metrics of one extraction.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub family: Family,
    pub precoders: PrecoderSet,
    /// Per-subcarrier projection distance (optimal design; zero otherwise).
    pub projection_distance: Vec<f64>,
    pub degraded: bool,
    /// Per-antenna factor applied to sensing power to restore the budget.
    pub power_scale: Vec<f64>,
    /// Per-subcarrier factor applied to sensing power to restore the SINR.
    pub sinr_scale: Vec<f64>,
}

impl Extraction {
    /// CRB of the realized transmit covariances.
    pub fn crb(&self, scn: &Scenario<f64>, mode: Mode) -> Result<f64> {
        Ok(fim::evaluate_crb(&self.precoders.covariances(), scn, mode)?.crb_position)
    }
}

/// Extracts precoders from decoded design variables. `gamma` is the SINR
/// threshold the design was solved for (`None` for sensing-only); the
/// optimal design's projection can raise interference or antenna power, and
/// both are repaired by scaling sensing power down.
pub fn extract(
    vars: &DesignVariables,
    scn: &Scenario<f64>,
    channels: &ChannelSet,
    gamma: Option<f64>,
) -> Result<Extraction> {
    let (n_nodes, users, subs, mt) = (scn.n(), scn.u(), scn.l(), scn.mt());
    let pscale = scn.power.per_antenna_power / subs as f64;
    let family = vars.family();
    let mut comm = vec![vec![vec![DVector::from_element(mt, Complex::new(0.0, 0.0)); subs]; users]; n_nodes];
    for l in 0..subs {
        for n in 0..n_nodes {
            if family.is_orthogonal() && owner(l, n_nodes) != n {
                continue;
            }
            for u in 0..users {
                comm[n][u][l] = comm_or_zero(&vars.comm(n, u, l, scn), channels.get(n, u, l), pscale)?;
            }
        }
    }
    let active: Vec<Vec<bool>> = (0..n_nodes)
        .map(|n| (0..subs).map(|l| !family.is_orthogonal() || owner(l, n_nodes) == n).collect())
        .collect();
    let mut projection = vec![0.0; subs];
    let mut degraded = false;
    let sensing = match vars {
        DesignVariables::P1 { r_tilde, .. } => {
            let mut ws = Vec::with_capacity(subs);
            for l in 0..subs {
                let per_node: Vec<Vec<DVector<C64>>> =
                    (0..n_nodes).map(|n| (0..users).map(|u| comm[n][u][l].clone()).collect()).collect();
                let f = extract_sense_p1(&r_tilde[l], &augmented_comm(&per_node, mt))?;
                projection[l] = f.projection_distance;
                degraded |= f.degraded;
                ws.push(f.w);
            }
            SensingPrecoders::Shared(ws)
        }
        DesignVariables::P2 { r, .. } => {
            let mut ws = vec![vec![DMatrix::from_element(mt, 0, Complex::new(0.0, 0.0)); subs]; n_nodes];
            for l in 0..subs {
                let n = owner(l, n_nodes);
                let wc: Vec<DVector<C64>> = (0..users).map(|u| comm[n][u][l].clone()).collect();
                ws[n][l] = extract_sense_p2(&r[l], &wc)?;
            }
            SensingPrecoders::PerNode(ws)
        }
        DesignVariables::P3 { r_bar, comm: rc } => {
            let mut ws = vec![vec![DMatrix::from_element(mt, 0, Complex::new(0.0, 0.0)); subs]; n_nodes];
            for n in 0..n_nodes {
                let owned: Vec<usize> = (0..subs).filter(|&l| owner(l, n_nodes) == n).collect();
                let cs: Vec<&HermitianMatrix<f64>> = owned.iter().flat_map(|&l| rc.iter().map(move |cu| &cu[l])).collect();
                let w = extract_sense_p3(&r_bar[n], &cs, n_nodes, subs)?;
                debug_assert!({
                    let direct = &p3_sensing(r_bar, rc, scn)[n];
                    (&HermitianMatrix::gram(&w) - direct).frobenius_norm() <= 1e-6 * (1.0 + direct.trace())
                });
                for &l in &owned {
                    ws[n][l] = w.clone();
                }
            }
            SensingPrecoders::PerNode(ws)
        }
    };
    let mut precoders = PrecoderSet {
        nodes: n_nodes,
        users,
        subcarriers: subs,
        antennas: mt,
        comm,
        sensing,
        active,
    };
    let mut power_scale = vec![1.0; mt * n_nodes];
    let mut sinr_scale = vec![1.0; subs];
    if family == Family::P1 {
        power_scale = repair_power(&mut precoders, scn.power.per_antenna_power);
        if let Some(g) = gamma {
            sinr_scale = repair_sinr(&mut precoders, scn, channels, g);
        }
    }
    Ok(Extraction {
        family,
        precoders,
        projection_distance: projection,
        degraded,
        power_scale,
        sinr_scale,
    })
}

/// Scales sensing rows of antennas whose total power exceeds `p_t`.
fn repair_power(p: &mut PrecoderSet, p_t: f64) -> Vec<f64> {
    let dim = p.antennas * p.nodes;
    let mut comm_p = vec![0.0; dim];
    let mut sense_p = vec![0.0; dim];
    for l in 0..p.subcarriers {
        for n in 0..p.nodes {
            for u in 0..p.users {
                for (a, z) in p.comm[n][u][l].iter().enumerate() {
                    comm_p[n * p.antennas + a] += z.norm_sqr();
                }
            }
        }
        if let SensingPrecoders::Shared(w) = &p.sensing {
            for r in 0..dim {
                sense_p[r] += w[l].row(r).norm_squared();
            }
        }
    }
    let scale: Vec<f64> = (0..dim)
        .map(|r| {
            if comm_p[r] + sense_p[r] <= p_t || sense_p[r] <= 0.0 {
                1.0
            } else {
                ((p_t - comm_p[r]).max(0.0) / sense_p[r]).min(1.0)
            }
        })
        .collect();
    if scale.iter().any(|&s| s < 1.0) {
        log::info!("sensing power scaled on {} antennas to meet the budget", scale.iter().filter(|&&s| s < 1.0).count());
        if let SensingPrecoders::Shared(w) = &mut p.sensing {
            for wl in w.iter_mut() {
                for (r, &s) in scale.iter().enumerate() {
                    let mut row = wl.row_mut(r);
                    row *= Complex::new(s.sqrt(), 0.0);
                }
            }
        }
    }
    scale
}

/// Scales the shared sensing signal of each subcarrier so that every user
/// meets `gamma` again after the projection raised interference.
fn repair_sinr(p: &mut PrecoderSet, scn: &Scenario<f64>, channels: &ChannelSet, gamma: f64) -> Vec<f64> {
    let noise = scn.comm_noise_per_subcarrier();
    let mt = p.antennas;
    let mut scales = vec![1.0; p.subcarriers];
    let cov = p.covariances();
    let SensingPrecoders::Shared(w) = &mut p.sensing else {
        return scales;
    };
    for l in 0..p.subcarriers {
        let mut alpha = 1.0f64;
        for u in 0..p.users {
            if average_sinr(&cov, channels, scn, u, l) >= gamma * (1.0 - 1e-6) {
                continue;
            }
            let (mut sig, mut icomm, mut isense) = (0.0, 0.0, 0.0);
            for n in 0..p.nodes {
                let h = channels.get(n, u, l);
                for uu in 0..p.users {
                    let a = h.dotc(&p.comm[n][uu][l]).norm_sqr();
                    if uu == u {
                        sig += a;
                    } else {
                        icomm += a;
                    }
                }
                isense += (h.adjoint() * w[l].rows(n * mt, mt)).norm_squared();
            }
            if isense > 0.0 {
                alpha = alpha.min(((sig / gamma - icomm - noise) / isense).clamp(0.0, 1.0));
            }
        }
        if alpha < 1.0 {
            log::info!("sensing power on subcarrier {l} scaled by {alpha:.4} to restore the SINR");
            w[l] *= Complex::new(alpha.sqrt(), 0.0);
            scales[l] = alpha;
        }
    }
    scales
}

/// Precoder export with complex entries as `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecoderExport {
    pub family: Family,
    pub nodes: usize,
    pub users: usize,
    pub subcarriers: usize,
    pub antennas: usize,
    pub comm: Vec<CommEntry>,
    pub sensing: Vec<SensingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommEntry {
    pub node: usize,
    pub user: usize,
    pub subcarrier: usize,
    pub w: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingEntry {
    /// `None` for the shared sequence of the optimal design (rows span all
    /// nodes).
    pub node: Option<usize>,
    pub subcarrier: usize,
    /// Row-major `rows × cols` matrix.
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<[f64; 2]>,
}

fn pairs<'a>(it: impl Iterator<Item = &'a C64>) -> Vec<[f64; 2]> {
    it.map(|z| [z.re, z.im]).collect()
}

fn row_major(m: &DMatrix<C64>) -> Vec<[f64; 2]> {
    pairs(m.transpose().iter())
}

impl PrecoderExport {
    pub fn new(family: Family, p: &PrecoderSet) -> Self {
        let mut comm = Vec::new();
        for n in 0..p.nodes {
            for l in (0..p.subcarriers).filter(|&l| p.active[n][l]) {
                for u in 0..p.users {
                    comm.push(CommEntry {
                        node: n,
                        user: u,
                        subcarrier: l,
                        w: pairs(p.comm[n][u][l].iter()),
                    });
                }
            }
        }
        let mut sensing = Vec::new();
        match &p.sensing {
            SensingPrecoders::Shared(w) => {
                for (l, m) in w.iter().enumerate() {
                    sensing.push(SensingEntry {
                        node: None,
                        subcarrier: l,
                        rows: m.nrows(),
                        cols: m.ncols(),
                        w: row_major(m),
                    });
                }
            }
            SensingPrecoders::PerNode(w) => {
                for (n, per_l) in w.iter().enumerate() {
                    for (l, m) in per_l.iter().enumerate().filter(|(l, _)| p.active[n][*l]) {
                        sensing.push(SensingEntry {
                            node: Some(n),
                            subcarrier: l,
                            rows: m.nrows(),
                            cols: m.ncols(),
                            w: row_major(m),
                        });
                    }
                }
            }
        }
        Self {
            family,
            nodes: p.nodes,
            users: p.users,
            subcarriers: p.subcarriers,
            antennas: p.antennas,
            comm,
            sensing,
        }
    }

    /// Rebuilds the precoder set.
    pub fn to_precoders(&self) -> Result<PrecoderSet> {
        let (n_nodes, users, subs, mt) = (self.nodes, self.users, self.subcarriers, self.antennas);
        let cplx = |v: &[[f64; 2]]| v.iter().map(|p| Complex::new(p[0], p[1])).collect::<Vec<_>>();
        let mut comm = vec![vec![vec![DVector::from_element(mt, Complex::new(0.0, 0.0)); subs]; users]; n_nodes];
        let mut active = vec![vec![false; subs]; n_nodes];
        for e in &self.comm {
            if e.node >= n_nodes || e.user >= users || e.subcarrier >= subs || e.w.len() != mt {
                return Err(Error::InvalidInput("communication precoder entry out of range".into()));
            }
            comm[e.node][e.user][e.subcarrier] = DVector::from_vec(cplx(&e.w));
            active[e.node][e.subcarrier] = true;
        }
        let mat = |e: &SensingEntry| -> Result<DMatrix<C64>> {
            if e.w.len() != e.rows * e.cols {
                return Err(Error::InvalidInput("sensing precoder has the wrong number of entries".into()));
            }
            Ok(DMatrix::from_row_slice(e.rows, e.cols, &cplx(&e.w)))
        };
        let sensing = if self.family == Family::P1 {
            let mut w = vec![DMatrix::from_element(mt * n_nodes, 0, Complex::new(0.0, 0.0)); subs];
            for e in &self.sensing {
                if e.subcarrier >= subs || e.rows != mt * n_nodes {
                    return Err(Error::InvalidInput("shared sensing entry out of range".into()));
                }
                w[e.subcarrier] = mat(e)?;
            }
            for a in active.iter_mut() {
                a.iter_mut().for_each(|x| *x = true);
            }
            SensingPrecoders::Shared(w)
        } else {
            let mut w = vec![vec![DMatrix::from_element(mt, 0, Complex::new(0.0, 0.0)); subs]; n_nodes];
            for e in &self.sensing {
                let n = e.node.ok_or_else(|| Error::InvalidInput("per-node sensing entry lacks a node".into()))?;
                if n >= n_nodes || e.subcarrier >= subs || e.rows != mt {
                    return Err(Error::InvalidInput("sensing entry out of range".into()));
                }
                w[n][e.subcarrier] = mat(e)?;
                active[n][e.subcarrier] = true;
            }
            SensingPrecoders::PerNode(w)
        };
        Ok(PrecoderSet {
            nodes: n_nodes,
            users,
            subcarriers: subs,
            antennas: mt,
            comm,
            sensing,
            active,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::complex_gaussian;
    use crate::designs::{solve, DesignSpec};
    use crate::num::linear_to_db;
    use crate::scenario::presets::ScenarioParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<C64> {
        DVector::from_fn(n, |_, _| complex_gaussian(rng, 1.0))
    }

    #[test]
    fn rank_one_comm_is_recovered_up_to_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = rand_vec(&mut rng, 4);
        let h = rand_vec(&mut rng, 4);
        let w = extract_comm(&HermitianMatrix::outer(&v), &h).unwrap();
        let phase = w.dotc(&v) / v.norm_squared();
        assert!((phase.norm() - 1.0).abs() < 1e-10);
        assert!((&w * phase - &v).norm() < 1e-10 * v.norm());
    }

    #[test]
    fn useful_power_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(4, 3, |_, _| complex_gaussian(&mut rng, 1.0));
        let r = HermitianMatrix::gram(&a);
        let h = rand_vec(&mut rng, 4);
        let w = extract_comm(&r, &h).unwrap();
        assert!((h.dotc(&w).norm_sqr() - r.quad_form(&h)).abs() < 1e-10 * r.quad_form(&h));
        // w wᴴ ⪯ R_c
        assert!((&r - &HermitianMatrix::outer(&w)).min_eigenvalue() > -1e-10);
    }

    #[test]
    fn degenerate_comm_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_vec(&mut rng, 3);
        assert!(matches!(
            extract_comm(&HermitianMatrix::zeros(3), &h),
            Err(Error::DegenerateExtraction(_))
        ));
    }

    #[test]
    fn psd_residual_has_zero_projection_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ws = DMatrix::from_fn(4, 4, |_, _| complex_gaussian(&mut rng, 1.0));
        let wc = DMatrix::from_fn(4, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let r = &HermitianMatrix::gram(&ws) + &HermitianMatrix::gram(&wc);
        let f = extract_sense_p1(&r, &wc).unwrap();
        assert!(f.projection_distance < 1e-10);
        assert!(!f.degraded);
        let back = &HermitianMatrix::gram(&f.w) + &HermitianMatrix::gram(&wc);
        assert!((&back - &r).frobenius_norm() < 1e-9 * r.trace());
    }

    #[test]
    fn zero_comm_factorizes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(3, 3, |_, _| complex_gaussian(&mut rng, 1.0));
        let r = HermitianMatrix::gram(&a);
        let w = extract_sense_p2(&r, &[DVector::from_element(3, Complex::new(0.0, 0.0))]).unwrap();
        assert!((&HermitianMatrix::gram(&w) - &r).frobenius_norm() < 1e-10 * r.trace());
    }

    #[test]
    fn non_psd_residual_is_solver_drift() {
        let r = HermitianMatrix::identity(2);
        let big = DVector::from_vec(vec![Complex::new(2.0, 0.0), Complex::new(0.0, 0.0)]);
        assert!(matches!(extract_sense_p2(&r, &[big]), Err(Error::Internal(_))));
    }

    #[test]
    fn p3_reconstruction_matches_u_matrix() {
        // rank-one communication covariances, so Ŵ_c Ŵ_cᴴ = R_c exactly
        let scn = ScenarioParams {
            antennas: 3,
            subcarriers: 4,
            ..ScenarioParams::default()
        }
        .build();
        let ch = ChannelSet::for_scenario(&scn);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let comm: Vec<Vec<HermitianMatrix<f64>>> =
            vec![(0..4).map(|_| HermitianMatrix::outer(&rand_vec(&mut rng, 3))).collect()];
        let r_bar: Vec<HermitianMatrix<f64>> = (0..2)
            .map(|n| {
                let a = DMatrix::from_fn(3, 3, |_, _| complex_gaussian(&mut rng, 1.0));
                let mut r = HermitianMatrix::gram(&a);
                for l in (0..4).filter(|l| l % 2 == n) {
                    r = &r + &comm[0][l];
                }
                r
            })
            .collect();
        let vars = DesignVariables::P3 {
            r_bar: r_bar.clone(),
            comm: comm.clone(),
        };
        let ex = extract(&vars, &scn, &ch, None).unwrap();
        let realized = ex.precoders.covariances();
        let designed = vars.transmit_covariances(&scn);
        for l in 0..4 {
            let d = (&realized.r_tilde[l] - &designed.r_tilde[l]).frobenius_norm();
            assert!(d < 1e-8 * (1.0 + designed.r_tilde[l].trace()), "l={l}: {d}");
        }
        let SensingPrecoders::PerNode(w) = &ex.precoders.sensing else { panic!() };
        assert_eq!(w[0][0], w[0][2]);
        assert_eq!(w[1][1], w[1][3]);
    }

    #[test]
    fn extraction_from_solved_designs() {
        let scn = ScenarioParams {
            antennas: 2,
            subcarriers: 4,
            ..ScenarioParams::default()
        }
        .build();
        let ch = ChannelSet::for_scenario(&scn);
        let gamma = scn.power.sinr_threshold;
        for fam in Family::ALL {
            let spec = DesignSpec::new(fam, &scn, &ch, Mode::Hybrid);
            let rep = solve(&spec).unwrap();
            let vars = rep.variables.as_ref().unwrap();
            let ex = extract(vars, &scn, &ch, Some(gamma)).unwrap();
            let cov = ex.precoders.covariances();
            for p in cov.antenna_powers() {
                assert!(p <= scn.power.per_antenna_power * (1.0 + 1e-6), "{fam} power {p}");
            }
            for l in 0..scn.l() {
                let g = average_sinr(&cov, &ch, &scn, 0, l);
                assert!(linear_to_db(g) >= linear_to_db(gamma) - 0.1, "{fam} l={l}: {g}");
            }
            let crb = ex.crb(&scn, Mode::Hybrid).unwrap();
            let relaxed = rep.crb.unwrap();
            match fam {
                Family::P1 => assert!(crb >= relaxed * (1.0 - 1e-6)),
                Family::P2 => assert!((crb - relaxed).abs() <= 1e-4 * relaxed, "{crb} vs {relaxed}"),
                Family::P3 => {}
            }
            let json = serde_json::to_string(&PrecoderExport::new(fam, &ex.precoders)).unwrap();
            let back: PrecoderExport = serde_json::from_str(&json).unwrap();
            assert_eq!(back.to_precoders().unwrap(), ex.precoders);
        }
    }
}
