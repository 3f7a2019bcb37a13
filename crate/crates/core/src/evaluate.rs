//! Monte-Carlo validation: received sensing signals, maximum-likelihood
//! localization, instantaneous SINR statistics and design sweeps.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comms::{average_sinr, complex_gaussian, instantaneous_sinr, split_seed, ChannelSet, PrecoderSet, SymbolDraw, C64};
use crate::designs::{solve_with, DesignSpec, Family};
use crate::error::{Error, Result};
use crate::extraction::extract;
use crate::fim::{self, Mode};
use crate::num::{db_to_linear, linear_to_db};
use crate::scenario::{delay_vector, steering, tof_and_angle, Amplitudes, Geometry, Point, Scenario};
use crate::sdp::{SolveStatus, SolverOptions};

/// Seed stream for transmitted symbols.
const STREAM_SYMBOLS: u64 = 0;
/// Seed stream for receiver noise.
const STREAM_NOISE: u64 = 1;

/// One OFDM symbol as seen by every node.
#[derive(Debug, Clone)]
pub struct ReceivedSymbol {
    /// `[l]`: stacked transmit vector `x̃_l` (length `M_t N`).
    pub x: Vec<DVector<C64>>,
    /// `[n]`: received `M_r × L` matrix.
    pub y: Vec<DMatrix<C64>>,
    /// `[n]`: the noise part of `y`.
    pub noise: Vec<DMatrix<C64>>,
}

/// Received sensing signals over `T` symbols.
#[derive(Debug, Clone)]
pub struct ReceptionBatch {
    pub symbols: Vec<ReceivedSymbol>,
    /// Per-entry noise variance `σ_s²/L`.
    pub noise_variance: f64,
    pub seed: u64,
}

/// Array and delay responses of every link for a set of target positions.
struct LinkModel {
    /// `[n][k]`
    ar: Vec<Vec<DVector<C64>>>,
    /// `[m][k]`
    at: Vec<Vec<DVector<C64>>>,
    /// `[n][m][k]` over subcarriers.
    d: Vec<Vec<Vec<DVector<C64>>>>,
}

impl LinkModel {
    fn new(scn: &Scenario<f64>, targets: &[Point<f64>]) -> Result<Self> {
        let (d0, lam, bw, l) = (
            scn.ofdm.antenna_spacing,
            scn.ofdm.carrier_wavelength,
            scn.ofdm.bandwidth,
            scn.l(),
        );
        let mut tau = Vec::with_capacity(scn.n());
        let mut theta = Vec::with_capacity(scn.n());
        for p in &scn.geometry.nodes {
            let (t, a): (Vec<f64>, Vec<f64>) = targets
                .iter()
                .map(|q| tof_and_angle(*p, *q))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            tau.push(t);
            theta.push(a);
        }
        let per_nk = |m: usize| -> Vec<Vec<DVector<C64>>> {
            theta.iter().map(|th| th.iter().map(|&t| steering(t, m, d0, lam)).collect()).collect()
        };
        let d = (0..scn.n())
            .map(|n| {
                (0..scn.n())
                    .map(|m| (0..targets.len()).map(|k| delay_vector(tau[n][k] + tau[m][k], l, bw)).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            ar: per_nk(scn.mr()),
            at: per_nk(scn.mt()),
            d,
        })
    }

    fn targets(&self) -> usize {
        self.ar.first().map_or(0, Vec::len)
    }

    /// `a_t(θ_m^k)ᵀ x_{m,l}` for every `[m][k][l]`.
    fn tx_projections(&self, x: &[DVector<C64>]) -> Vec<Vec<Vec<C64>>> {
        let mt = self.at.first().and_then(|a| a.first()).map_or(0, DVector::len);
        self.at
            .iter()
            .enumerate()
            .map(|(m, at_m)| {
                at_m.iter()
                    .map(|a| x.iter().map(|xl| a.iter().zip(xl.rows(m * mt, mt).iter()).map(|(p, q)| p * q).sum()).collect())
                    .collect()
            })
            .collect()
    }

    /// Signal received at node `n` from link `(m, k)` with unit amplitude.
    fn link_signal(&self, n: usize, m: usize, k: usize, s: &[Vec<Vec<C64>>]) -> DMatrix<C64> {
        let ar = &self.ar[n][k];
        let d = &self.d[n][m][k];
        DMatrix::from_fn(ar.len(), d.len(), |r, l| ar[r] * s[m][k][l] * d[l])
    }

    /// Noiseless received signal at every node.
    fn mean(&self, amps: &Amplitudes<f64>, x: &[DVector<C64>]) -> Vec<DMatrix<C64>> {
        let s = self.tx_projections(x);
        let nodes = self.ar.len();
        (0..nodes)
            .map(|n| {
                let mut y = DMatrix::from_element(self.ar[n].first().map_or(0, DVector::len), x.len(), czero());
                for m in 0..nodes {
                    for k in 0..self.targets() {
                        y += self.link_signal(n, m, k, &s) * amps.get(n, m, k);
                    }
                }
                y
            })
            .collect()
    }
}

fn czero() -> C64 {
    Complex::new(0.0, 0.0)
}

/// Noiseless received signal `[n]` for the scenario's true targets.
pub fn noiseless_reception(scn: &Scenario<f64>, x: &[DVector<C64>]) -> Result<Vec<DMatrix<C64>>> {
    Ok(LinkModel::new(scn, &scn.geometry.targets)?.mean(&scn.power.amplitudes, x))
}

/// Simulates `symbols` OFDM symbols: random data and radar sequences through
/// the precoders, target reflections with the scenario's amplitudes, and
/// i.i.d. `CN(0, σ_s²/L)` receiver noise.
pub fn simulate_reception(
    p: &PrecoderSet,
    scn: &Scenario<f64>,
    seed: u64,
    symbols: usize,
) -> Result<ReceptionBatch> {
    if symbols == 0 {
        return Err(Error::InvalidInput("at least one symbol is required".into()));
    }
    if p.nodes != scn.n() || p.subcarriers != scn.l() || p.antennas != scn.mt() {
        return Err(Error::InvalidInput("precoders do not match the scenario".into()));
    }
    let model = LinkModel::new(scn, &scn.geometry.targets)?;
    let var = scn.sense_noise_per_subcarrier();
    let mut sym_rng = ChaCha8Rng::seed_from_u64(split_seed(seed, STREAM_SYMBOLS));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(split_seed(seed, STREAM_NOISE));
    let mut out = Vec::with_capacity(symbols);
    for _ in 0..symbols {
        let draw = SymbolDraw::random(p, &mut sym_rng);
        let x: Vec<DVector<C64>> = (0..p.subcarriers).map(|l| p.transmit(l, &draw.data[l], &draw.radar[l])).collect();
        let mean = model.mean(&scn.power.amplitudes, &x);
        let noise: Vec<DMatrix<C64>> = mean
            .iter()
            .map(|m| DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| complex_gaussian(&mut noise_rng, var)))
            .collect();
        let y = mean.iter().zip(&noise).map(|(m, z)| m + z).collect();
        out.push(ReceivedSymbol { x, y, noise });
    }
    Ok(ReceptionBatch {
        symbols: out,
        noise_variance: var,
        seed,
    })
}

/// FIM over `Θ = [x, y, Re b, Im b]` averaged over the realized transmit
/// symbols of `batch`. Position derivatives of the noiseless signal are
/// central differences with step `step` meters; amplitude derivatives are
/// exact.
pub fn empirical_fim_theta(batch: &ReceptionBatch, scn: &Scenario<f64>, step: f64) -> Result<DMatrix<f64>> {
    let (n_nodes, k_t) = (scn.n(), scn.k());
    let kn2 = k_t * n_nodes * n_nodes;
    let dim = 2 * k_t + 2 * kn2;
    let amps = &scn.power.amplitudes;
    let base = LinkModel::new(scn, &scn.geometry.targets)?;
    let mut shifted = Vec::with_capacity(2 * k_t);
    for c in 0..2 {
        for k in 0..k_t {
            let mut plus = scn.geometry.targets.clone();
            let mut minus = plus.clone();
            plus[k][c] += step;
            minus[k][c] -= step;
            shifted.push((LinkModel::new(scn, &plus)?, LinkModel::new(scn, &minus)?));
        }
    }
    let mut acc = DMatrix::<f64>::zeros(dim, dim);
    for sym in &batch.symbols {
        let mut grads: Vec<Vec<DMatrix<C64>>> = Vec::with_capacity(dim);
        for (plus, minus) in &shifted {
            let (a, b) = (plus.mean(amps, &sym.x), minus.mean(amps, &sym.x));
            grads.push(a.iter().zip(&b).map(|(p, m)| (p - m) / Complex::new(2.0 * step, 0.0)).collect());
        }
        let s = base.tx_projections(&sym.x);
        let zero = DMatrix::from_element(scn.mr(), scn.l(), czero());
        let mut amp_grads = Vec::with_capacity(kn2);
        for n in 0..n_nodes {
            for m in 0..n_nodes {
                for k in 0..k_t {
                    let mut g = vec![zero.clone(); n_nodes];
                    g[n] = base.link_signal(n, m, k, &s);
                    amp_grads.push(g);
                }
            }
        }
        let imag: Vec<Vec<DMatrix<C64>>> = amp_grads
            .iter()
            .map(|g| g.iter().map(|m| m * Complex::new(0.0, 1.0)).collect())
            .collect();
        grads.extend(amp_grads);
        grads.extend(imag);
        for a in 0..dim {
            for b in a..dim {
                let v: f64 = (0..n_nodes).map(|n| grads[a][n].dotc(&grads[b][n]).re).sum();
                acc[(a, b)] += v;
                if a != b {
                    acc[(b, a)] += v;
                }
            }
        }
    }
    Ok(acc * (2.0 / batch.noise_variance / batch.symbols.len() as f64))
}

/// Search region and resolution of the maximum-likelihood localizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Coarse cell size in meters.
    pub coarse_step: f64,
    /// The refinement cell is `coarse_step / refine_factor`.
    pub refine_factor: usize,
    /// Compass-search step at which polishing stops (0 disables polishing).
    pub polish_tol: f64,
    /// Alternating passes over the targets after the initial sequential
    /// search (multi-target scenes only).
    pub passes: usize,
}

impl GridSpec {
    /// Bounding box of the targets grown by `margin` meters, 1 m coarse
    /// cells refined to 5 cm.
    pub fn around_targets(scn: &Scenario<f64>, margin: f64) -> Self {
        let t = &scn.geometry.targets;
        let fold = |c: usize, f: fn(f64, f64) -> f64, init: f64| t.iter().map(|p| p[c]).fold(init, f);
        Self {
            x_range: [fold(0, f64::min, f64::INFINITY) - margin, fold(0, f64::max, f64::NEG_INFINITY) + margin],
            y_range: [fold(1, f64::min, f64::INFINITY) - margin, fold(1, f64::max, f64::NEG_INFINITY) + margin],
            coarse_step: 1.0,
            refine_factor: 20,
            polish_tol: 1e-6,
            passes: 2,
        }
    }

    pub fn validate(&self, scn: &Scenario<f64>) -> Result<()> {
        let ok_range = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if !ok_range(self.x_range) || !ok_range(self.y_range) || !(self.coarse_step > 0.0) || self.refine_factor == 0 {
            return Err(Error::InvalidConfig("search grid must have ordered ranges and positive steps".into()));
        }
        for (k, q) in scn.geometry.targets.iter().enumerate() {
            let inside = |r: [f64; 2], v: f64| r[0] <= v && v <= r[1];
            if !inside(self.x_range, q[0]) || !inside(self.y_range, q[1]) {
                return Err(Error::InvalidConfig(format!(
                    "search grid does not cover target {k} at ({}, {})",
                    q[0], q[1]
                )));
            }
        }
        Ok(())
    }

    fn axis(range: [f64; 2], step: f64) -> Vec<f64> {
        let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| range[0] + i as f64 * step).collect()
    }
}

/// Concentrated negative log-likelihood on the coarse grid, `nll[iy][ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSurface {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub nll: Vec<Vec<f64>>,
}

impl LikelihoodSurface {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Smallest value on the grid and its position.
    pub fn minimum(&self) -> (Point<f64>, f64) {
        let mut best = ([f64::NAN; 2], f64::INFINITY);
        for (iy, row) in self.nll.iter().enumerate() {
            for (ix, &v) in row.iter().enumerate() {
                if v < best.1 {
                    best = ([self.x[ix], self.y[iy]], v);
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleEstimate {
    pub positions: Vec<Point<f64>>,
    pub nll: f64,
    /// Coarse surface of the first target's search.
    pub surface: LikelihoodSurface,
    pub evaluations: usize,
}

/// `Σ_n min_b ‖Y_n − Σ_{m,k} b_{n,m}^k G_{n,m,k}‖²`: amplitudes are
/// eliminated by a per-receiver least-squares fit. Positions that coincide
/// with a node score `+∞`.
pub fn concentrated_nll(batch: &ReceptionBatch, scn: &Scenario<f64>, targets: &[Point<f64>]) -> f64 {
    let Ok(model) = LinkModel::new(scn, targets) else {
        return f64::INFINITY;
    };
    let n_nodes = scn.n();
    let k_t = targets.len();
    let cols = n_nodes * k_t;
    let projections: Vec<_> = batch.symbols.iter().map(|s| model.tx_projections(&s.x)).collect();
    let mut total = 0.0;
    for n in 0..n_nodes {
        let mut gram = DMatrix::from_element(cols, cols, czero());
        let mut rhs = DVector::from_element(cols, czero());
        let mut energy = 0.0;
        let arr: Vec<DMatrix<C64>> = (0..k_t)
            .map(|k| DMatrix::from_fn(k_t, 1, |kk, _| model.ar[n][k].dotc(&model.ar[n][kk])))
            .collect();
        for (sym, s) in batch.symbols.iter().zip(&projections) {
            let y = &sym.y[n];
            energy += y.norm_squared();
            // a_rᴴ Y per target: length L
            let ay: Vec<DVector<C64>> = (0..k_t).map(|k| (y.adjoint() * &model.ar[n][k]).map(|z| z.conj())).collect();
            // g_{m,k,l} = s_{m,k,l} d_{n,m,k,l}
            let g: Vec<Vec<C64>> = (0..n_nodes)
                .flat_map(|m| (0..k_t).map(move |k| (m, k)))
                .map(|(m, k)| (0..scn.l()).map(|l| s[m][k][l] * model.d[n][m][k][l]).collect())
                .collect();
            for a in 0..cols {
                let ka = a % k_t;
                for l in 0..scn.l() {
                    rhs[a] += g[a][l].conj() * ay[ka][l];
                }
                for b in a..cols {
                    let kb = b % k_t;
                    let mut v = czero();
                    for l in 0..scn.l() {
                        v += g[a][l].conj() * g[b][l];
                    }
                    v *= arr[ka][(kb, 0)];
                    gram[(a, b)] += v;
                    if a != b {
                        gram[(b, a)] += v.conj();
                    }
                }
            }
        }
        let explained = solve_hpd(&gram, &rhs).map_or(0.0, |b| rhs.dotc(&b).re);
        total += energy - explained;
    }
    total
}

fn solve_hpd(a: &DMatrix<C64>, b: &DVector<C64>) -> Option<DVector<C64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let ridge = 1e-12 * a.diagonal().iter().map(|z| z.re).sum::<f64>().max(f64::MIN_POSITIVE);
    let shifted = a + DMatrix::from_diagonal_element(a.nrows(), a.ncols(), Complex::new(ridge, 0.0));
    shifted.cholesky().map(|ch| ch.solve(b))
}

struct Search<'a> {
    batch: &'a ReceptionBatch,
    scn: &'a Scenario<f64>,
    evaluations: usize,
}

impl Search<'_> {
    fn nll(&mut self, others: &[Point<f64>], slot: usize, p: Point<f64>) -> f64 {
        self.evaluations += 1;
        let mut t = others.to_vec();
        t.insert(slot.min(t.len()), p);
        concentrated_nll(self.batch, self.scn, &t)
    }

    fn grid(&mut self, others: &[Point<f64>], slot: usize, xs: &[f64], ys: &[f64]) -> (Point<f64>, f64, Vec<Vec<f64>>) {
        let mut best = ([xs[0], ys[0]], f64::INFINITY);
        let mut surface = Vec::with_capacity(ys.len());
        for &y in ys {
            let mut row = Vec::with_capacity(xs.len());
            for &x in xs {
                let v = self.nll(others, slot, [x, y]);
                if v < best.1 {
                    best = ([x, y], v);
                }
                row.push(v);
            }
            surface.push(row);
        }
        (best.0, best.1, surface)
    }

    /// Coarse grid over the whole region, refinement around the best cell,
    /// then compass-search polishing.
    fn locate(&mut self, grid: &GridSpec, others: &[Point<f64>], slot: usize) -> (Point<f64>, f64, LikelihoodSurface) {
        let xs = GridSpec::axis(grid.x_range, grid.coarse_step);
        let ys = GridSpec::axis(grid.y_range, grid.coarse_step);
        let (c, _, nll) = self.grid(others, slot, &xs, &ys);
        let surface = LikelihoodSurface { x: xs, y: ys, nll };
        let fine = grid.coarse_step / grid.refine_factor as f64;
        let fx = GridSpec::axis([c[0] - grid.coarse_step, c[0] + grid.coarse_step], fine);
        let fy = GridSpec::axis([c[1] - grid.coarse_step, c[1] + grid.coarse_step], fine);
        let (mut p, mut v, _) = self.grid(others, slot, &fx, &fy);
        if grid.polish_tol > 0.0 {
            let mut h = fine / 2.0;
            while h >= grid.polish_tol {
                let mut moved = false;
                for d in [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]] {
                    let q = [p[0] + d[0], p[1] + d[1]];
                    let vq = self.nll(others, slot, q);
                    if vq < v {
                        (p, v, moved) = (q, vq, true);
                        break;
                    }
                }
                if !moved {
                    h /= 2.0;
                }
            }
        }
        (p, v, surface)
    }
}

/// Maximum-likelihood localization of the scenario's `K` targets. Targets
/// are found one at a time (each search keeps the previously found ones in
/// the model), then re-estimated in alternating passes with the others
/// fixed.
pub fn mle_localize(batch: &ReceptionBatch, scn: &Scenario<f64>, grid: &GridSpec) -> Result<MleEstimate> {
    grid.validate(scn)?;
    if batch.symbols.is_empty() {
        return Err(Error::InvalidInput("empty reception batch".into()));
    }
    let mut search = Search {
        batch,
        scn,
        evaluations: 0,
    };
    let k_t = scn.k();
    let mut est: Vec<Point<f64>> = Vec::with_capacity(k_t);
    let mut first_surface = None;
    let mut nll = f64::INFINITY;
    for k in 0..k_t {
        let (p, v, s) = search.locate(grid, &est, k);
        est.push(p);
        nll = v;
        first_surface.get_or_insert(s);
    }
    if k_t > 1 {
        for _ in 0..grid.passes {
            for k in 0..k_t {
                let mut others = est.clone();
                others.remove(k);
                let (p, v, _) = search.locate(grid, &others, k);
                est[k] = p;
                nll = v;
            }
        }
    }
    Ok(MleEstimate {
        positions: est,
        nll,
        surface: first_surface.unwrap_or(LikelihoodSurface {
            x: Vec::new(),
            y: Vec::new(),
            nll: Vec::new(),
        }),
        evaluations: search.evaluations,
    })
}

/// Squared position error after optimally matching estimates to targets.
pub fn matched_squared_error(est: &[Point<f64>], truth: &[Point<f64>]) -> f64 {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, k - 1);
                out.push(q);
            }
        }
        out
    }
    let d2 = |a: Point<f64>, b: Point<f64>| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    perms(truth.len())
        .into_iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| d2(est[j], truth[i])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// RMSE of repeated maximum-likelihood localization against the root CRB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleStats {
    pub trials: usize,
    /// Per-coordinate RMSE, `sqrt(E‖p̂ − p‖² / 2K)`, in meters.
    pub rmse: f64,
    pub rcrb: f64,
    /// Standard error of `rmse / rcrb` (delta method on the mean squared
    /// error).
    pub ratio_std: f64,
    pub squared_errors: Vec<f64>,
}

impl MleStats {
    pub fn ratio(&self) -> f64 {
        self.rmse / self.rcrb
    }
}

/// Independent localization trials, each with its own symbol and noise
/// realization (`split_seed(seed, trial)`), over `symbols` symbols per
/// trial.
pub fn mle_trials(
    p: &PrecoderSet,
    scn: &Scenario<f64>,
    grid: &GridSpec,
    trials: usize,
    symbols: usize,
    seed: u64,
    jobs: usize,
) -> Result<MleStats> {
    if trials == 0 {
        return Err(Error::InvalidInput("at least one trial is required".into()));
    }
    let crb = fim::evaluate_crb(&p.covariances(), scn, Mode::Hybrid)?.crb_position / symbols as f64;
    let errs = parallel_map(trials, jobs, |t| -> Result<f64> {
        let batch = simulate_reception(p, scn, split_seed(seed, t as u64), symbols)?;
        let est = mle_localize(&batch, scn, grid)?;
        Ok(matched_squared_error(&est.positions, &scn.geometry.targets))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let two_k = 2.0 * scn.k() as f64;
    let n = errs.len() as f64;
    let mse = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = (mse / two_k).sqrt();
    let rcrb = fim::rcrb(crb, scn.k());
    // d sqrt(m) = dm / (2 sqrt(m))
    let ratio_std = if mse > 0.0 { (var / n).sqrt() / (2.0 * mse) * rmse / rcrb } else { 0.0 };
    Ok(MleStats {
        trials,
        rmse,
        rcrb,
        ratio_std,
        squared_errors: errs,
    })
}

/// Instantaneous SINR samples in dB, one per draw and served
/// (user, subcarrier) pair.
pub fn sinr_samples_db(
    p: &PrecoderSet,
    channels: &ChannelSet,
    scn: &Scenario<f64>,
    draws: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, STREAM_SYMBOLS));
    let noise = scn.comm_noise_per_subcarrier();
    let mut out = Vec::with_capacity(draws * p.users * p.subcarriers);
    for _ in 0..draws {
        let draw = SymbolDraw::random(p, &mut rng);
        for l in 0..p.subcarriers {
            for u in 0..p.users {
                let served = (0..p.nodes).any(|n| p.comm[n][u][l].norm_squared() > 0.0);
                if served {
                    out.push(linear_to_db(instantaneous_sinr(p, channels, &draw, noise, u, l)));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrSummary {
    pub samples: usize,
    pub mean_db: f64,
    pub std_db: f64,
    /// Fraction of samples inside the requested window.
    pub in_window: f64,
}

pub fn summarize_sinr(samples_db: &[f64], window_db: [f64; 2]) -> SinrSummary {
    let n = samples_db.len().max(1) as f64;
    let mean = samples_db.iter().sum::<f64>() / n;
    let var = samples_db.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inside = samples_db.iter().filter(|&&v| window_db[0] <= v && v <= window_db[1]).count();
    SinrSummary {
        samples: samples_db.len(),
        mean_db: mean,
        std_db: var.sqrt(),
        in_window: inside as f64 / n,
    }
}

/// Runs `f(0..count)` on up to `jobs` worker threads; results keep task
/// order, so output never depends on scheduling.
pub fn parallel_map<T: Send>(count: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, count.max(1));
    if jobs == 1 {
        return (0..count).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let v = f(i);
                if let Ok(mut g) = slots.lock() {
                    g[i] = Some(v);
                }
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_default()
        .into_iter()
        .map(|v| v.expect("every task index is visited exactly once"))
        .collect()
}

/// Number of logical cores, the default worker count.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Swept scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// SINR threshold in dB.
    Gamma,
    /// Bandwidth in MHz.
    Bandwidth,
    /// Transmit and receive antennas per node.
    Antennas,
    /// Node count, nodes placed by [`arc_nodes`].
    Nodes,
    Subcarriers,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Gamma => "gamma",
            Axis::Bandwidth => "bandwidth",
            Axis::Antennas => "antennas",
            Axis::Nodes => "nodes",
            Axis::Subcarriers => "subcarriers",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Axis::Gamma => "dB",
            Axis::Bandwidth => "MHz",
            Axis::Antennas | Axis::Nodes | Axis::Subcarriers => "count",
        }
    }

    /// Scenario with the axis set to `value`. With `fixed_total_power`,
    /// changing the antenna count rescales the per-antenna budget so that
    /// `M·P_T` stays constant.
    pub fn apply(self, scn: &Scenario<f64>, value: f64, fixed_total_power: bool) -> Result<Scenario<f64>> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a positive integer, got {value}", self.as_str())))
            }
        };
        let mut s = scn.clone();
        match self {
            Axis::Gamma => s.power.sinr_threshold = db_to_linear(value),
            Axis::Bandwidth => {
                if !(value > 0.0) {
                    return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {value}")));
                }
                s.ofdm.bandwidth = value * 1e6;
            }
            Axis::Antennas => {
                let m = count()?;
                if fixed_total_power {
                    s.power.per_antenna_power *= scn.mt() as f64 / m as f64;
                }
                s.ofdm.tx_antennas = m;
                s.ofdm.rx_antennas = m;
            }
            Axis::Nodes => {
                let n = count()?;
                s.geometry = Geometry::new(arc_nodes(n), scn.geometry.targets.clone(), scn.geometry.users.clone());
                let db = linear_to_db(scn.power.amplitudes.average_power());
                s.power.amplitudes = Amplitudes::random(n, scn.k(), db, split_seed(scn.channel_seed, 1));
            }
            Axis::Subcarriers => s.ofdm.subcarriers = count()?,
        }
        s.validate()?;
        Ok(s)
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" | "gamma_db" | "sinr" => Ok(Axis::Gamma),
            "bandwidth" => Ok(Axis::Bandwidth),
            "antennas" => Ok(Axis::Antennas),
            "nodes" | "node_count" => Ok(Axis::Nodes),
            "subcarriers" => Ok(Axis::Subcarriers),
            other => Err(Error::InvalidInput(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// `n` nodes evenly spread over the lower half of the radius-50 m circle,
/// coordinates truncated to centimeters. Reproduces the two- and four-node
/// reference layouts up to ordering.
pub fn arc_nodes(n: usize) -> Vec<Point<f64>> {
    (0..n)
        .map(|i| {
            let a = -std::f64::consts::PI + (i as f64 + 0.5) * std::f64::consts::PI / n as f64;
            let r = |v: f64| (v * 100.0).trunc() / 100.0;
            [r(50.0 * a.cos()), r(50.0 * a.sin())]
        })
        .collect()
}

/// What to solve at every sweep point.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub families: Vec<Family>,
    pub modes: Vec<Mode>,
    /// SINR threshold for non-gamma axes; `None` keeps the scenario's.
    pub gamma_db: Option<f64>,
    pub fixed_total_power: bool,
    /// Extract precoders and report their CRB and SINR.
    pub extract: bool,
    pub jobs: usize,
    pub solver: SolverOptions,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            modes: vec![Mode::Hybrid],
            gamma_db: None,
            fixed_total_power: false,
            extract: true,
            jobs: default_jobs(),
            solver: SolverOptions::default(),
        }
    }
}

/// One solve in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub family: Family,
    pub mode: String,
    pub gamma_db: f64,
    pub status: String,
    /// Root CRB of the relaxed optimum (m).
    pub rcrb_relaxed: Option<f64>,
    /// Root CRB of the extracted precoders (m).
    pub rcrb: Option<f64>,
    /// Smallest average SINR over served users and subcarriers after
    /// extraction (dB).
    pub sinr_db: Option<f64>,
    pub wall_ms: f64,
}

impl SweepPoint {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Points of one family and mode in axis order.
    pub fn curve(&self, family: Family, mode: Mode) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.family == family && p.mode == mode.as_str()).collect()
    }

    /// CSV with a leading unit line. With `timing == false` the wall-time
    /// column is left empty so that reruns are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = format!(
            "# units: value={}, gamma_db=dB, rcrb_m=meters, rcrb_relaxed_m=meters, sinr_db=dB, wall_ms=ms\n",
            self.axis.unit()
        );
        s.push_str("axis,value,family,mode,gamma_db,rcrb_m,rcrb_relaxed_m,sinr_db,wall_ms,status\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                self.axis.as_str(),
                p.value,
                p.family,
                p.mode,
                p.gamma_db,
                opt(p.rcrb),
                opt(p.rcrb_relaxed),
                p.sinr_db.map(|x| format!("{x:.6}")).unwrap_or_default(),
                if timing { format!("{:.3}", p.wall_ms) } else { String::new() },
                p.status
            );
        }
        s
    }
}

/// Solves, extracts and evaluates one design.
pub fn design_point(
    scn: &Scenario<f64>,
    channels: &ChannelSet,
    family: Family,
    mode: Mode,
    gamma_db: Option<f64>,
    extract_precoders: bool,
    opts: &SolverOptions,
) -> Result<SweepPoint> {
    let mut spec = DesignSpec::new(family, scn, channels, mode);
    if let Some(g) = gamma_db {
        spec = spec.with_gamma_db(g);
    }
    let gamma = spec.gamma.unwrap_or(0.0);
    let rep = solve_with(&spec, opts)?;
    let mut point = SweepPoint {
        value: 0.0,
        family,
        mode: mode.as_str().to_string(),
        gamma_db: linear_to_db(gamma),
        status: rep.status.as_str().to_string(),
        rcrb_relaxed: rep.rcrb(scn.k()),
        rcrb: None,
        sinr_db: None,
        wall_ms: rep.wall_ms,
    };
    if extract_precoders && rep.is_optimal() {
        if let Some(vars) = &rep.variables {
            let ex = extract(vars, scn, channels, spec.gamma)?;
            let cov = ex.precoders.covariances();
            point.rcrb = Some(fim::rcrb(ex.crb(scn, mode)?, scn.k()));
            let mut worst = f64::INFINITY;
            for l in 0..scn.l() {
                for u in 0..scn.u() {
                    worst = worst.min(average_sinr(&cov, channels, scn, u, l));
                }
            }
            point.sinr_db = Some(linear_to_db(worst));
        }
    }
    Ok(point)
}

/// Solves every (family, mode, Γ_c) combination. Infeasible or failed
/// points are recorded with their status.
pub fn tradeoff_sweep(scn: &Scenario<f64>, channels: &ChannelSet, gammas_db: &[f64], spec: &SweepSpec) -> Result<SweepResult> {
    check_axis(gammas_db)?;
    let tasks: Vec<(f64, Family, Mode)> = gammas_db
        .iter()
        .flat_map(|&g| spec.families.iter().flat_map(move |&f| spec.modes.iter().map(move |&m| (g, f, m))))
        .collect();
    let points = parallel_map(tasks.len(), spec.jobs, |i| {
        let (g, f, m) = tasks[i];
        point_or_error(design_point(scn, channels, f, m, Some(g), spec.extract, &spec.solver), g, f, m, g)
    });
    Ok(SweepResult {
        axis: Axis::Gamma,
        values: gammas_db.to_vec(),
        points,
    })
}

/// Solves every family and mode while one scenario parameter varies.
/// Channels are regenerated from the scenario's channel seed at every value.
pub fn parameter_sweep(scn: &Scenario<f64>, axis: Axis, values: &[f64], spec: &SweepSpec) -> Result<SweepResult> {
    if axis == Axis::Gamma {
        let channels = ChannelSet::for_scenario(scn);
        return tradeoff_sweep(scn, &channels, values, spec);
    }
    check_axis(values)?;
    let scenarios = values
        .iter()
        .map(|&v| axis.apply(scn, v, spec.fixed_total_power))
        .collect::<Result<Vec<_>>>()?;
    let channels: Vec<ChannelSet> = scenarios.iter().map(ChannelSet::for_scenario).collect();
    let tasks: Vec<(usize, Family, Mode)> = (0..values.len())
        .flat_map(|i| spec.families.iter().flat_map(move |&f| spec.modes.iter().map(move |&m| (i, f, m))))
        .collect();
    let points = parallel_map(tasks.len(), spec.jobs, |t| {
        let (i, f, m) = tasks[t];
        let s = &scenarios[i];
        let g = spec.gamma_db.unwrap_or_else(|| linear_to_db(s.power.sinr_threshold));
        point_or_error(design_point(s, &channels[i], f, m, Some(g), spec.extract, &spec.solver), values[i], f, m, g)
    });
    Ok(SweepResult {
        axis,
        values: values.to_vec(),
        points,
    })
}

fn check_axis(values: &[f64]) -> Result<()> {
    if values.is_empty() || values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("sweep grid must be non-empty and strictly increasing".into()));
    }
    Ok(())
}

fn point_or_error(r: Result<SweepPoint>, value: f64, family: Family, mode: Mode, gamma_db: f64) -> SweepPoint {
    match r {
        Ok(mut p) => {
            p.value = value;
            p
        }
        Err(e) => {
            log::warn!("sweep point {value} ({family}, {}) failed: {e}", mode.as_str());
            SweepPoint {
                value,
                family,
                mode: mode.as_str().to_string(),
                gamma_db,
                status: "error".into(),
                rcrb_relaxed: None,
                rcrb: None,
                sinr_db: None,
                wall_ms: 0.0,
            }
        }
    }
}

/// Largest feasible Γ_c (dB) in `[lo, hi]` to within `tol`, by bisection
/// on the solver's feasibility verdict. `None` when `lo` is infeasible.
pub fn max_feasible_gamma_db(
    scn: &Scenario<f64>,
    channels: &ChannelSet,
    family: Family,
    mode: Mode,
    range_db: [f64; 2],
    tol_db: f64,
) -> Result<Option<f64>> {
    let feasible = |g: f64| -> Result<bool> {
        let spec = DesignSpec::new(family, scn, channels, mode).with_gamma_db(g);
        Ok(crate::designs::solve(&spec)?.is_optimal())
    };
    let [mut lo, mut hi] = range_db;
    if !feasible(lo)? {
        return Ok(None);
    }
    if feasible(hi)? {
        return Ok(Some(hi));
    }
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::SensingPrecoders;
    use crate::fim::CovarianceSet;
    use crate::matrixcore::factorize_psd;
    use crate::scenario::presets::{four_nodes, two_nodes, ScenarioParams};

    fn isotropic_precoders(scn: &Scenario<f64>) -> PrecoderSet {
        let cov = CovarianceSet::isotropic(scn, scn.power.per_antenna_power / scn.l() as f64);
        let w: Vec<DMatrix<C64>> = cov.r_tilde.iter().map(|r| factorize_psd(r, 1e-9).unwrap()).collect();
        let (n, l, mt) = (scn.n(), scn.l(), scn.mt());
        PrecoderSet {
            nodes: n,
            users: scn.u(),
            subcarriers: l,
            antennas: mt,
            comm: vec![vec![vec![DVector::from_element(mt, czero()); l]; scn.u()]; n],
            sensing: SensingPrecoders::Shared(w),
            active: vec![vec![true; l]; n],
        }
    }

    fn small() -> Scenario<f64> {
        ScenarioParams {
            antennas: 2,
            subcarriers: 4,
            ..ScenarioParams::default()
        }
        .build()
    }

    #[test]
    fn zero_amplitudes_and_noise_give_zero_signal() {
        let mut scn = small();
        scn.power.amplitudes = Amplitudes::from_values(2, 1, vec![czero(); 4]).unwrap();
        scn.power.sense_noise = 0.0;
        let batch = simulate_reception(&isotropic_precoders(&scn), &scn, 1, 3).unwrap();
        for s in &batch.symbols {
            assert!(s.y.iter().all(|y| y.norm() == 0.0));
        }
    }

    #[test]
    fn single_link_collapses_to_scaled_delay() {
        // N=1, M=1, x = 1 on every subcarrier: y_l = b·d_l(2τ)
        let scn = ScenarioParams {
            nodes: vec![[35.35, -35.35]],
            antennas: 1,
            subcarriers: 8,
            ..ScenarioParams::default()
        }
        .build();
        let x: Vec<DVector<C64>> = (0..8).map(|_| DVector::from_element(1, Complex::new(1.0, 0.0))).collect();
        let y = noiseless_reception(&scn, &x).unwrap();
        let (tau, _) = tof_and_angle(scn.geometry.nodes[0], scn.geometry.targets[0]).unwrap();
        let b = scn.power.amplitudes.get(0, 0, 0);
        for l in 0..8 {
            let want = b * Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * 10e6 / 8.0 * l as f64 * 2.0 * tau);
            assert!((y[0][(0, l)] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn transmit_covariance_matches_design() {
        let scn = small();
        let p = isotropic_precoders(&scn);
        let batch = simulate_reception(&p, &scn, 3, 10_000).unwrap();
        let want = p.covariances();
        for l in 0..scn.l() {
            let mut acc = DMatrix::from_element(4, 4, czero());
            for s in &batch.symbols {
                acc += &s.x[l] * s.x[l].adjoint();
            }
            acc /= Complex::new(batch.symbols.len() as f64, 0.0);
            let rel = (acc - want.r_tilde[l].as_matrix()).norm() / want.r_tilde[l].frobenius_norm();
            assert!(rel < 0.03, "l={l}: {rel}");
        }
    }

    #[test]
    fn noise_has_configured_variance() {
        let scn = small();
        let batch = simulate_reception(&isotropic_precoders(&scn), &scn, 4, 2000).unwrap();
        let (mut s, mut n) = (0.0, 0.0);
        for sym in &batch.symbols {
            for z in &sym.noise {
                s += z.norm_squared();
                n += z.len() as f64;
            }
        }
        let v = s / n;
        assert!((v / scn.sense_noise_per_subcarrier() - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn empirical_fim_converges_to_expected() {
        let scn = small();
        let p = isotropic_precoders(&scn);
        let batch = simulate_reception(&p, &scn, 5, 4000).unwrap();
        let emp = empirical_fim_theta(&batch, &scn, 1e-3).unwrap();
        let want = fim::evaluate_crb(&p.covariances(), &scn, Mode::Hybrid).unwrap().fim_theta;
        let rel = (&emp - &want).norm() / want.norm();
        assert!(rel < 0.03, "{rel}");
    }

    #[test]
    fn noiseless_on_grid_target_is_recovered_exactly() {
        let mut scn = small();
        scn.geometry.targets = vec![[3.0, -4.0]];
        scn.power.sense_noise = 0.0;
        let batch = simulate_reception(&isotropic_precoders(&scn), &scn, 6, 1).unwrap();
        let mut grid = GridSpec::around_targets(&scn, 5.0);
        grid.polish_tol = 0.0;
        let est = mle_localize(&batch, &scn, &grid).unwrap();
        assert_eq!(est.positions, vec![[3.0, -4.0]]);
        assert!(est.nll.abs() < 1e-9 * batch.symbols[0].y[0].norm_squared());
        let (at, v) = est.surface.minimum();
        assert_eq!(at, [3.0, -4.0]);
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn grid_must_cover_targets() {
        let scn = small();
        let batch = simulate_reception(&isotropic_precoders(&scn), &scn, 7, 1).unwrap();
        let grid = GridSpec {
            x_range: [5.0, 10.0],
            ..GridSpec::around_targets(&scn, 5.0)
        };
        assert!(matches!(mle_localize(&batch, &scn, &grid), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn two_separated_targets_are_found() {
        let mut scn = ScenarioParams {
            targets: vec![[-15.0, 0.0], [15.0, 5.0]],
            antennas: 4,
            subcarriers: 8,
            amplitude_db: 20.0,
            ..ScenarioParams::default()
        }
        .build();
        scn.power.sense_noise = 1e-3;
        let batch = simulate_reception(&isotropic_precoders(&scn), &scn, 8, 1).unwrap();
        let est = mle_localize(&batch, &scn, &GridSpec::around_targets(&scn, 5.0)).unwrap();
        let err = matched_squared_error(&est.positions, &scn.geometry.targets);
        assert!(err < 1e-2, "{:?} {err}", est.positions);
    }

    #[test]
    fn matched_error_ignores_order() {
        let t = [[0.0, 0.0], [10.0, 0.0]];
        assert_eq!(matched_squared_error(&[[10.0, 0.0], [0.0, 1.0]], &t), 1.0);
    }

    #[test]
    fn arc_layout_reproduces_reference_nodes() {
        for (n, want) in [(2, two_nodes()), (4, four_nodes())] {
            let got = arc_nodes(n);
            assert_eq!(got.len(), n);
            for p in want {
                assert!(got.contains(&p), "{p:?}");
            }
        }
    }

    #[test]
    fn parallel_map_preserves_order() {
        let v = parallel_map(50, 4, |i| i * i);
        assert_eq!(v, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_total_power_rescales_budget() {
        let scn = small();
        let s = Axis::Antennas.apply(&scn, 4.0, true).unwrap();
        assert_eq!(s.mt(), 4);
        assert!((s.power.per_antenna_power * 4.0 - scn.power.per_antenna_power * 2.0).abs() < 1e-12);
        assert!(Axis::Antennas.apply(&scn, 2.5, true).is_err());
    }

    #[test]
    fn tof_only_bound_shrinks_with_bandwidth() {
        let scn = ScenarioParams::default().build();
        let rc = |bw: f64| {
            let s = Axis::Bandwidth.apply(&scn, bw, false).unwrap();
            let cov = CovarianceSet::isotropic(&s, s.power.per_antenna_power / s.l() as f64);
            fim::evaluate_crb(&cov, &s, Mode::TofOnly).unwrap().rcrb()
        };
        assert!(rc(20.0) < rc(10.0));
    }

    #[test]
    fn sweep_csv_is_deterministic() {
        let scn = ScenarioParams {
            antennas: 2,
            subcarriers: 4,
            ..ScenarioParams::default()
        }
        .build();
        let ch = ChannelSet::for_scenario(&scn);
        let spec = SweepSpec {
            jobs: 2,
            ..SweepSpec::default()
        };
        let a = tradeoff_sweep(&scn, &ch, &[0.0, 10.0, 60.0], &spec).unwrap();
        let b = tradeoff_sweep(&scn, &ch, &[0.0, 10.0, 60.0], &spec).unwrap();
        assert_eq!(a.to_csv(false), b.to_csv(false));
        let csv = a.to_csv(true);
        assert!(csv.starts_with("# units:"));
        assert_eq!(csv.lines().count(), 2 + 9);
        assert!(a.points.iter().filter(|p| p.gamma_db == 60.0).all(|p| p.status == "infeasible"));
        for f in Family::ALL {
            let c = a.curve(f, Mode::Hybrid);
            assert!(c[0].rcrb_relaxed.unwrap() <= c[1].rcrb_relaxed.unwrap() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn instantaneous_sinr_centres_on_average() {
        let scn = ScenarioParams {
            antennas: 2,
            subcarriers: 4,
            ..ScenarioParams::default()
        }
        .build();
        let ch = ChannelSet::for_scenario(&scn);
        let spec = DesignSpec::new(Family::P2, &scn, &ch, Mode::Hybrid);
        let rep = crate::designs::solve(&spec).unwrap();
        let ex = extract(rep.variables.as_ref().unwrap(), &scn, &ch, spec.gamma).unwrap();
        let s = sinr_samples_db(&ex.precoders, &ch, &scn, 500, 1);
        assert_eq!(s.len(), 500 * 4);
        let lin_mean = s.iter().map(|&v| db_to_linear(v)).sum::<f64>() / s.len() as f64;
        let cov = ex.precoders.covariances();
        // E[interference] matches the average-SINR denominator, so the mean of
        // 1/SINR over draws estimates 1/γ̄ on every subcarrier
        let inv_mean: Vec<f64> = (0..4)
            .map(|l| s.iter().skip(l).step_by(4).map(|&v| 1.0 / db_to_linear(v)).sum::<f64>() / 500.0)
            .collect();
        for (l, im) in inv_mean.iter().enumerate() {
            let avg = average_sinr(&cov, &ch, &scn, 0, l);
            assert!((im * avg - 1.0).abs() < 0.1, "l={l}: {im} vs {avg}");
        }
        assert!(lin_mean > 0.0);
    }
}
