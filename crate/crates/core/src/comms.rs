//! Rayleigh downlink channels, transmit precoders and noncoherent CoMP SINR.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fim::CovarianceSet;
use crate::matrixcore::HermitianMatrix;
use crate::scenario::Scenario;

pub type C64 = Complex<f64>;

/// Draws a circularly-symmetric complex Gaussian sample with `E|z|² = var`.
pub fn complex_gaussian(rng: &mut impl Rng, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Derives an independent stream seed from a master seed and a stream index
/// (SplitMix64 finalizer), so parallel workers never share RNG state.
pub fn split_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channels `h_{n,u,l}` from node `n` to user `u` on subcarrier `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub nodes: usize,
    pub users: usize,
    pub subcarriers: usize,
    pub antennas: usize,
    pub seed: u64,
    h: Vec<DVector<C64>>,
}

impl ChannelSet {
    pub fn get(&self, n: usize, u: usize, l: usize) -> &DVector<C64> {
        &self.h[(n * self.users + u) * self.subcarriers + l]
    }

    /// Builds a channel set from explicit vectors ordered `(n, u, l)`.
    pub fn from_vectors(
        nodes: usize,
        users: usize,
        subcarriers: usize,
        antennas: usize,
        h: Vec<DVector<C64>>,
    ) -> crate::Result<Self> {
        if h.len() != nodes * users * subcarriers || h.iter().any(|v| v.len() != antennas) {
            return Err(crate::Error::InvalidInput("channel array has the wrong shape".into()));
        }
        Ok(Self {
            nodes,
            users,
            subcarriers,
            antennas,
            seed: 0,
            h,
        })
    }

    pub fn for_scenario(scn: &Scenario<f64>) -> Self {
        generate_channels(scn.n(), scn.u(), scn.l(), scn.mt(), scn.channel_seed)
    }
}

/// i.i.d. Rayleigh entries with unit gain per antenna, so
/// `E‖h_{n,u,l}‖² = M_t`.
pub fn generate_channels(nodes: usize, users: usize, subcarriers: usize, antennas: usize, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (0..nodes * users * subcarriers)
        .map(|_| DVector::from_fn(antennas, |_, _| complex_gaussian(&mut rng, 1.0)))
        .collect();
    ChannelSet {
        nodes,
        users,
        subcarriers,
        antennas,
        seed,
        h,
    }
}

/// Expected SINR of user `u` on subcarrier `l` from the node-diagonal blocks
/// of the covariances:
/// `Σ_n hᴴR_{c,n,u,l}h / (Σ_n hᴴ(R_{nn,l} − R_{c,n,u,l})h + σ_c²/L)`.
pub fn average_sinr(cov: &CovarianceSet<f64>, channels: &ChannelSet, scn: &Scenario<f64>, u: usize, l: usize) -> f64 {
    let mt = scn.mt();
    let noise = scn.comm_noise_per_subcarrier();
    let mut signal = 0.0;
    let mut interference = 0.0;
    for n in 0..scn.n() {
        let h = channels.get(n, u, l);
        let rc = cov.comm[n][u][l].quad_form(h);
        let rnn = cov.r_tilde[l].principal_block(n * mt, mt).quad_form(h);
        signal += rc;
        interference += rnn - rc;
    }
    if interference < 0.0 {
        if interference < -1e-9 * signal.abs().max(noise) {
            log::warn!("negative interference power {interference:e} on user {u}, subcarrier {l}; clipped to zero");
        }
        interference = 0.0;
    }
    signal / (interference + noise)
}

/// Upper bound on the SINR of `(u, l)`: every node puts its whole per-antenna
/// budget on this subcarrier and beamforms to the user with no interference.
pub fn sinr_upper_bound(channels: &ChannelSet, scn: &Scenario<f64>, u: usize, l: usize) -> f64 {
    let p = scn.power.per_antenna_power * scn.mt() as f64;
    (0..scn.n())
        .map(|n| p * channels.get(n, u, l).norm_squared())
        .sum::<f64>()
        / scn.comm_noise_per_subcarrier()
}

/// Sensing part of the transmit signal.
#[derive(Debug, Clone, PartialEq)]
pub enum SensingPrecoders {
    /// One radar sequence of length `r` shared by all nodes; `[l]` is the
    /// `M_t N × r` augmented precoder, node `n` uses rows `n·M_t..(n+1)·M_t`.
    Shared(Vec<DMatrix<C64>>),
    /// Independent sequence per node; `[n][l]` is `M_t × r`.
    PerNode(Vec<Vec<DMatrix<C64>>>),
}

/// Communication and sensing precoders for every node and subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub nodes: usize,
    pub users: usize,
    pub subcarriers: usize,
    pub antennas: usize,
    /// `[n][u][l]`
    pub comm: Vec<Vec<Vec<DVector<C64>>>>,
    pub sensing: SensingPrecoders,
    /// `[n][l]`: node transmits on the subcarrier.
    pub active: Vec<Vec<bool>>,
}

impl PrecoderSet {
    /// Sensing precoder rows of node `n` on subcarrier `l`.
    pub fn sensing_block(&self, n: usize, l: usize) -> DMatrix<C64> {
        match &self.sensing {
            SensingPrecoders::Shared(w) => w[l].rows(n * self.antennas, self.antennas).into_owned(),
            SensingPrecoders::PerNode(w) => w[n][l].clone(),
        }
    }

    /// Transmit covariances implied by the precoders. Data symbols of
    /// different nodes are uncorrelated (noncoherent transmission), so
    /// communication terms only populate node-diagonal blocks.
    pub fn covariances(&self) -> CovarianceSet<f64> {
        let (mt, n_nodes) = (self.antennas, self.nodes);
        let dim = mt * n_nodes;
        let mut r_tilde = Vec::with_capacity(self.subcarriers);
        let mut comm = vec![vec![vec![HermitianMatrix::zeros(mt); self.subcarriers]; self.users]; n_nodes];
        for l in 0..self.subcarriers {
            let mut r = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
            match &self.sensing {
                SensingPrecoders::Shared(w) => r += &w[l] * w[l].adjoint(),
                SensingPrecoders::PerNode(w) => {
                    for (n, wn) in w.iter().enumerate() {
                        let mut v = r.view_mut((n * mt, n * mt), (mt, mt));
                        v += &wn[l] * wn[l].adjoint();
                    }
                }
            }
            for n in 0..n_nodes {
                for u in 0..self.users {
                    let w = &self.comm[n][u][l];
                    let c = HermitianMatrix::outer(w);
                    let mut v = r.view_mut((n * mt, n * mt), (mt, mt));
                    v += c.as_matrix();
                    comm[n][u][l] = c;
                }
            }
            r_tilde.push(HermitianMatrix::symmetrized(r));
        }
        CovarianceSet { r_tilde, comm }
    }

    /// Per-antenna power summed over subcarriers, stacked by node.
    pub fn antenna_powers(&self) -> Vec<f64> {
        self.covariances().antenna_powers()
    }

    /// Stacked transmit vector `x̃_l` for given symbol realizations.
    /// `data[n][u]` is the symbol node `n` sends to user `u`; `radar[n]` the
    /// radar sequence of node `n` (only `radar[0]` is used for a shared
    /// sequence).
    pub fn transmit(&self, l: usize, data: &[Vec<C64>], radar: &[DVector<C64>]) -> DVector<C64> {
        let mt = self.antennas;
        let mut x = DVector::from_element(mt * self.nodes, C64::new(0.0, 0.0));
        match &self.sensing {
            SensingPrecoders::Shared(w) => x += &w[l] * &radar[0],
            SensingPrecoders::PerNode(w) => {
                for n in 0..self.nodes {
                    let mut v = x.rows_mut(n * mt, mt);
                    v += &w[n][l] * &radar[n];
                }
            }
        }
        for n in 0..self.nodes {
            for u in 0..self.users {
                let mut v = x.rows_mut(n * mt, mt);
                v += &self.comm[n][u][l] * data[n][u];
            }
        }
        x
    }

    /// Number of columns of the radar sequence on subcarrier `l` (per node
    /// for per-node sensing).
    pub fn radar_len(&self, n: usize, l: usize) -> usize {
        match &self.sensing {
            SensingPrecoders::Shared(w) => w[l].ncols(),
            SensingPrecoders::PerNode(w) => w[n][l].ncols(),
        }
    }
}

/// Realized data and radar symbols for one OFDM symbol.
#[derive(Debug, Clone)]
pub struct SymbolDraw {
    /// `[l][n][u]`: QPSK data symbols. Nodes draw independent phases, so the
    /// CoMP transmission combines powers rather than amplitudes.
    pub data: Vec<Vec<Vec<C64>>>,
    /// `[l][n]`: unit-covariance Gaussian radar sequences.
    pub radar: Vec<Vec<DVector<C64>>>,
}

impl SymbolDraw {
    pub fn random(p: &PrecoderSet, rng: &mut impl Rng) -> Self {
        let qpsk = |rng: &mut dyn rand::RngCore| {
            let b: u8 = rng.random_range(0..4);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            C64::new(if b & 1 == 0 { s } else { -s }, if b & 2 == 0 { s } else { -s })
        };
        let mut data = Vec::with_capacity(p.subcarriers);
        let mut radar = Vec::with_capacity(p.subcarriers);
        for l in 0..p.subcarriers {
            data.push((0..p.nodes).map(|_| (0..p.users).map(|_| qpsk(rng)).collect()).collect());
            radar.push(
                (0..p.nodes)
                    .map(|n| DVector::from_fn(p.radar_len(n, l), |_, _| complex_gaussian(rng, 1.0)))
                    .collect(),
            );
        }
        Self { data, radar }
    }
}

/// SINR of user `u` on subcarrier `l` for one symbol realization. Per-node
/// received powers add noncoherently; noise enters with its expected power.
pub fn instantaneous_sinr(
    p: &PrecoderSet,
    channels: &ChannelSet,
    draw: &SymbolDraw,
    noise_per_subcarrier: f64,
    u: usize,
    l: usize,
) -> f64 {
    let mt = p.antennas;
    let mut signal = 0.0;
    let mut interference = 0.0;
    let shared_radar = match &p.sensing {
        SensingPrecoders::Shared(w) => Some(&w[l] * &draw.radar[l][0]),
        SensingPrecoders::PerNode(_) => None,
    };
    for n in 0..p.nodes {
        let h = channels.get(n, u, l);
        let hh = h.adjoint();
        for uu in 0..p.users {
            let a = (&hh * &p.comm[n][uu][l])[(0, 0)] * draw.data[l][n][uu];
            if uu == u {
                signal += a.norm_sqr();
            } else {
                interference += a.norm_sqr();
            }
        }
        let radar_tx = match (&shared_radar, &p.sensing) {
            (Some(x), _) => x.rows(n * mt, mt).into_owned(),
            (None, SensingPrecoders::PerNode(w)) => &w[n][l] * &draw.radar[l][n],
            (None, SensingPrecoders::Shared(_)) => unreachable!("shared radar handled above"),
        };
        interference += (&hh * radar_tx)[(0, 0)].norm_sqr();
    }
    signal / (interference + noise_per_subcarrier)
}
