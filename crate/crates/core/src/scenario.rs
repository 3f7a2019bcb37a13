//! Physical scenario: geometry, OFDM numerology, power budget, target
//! amplitudes, and the steering/delay responses derived from them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::num::{cis, cj, creal, lit, Real};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 2-D position in meters.
pub type Point<T> = [T; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct OfdmConfig<T: Real> {
    pub carrier_wavelength: T,
    pub bandwidth: T,
    pub subcarriers: usize,
    pub symbols: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub antenna_spacing: T,
}

impl<T: Real> OfdmConfig<T> {
    /// Half-wavelength ULA with `M_t = M_r = antennas`.
    pub fn new(carrier_wavelength: T, bandwidth: T, subcarriers: usize, antennas: usize) -> Self {
        Self {
            carrier_wavelength,
            bandwidth,
            subcarriers,
            symbols: 1,
            tx_antennas: antennas,
            rx_antennas: antennas,
            antenna_spacing: carrier_wavelength * lit(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.symbols == 0 {
            return Err(Error::InvalidConfig("subcarriers and symbols must be at least 1".into()));
        }
        if self.tx_antennas == 0 || self.rx_antennas == 0 {
            return Err(Error::InvalidConfig("antenna counts must be at least 1".into()));
        }
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("carrier wavelength", self.carrier_wavelength),
            ("antenna spacing", self.antenna_spacing),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Subcarrier spacing `B / L`.
    pub fn subcarrier_spacing(&self) -> T {
        self.bandwidth / lit(self.subcarriers as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry<T: Real> {
    pub nodes: Vec<Point<T>>,
    /// Array broadside direction per node. Recorded for reporting only;
    /// steering uses absolute angles.
    pub node_orientations: Vec<T>,
    pub targets: Vec<Point<T>>,
    pub users: Vec<Point<T>>,
}

impl<T: Real> Geometry<T> {
    /// Orientations default to pointing each node at the origin.
    pub fn new(nodes: Vec<Point<T>>, targets: Vec<Point<T>>, users: Vec<Point<T>>) -> Self {
        let node_orientations = nodes.iter().map(|p| (-p[1]).atan2(-p[0])).collect();
        Self {
            nodes,
            node_orientations,
            targets,
            users,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidConfig("at least one node is required".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig("at least one target is required".into()));
        }
        if self.node_orientations.len() != self.nodes.len() {
            return Err(Error::InvalidConfig("one orientation per node is required".into()));
        }
        for p in self.nodes.iter().chain(&self.targets).chain(&self.users) {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::InvalidConfig("positions must be finite".into()));
            }
        }
        for n in &self.nodes {
            for q in &self.targets {
                tof_and_angle(*n, *q)?;
            }
        }
        Ok(())
    }

    /// One-way delays and absolute angles indexed `[n][k]`.
    pub fn links(&self) -> Result<LinkGeometry<T>> {
        let mut tau = Vec::with_capacity(self.nodes.len());
        let mut theta = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let (tn, an): (Vec<T>, Vec<T>) = self
                .targets
                .iter()
                .map(|q| tof_and_angle(*n, *q))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            tau.push(tn);
            theta.push(an);
        }
        Ok(LinkGeometry { tau, theta })
    }
}

/// Per node/target one-way delay and angle.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry<T: Real> {
    pub tau: Vec<Vec<T>>,
    pub theta: Vec<Vec<T>>,
}

impl<T: Real> LinkGeometry<T> {
    /// Bistatic delay `τ_n^k + τ_m^k` of the path m → target k → n.
    pub fn bistatic_tau(&self, n: usize, m: usize, k: usize) -> T {
        self.tau[n][k] + self.tau[m][k]
    }
}

/// Complex target amplitudes `b_{n,m}^k`, stored with `n` outermost, `m`
/// in the middle and `k` innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplitudes<T: Real> {
    nodes: usize,
    targets: usize,
    values: Vec<Complex<T>>,
}

impl<T: Real> Amplitudes<T> {
    pub fn from_values(nodes: usize, targets: usize, values: Vec<Complex<T>>) -> Result<Self> {
        if values.len() != nodes * nodes * targets {
            return Err(Error::InvalidConfig(format!(
                "expected {} amplitudes for {nodes} nodes and {targets} targets, got {}",
                nodes * nodes * targets,
                values.len()
            )));
        }
        Ok(Self {
            nodes,
            targets,
            values,
        })
    }

    /// i.i.d. circular Gaussian draws rescaled so that the mean power is
    /// exactly `10^(average_power_db/10)`.
    pub fn random(nodes: usize, targets: usize, average_power_db: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = nodes * nodes * targets;
        let raw: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                (re, im)
            })
            .collect();
        let mean_pow = raw.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / count as f64;
        let scale = (crate::num::db_to_linear(average_power_db) / mean_pow).sqrt();
        let values = raw
            .into_iter()
            .map(|(a, b)| Complex::new(lit(a * scale), lit(b * scale)))
            .collect();
        Self {
            nodes,
            targets,
            values,
        }
    }

    #[inline]
    pub fn index(&self, n: usize, m: usize, k: usize) -> usize {
        (n * self.nodes + m) * self.targets + k
    }

    #[inline]
    pub fn get(&self, n: usize, m: usize, k: usize) -> Complex<T> {
        self.values[self.index(n, m, k)]
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn average_power(&self) -> T {
        let s = self.values.iter().fold(T::zero(), |a, z| a + z.norm_sqr());
        s / lit(self.values.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig<T: Real> {
    pub per_antenna_power: T,
    pub comm_noise: T,
    pub sense_noise: T,
    /// Linear SINR threshold.
    pub sinr_threshold: T,
    pub amplitudes: Amplitudes<T>,
}

impl<T: Real> PowerConfig<T> {
    pub fn validate(&self, nodes: usize, targets: usize) -> Result<()> {
        for (name, v) in [
            ("per-antenna power", self.per_antenna_power),
            ("communication noise", self.comm_noise),
            ("sensing noise", self.sense_noise),
            ("SINR threshold", self.sinr_threshold),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite")));
            }
        }
        if self.amplitudes.nodes != nodes || self.amplitudes.targets != targets {
            return Err(Error::InvalidConfig(format!(
                "amplitude array is {}x{}x{}, scenario needs {nodes}x{nodes}x{targets}",
                self.amplitudes.nodes, self.amplitudes.nodes, self.amplitudes.targets
            )));
        }
        Ok(())
    }
}

/// Complete sensing/communication scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Real> {
    pub ofdm: OfdmConfig<T>,
    pub geometry: Geometry<T>,
    pub power: PowerConfig<T>,
    /// Seed for the Rayleigh communication channels.
    pub channel_seed: u64,
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.geometry.validate()?;
        self.power
            .validate(self.geometry.num_nodes(), self.geometry.num_targets())
    }

    pub fn n(&self) -> usize {
        self.geometry.num_nodes()
    }

    pub fn k(&self) -> usize {
        self.geometry.num_targets()
    }

    pub fn u(&self) -> usize {
        self.geometry.num_users()
    }

    pub fn l(&self) -> usize {
        self.ofdm.subcarriers
    }

    pub fn mt(&self) -> usize {
        self.ofdm.tx_antennas
    }

    pub fn mr(&self) -> usize {
        self.ofdm.rx_antennas
    }

    /// Per-entry sensing noise variance `σ_s² / L`.
    pub fn sense_noise_per_subcarrier(&self) -> T {
        self.power.sense_noise / lit(self.l() as f64)
    }

    /// Per-subcarrier communication noise variance `σ_c² / L`.
    pub fn comm_noise_per_subcarrier(&self) -> T {
        self.power.comm_noise / lit(self.l() as f64)
    }

    pub fn tx_steering(&self, theta: T) -> DVector<Complex<T>> {
        steering(theta, self.mt(), self.ofdm.antenna_spacing, self.ofdm.carrier_wavelength)
    }

    pub fn rx_steering(&self, theta: T) -> DVector<Complex<T>> {
        steering(theta, self.mr(), self.ofdm.antenna_spacing, self.ofdm.carrier_wavelength)
    }

    pub fn delay(&self, tau: T) -> DVector<Complex<T>> {
        delay_vector(tau, self.l(), self.ofdm.bandwidth)
    }

    /// Same scenario with every position translated/rotated by `f`.
    pub fn map_positions(&self, f: impl Fn(Point<T>) -> Point<T>) -> Self {
        let mut s = self.clone();
        for p in s
            .geometry
            .nodes
            .iter_mut()
            .chain(s.geometry.targets.iter_mut())
            .chain(s.geometry.users.iter_mut())
        {
            *p = f(*p);
        }
        s
    }
}

/// Named layouts used throughout the examples and tests.
pub mod presets {
    use super::*;

    /// Wavelength of the carrier. Only the ratio `d0/λ` matters for the
    /// steering vectors, so any value works with half-wavelength spacing.
    pub const WAVELENGTH_M: f64 = 0.1;

    pub fn two_nodes() -> Vec<Point<f64>> {
        vec![[35.35, -35.35], [-35.35, -35.35]]
    }

    pub fn four_nodes() -> Vec<Point<f64>> {
        vec![
            [-46.19, -19.13],
            [46.19, -19.13],
            [-19.13, -46.19],
            [19.13, -46.19],
        ]
    }

    /// `count` points evenly spaced on `[lo, hi]` along one axis; a single
    /// point sits at the centre.
    pub fn spread(count: usize, lo: f64, hi: f64, along_x: bool) -> Vec<Point<f64>> {
        (0..count)
            .map(|i| {
                let v = if count == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                };
                if along_x {
                    [v, 0.0]
                } else {
                    [0.0, v]
                }
            })
            .collect()
    }

    /// Parameters for building a scenario from the reference layouts.
    #[derive(Debug, Clone)]
    pub struct ScenarioParams {
        pub nodes: Vec<Point<f64>>,
        pub targets: Vec<Point<f64>>,
        pub users: Vec<Point<f64>>,
        pub antennas: usize,
        pub subcarriers: usize,
        pub bandwidth_hz: f64,
        pub per_antenna_power: f64,
        pub noise: f64,
        pub sinr_threshold_db: f64,
        pub amplitude_db: f64,
        pub amplitude_seed: u64,
        pub channel_seed: u64,
    }

    impl Default for ScenarioParams {
        /// Two nodes, one target at the origin, one user at (0, −20), six
        /// antennas, 16 subcarriers, 10 MHz, 20 dB transmit SNR, 10 dB
        /// average target amplitude.
        fn default() -> Self {
            Self {
                nodes: two_nodes(),
                targets: vec![[0.0, 0.0]],
                users: vec![[0.0, -20.0]],
                antennas: 6,
                subcarriers: 16,
                bandwidth_hz: 10e6,
                per_antenna_power: 100.0,
                noise: 1.0,
                sinr_threshold_db: 10.0,
                amplitude_db: 10.0,
                amplitude_seed: 1,
                channel_seed: 7,
            }
        }
    }

    impl ScenarioParams {
        /// Targets on the x axis over [−30, 30] and users on the y axis over
        /// [−20, 20], at 20 MHz.
        pub fn tradeoff(targets: usize, users: usize) -> Self {
            Self {
                targets: spread(targets, -30.0, 30.0, true),
                users: spread(users, -20.0, 20.0, false),
                bandwidth_hz: 20e6,
                ..Self::default()
            }
        }

        pub fn build(&self) -> Scenario<f64> {
            let n = self.nodes.len();
            let k = self.targets.len();
            Scenario {
                ofdm: OfdmConfig::new(WAVELENGTH_M, self.bandwidth_hz, self.subcarriers, self.antennas),
                geometry: Geometry::new(self.nodes.clone(), self.targets.clone(), self.users.clone()),
                power: PowerConfig {
                    per_antenna_power: self.per_antenna_power,
                    comm_noise: self.noise,
                    sense_noise: self.noise,
                    sinr_threshold: crate::num::db_to_linear(self.sinr_threshold_db),
                    amplitudes: Amplitudes::random(n, k, self.amplitude_db, self.amplitude_seed),
                },
                channel_seed: self.channel_seed,
            }
        }
    }
}

/// ULA response `exp(j·2π/λ·m·d0·sin θ)`, `m = 0..M−1`.
pub fn steering<T: Real>(theta: T, m: usize, d0: T, lambda: T) -> DVector<Complex<T>> {
    let k = T::two_pi() / lambda * d0 * theta.sin();
    DVector::from_fn(m, |i, _| cis(k * lit(i as f64)))
}

/// Subcarrier phase ramp `exp(−j·2π·(B/L)·l·τ)`, `l = 0..L−1`.
pub fn delay_vector<T: Real>(tau: T, l: usize, bandwidth: T) -> DVector<Complex<T>> {
    let step = -T::two_pi() * bandwidth / lit(l as f64) * tau;
    DVector::from_fn(l, |i, _| cis(step * lit(i as f64)))
}

/// One-way delay `range/c` and absolute angle from node to target.
pub fn tof_and_angle<T: Real>(node: Point<T>, target: Point<T>) -> Result<(T, T)> {
    let dx = target[0] - node[0];
    let dy = target[1] - node[1];
    let r = (dx * dx + dy * dy).sqrt();
    if !(r > T::zero()) {
        return Err(Error::DegenerateGeometry(
            "target coincides with a node position".into(),
        ));
    }
    Ok((r / lit(SPEED_OF_LIGHT), dy.atan2(dx)))
}

/// Derivatives `(∂a_t/∂θ, ∂a_r/∂θ, ∂d/∂τ)` at the given angle and delay.
pub fn derivative_vectors<T: Real>(
    theta: T,
    tau: T,
    cfg: &OfdmConfig<T>,
) -> (DVector<Complex<T>>, DVector<Complex<T>>, DVector<Complex<T>>) {
    let at = steering_derivative(theta, cfg.tx_antennas, cfg.antenna_spacing, cfg.carrier_wavelength);
    let ar = steering_derivative(theta, cfg.rx_antennas, cfg.antenna_spacing, cfg.carrier_wavelength);
    let dd = delay_derivative(tau, cfg.subcarriers, cfg.bandwidth);
    (at, ar, dd)
}

pub fn steering_derivative<T: Real>(theta: T, m: usize, d0: T, lambda: T) -> DVector<Complex<T>> {
    let a = steering(theta, m, d0, lambda);
    let g = T::two_pi() / lambda * d0 * theta.cos();
    DVector::from_fn(m, |i, _| a[i] * cj::<T>() * creal(g * lit(i as f64)))
}

pub fn delay_derivative<T: Real>(tau: T, l: usize, bandwidth: T) -> DVector<Complex<T>> {
    let d = delay_vector(tau, l, bandwidth);
    let g = -T::two_pi() * bandwidth / lit(l as f64);
    DVector::from_fn(l, |i, _| d[i] * cj::<T>() * creal(g * lit(i as f64)))
}

/// Jacobian `∂Ψ/∂Θ` with rows `[x_1..x_K, y_1..y_K, Re b, Im b]` and columns
/// `[θ, τ, Re b, Im b]`; angle/delay columns are ordered node-major
/// (index `n·K + k`).
pub fn geometry_jacobian<T: Real>(geometry: &Geometry<T>) -> Result<DMatrix<T>> {
    let n_nodes = geometry.num_nodes();
    let k_t = geometry.num_targets();
    let kn = k_t * n_nodes;
    let kn2 = kn * n_nodes;
    let c: T = lit(SPEED_OF_LIGHT);
    let mut j = DMatrix::zeros(2 * k_t + 2 * kn2, 2 * kn + 2 * kn2);
    for (n, p) in geometry.nodes.iter().enumerate() {
        for (k, q) in geometry.targets.iter().enumerate() {
            tof_and_angle(*p, *q)?;
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            let r2 = dx * dx + dy * dy;
            let r = r2.sqrt();
            let col = n * k_t + k;
            j[(k, col)] = -dy / r2;
            j[(k_t + k, col)] = dx / r2;
            j[(k, kn + col)] = dx / (c * r);
            j[(k_t + k, kn + col)] = dy / (c * r);
        }
    }
    for i in 0..2 * kn2 {
        j[(2 * k_t + i, 2 * kn + i)] = T::one();
    }
    Ok(j)
}
