//! Oracle checks behind `disac validate`.

use std::fmt;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};

use disac_core::comms::{average_sinr, ChannelSet, PrecoderSet, SensingPrecoders, C64};
use disac_core::designs::{solve, solve_with, DesignSpec, DesignVariables, Family};
use disac_core::evaluate::{
    empirical_fim_theta, mle_localize, mle_trials, simulate_reception, sinr_samples_db, summarize_sinr, GridSpec,
};
use disac_core::extraction::extract;
use disac_core::fim::{self, assemble_fim_psi, assemble_fim_psi_blockwise, CovarianceSet, Mode};
use disac_core::matrixcore::factorize_psd;
use disac_core::num::linear_to_db;
use disac_core::scenario::presets::ScenarioParams;
use disac_core::sdp::SolverOptions;
use disac_core::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fim,
    Extraction,
    Sinr,
    Mle,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Fim, Suite::Extraction, Suite::Sinr, Suite::Mle];

    fn name(self) -> &'static str {
        match self {
            Suite::Fim => "fim",
            Suite::Extraction => "extraction",
            Suite::Sinr => "sinr",
            Suite::Mle => "mle",
        }
    }
}

/// One invariant with its measured value and the allowed bound.
pub struct Check {
    suite: Suite,
    name: &'static str,
    measured: f64,
    allowed: f64,
    /// `true` when the measured value must not exceed `allowed`, `false`
    /// when it must reach it.
    upper: bool,
}

impl Check {
    fn at_most(suite: Suite, name: &'static str, measured: f64, allowed: f64) -> Self {
        Self { suite, name, measured, allowed, upper: true }
    }

    fn at_least(suite: Suite, name: &'static str, measured: f64, allowed: f64) -> Self {
        Self { suite, name, measured, allowed, upper: false }
    }

    pub fn passed(&self) -> bool {
        if self.upper {
            self.measured <= self.allowed
        } else {
            self.measured >= self.allowed
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<10} {:<44} measured {:>12.4e} {} {:.4e}",
            if self.passed() { "pass" } else { "FAIL" },
            self.suite.name(),
            self.name,
            self.measured,
            if self.upper { "<=" } else { ">=" },
            self.allowed
        )
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    match suite {
        Suite::Fim => fim_suite(seed),
        Suite::Extraction => extraction_suite(),
        Suite::Sinr => sinr_suite(seed),
        Suite::Mle => mle_suite(seed),
    }
}

fn isotropic_precoders(scn: &Scenario) -> Result<PrecoderSet> {
    let cov = CovarianceSet::isotropic(scn, scn.power.per_antenna_power / scn.l() as f64);
    let w = cov
        .r_tilde
        .iter()
        .map(|r| factorize_psd(r, 1e-9))
        .collect::<disac_core::Result<Vec<DMatrix<C64>>>>()?;
    let (n, l, mt, u) = (scn.n(), scn.l(), scn.mt(), scn.u());
    Ok(PrecoderSet {
        nodes: n,
        users: u,
        subcarriers: l,
        antennas: mt,
        comm: vec![vec![vec![DVector::from_element(mt, C64::new(0.0, 0.0)); l]; u]; n],
        sensing: SensingPrecoders::Shared(w),
        active: vec![vec![true; l]; n],
    })
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn fim_suite(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Fim;
    let scn = ScenarioParams {
        antennas: 2,
        subcarriers: 4,
        ..ScenarioParams::default()
    }
    .build();
    let p = isotropic_precoders(&scn)?;
    let cov = p.covariances();
    let direct = assemble_fim_psi(&cov, &scn, Mode::Hybrid)?;
    let blocks = assemble_fim_psi_blockwise(&cov, &scn, Mode::Hybrid)?;
    let batch = simulate_reception(&p, &scn, seed, 10_000)?;
    let emp = empirical_fim_theta(&batch, &scn, 1e-3)?;
    let want = fim::evaluate_crb(&cov, &scn, Mode::Hybrid)?;
    let mut ordering = 0.0f64;
    for m in [Mode::TofOnly, Mode::AoaOnly] {
        let other = fim::evaluate_crb(&cov, &scn, m)?.crb_position;
        ordering = ordering.max(want.crb_position / other - 1.0);
    }
    Ok(vec![
        Check::at_most(s, "blockwise vs operator assembly (rel. Frob.)", rel(&blocks, &direct), 1e-9),
        Check::at_most(s, "Monte-Carlo vs expected FIM, 1e4 symbols", rel(&emp, &want.fim_theta), 0.02),
        Check::at_most(s, "hybrid CRB excess over TOF/AOA-only", ordering, 1e-9),
    ])
}

fn extraction_suite() -> Result<Vec<Check>> {
    let s = Suite::Extraction;
    let scn = ScenarioParams {
        antennas: 4,
        subcarriers: 8,
        ..ScenarioParams::default()
    }
    .build();
    let ch = ChannelSet::for_scenario(&scn);
    let spec = DesignSpec::new(Family::P2, &scn, &ch, Mode::Hybrid);
    let tight = SolverOptions {
        tol: 1e-9,
        ..SolverOptions::default()
    };
    let rep = solve_with(&spec, &tight)?;
    let vars = rep.variables.as_ref().context("P2 solve did not converge")?;
    let relaxed = rep.crb.context("P2 solve has no CRB")?;
    let ex = extract(vars, &scn, &ch, spec.gamma)?;
    let crb = ex.crb(&scn, Mode::Hybrid)?;
    let mut rank = 0.0f64;
    if let DesignVariables::P2 { comm, .. } = vars {
        for rc in comm.iter().flatten() {
            let ev = rc.eigenvalues();
            let (top, second) = (ev[ev.len() - 1], ev[ev.len() - 2]);
            if top > 0.0 {
                rank = rank.max(second / top);
            }
        }
    }
    let cov = ex.precoders.covariances();
    let power = cov.antenna_powers().into_iter().fold(0.0, f64::max) / scn.power.per_antenna_power - 1.0;
    let mut sinr_gap = 0.0f64;
    for l in 0..scn.l() {
        for u in 0..scn.u() {
            let g = average_sinr(&cov, &ch, &scn, u, l);
            sinr_gap = sinr_gap.max(linear_to_db(scn.power.sinr_threshold) - linear_to_db(g));
        }
    }
    Ok(vec![
        Check::at_most(s, "P2 extracted vs relaxed CRB (rel.)", (crb / relaxed - 1.0).abs(), 1e-4),
        Check::at_most(s, "P2 R_c second/first eigenvalue", rank, 1e-6),
        Check::at_most(s, "antenna power excess over P_T (rel.)", power, 1e-6),
        Check::at_most(s, "SINR shortfall after extraction (dB)", sinr_gap, 0.1),
    ])
}

fn sinr_suite(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Sinr;
    let scn = ScenarioParams::tradeoff(2, 2).build();
    let ch = ChannelSet::for_scenario(&scn);
    let spec = DesignSpec::new(Family::P2, &scn, &ch, Mode::Hybrid).with_gamma_db(30.0);
    let rep = solve(&spec)?;
    let vars = rep.variables.as_ref().context("P2 at 30 dB did not converge")?;
    let ex = extract(vars, &scn, &ch, spec.gamma)?;
    let samples = sinr_samples_db(&ex.precoders, &ch, &scn, 1000, seed);
    let sum = summarize_sinr(&samples, [27.0, 33.0]);
    Ok(vec![
        Check::at_most(s, "instantaneous mean vs 30 dB (|dB|)", (sum.mean_db - 30.0).abs(), 1.0),
        Check::at_least(s, "fraction of draws in [27, 33] dB", sum.in_window, 0.9),
    ])
}

fn mle_suite(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Mle;
    let mut scn = ScenarioParams {
        antennas: 4,
        subcarriers: 8,
        amplitude_db: 20.0,
        ..ScenarioParams::default()
    }
    .build();
    let p = isotropic_precoders(&scn)?;
    let grid = GridSpec::around_targets(&scn, 10.0);
    let stats = mle_trials(&p, &scn, &grid, 100, 1, seed, 1)?;
    scn.power.sense_noise = 0.0;
    let batch = simulate_reception(&p, &scn, seed, 1)?;
    let exact = GridSpec {
        polish_tol: 0.0,
        ..grid
    };
    let est = mle_localize(&batch, &scn, &exact)?;
    let err = disac_core::evaluate::matched_squared_error(&est.positions, &scn.geometry.targets).sqrt();
    Ok(vec![
        Check::at_most(s, "noiseless on-grid recovery error (m)", err, 1e-12),
        Check::at_most(s, "RMSE / RCRB, 100 trials", stats.ratio(), 1.5),
        Check::at_least(s, "RMSE / RCRB + 2 sigma, 100 trials", stats.ratio() + 2.0 * stats.ratio_std, 1.0),
    ])
}
