//! `disac`: design, sweep and validate distributed sensing-and-communication
//! transmit signals.

mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use disac_core::comms::{average_sinr, sinr_upper_bound, ChannelSet};
use disac_core::config::{load_scenario, ScenarioFile};
use disac_core::designs::{solve, DesignSpec, Family};
use disac_core::evaluate::{
    default_jobs, mle_localize, mle_trials, parameter_sweep, simulate_reception, sinr_samples_db, summarize_sinr, Axis,
    GridSpec, SweepSpec,
};
use disac_core::extraction::{extract, PrecoderExport};
use disac_core::fim::{self, CovarianceSet, Mode};
use disac_core::num::linear_to_db;
use disac_core::scenario::presets::ScenarioParams;
use disac_core::sdp::SolveStatus;
use disac_core::Scenario;

/// Exit code for an infeasible design.
const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "disac", version, about = "Transmit signal design for noncoherent distributed ISAC networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one design, extract precoders and write the results.
    Design(DesignArgs),
    /// Solve over a grid of one scenario parameter and write a CSV table.
    Sweep(SweepArgs),
    /// Run the built-in oracle checks and report measured errors.
    Validate(ValidateArgs),
    /// Monte-Carlo localization and instantaneous SINR for one design.
    Montecarlo(MonteCarloArgs),
    /// Write a reference scenario file.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Overrides the scenario's channel seed.
    #[arg(long, env = "DISAC_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct DesignArgs {
    scenario: PathBuf,
    #[arg(long, value_parser = parse_family)]
    family: Family,
    /// SINR threshold; defaults to the scenario's.
    #[arg(long, allow_hyphen_values = true)]
    gamma_db: Option<f64>,
    #[arg(long, default_value = "hybrid", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    #[arg(long, value_parser = parse_axis)]
    axis: Axis,
    /// Comma-separated values or `start:step:stop`.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value = "p1,p2,p3", value_delimiter = ',', value_parser = parse_family)]
    families: Vec<Family>,
    #[arg(long, default_value = "hybrid", value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<Mode>,
    /// SINR threshold for non-gamma axes.
    #[arg(long, allow_hyphen_values = true)]
    gamma_db: Option<f64>,
    /// Keep `M·P_T` constant along the antenna axis.
    #[arg(long)]
    fixed_total_power: bool,
    /// Skip precoder extraction (relaxed bounds only).
    #[arg(long)]
    no_extract: bool,
    /// Leave the wall-time column empty so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Fim,
    Extraction,
    Sinr,
    Mle,
    All,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    #[arg(long, env = "DISAC_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct MonteCarloArgs {
    scenario: PathBuf,
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[arg(long, allow_hyphen_values = true)]
    gamma_db: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Margin of the search region around the targets (m).
    #[arg(long, default_value_t = 10.0)]
    margin: f64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two nodes, one target, one user.
    TwoNode,
    /// Four nodes, one target, one user.
    FourNode,
    /// Two nodes with spread targets and users.
    Tradeoff,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "two-node")]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    targets: usize,
    #[arg(long, default_value_t = 1)]
    users: usize,
    #[arg(long)]
    antennas: Option<usize>,
    #[arg(long)]
    subcarriers: Option<usize>,
    #[arg(long)]
    amplitude_db: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: disac_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: disac_core::Error| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse().map_err(|e: disac_core::Error| e.to_string())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let [a, h, b] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (a, h, b) = (a?, h?, b?);
        if !(h > 0.0) || b < a {
            bail!("grid '{s}' needs a positive step and start <= stop");
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + i as f64 * h).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value '{v}'")))
        .collect()
}

fn load(path: &Path, seed: &SeedArg) -> Result<Scenario> {
    let mut scn = load_scenario(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = seed.seed {
        scn.channel_seed = s;
    }
    Ok(scn)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn covariance_json(cov: &CovarianceSet<f64>) -> serde_json::Value {
    let mat = |m: &disac_core::HermitianMatrix| {
        let a = m.as_matrix();
        (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    json!({
        "r_tilde": cov.r_tilde.iter().map(mat).collect::<Vec<_>>(),
        "comm": cov.comm.iter().map(|per_u| per_u.iter().map(|per_l| per_l.iter().map(mat).collect::<Vec<_>>()).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

fn cmd_design(a: DesignArgs) -> Result<ExitCode> {
    let scn = load(&a.scenario, &a.seed)?;
    let channels = ChannelSet::for_scenario(&scn);
    let mut spec = DesignSpec::new(a.family, &scn, &channels, a.mode);
    if let Some(g) = a.gamma_db {
        spec = spec.with_gamma_db(g);
    }
    let gamma_db = spec.gamma.map(linear_to_db);
    let rep = solve(&spec)?;
    let mut report = json!({
        "family": a.family,
        "design": a.family.description(),
        "mode": a.mode.as_str(),
        "gamma_db": gamma_db,
        "status": rep.status,
        "variables": spec.variable_count(),
        "iterations": rep.iterations,
        "wall_ms": rep.wall_ms,
        "primal_residual": rep.primal_residual,
        "dual_residual": rep.dual_residual,
        "gap": rep.gap,
    });
    std::fs::create_dir_all(&a.out)?;
    match rep.status {
        SolveStatus::Infeasible => {
            let mut bound = f64::INFINITY;
            for l in 0..scn.l() {
                for u in 0..scn.u() {
                    bound = bound.min(sinr_upper_bound(&channels, &scn, u, l));
                }
            }
            report["reason"] = json!({
                "kind": "sinr_infeasible",
                "gamma_db": gamma_db,
                "matched_filter_bound_db": linear_to_db(bound),
            });
            write(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
            eprintln!("infeasible: no design meets the SINR threshold");
            return Ok(ExitCode::from(EXIT_INFEASIBLE));
        }
        SolveStatus::NumericalFailure => {
            report["reason"] = json!({ "kind": "numerical_failure" });
            write(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
            bail!("solver stopped without converging (gap {:e})", rep.gap);
        }
        SolveStatus::Optimal => {}
    }
    let vars = rep.variables.as_ref().context("optimal solve without variables")?;
    let ex = extract(vars, &scn, &channels, spec.gamma)?;
    let realized = ex.precoders.covariances();
    let crb_ex = ex.crb(&scn, a.mode)?;
    let mut worst = f64::INFINITY;
    for l in 0..scn.l() {
        for u in 0..scn.u() {
            worst = worst.min(average_sinr(&realized, &channels, &scn, u, l));
        }
    }
    let powers = realized.antenna_powers();
    report["relaxed"] = json!({
        "objective_m2": rep.objective,
        "crb_m2": rep.crb,
        "rcrb_m": rep.rcrb(scn.k()),
    });
    report["extracted"] = json!({
        "crb_m2": crb_ex,
        "rcrb_m": fim::rcrb(crb_ex, scn.k()),
        "min_sinr_db": linear_to_db(worst),
        "max_antenna_power": powers.iter().copied().fold(0.0, f64::max),
        "projection_distance": ex.projection_distance,
        "degraded": ex.degraded,
        "power_scale": ex.power_scale,
        "sinr_scale": ex.sinr_scale,
    });
    write(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    write(
        &a.out.join("covariances.json"),
        &serde_json::to_string(&json!({
            "relaxed": covariance_json(&vars.transmit_covariances(&scn)),
            "realized": covariance_json(&realized),
        }))?,
    )?;
    write(
        &a.out.join("precoders.json"),
        &serde_json::to_string(&PrecoderExport::new(a.family, &ex.precoders))?,
    )?;
    println!(
        "{}: optimal, RCRB {:.4e} m relaxed, {:.4e} m extracted, min SINR {:.2} dB",
        a.family,
        rep.rcrb(scn.k()).unwrap_or(f64::NAN),
        fim::rcrb(crb_ex, scn.k()),
        linear_to_db(worst)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let scn = load(&a.scenario, &a.seed)?;
    let values = parse_grid(&a.grid)?;
    let spec = SweepSpec {
        families: a.families,
        modes: a.modes,
        gamma_db: a.gamma_db,
        fixed_total_power: a.fixed_total_power,
        extract: !a.no_extract,
        jobs: a.jobs.unwrap_or_else(default_jobs),
        ..SweepSpec::default()
    };
    let res = parameter_sweep(&scn, a.axis, &values, &spec)?;
    write(&a.out, &res.to_csv(!a.no_timing))?;
    let ok = res.points.iter().filter(|p| p.is_optimal()).count();
    println!("{} points, {ok} optimal, written to {}", res.points.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_montecarlo(a: MonteCarloArgs) -> Result<ExitCode> {
    let scn = load(&a.scenario, &a.seed)?;
    let channels = ChannelSet::for_scenario(&scn);
    let mut spec = DesignSpec::new(a.family, &scn, &channels, Mode::Hybrid);
    if let Some(g) = a.gamma_db {
        spec = spec.with_gamma_db(g);
    }
    let rep = solve(&spec)?;
    if rep.status == SolveStatus::Infeasible {
        eprintln!("infeasible: no design meets the SINR threshold");
        return Ok(ExitCode::from(EXIT_INFEASIBLE));
    }
    let vars = rep.variables.as_ref().context("solver did not converge")?;
    let ex = extract(vars, &scn, &channels, spec.gamma)?;
    let grid = GridSpec::around_targets(&scn, a.margin);
    let jobs = a.jobs.unwrap_or_else(default_jobs);
    let stats = mle_trials(&ex.precoders, &scn, &grid, a.trials, 1, scn.channel_seed, jobs)?;
    let sinr = sinr_samples_db(&ex.precoders, &channels, &scn, a.trials, scn.channel_seed);
    let g = spec.gamma.map_or(0.0, linear_to_db);
    let summary = summarize_sinr(&sinr, [g - 3.0, g + 3.0]);
    let batch = simulate_reception(&ex.precoders, &scn, scn.channel_seed, 1)?;
    let surface = mle_localize(&batch, &scn, &grid)?.surface;
    std::fs::create_dir_all(&a.out)?;
    write(&a.out.join("surface.json"), &surface.to_json()?)?;
    write(
        &a.out.join("montecarlo.json"),
        &serde_json::to_string_pretty(&json!({
            "family": a.family,
            "gamma_db": g,
            "rmse_m": stats.rmse,
            "rcrb_m": stats.rcrb,
            "ratio": stats.ratio(),
            "ratio_std": stats.ratio_std,
            "trials": stats.trials,
            "sinr": summary,
            "sinr_samples_db": sinr,
        }))?,
    )?;
    println!(
        "RMSE {:.4e} m, RCRB {:.4e} m (ratio {:.3}); SINR mean {:.2} dB, {:.1}% within ±3 dB",
        stats.rmse,
        stats.rcrb,
        stats.ratio(),
        summary.mean_db,
        100.0 * summary.in_window
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario(a: ScenarioArgs) -> Result<ExitCode> {
    let mut p = match a.preset {
        Preset::TwoNode => ScenarioParams::default(),
        Preset::FourNode => ScenarioParams {
            nodes: disac_core::scenario::presets::four_nodes(),
            ..ScenarioParams::default()
        },
        Preset::Tradeoff => ScenarioParams::tradeoff(a.targets, a.users),
    };
    if !matches!(a.preset, Preset::Tradeoff) {
        p.targets = disac_core::scenario::presets::spread(a.targets, -30.0, 30.0, true);
        p.users = disac_core::scenario::presets::spread(a.users, -20.0, 20.0, false);
        if a.targets == 1 {
            p.targets = vec![[0.0, 0.0]];
        }
        if a.users == 1 {
            p.users = vec![[0.0, -20.0]];
        }
    }
    if let Some(m) = a.antennas {
        p.antennas = m;
    }
    if let Some(l) = a.subcarriers {
        p.subcarriers = l;
    }
    if let Some(db) = a.amplitude_db {
        p.amplitude_db = db;
    }
    let scn = p.build();
    scn.validate()?;
    write(&a.out, &ScenarioFile::from_scenario(&scn).to_json()?)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => {
            let suites = match a.suite {
                Suite::Fim => vec![validate::Suite::Fim],
                Suite::Extraction => vec![validate::Suite::Extraction],
                Suite::Sinr => vec![validate::Suite::Sinr],
                Suite::Mle => vec![validate::Suite::Mle],
                Suite::All => validate::Suite::ALL.to_vec(),
            };
            let mut ok = true;
            for s in suites {
                for c in validate::run(s, a.seed)? {
                    println!("{c}");
                    ok &= c.passed();
                }
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Montecarlo(a) => cmd_montecarlo(a),
        Command::Scenario(a) => cmd_scenario(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
