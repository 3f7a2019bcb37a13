use disac_core::comms::{average_sinr, generate_channels, ChannelSet};
use disac_core::config::ScenarioFile;
use disac_core::designs::{solve, DesignSpec, Family};
use disac_core::evaluate::{tradeoff_sweep, SweepSpec};
use disac_core::extraction::{extract, PrecoderExport};
use disac_core::fim::{evaluate_crb, CovarianceSet, Mode};
use disac_core::num::linear_to_db;
use disac_core::scenario::presets::ScenarioParams;
use disac_core::Scenario;
use proptest::prelude::*;

fn small() -> Scenario {
    ScenarioParams {
        antennas: 2,
        subcarriers: 4,
        ..ScenarioParams::default()
    }
    .build()
}

#[test]
fn config_round_trip_solves_identically() {
    let scn = small();
    let text = ScenarioFile::from_scenario(&scn).to_json().unwrap();
    let back = ScenarioFile::parse(&text).unwrap().to_scenario().unwrap();
    let ch = ChannelSet::for_scenario(&scn);
    let ch_back = ChannelSet::for_scenario(&back);
    let a = solve(&DesignSpec::new(Family::P2, &scn, &ch, Mode::Hybrid)).unwrap();
    let b = solve(&DesignSpec::new(Family::P2, &back, &ch_back, Mode::Hybrid)).unwrap();
    assert_eq!(a.crb, b.crb);
}

#[test]
fn every_family_extracts_within_budget_and_threshold() {
    let scn = small();
    let ch = ChannelSet::for_scenario(&scn);
    for fam in Family::ALL {
        let spec = DesignSpec::new(fam, &scn, &ch, Mode::Hybrid).with_gamma_db(15.0);
        let rep = solve(&spec).unwrap();
        assert!(rep.is_optimal(), "{fam}");
        let ex = extract(rep.variables.as_ref().unwrap(), &scn, &ch, spec.gamma).unwrap();
        let cov = ex.precoders.covariances();
        for p in cov.antenna_powers() {
            assert!(p <= scn.power.per_antenna_power * (1.0 + 1e-6), "{fam}: {p}");
        }
        for l in 0..scn.l() {
            let sinr = linear_to_db(average_sinr(&cov, &ch, &scn, 0, l));
            assert!(sinr >= 15.0 - 0.1, "{fam} l={l}: {sinr}");
        }
        let export = PrecoderExport::new(fam, &ex.precoders);
        let json = serde_json::to_string(&export).unwrap();
        let back: PrecoderExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_precoders().unwrap(), ex.precoders);
    }
}

#[test]
fn sweep_table_has_one_row_per_family_and_threshold() {
    let scn = small();
    let ch = ChannelSet::for_scenario(&scn);
    let r = tradeoff_sweep(&scn, &ch, &[0.0, 10.0], &SweepSpec::default()).unwrap();
    let csv = r.to_csv(false);
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 2 * Family::ALL.len());
    assert!(rows.iter().all(|row| row.ends_with(",optimal")));
    assert_eq!(csv, r.to_csv(false));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // The FIM is linear in the transmit covariance, so scaling every
    // covariance by `a` divides the CRB by `a`.
    #[test]
    fn crb_scales_inversely_with_power(a in 0.1f64..10.0, m in 2usize..5, l in 2usize..7) {
        let scn = ScenarioParams { antennas: m, subcarriers: l, ..ScenarioParams::default() }.build();
        let cov = CovarianceSet::isotropic(&scn, 1.0);
        let base = evaluate_crb(&cov, &scn, Mode::Hybrid).unwrap().crb_position;
        let scaled = evaluate_crb(&cov.scale(a), &scn, Mode::Hybrid).unwrap().crb_position;
        prop_assert!((scaled * a / base - 1.0).abs() < 1e-9);
    }

    // Channels are a pure function of the seed and dimensions.
    #[test]
    fn channels_are_reproducible(seed in any::<u64>(), n in 1usize..4, u in 1usize..3, l in 1usize..5) {
        let a = generate_channels(n, u, l, 3, seed);
        let b = generate_channels(n, u, l, 3, seed);
        for i in 0..n {
            for k in 0..u {
                for s in 0..l {
                    prop_assert_eq!(a.get(i, k, s), b.get(i, k, s));
                }
            }
        }
    }
}
