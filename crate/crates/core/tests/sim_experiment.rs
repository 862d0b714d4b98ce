use ruleflight::flow::{fit, DoubtFlow, FeatureSchema, FitConfig, Standardizer};
use ruleflight::geometry::{build_star_map, StaRMap, StarMapOptions};
use ruleflight::lang::{parse_program, ConstitutionProgram};
use ruleflight::sim::*;

const PROGRAM: &str = include_str!("../assets/testbed.pl");

fn program() -> ConstitutionProgram {
    parse_program(PROGRAM).unwrap()
}

fn star_map(s: &Scenario, samples: usize) -> StaRMap {
    build_star_map(&s.map.map(), &s.relation_tags(), s.map.grid, samples, 1, StarMapOptions::default()).unwrap()
}

/// Untrained flow: isotropic Gaussian doubt with standard deviation `std`.
fn gaussian_flow(std: f64) -> DoubtFlow {
    let mut flow = DoubtFlow::new(FeatureSchema::from_program(&program()).unwrap(), 2, 8, 0);
    flow.standardizer = Standardizer {
        mean: [0.0, 0.0],
        scale: [std, std],
    };
    flow
}

#[test]
fn shipped_scenario_file_matches_the_builtin_testbed() {
    let text = include_str!("../assets/testbed_scenario.json");
    assert_eq!(text, testbed_scenario().to_json());
    assert_eq!(Scenario::from_json(text).unwrap(), testbed_scenario());
}

#[test]
fn report_totals_equal_the_sum_of_flight_outcomes() {
    let s = testbed_scenario();
    let config = ExperimentConfig {
        repetitions: 3,
        calibration_samples: 8,
        online_samples: 8,
        doubt_table_samples: 50,
        ..ExperimentConfig::default()
    };
    let out = run_comparison(&s, &program(), &star_map(&s, 20), &gaussian_flow(0.03), &config, 9).unwrap();
    let r = &out.report;
    assert_eq!(r.total_flights, r.flights.len());
    assert_eq!(r.flights.len(), 4 * 2 * 3);
    for (planner, name) in [(PlannerKind::Baseline, "baseline"), (PlannerKind::Coco, "coco")] {
        let crashed = r.flights.iter().filter(|f| f.planner == planner && f.outcome.crashed()).count();
        assert_eq!(r.total_crashes[name], crashed);
    }
    for g in &r.groups {
        let members: Vec<&FlightSummary> =
            r.flights.iter().filter(|f| f.velocity == g.velocity && f.planner == g.planner).collect();
        assert_eq!(g.flights, members.len());
        assert_eq!(g.completed + g.crashed + g.timed_out, g.flights);
        assert_eq!(g.crashed, members.iter().filter(|f| f.outcome.crashed()).count());
        let alarmed = members.iter().filter(|f| f.alarm_before_impact() == Some(true)).count();
        assert_eq!(g.crashes_alarmed_before_impact, alarmed);
    }
    assert_eq!(out.missions.len(), r.flights.len());
    for (summary, mission) in &out.missions {
        assert_eq!(summary.steps, mission.log.rows.len());
        assert_eq!(summary.outcome, mission.log.outcome);
        assert_eq!(mission.compliance.len(), mission.log.rows.len());
    }
}

#[test]
fn zero_noise_world_completes_every_flight() {
    let mut s = testbed_scenario();
    s.agent = AgentModel::zero_noise(3);
    let config = ExperimentConfig {
        repetitions: 2,
        baseline_alpha: 0.0,
        calibration_samples: 4,
        monitor: false,
        ..ExperimentConfig::default()
    };
    let out = run_comparison(&s, &program(), &star_map(&s, 20), &gaussian_flow(1e-6), &config, 2).unwrap();
    for g in &out.report.groups {
        assert_eq!(g.completed, g.flights, "{g:?}");
    }
    for base in out.plans.iter().filter(|p| p.1 == PlannerKind::Baseline) {
        let coco = out.plans.iter().find(|p| p.0 == base.0 && p.1 == PlannerKind::Coco).unwrap();
        assert!(coco.2.time_cost >= base.2.time_cost - 1e-9, "{:?}", base.0);
    }
}

#[test]
fn fitted_flow_recovers_the_simulator_covariance_at_held_out_conditions() {
    let model = AgentModel::testbed();
    let logs = fly_figure_eight(&model, &[0.2, 0.5, 1.0], &[0, 1, 2], 6, 7).unwrap();
    let named: Vec<(String, FlightLog)> = logs.into_iter().enumerate().map(|(i, l)| (i.to_string(), l)).collect();
    let data = doubt_dataset(&named);
    let schema = FeatureSchema::from_program(&program()).unwrap();
    let (flow, _) = fit(&data, &schema, &FitConfig::default(), 3).unwrap();
    let headings = [std::f64::consts::PI / 8.0, 5.0 * std::f64::consts::PI / 8.0, -3.0 * std::f64::consts::PI / 8.0];
    for tuning in 0..3 {
        let table = DoubtCovariance::from_flow(&flow, tuning, &[0.35, 0.75], &headings, 4000, 5).unwrap();
        for (i, &v) in table.speeds.iter().enumerate() {
            for (j, &w) in headings.iter().enumerate() {
                let c = table.covariance[i * headings.len() + j];
                let truth = model.covariance(tuning, v, w);
                let (got, want) = (c[0][0] + c[1][1], truth[0][0] + truth[1][1]);
                assert!((got / want - 1.0).abs() < 0.2, "tuning {tuning} v {v} heading {w}: {got:.3e} vs {want:.3e}");
            }
        }
    }
}
