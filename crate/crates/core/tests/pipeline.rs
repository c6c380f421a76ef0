use regionplan::gridworld::{parse_map, ActionOutcomeModel, GridWorld, SensorModel, DECLARE_GOAL};
use regionplan::io::{
    parse_curve_csv, parse_model, parse_regions, parse_value_function, serialize_curve_csv, serialize_model,
    serialize_regions, serialize_value_function,
};
use regionplan::region::{radius_k_system, transform};
use regionplan::simulator::{gap_estimate, GoalSpec, TrialConfig};
use regionplan::solver::{mdp_value_iteration, restricted_value_iteration, SolveLimits};
use regionplan::Belief;

const OFFICE: &str = "\
name: office
goal: 1 1 E
#######
#rr...#
###.#.#
#.....#
#######
";

fn world() -> GridWorld {
    let map = parse_map(OFFICE).unwrap();
    GridWorld::new(map, &ActionOutcomeModel::standard(), &SensorModel::standard(), 0.95).unwrap()
}

#[test]
fn files_round_trip_through_text() {
    let w = world();
    let model = parse_model(&serialize_model(&w.model)).unwrap();
    assert_eq!(serialize_model(&model), serialize_model(&w.model));

    let system = radius_k_system(&w.model, 1);
    assert_eq!(parse_regions(&serialize_regions(&system)).unwrap(), system);
}

#[test]
fn radius_zero_solve_matches_the_mdp_and_simulates() {
    let w = world();
    let mp = transform(&w.model, &radius_k_system(&w.model, 0));
    let limits = SolveLimits { prune_tolerance: 1e-6, ..Default::default() };
    let (values, report) = restricted_value_iteration(&mp, 1e-8, &limits).unwrap();
    assert!(report.converged);

    let mdp = mdp_value_iteration(&w.model, 1e-8, &SolveLimits::default());
    for s in w.navigation_states() {
        let b = Belief::point_mass(w.model.num_states(), s);
        assert!((values.value_at(&b).unwrap() - mdp.values[s]).abs() < 1e-6, "state {s}");
    }

    let text = serialize_value_function(&values);
    assert_eq!(serialize_value_function(&parse_value_function(&text).unwrap()), text);

    let goal = GoalSpec { declare_action: DECLARE_GOAL, goal_states: vec![w.goal_state] };
    let mut cfg = TrialConfig::uniform_over(w.model.num_states(), w.navigation_states(), 0.95);
    cfg.num_trials = 50;
    let gap = gap_estimate(&mp, &values, &goal, &cfg).unwrap();
    assert!(gap.oracle_reward > 0.0 && gap.plain_reward > 0.0);
    assert_eq!(gap.oracle_curve.num_trials, 50);
    assert_eq!(parse_curve_csv(&serialize_curve_csv(&gap.plain_curve)).unwrap().counts, gap.plain_curve.counts);
}
