use rand::Rng;
use tsc_core::control::{drive, SignalController};
use tsc_core::demand::{DemandProfile, SourceDemand};
use tsc_core::metrics::{CostCoefficients, Criterion};
use tsc_core::network::presets::{corridor, single_cross, ApproachParams};
use tsc_core::network::Network;
use tsc_core::rho::{
    brute_force_horizon, enumerate_sequences, forecast_exogenous, greedy_sequence, optimize_horizon, rollout, sequence_objective, Forecaster,
    InternalModel, RhoConfig, RhoController,
};
use tsc_core::rng::{stream, StreamRole};
use tsc_core::signal::{check_fps_sequence, ControlMode, SignalAction, SignalMode, SignalState};
use tsc_core::sim::{step, ArrivalProcess, Arrivals, FlowModel, SimConfig, SimState};

fn fluid_cfg() -> SimConfig {
    SimConfig { flow: FlowModel::Fluid, arrivals: ArrivalProcess::Expected, default_yellow_s: 1.0, default_all_red_s: 1.0, ..SimConfig::default() }
}

fn short(sat: f64) -> ApproachParams {
    ApproachParams { length_m: 20.0, speed: 10.0, saturation: sat, capacity: 40 }
}

/// A random single-cross or two-intersection instance with random queues,
/// signal state and forecast.
fn random_instance(seed: u64) -> (Network, SimConfig, SimState, Vec<Vec<f64>>) {
    let mut rng = stream(seed, 0, StreamRole::Initialization);
    let cfg = fluid_cfg();
    let min = rng.random_range(1..=3) as f64;
    let max = min + rng.random_range(0..=4) as f64;
    let sat = rng.random_range(0.3..1.5);
    let spec = if rng.random_bool(0.5) { single_cross(short(sat), min, max) } else { corridor(2, short(sat), short(sat), min, max) };
    let net = Network::new(spec, &cfg).unwrap();
    let demand = DemandProfile::uniform(&net, 0.0).unwrap();
    let modes = vec![ControlMode::Fps; net.n_intersections()];
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(seed, 0, StreamRole::Simulation)).unwrap();
    for m in 0..net.n_movements() {
        st.load_queue(&net, m, rng.random_range(0..8) as f64);
    }
    for i in 0..net.n_intersections() {
        let t = net.timing(i);
        let mode = [SignalMode::Green, SignalMode::Yellow, SignalMode::AllRed][rng.random_range(0..3)];
        let limit = match mode {
            SignalMode::Green => t.max_green,
            SignalMode::Yellow => t.yellow,
            SignalMode::AllRed => t.all_red,
        };
        st.signals[i] = SignalState { phase: rng.random_range(0..2), mode, elapsed: rng.random_range(1..=limit), next_phase: 0, complete: true };
        if mode != SignalMode::Green {
            st.signals[i].next_phase = (st.signals[i].phase + 1) % 2;
        }
    }
    let horizon = rng.random_range(1..=6);
    let n_src = st.source_links.len();
    let exo = (0..horizon).map(|_| (0..n_src).map(|_| rng.random_range(0.0..1.2)).collect()).collect();
    (net, cfg, st, exo)
}

#[test]
fn exact_search_matches_enumeration() {
    for seed in 0..100 {
        let (net, cfg, st, exo) = random_instance(seed);
        for i in 0..net.n_intersections() {
            let model = InternalModel::new(&net, &cfg, i, Criterion::Queue);
            let sol = optimize_horizon(&model, &st, &exo).unwrap();
            let (actions, value) = brute_force_horizon(&model, &st, &exo).unwrap();
            assert_eq!(sol.objective, value, "seed {seed}");
            assert_eq!(sol.actions, actions, "seed {seed}");
        }
    }
}

#[test]
fn solutions_are_feasible_self_consistent_and_beat_greedy() {
    for seed in 100..160 {
        let (net, cfg, st, exo) = random_instance(seed);
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let sol = optimize_horizon(&model, &st, &exo).unwrap();
        assert_eq!(sol.actions.len(), exo.len());
        check_fps_sequence(st.signals[0], net.timing(0), net.n_phases(0), &sol.actions).unwrap();
        assert_eq!(sequence_objective(&model, &st, &sol.actions, &exo).unwrap(), sol.objective);
        let replay = rollout(&model, &st, &sol.actions, &exo).unwrap();
        assert_eq!(replay.len(), sol.states.len());
        for (a, b) in replay.iter().zip(&sol.states) {
            assert_eq!(a.links, b.links);
            assert_eq!(a.signals, b.signals);
        }
        let (_, greedy) = greedy_sequence(&model, &st, &exo).unwrap();
        assert!(sol.objective >= greedy, "seed {seed}: {} < {greedy}", sol.objective);
    }
}

#[test]
fn horizon_one_is_greedy() {
    for seed in 200..240 {
        let (net, cfg, st, exo) = random_instance(seed);
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let one = &exo[..1];
        let all = enumerate_sequences(&model, &st, one).unwrap();
        let best = all.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        let first = all.iter().find(|(_, v)| *v == best).unwrap();
        assert_eq!(optimize_horizon(&model, &st, one).unwrap().actions, first.0);
    }
}

#[test]
fn infeasible_sequence_is_rejected() {
    let cfg = fluid_cfg();
    let net = Network::new(single_cross(short(1.0), 3.0, 10.0), &cfg).unwrap();
    let demand = DemandProfile::uniform(&net, 0.0).unwrap();
    let st = SimState::new(&net, &cfg, &demand, vec![ControlMode::Fps], stream(0, 0, StreamRole::Simulation)).unwrap();
    let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
    let exo = vec![vec![0.0, 0.0]; 3];
    let err = rollout(&model, &st, &[SignalAction::Extend, SignalAction::Change, SignalAction::Extend], &exo).unwrap_err();
    assert_eq!(err, tsc_core::ControlError::InfeasibleSequence(1));
}

#[test]
fn oracle_forecast_reads_the_profile_step() {
    let cfg = fluid_cfg();
    let net = Network::new(single_cross(short(1.0), 1.0, 10.0), &cfg).unwrap();
    let demand = DemandProfile::new(&net, vec![(0, SourceDemand::Schedule(vec![(0.0, 0.1), (3.0, 0.5)])), (1, SourceDemand::constant(0.0))]).unwrap();
    let st = SimState::new(&net, &cfg, &demand, vec![ControlMode::Fps], stream(0, 0, StreamRole::Simulation)).unwrap();
    let e = forecast_exogenous(Forecaster::Oracle, 5, &demand, &st, &[], None, 1.0).unwrap();
    let first: Vec<f64> = e.iter().map(|x| x[0]).collect();
    assert_eq!(first, vec![0.1, 0.1, 0.1, 0.5, 0.5]);
}

/// Oracle forecasts in a deterministic fluid world: committing whole plans
/// (stride = horizon) makes the realised objective equal the predicted one.
#[test]
fn perfect_model_identity() {
    let cfg = SimConfig { horizon: 120, ..fluid_cfg() };
    let net = Network::new(corridor(2, short(0.6), short(0.6), 2.0, 8.0), &cfg).unwrap();
    let demand = DemandProfile::new(
        &net,
        net.entry_links().iter().enumerate().map(|(k, &l)| (l, SourceDemand::Schedule(vec![(0.0, 0.1 + 0.05 * k as f64), (40.0, 0.35)]))).collect(),
    )
    .unwrap();
    for horizon in [1, 3, 5] {
        let mut rho = RhoConfig::new(horizon, Forecaster::Oracle);
        rho.stride = horizon;
        let mut rho_ctrl = RhoController::new(rho.clone(), 0, &net, &demand);
        let mut plan_ctrl = tsc_core::control::PlanFollower(tsc_core::signal::CyclePlan {
            phases: vec![0, 1],
            splits_s: vec![6.0, 6.0],
            cycle_s: 12.0,
            offset_s: 0.0,
        });
        let modes = vec![rho_ctrl.mode(), plan_ctrl.mode()];
        let mut st = SimState::new(&net, &cfg, &demand, modes, stream(0, 0, StreamRole::Simulation)).unwrap();
        let mut last = None;
        while st.t < cfg.horizon {
            let ctx0 = tsc_core::DecisionContext { net: &net, cfg: &cfg, state: &st, demand: &demand, last: last.as_ref(), intersection: 0 };
            let a0 = rho_ctrl.decide(&ctx0).unwrap();
            let ctx1 = tsc_core::DecisionContext { intersection: 1, ..ctx0 };
            let a1 = plan_ctrl.decide(&ctx1).unwrap();
            last = Some(step(&net, &cfg, &mut st, &[a0, a1], Arrivals::FromProfile(&demand)).unwrap());
        }
        let complete: Vec<_> = rho_ctrl.trace.iter().filter(|e| e.realized_steps == e.actions.len()).collect();
        assert!(complete.len() >= 100 / horizon, "horizon {horizon}");
        for e in complete {
            assert_eq!(e.realized, e.predicted, "horizon {horizon}, t {}", e.t);
        }
    }
}

#[test]
fn empty_network_extends_and_cross_queue_changes() {
    let cfg = fluid_cfg();
    let net = Network::new(single_cross(short(1.0), 2.0, 20.0), &cfg).unwrap();
    let demand = DemandProfile::uniform(&net, 0.0).unwrap();
    let mut st = SimState::new(&net, &cfg, &demand, vec![ControlMode::Fps], stream(0, 0, StreamRole::Simulation)).unwrap();
    st.signals[0] = SignalState { elapsed: 3, ..SignalState::initial() };
    let mut c = RhoController::new(RhoConfig::new(5, Forecaster::Oracle), 0, &net, &demand);
    let ctx = tsc_core::DecisionContext { net: &net, cfg: &cfg, state: &st, demand: &demand, last: None, intersection: 0 };
    assert_eq!(c.decide(&ctx).unwrap(), SignalAction::Extend);

    st.load_queue(&net, 1, 10.0);
    st.signals[0] = SignalState { elapsed: 1, ..SignalState::initial() };
    let mut c = RhoController::new(RhoConfig::new(6, Forecaster::Oracle), 0, &net, &demand);
    let mut actions = Vec::new();
    let mut last = None;
    while actions.len() < 3 {
        let ctx = tsc_core::DecisionContext { net: &net, cfg: &cfg, state: &st, demand: &demand, last: last.as_ref(), intersection: 0 };
        let a = c.decide(&ctx).unwrap();
        actions.push(a.clone());
        last = Some(step(&net, &cfg, &mut st, &[a], Arrivals::FromProfile(&demand)).unwrap());
    }
    assert_eq!(actions, vec![SignalAction::Extend, SignalAction::Change, SignalAction::Extend]);
}

#[test]
fn drives_a_vehicle_simulation() {
    let cfg = SimConfig { horizon: 300, ..SimConfig::default() };
    let net = Network::new(single_cross(short(0.5), 5.0, 40.0), &cfg).unwrap();
    let demand = DemandProfile::uniform(&net, 0.15).unwrap();
    let mut ctrls = vec![RhoController::new(RhoConfig::new(8, Forecaster::Flat), 0, &net, &demand)];
    let modes = ctrls.iter().map(|c| c.mode()).collect();
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(5, 0, StreamRole::Simulation)).unwrap();
    let mut changes = 0;
    drive(&net, &cfg, &demand, &mut st, &mut ctrls, CostCoefficients::default(), |r| {
        changes += r.events.transitions.len();
        r.state.check_invariants(&net).unwrap();
    })
    .unwrap();
    assert!(changes > 0);
    assert_eq!(ctrls[0].trace.len(), 300);
}
