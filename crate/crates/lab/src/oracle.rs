//! The acceptance oracles. Each criterion runs against built-in fixtures
//! and independent reference computations and returns a [`Report`]; the
//! CLI's `oracle` command and the acceptance test print the same reports.

use std::fmt;

use rand::Rng;
use tsc_core::classic::{ActuatedConfig, ActuatedController, MaxPressureController, MaxQueueFirstController};
use tsc_core::control::{drive, BoxedController, PlanFollower};
use tsc_core::demand::{DemandProfile, SourceDemand};
use tsc_core::frame::belief::BeliefFilter;
use tsc_core::frame::fixture::TabularFixture;
use tsc_core::frame::mdp::{deterministic_policy, policy_evaluation, sup_norm_diff, value_iteration, value_sweeps};
use tsc_core::frame::{observe, BoundaryConfig, DemandBelief, DesignLevel, TabularMdp};
use tsc_core::metrics::{arrival_type, platoon_ratio_from_flows, CostCoefficients, Criterion, PlatoonCounter, ARRIVAL_TYPE_ANCHORS};
use tsc_core::network::presets::{corridor, single_cross, ApproachParams};
use tsc_core::network::{IntersectionSpec, LinkSpec, MovementSpec, Network, NetworkSpec, PhaseSpec, PhasingScheme};
use tsc_core::rho::{brute_force_horizon, optimize_horizon, InternalModel};
use tsc_core::rl::policy::{exact_objective_and_gradient, finite_difference_gradient};
use tsc_core::rl::qlearn::QLearningConfig;
use tsc_core::rl::{q_learning_train, state_key, AlphaSchedule, EpsilonSchedule, KeyBins, SimEnvironment, SoftmaxPolicy};
use tsc_core::rng::{poisson, stream, SimRng, StreamRole};
use tsc_core::signal::{ControlMode, CyclePlan, InterlockMonitor, SignalAction, SignalMode, SignalState};
use tsc_core::sim::{ArrivalProcess, BlockedArrivals, FlowModel, SimConfig, SimState};
use tsc_core::{ControlError, DecisionContext, SignalController};

use crate::runner::{run_episode, RunOptions, TrainingCache};
use crate::scenario::{parse_str, resolve, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub criterion: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} criterion {} ({}): {}", self.criterion, self.name, self.detail)
    }
}

/// Every criterion, in order.
pub fn run_all() -> Vec<Report> {
    vec![conservation(), planning(), learning(), metrics(), contrasts(), belief(), reproducibility()]
}

pub fn by_number(n: u8) -> Option<Report> {
    Some(match n {
        1 => conservation(),
        2 => planning(),
        3 => learning(),
        4 => metrics(),
        5 => contrasts(),
        6 => belief(),
        7 => reproducibility(),
        _ => return None,
    })
}

// ---------------------------------------------------------------------------
// 1. conservation

/// A line of `n` intersections on a two-way arterial, each with a side
/// street feeding it and a side exit. Everything else is drawn at random.
fn random_network(n: usize, rng: &mut SimRng) -> NetworkSpec {
    let mut spec = NetworkSpec::default();
    let link = |spec: &mut NetworkSpec, id: String, from: Option<usize>, to: Option<usize>, rng: &mut SimRng| {
        spec.links.push(LinkSpec {
            id,
            from,
            to,
            length_m: rng.random_range(10.0..150.0),
            free_flow_speed: rng.random_range(5.0..15.0),
            saturation_rate: rng.random_range(0.2..1.0),
            capacity: rng.random_range(3..=30),
        });
        spec.links.len() - 1
    };
    let east: Vec<usize> = (0..=n).map(|k| link(&mut spec, format!("E{k}"), k.checked_sub(1), (k < n).then_some(k), rng)).collect();
    let west: Vec<usize> = (0..=n).map(|k| link(&mut spec, format!("W{k}"), (k < n).then_some(k), k.checked_sub(1), rng)).collect();
    let side_in: Vec<usize> = (0..n).map(|i| link(&mut spec, format!("N{i}"), None, Some(i), rng)).collect();
    let side_out: Vec<usize> = (0..n).map(|i| link(&mut spec, format!("S{i}"), Some(i), None, rng)).collect();

    for i in 0..n {
        let mv = |spec: &mut NetworkSpec, id: &str, in_link: usize, out_link: usize, rng: &mut SimRng| {
            spec.movements.push(MovementSpec { id: format!("I{i}_{id}"), in_link, out_link: Some(out_link), turn_ratio: rng.random_range(0.1..1.0) });
            spec.movements.len() - 1
        };
        let e_thru = mv(&mut spec, "e_thru", east[i], east[i + 1], rng);
        let e_turn = mv(&mut spec, "e_turn", east[i], side_out[i], rng);
        let w_thru = mv(&mut spec, "w_thru", west[i + 1], west[i], rng);
        let w_turn = mv(&mut spec, "w_turn", west[i + 1], side_out[i], rng);
        let n_left = mv(&mut spec, "n_left", side_in[i], west[i], rng);
        let n_right = mv(&mut spec, "n_right", side_in[i], east[i + 1], rng);
        let groups: Vec<Vec<usize>> = if rng.random_bool(0.5) {
            vec![vec![e_thru, e_turn, w_thru, w_turn], vec![n_left, n_right]]
        } else {
            vec![vec![e_thru, w_thru], vec![e_turn, w_turn], vec![n_left, n_right]]
        };
        for (a, ga) in groups.iter().enumerate() {
            for gb in &groups[a + 1..] {
                for &x in ga {
                    for &y in gb {
                        spec.conflicts.push((x, y));
                    }
                }
            }
        }
        let first = spec.phases.len();
        for (k, g) in groups.iter().enumerate() {
            spec.phases.push(PhaseSpec { id: format!("I{i}_P{k}"), movements: g.clone() });
        }
        let min_green_s = f64::from(rng.random_range(1..=10u32));
        spec.intersections.push(IntersectionSpec {
            id: format!("I{i}"),
            scheme: PhasingScheme {
                phases: (first..spec.phases.len()).collect(),
                yellow_s: Some(f64::from(rng.random_range(1..=4u32))),
                all_red_s: Some(f64::from(rng.random_range(1..=3u32))),
                min_green_s,
                max_green_s: min_green_s + f64::from(rng.random_range(0..=40u32)),
            },
        });
    }
    spec
}

fn random_source(rng: &mut SimRng) -> SourceDemand {
    if rng.random_bool(0.5) {
        let mut start = 0.0;
        let points = (0..rng.random_range(1..=3))
            .map(|_| {
                let p = (start, rng.random_range(0.0..0.6));
                start += rng.random_range(50.0..400.0);
                p
            })
            .collect();
        SourceDemand::Schedule(points)
    } else {
        let stay = |rng: &mut SimRng| rng.random_range(0.9..1.0);
        let (p, q) = (stay(rng), stay(rng));
        SourceDemand::Regimes {
            rates: vec![rng.random_range(0.0..0.2), rng.random_range(0.2..0.8)],
            transition: vec![vec![p, 1.0 - p], vec![1.0 - q, q]],
            initial: rng.random_range(0..2),
        }
    }
}

/// Uniformly random Extend/Change or phase selections.
struct RandomController {
    mode: ControlMode,
    rng: SimRng,
}

impl SignalController for RandomController {
    fn mode(&self) -> ControlMode {
        self.mode.clone()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        Ok(match self.mode {
            ControlMode::Vps => SignalAction::Select(self.rng.random_range(0..ctx.net.n_phases(ctx.intersection))),
            _ => SignalAction::from_fps_index(self.rng.random_range(0..2)),
        })
    }
}

fn random_plan(net: &Network, i: usize, rng: &mut SimRng) -> CyclePlan {
    let t = net.timing(i);
    let splits_s: Vec<f64> =
        (0..net.n_phases(i)).map(|_| f64::from(rng.random_range(t.min_green..=t.max_green) + t.change_interval()) * net.step_s()).collect();
    let cycle_s: f64 = splits_s.iter().sum();
    let offset_s = f64::from(rng.random_range(0..cycle_s as u32));
    CyclePlan { phases: (0..net.n_phases(i)).collect(), splits_s, cycle_s, offset_s }
}

fn random_controller(net: &Network, i: usize, seed: u64, rng: &mut SimRng) -> BoxedController {
    let own = stream(seed, 0, StreamRole::Controller(i as u32));
    match rng.random_range(0..6) {
        0 => Box::new(RandomController { mode: ControlMode::Fps, rng: own }),
        1 => Box::new(RandomController { mode: ControlMode::Vps, rng: own }),
        2 => Box::new(PlanFollower(random_plan(net, i, rng))),
        3 => Box::new(MaxPressureController::default()),
        4 => {
            let t = net.timing(i);
            let cfg = ActuatedConfig { gap_s: rng.random_range(1.0..5.0), min_green_s: f64::from(t.min_green), max_green_s: f64::from(t.max_green) };
            Box::new(ActuatedController::new(cfg, net))
        }
        _ => Box::new(MaxQueueFirstController),
    }
}

/// Movements that discharged while not green.
fn illegal_discharges(net: &Network, signals: &[SignalState], discharges: &[f64]) -> Vec<usize> {
    (0..net.n_movements())
        .filter(|&m| discharges[m] > 0.0)
        .filter(|&m| {
            let i = net.link(net.movement(m).in_link).to.expect("movements start on links into an intersection");
            let sig = signals[i];
            !(sig.mode == SignalMode::Green && net.phase_movements(i, sig.phase).contains(&m))
        })
        .collect()
}

/// One randomized scenario; `Err` describes the first violation.
pub fn conservation_case(seed: u64, steps: u64) -> Result<(), String> {
    let mut rng = stream(seed, 0, StreamRole::Initialization);
    let n = rng.random_range(1..=4);
    let cfg = SimConfig {
        horizon: steps,
        seed,
        flow: if rng.random_bool(0.5) { FlowModel::Vehicles } else { FlowModel::Fluid },
        arrivals: if rng.random_bool(0.5) { ArrivalProcess::Poisson } else { ArrivalProcess::Expected },
        blocked: if rng.random_bool(0.5) { BlockedArrivals::Hold } else { BlockedArrivals::Reject },
        ..SimConfig::default()
    };
    let net = Network::new(random_network(n, &mut rng), &cfg).map_err(|e| format!("network: {e}"))?;
    let sources = net.entry_links().iter().map(|&l| (l, random_source(&mut rng))).collect();
    let demand = DemandProfile::new(&net, sources).map_err(|e| format!("demand: {e}"))?;
    let mut controllers: Vec<BoxedController> = (0..n).map(|i| random_controller(&net, i, seed, &mut rng)).collect();
    let modes = controllers.iter().map(|c| c.mode()).collect();
    let mut state = SimState::new(&net, &cfg, &demand, modes, stream(seed, 0, StreamRole::Simulation)).map_err(|e| e.to_string())?;

    let mut monitors: Option<Vec<InterlockMonitor>> = None;
    let mut failure: Option<String> = None;
    drive(&net, &cfg, &demand, &mut state, &mut controllers, CostCoefficients::default(), |rec| {
        if failure.is_some() {
            return;
        }
        let t = rec.events.t;
        let mut check = || -> Result<(), String> {
            rec.state.check_invariants(&net).map_err(|e| e.to_string())?;
            if rec.state.backlog.iter().any(|b| *b < 0.0) || rec.state.rejected < 0.0 {
                return Err("negative backlog".into());
            }
            let bad = illegal_discharges(&net, &rec.events.signals, &rec.events.discharges);
            if let Some(m) = bad.first() {
                return Err(format!("movement {m} discharged on red"));
            }
            match &mut monitors {
                None => monitors = Some((0..n).map(|i| InterlockMonitor::new(net.timing(i), rec.events.signals[i])).collect()),
                Some(ms) => {
                    for (i, m) in ms.iter_mut().enumerate() {
                        m.observe(t as usize, rec.events.signals[i]).map_err(|e| format!("intersection {i}: {e}"))?;
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = check() {
            failure = Some(format!("step {t}: {e}"));
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(f) = failure {
        return Err(f);
    }
    state.check_records().map_err(|e| e.to_string())
}

pub fn conservation() -> Report {
    const CASES: u64 = 1000;
    const STEPS: u64 = 1000;
    let started = std::time::Instant::now();
    let failures: Vec<(u64, String)> = {
        use rayon::prelude::*;
        (0..CASES).into_par_iter().filter_map(|seed| conservation_case(seed, STEPS).err().map(|e| (seed, e))).collect()
    };
    let secs = started.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    let mut detail = format!("{CASES} scenarios x {STEPS} steps, {} violations, {secs:.1} s", failures.len());
    if let Some((seed, e)) = failures.first() {
        detail += &format!("; first: seed {seed}: {e}");
    }
    Report { criterion: 1, name: "conservation", pass, detail }
}

// ---------------------------------------------------------------------------
// 2. planning

fn random_rho_instance(seed: u64) -> (Network, SimConfig, SimState, Vec<Vec<f64>>) {
    let mut rng = stream(seed, 0, StreamRole::Initialization);
    let cfg = SimConfig {
        flow: FlowModel::Fluid,
        arrivals: ArrivalProcess::Expected,
        default_yellow_s: f64::from(rng.random_range(1..=2u32)),
        default_all_red_s: 1.0,
        ..SimConfig::default()
    };
    let min = f64::from(rng.random_range(1..=3u32));
    let max = min + f64::from(rng.random_range(0..=4u32));
    let p = ApproachParams { length_m: rng.random_range(5.0..40.0), speed: 10.0, saturation: rng.random_range(0.3..1.5), capacity: 40 };
    let spec = if rng.random_bool(0.5) { single_cross(p, min, max) } else { corridor(2, p, p, min, max) };
    let net = Network::new(spec, &cfg).expect("preset networks are valid");
    let demand = DemandProfile::uniform(&net, 0.0).expect("zero demand is valid");
    let modes = vec![ControlMode::Fps; net.n_intersections()];
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(seed, 0, StreamRole::Simulation)).expect("valid config");
    for m in 0..net.n_movements() {
        st.load_queue(&net, m, f64::from(rng.random_range(0..8u32)));
    }
    for i in 0..net.n_intersections() {
        let t = net.timing(i);
        let (mode, limit) = match rng.random_range(0..3) {
            0 => (SignalMode::Green, t.max_green),
            1 => (SignalMode::Yellow, t.yellow),
            _ => (SignalMode::AllRed, t.all_red),
        };
        let phase = rng.random_range(0..2);
        let next_phase = if mode == SignalMode::Green { 0 } else { (phase + 1) % 2 };
        st.signals[i] = SignalState { phase, mode, elapsed: rng.random_range(1..=limit), next_phase, complete: true };
    }
    let horizon = rng.random_range(1..=6);
    let exo = (0..horizon).map(|_| st.source_links.iter().map(|_| rng.random_range(0.0..1.2)).collect()).collect();
    (net, cfg, st, exo)
}

pub fn planning() -> Report {
    let mut rng = stream(2, 0, StreamRole::Initialization);
    let mut vi_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=30);
        let a = rng.random_range(2..=4);
        let gamma = rng.random_range(0.5..0.99);
        let m = TabularMdp::random(n, a, gamma, &mut rng).expect("random MDPs are valid");
        let vi = value_iteration(&m, 1e-9);
        vi_err = vi_err.max(sup_norm_diff(&vi.values, &value_sweeps(&m, 10_000)));
    }
    let mut mismatches = 0;
    for seed in 0..100 {
        let (net, cfg, st, exo) = random_rho_instance(seed);
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let same = match (optimize_horizon(&model, &st, &exo), brute_force_horizon(&model, &st, &exo)) {
            (Ok(sol), Ok((actions, value))) => sol.objective == value && sol.actions == actions,
            _ => false,
        };
        mismatches += usize::from(!same);
    }
    Report {
        criterion: 2,
        name: "planning oracles",
        pass: vi_err <= 1e-6 && mismatches == 0,
        detail: format!(
            "value iteration vs 10000 sweeps on 50 MDPs: max error {vi_err:.2e}; horizon search vs enumeration: {mismatches}/100 mismatches"
        ),
    }
}

// ---------------------------------------------------------------------------
// 3. learning

/// Q-learning on the enumerable fixture: sup-norm distance of `max_a Q`
/// and of the greedy policy's value from `V*`, and the steps used.
pub fn q_learning_on_fixture(gamma: f64, alpha: AlphaSchedule, epsilon: EpsilonSchedule, episodes: u64, seed: u64) -> (f64, f64, u64) {
    let f = TabularFixture::d13();
    let e = f.enumerate(gamma).expect("fixture enumerates");
    let v_star = value_iteration(&e.mdp, 1e-10).values;
    let b = BoundaryConfig::new(0, DesignLevel::L1);
    let starts: Vec<SimState> = e.states.iter().map(|s| f.sim_state(s, 0)).collect();
    let bins = KeyBins::default();
    let keys: Vec<_> = starts.iter().map(|st| state_key(&observe(&f.net, st, &b, None).expect("observable"), &bins)).collect();
    let cfg = SimConfig { horizon: 10, ..f.cfg.clone() };
    let mut env = SimEnvironment::new(f.net.clone(), cfg, f.demand.clone(), vec![b], Criterion::Queue, seed);
    env.starts = Some(starts);
    let qc = QLearningConfig { episodes, gamma, alpha, epsilon, seed };
    let tr = q_learning_train(&mut env, |o| state_key(o, &bins), &qc).expect("fixture trains");
    let table = &tr.tables[0];
    let q_max: Vec<f64> = keys.iter().map(|k| table.max(k)).collect();
    let greedy: Vec<usize> = keys.iter().map(|k| table.greedy(k)).collect();
    let v_pi = policy_evaluation(&e.mdp, &deterministic_policy(2, &greedy));
    (sup_norm_diff(&q_max, &v_star), sup_norm_diff(&v_pi, &v_star), tr.steps)
}

/// Largest relative gap between the exact REINFORCE gradient and central
/// differences of the exact objective over random enumerable MDPs.
pub fn reinforce_gradient_gap(instances: u64) -> f64 {
    let mut rng = stream(3, 0, StreamRole::Initialization);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..=4);
        let a = rng.random_range(2..=3);
        let m = TabularMdp::random(n, a, 0.9, &mut rng).expect("random MDPs are valid");
        let n_features = rng.random_range(1..=3);
        let features: Vec<Vec<f64>> = (0..n).map(|_| (0..n_features).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut policy = SoftmaxPolicy::zeros(n_features, a);
        for t in &mut policy.theta {
            *t = rng.random_range(-1.0..1.0);
        }
        let mut start: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let z: f64 = start.iter().sum();
        start.iter_mut().for_each(|p| *p /= z);
        let horizon = rng.random_range(1..=4);
        let (_, exact) = exact_objective_and_gradient(&m, &start, horizon, &policy, &features);
        let fd = finite_difference_gradient(&m, &start, horizon, &policy, &features, 1e-5);
        let norm = exact.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
        let diff = exact.iter().zip(&fd).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    worst
}

pub fn learning() -> Report {
    let (q_err, pi_err, steps) =
        q_learning_on_fixture(0.5, AlphaSchedule::Power { omega: 0.6 }, EpsilonSchedule::Decay { floor: 0.05, base: 0.9998 }, 20_000, 3);
    let grad = reinforce_gradient_gap(30);
    Report {
        criterion: 3,
        name: "learning oracles",
        pass: q_err <= 0.05 && pi_err <= 0.05 && steps <= 200_000 && grad <= 1e-6,
        detail: format!(
            "Q-learning on the tabular fixture after {steps} steps: |max Q - V*| = {q_err:.2e}, |V^greedy - V*| = {pi_err:.2e}; REINFORCE gradient relative error {grad:.2e}"
        ),
    }
}

// ---------------------------------------------------------------------------
// 4. metrics

/// Runs a corridor under random-offset fixed plans and checks DCD
/// telescoping and the two platoon-ratio forms. Returns the worst
/// telescoping residual and the worst platoon-ratio disagreement.
pub fn metric_identities(seed: u64) -> (f64, f64) {
    let cfg = SimConfig { horizon: 1800, ..SimConfig::default() };
    let net = Network::new(corridor(3, ApproachParams::default(), ApproachParams::default(), 5.0, 60.0), &cfg).expect("preset");
    let demand = DemandProfile::uniform(&net, 0.12).expect("valid demand");
    let mut rng = stream(seed, 0, StreamRole::Initialization);
    let mut controllers: Vec<BoxedController> = (0..3)
        .map(|i| -> BoxedController {
            if i == 1 {
                Box::new(MaxPressureController::default())
            } else {
                Box::new(PlanFollower(random_plan(&net, i, &mut rng)))
            }
        })
        .collect();
    let modes = controllers.iter().map(|c| c.mode()).collect();
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(seed, 0, StreamRole::Simulation)).expect("valid");
    let mut sum_dcd = [0.0; 3];
    let mut last_cd = [0.0; 3];
    let mut counter = PlatoonCounter::new(&net);
    let mut green_steps = vec![0u64; net.n_links()];
    let mut green_arrivals = vec![0.0; net.n_links()];
    let mut arrivals = vec![0.0; net.n_links()];
    drive(&net, &cfg, &demand, &mut st, &mut controllers, CostCoefficients::default(), |rec| {
        counter.observe(&net, rec.events);
        for (i, m) in rec.metrics.iter().enumerate() {
            sum_dcd[i] += m.delta_cumulative_delay;
            last_cd[i] = m.cumulative_delay;
        }
        for l in 0..net.n_links() {
            let Some(i) = net.link(l).to else { continue };
            let sig = rec.events.signals[i];
            let open = matches!(sig.mode, SignalMode::Green | SignalMode::Yellow)
                && net.phase_movements(i, sig.phase).iter().any(|&m| net.movement(m).in_link == l);
            if open {
                green_steps[l] += 1;
                green_arrivals[l] += rec.events.matured[l];
            }
            arrivals[l] += rec.events.matured[l];
        }
    })
    .expect("runs");
    let telescoping = sum_dcd.iter().zip(&last_cd).map(|(s, c)| (s - c).abs()).fold(0.0, f64::max);
    let steps = cfg.horizon as f64;
    let mut platoon: f64 = 0.0;
    for l in 0..net.n_links() {
        let Some(share_form) = counter.platoon_ratio(l) else { continue };
        let flow_form = platoon_ratio_from_flows(green_arrivals[l] / green_steps[l] as f64, arrivals[l] / steps).expect("arrivals seen");
        platoon = platoon.max((share_form - flow_form).abs());
    }
    (telescoping, platoon)
}

pub fn metrics() -> Report {
    let anchors_ok = ARRIVAL_TYPE_ANCHORS.iter().enumerate().all(|(k, r)| usize::from(arrival_type(*r)) == k + 1);
    let (mut tele, mut platoon): (f64, f64) = (0.0, 0.0);
    for seed in 0..5 {
        let (t, p) = metric_identities(seed);
        tele = tele.max(t);
        platoon = platoon.max(p);
    }
    Report {
        criterion: 4,
        name: "metric identities",
        pass: anchors_ok && tele == 0.0 && platoon <= 1e-9,
        detail: format!(
            "arrival-type anchors {}; DCD telescoping residual {tele:e}; platoon-ratio forms differ by {platoon:.1e}",
            if anchors_ok { "exact" } else { "wrong" }
        ),
    }
}

// ---------------------------------------------------------------------------
// 5. behavioural contrasts

/// Mann-Kendall trend statistic with continuity correction (no tie correction).
pub fn mann_kendall_z(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            s += (xs[j] - xs[i]).signum() * f64::from(u8::from(xs[j] != xs[i]));
        }
    }
    let n = xs.len() as f64;
    let var = n * (n - 1.0) * (2.0 * n + 5.0) / 18.0;
    if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    }
}

/// Total queue (queued plus held outside the entries) per step on a
/// two-intersection corridor, under max-pressure or a fixed plan that
/// starves the side streets.
pub fn corridor_queue_series(fixed: bool, seed: u64) -> Vec<f64> {
    let cfg = SimConfig { horizon: 7200, blocked: BlockedArrivals::Hold, ..SimConfig::default() };
    let p = ApproachParams::default();
    let net = Network::new(corridor(2, p, p, 5.0, 60.0), &cfg).expect("preset");
    let source = |id: &str, rate: f64| (net.link_index(id).expect("preset link"), SourceDemand::constant(rate));
    let demand = DemandProfile::new(&net, vec![source("A0", 0.15), source("S0", 0.08), source("S1", 0.08)]).expect("valid demand");
    let mut controllers: Vec<BoxedController> = (0..2)
        .map(|_| -> BoxedController {
            if fixed {
                Box::new(PlanFollower(CyclePlan { phases: vec![0, 1], splits_s: vec![50.0, 10.0], cycle_s: 60.0, offset_s: 0.0 }))
            } else {
                Box::new(MaxPressureController::default())
            }
        })
        .collect();
    let modes = controllers.iter().map(|c| c.mode()).collect();
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(seed, 0, StreamRole::Simulation)).expect("valid");
    let mut q = Vec::with_capacity(7200);
    drive(&net, &cfg, &demand, &mut st, &mut controllers, CostCoefficients::default(), |rec| {
        q.push(rec.metrics.iter().map(|m| m.queue).sum::<f64>() + rec.state.backlog.iter().sum::<f64>());
    })
    .expect("runs");
    q
}

/// Means of twelve 300-step blocks over the second hour of the ensemble mean.
fn second_hour_blocks(fixed: bool, seeds: std::ops::Range<u64>) -> Vec<f64> {
    use rayon::prelude::*;
    let runs: Vec<Vec<f64>> = seeds.clone().into_par_iter().map(|s| corridor_queue_series(fixed, s)).collect();
    let k = runs.len() as f64;
    let mean: Vec<f64> = (3600..7200).map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / k).collect();
    mean.chunks(300).map(|c| c.iter().sum::<f64>() / 300.0).collect()
}

pub struct StabilityContrast {
    pub pressure_z: f64,
    pub fixed_blocks: Vec<f64>,
    pub pass: bool,
}

pub fn stability_contrast() -> StabilityContrast {
    let pressure = second_hour_blocks(false, 1..11);
    let fixed_blocks = second_hour_blocks(true, 1..11);
    let pressure_z = mann_kendall_z(&pressure);
    let pass = pressure_z.abs() < 1.96 && fixed_blocks.windows(2).all(|w| w[1] > w[0]);
    StabilityContrast { pressure_z, fixed_blocks, pass }
}

fn scenario(text: &str, origin: &str) -> Scenario {
    resolve(&parse_str(text, origin).expect("built-in scenario parses"), None).expect("built-in scenario resolves")
}

pub const DEMAND_STEP: &str = include_str!("../../../scenarios/demand_step.toml");
pub const DISTRIBUTION_SHIFT: &str = include_str!("../../../scenarios/distribution_shift.toml");
pub const GOLDEN: &str = include_str!("../../../scenarios/golden.toml");

/// Mean episode delay of `preset` over the scenario's seeds at `scale`.
fn mean_delay(s: &Scenario, preset: &str, scale: f64, cache: &TrainingCache) -> f64 {
    use rayon::prelude::*;
    let spec = s.controller_by_name(preset).expect("preset exists");
    let v = s.with_controller(&spec).expect("preset fits");
    let opts = RunOptions { demand_scale: scale, events: false };
    let ads: Vec<f64> = s
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = run_episode(&v, seed, &opts, cache).expect("built-in scenario runs");
            assert!(out.result.error.is_none(), "{preset}: {:?}", out.result.error);
            out.result.metrics.ad.unwrap_or(0.0)
        })
        .collect();
    ads.iter().sum::<f64>() / ads.len() as f64
}

pub fn forecast_contrast() -> (f64, f64) {
    let s = scenario(DEMAND_STEP, "demand_step.toml");
    let cache = TrainingCache::default();
    (mean_delay(&s, "oracle", 1.0, &cache), mean_delay(&s, "flat", 1.0, &cache))
}

pub fn shift_contrast() -> (f64, f64) {
    let s = scenario(DISTRIBUTION_SHIFT, "distribution_shift.toml");
    let cache = TrainingCache::default();
    (mean_delay(&s, "trained_at_1", 1.5, &cache), mean_delay(&s, "trained_at_1.5", 1.5, &cache))
}

pub fn contrasts() -> Report {
    let a = stability_contrast();
    let (oracle, flat) = forecast_contrast();
    let (frozen, matched) = shift_contrast();
    let gap = (frozen - matched) / matched;
    let b = oracle <= flat;
    let c = gap.abs() >= 0.05;
    let blocks: Vec<String> = a.fixed_blocks.iter().map(|x| format!("{x:.1}")).collect();
    Report {
        criterion: 5,
        name: "behavioural contrasts",
        pass: a.pass && b && c,
        detail: format!(
            "(a) {}: max-pressure trend z = {:.2}, fixed-plan blocks [{}]; (b) {}: delay oracle {oracle:.3} s vs flat {flat:.3} s; (c) {}: delay at 1.5x frozen {frozen:.3} s vs retrained {matched:.3} s, gap {:+.1}%",
            verdict(a.pass),
            a.pressure_z,
            blocks.join(", "),
            verdict(b),
            verdict(c),
            gap * 100.0
        ),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "failed"
    }
}

// ---------------------------------------------------------------------------
// 6. belief filter

/// Fraction of post-burn-in steps on which the filtered most likely regime
/// equals the true one, on synthetic two-regime counts.
pub fn belief_accuracy(seed: u64) -> f64 {
    const STEPS: usize = 2000;
    const BURN_IN: usize = 50;
    let rates = vec![0.2, 1.0];
    let transition = vec![vec![0.99, 0.01], vec![0.01, 0.99]];
    let prior = DemandBelief::uniform(rates.clone(), transition.clone()).expect("valid prior");
    let mut rng = stream(seed, 0, StreamRole::Simulation);
    let mut regime = rng.random_range(0..2);
    let mut filter = BeliefFilter::new(vec![0], &prior);
    let mut hits = 0;
    for t in 0..STEPS {
        if rng.random::<f64>() >= transition[regime][regime] {
            regime = 1 - regime;
        }
        let count = poisson(&mut rng, rates[regime]);
        filter.observe(&[f64::from(count)], 1.0);
        if t >= BURN_IN && filter.beliefs[0].argmax() == regime {
            hits += 1;
        }
    }
    hits as f64 / (STEPS - BURN_IN) as f64
}

pub fn belief() -> Report {
    let acc: Vec<f64> = (0..20).map(belief_accuracy).collect();
    let worst = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    Report {
        criterion: 6,
        name: "belief filter",
        pass: worst >= 0.9,
        detail: format!("regime accuracy after burn-in over 20 seeds: worst {:.1}%, mean {:.1}%", worst * 100.0, mean * 100.0),
    }
}

// ---------------------------------------------------------------------------
// 7. reproducibility

/// SHA-256 of every file written for one run of the golden scenario.
pub fn golden_digests(seed: u64) -> Vec<(String, String)> {
    let s = scenario(GOLDEN, "golden.toml");
    let out = run_episode(&s, seed, &RunOptions::default(), &TrainingCache::default()).expect("golden scenario runs");
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = crate::output::write_results(std::slice::from_ref(&out), None, dir.path()).expect("writable temp dir");
    manifest.files.into_iter().map(|e| (e.path, e.sha256)).collect()
}

pub const GOLDEN_DIGESTS: &str = include_str!("../../../scenarios/golden.sha256");

pub fn reproducibility() -> Report {
    let first = golden_digests(7);
    let second = golden_digests(7);
    let rerun = first == second;
    let expected: Vec<(String, String)> = GOLDEN_DIGESTS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once("  ").map(|(h, p)| (p.to_string(), h.to_string())))
        .collect();
    let mut current: Vec<(String, String)> = first.iter().filter(|(p, _)| p != "manifest.json").cloned().collect();
    current.sort();
    let golden = current == expected;
    Report {
        criterion: 7,
        name: "reproducibility",
        pass: rerun && golden,
        detail: format!(
            "two runs {}; metric files {} the committed digests ({} files)",
            if rerun { "byte-identical" } else { "differ" },
            if golden { "match" } else { "do not match" },
            current.len()
        ),
    }
}
