use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ChiSquared, ContinuousCDF};
use tsc_core::control::{drive, PlanFollower, SignalController};
use tsc_core::demand::{DemandProfile, SourceDemand};
use tsc_core::frame::encode::{approach_vehicles, encode_dtse};
use tsc_core::metrics::CostCoefficients;
use tsc_core::network::presets::{single_cross, ApproachParams};
use tsc_core::network::Network;
use tsc_core::rng::{stream, StreamRole};
use tsc_core::signal::CyclePlan;
use tsc_core::sim::{SimConfig, SimState};

fn approach() -> ApproachParams {
    ApproachParams { length_m: 40.0, speed: 10.0, saturation: 0.5, capacity: 30 }
}

fn plan() -> CyclePlan {
    CyclePlan { phases: vec![0, 1], splits_s: vec![20.0, 20.0], cycle_s: 40.0, offset_s: 0.0 }
}

fn bucket(q: f64) -> u8 {
    match q as u32 {
        0 => 0,
        1..=2 => 1,
        3..=5 => 2,
        _ => 3,
    }
}

type Key = (u8, u8);

/// Queue buckets of the two approaches entering on different phases.
fn discretized(net: &Network, st: &SimState) -> Key {
    let e = net.entry_links();
    (bucket(st.queue(e[0])), bucket(st.queue(e[1])))
}

/// Homogeneity of the next-state distributions of each source state across
/// the two halves of the run, summed over source states.
fn chi_square_halves(halves: &[BTreeMap<(Key, Key), u64>; 2]) -> (f64, usize) {
    let sources: BTreeSet<Key> = halves.iter().flat_map(|h| h.keys().map(|k| k.0)).collect();
    let mut stat = 0.0;
    let mut dof = 0;
    for s in sources {
        let row = |h: usize| -> BTreeMap<Key, f64> { halves[h].iter().filter(|((a, _), _)| *a == s).map(|((_, b), n)| (*b, *n as f64)).collect() };
        let rows = [row(0), row(1)];
        let n: Vec<f64> = rows.iter().map(|r| r.values().sum()).collect();
        let targets: BTreeSet<Key> = rows.iter().flat_map(|r| r.keys().copied()).collect();
        let col = |b: &Key| rows[0].get(b).unwrap_or(&0.0) + rows[1].get(b).unwrap_or(&0.0);
        let kept: Vec<Key> = targets.into_iter().filter(|b| col(b) >= 10.0).collect();
        if kept.len() < 2 || n.iter().any(|x| *x < 20.0) {
            continue;
        }
        let kept_n: Vec<f64> = (0..2).map(|h| kept.iter().map(|b| rows[h].get(b).unwrap_or(&0.0)).sum()).collect();
        let total = kept_n[0] + kept_n[1];
        for b in &kept {
            for h in 0..2 {
                let e = col(b) * kept_n[h] / total;
                stat += (rows[h].get(b).unwrap_or(&0.0) - e).powi(2) / e;
            }
        }
        dof += kept.len() - 1;
    }
    (stat, dof)
}

fn half_transitions(demand: impl Fn(&Network) -> DemandProfile, horizon: u64) -> (f64, usize) {
    let cycle = 40;
    let cfg = SimConfig { horizon, ..SimConfig::default() };
    let net = Network::new(single_cross(approach(), 5.0, 40.0), &cfg).unwrap();
    let demand = demand(&net);
    let mut ctrls = vec![PlanFollower(plan())];
    let modes = ctrls.iter().map(|c| c.mode()).collect();
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(11, 0, StreamRole::Simulation)).unwrap();
    let mut halves: [BTreeMap<(Key, Key), u64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut prev: Option<Key> = None;
    drive(&net, &cfg, &demand, &mut st, &mut ctrls, CostCoefficients::default(), |r| {
        if r.state.t % cycle != 0 {
            return;
        }
        let next = discretized(&net, r.state);
        if let Some(p) = prev {
            let h = usize::from(r.state.t > horizon / 2);
            *halves[h].entry((p, next)).or_default() += 1;
        }
        prev = Some(next);
    })
    .unwrap();
    chi_square_halves(&halves)
}

fn p_value(stat: f64, dof: usize) -> f64 {
    1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat)
}

#[test]
fn transition_frequencies_do_not_depend_on_time() {
    let (stat, dof) = half_transitions(|net| DemandProfile::uniform(net, 0.15).unwrap(), 400_000);
    assert!(dof > 10, "only {dof} degrees of freedom");
    let p = p_value(stat, dof);
    assert!(p > 0.01, "chi-square {stat:.2} on {dof} dof, p = {p:.4}");
}

#[test]
fn a_demand_step_is_detected() {
    let horizon = 400_000;
    let stepped = |net: &Network| {
        let sources = net.entry_links().iter().map(|&l| (l, SourceDemand::Schedule(vec![(0.0, 0.1), (horizon as f64 / 2.0, 0.17)]))).collect();
        DemandProfile::new(net, sources).unwrap()
    };
    let (stat, dof) = half_transitions(stepped, horizon);
    assert!(p_value(stat, dof) < 0.01, "chi-square {stat:.2} on {dof} dof");
}

#[test]
fn dtse_counts_every_vehicle_on_the_approach() {
    let cfg = SimConfig { horizon: 400, ..SimConfig::default() };
    let net = Network::new(single_cross(approach(), 5.0, 40.0), &cfg).unwrap();
    let demand = DemandProfile::uniform(&net, 0.3).unwrap();
    let mut ctrls = vec![PlanFollower(plan())];
    let modes = ctrls.iter().map(|c| c.mode()).collect();
    let mut st = SimState::new(&net, &cfg, &demand, modes, stream(5, 0, StreamRole::Simulation)).unwrap();
    let mut checked = 0;
    drive(&net, &cfg, &demand, &mut st, &mut ctrls, CostCoefficients::default(), |r| {
        for &l in net.entry_links() {
            let link = net.link(l);
            let vs = approach_vehicles(&net, r.state, l, 7.5).unwrap();
            let lanes = r.state.links[l].lanes.len();
            let dtse = encode_dtse(&vs, link.length_m, lanes, 5.0, link.free_flow_speed).unwrap();
            let present = r.state.links[l].occupancy();
            assert_eq!(f64::from(dtse.total()), present, "t {} link {l}", r.events.t);
            assert!(dtse.speed.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            checked += 1;
        }
    })
    .unwrap();
    assert_eq!(checked, 400 * net.entry_links().len());
}
