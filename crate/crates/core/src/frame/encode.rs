//! Spatial (DTSE) and temporal (TDTSE) state encodings of an approach.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::network::Network;
use crate::sim::{FlowModel, SimState, StepEvents};

pub const DEFAULT_CELL_M: f64 = 7.0;
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("position {position} m is outside [0, {length}] m")]
    PositionOutOfRange { position: f64, length: f64 },
    #[error("lane {lane} is outside the approach's {lanes} lanes")]
    LaneOutOfRange { lane: usize, lanes: usize },
    #[error("cell size must be positive")]
    CellSize,
    #[error("window of {window} steps is longer than the {available}-step history")]
    WindowTooLong { window: usize, available: usize },
    #[error("positions are only defined for individually tracked vehicles")]
    FluidState,
}

/// A vehicle on an approach, position measured from the stop bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePosition {
    pub position_m: f64,
    pub speed: f64,
    pub lane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtseTensor {
    pub cell_m: f64,
    /// `occupancy[cell][lane]`
    pub occupancy: Vec<Vec<u32>>,
    /// `speed[cell][lane]`: mean speed over v*, 0 in empty cells.
    pub speed: Vec<Vec<f64>>,
}

impl DtseTensor {
    pub fn total(&self) -> u32 {
        self.occupancy.iter().flatten().sum()
    }
}

pub fn encode_dtse(vehicles: &[VehiclePosition], length_m: f64, lanes: usize, cell_m: f64, free_flow_speed: f64) -> Result<DtseTensor, EncodeError> {
    if !(cell_m > 0.0) {
        return Err(EncodeError::CellSize);
    }
    let cells = (math::ceil(length_m / cell_m) as usize).max(1);
    let mut occupancy = alloc::vec![alloc::vec![0u32; lanes]; cells];
    let mut sum = alloc::vec![alloc::vec![0.0; lanes]; cells];
    for v in vehicles {
        if !(0.0..=length_m).contains(&v.position_m) {
            return Err(EncodeError::PositionOutOfRange { position: v.position_m, length: length_m });
        }
        if v.lane >= lanes {
            return Err(EncodeError::LaneOutOfRange { lane: v.lane, lanes });
        }
        let c = (math::floor(v.position_m / cell_m) as usize).min(cells - 1);
        occupancy[c][v.lane] += 1;
        sum[c][v.lane] += v.speed;
    }
    let speed = sum
        .iter()
        .zip(&occupancy)
        .map(|(s, o)| s.iter().zip(o).map(|(x, n)| if *n == 0 { 0.0 } else { (x / f64::from(*n) / free_flow_speed).clamp(0.0, 1.0) }).collect())
        .collect();
    Ok(DtseTensor { cell_m, occupancy, speed })
}

/// Vehicle positions on link `l` as the point-queue model implies them:
/// queued vehicles stand `spacing_m` apart from the stop bar; travelling
/// vehicles sit where free-flow motion has taken them since entering.
/// Travelling vehicles have not picked a lane yet and are drawn in lane 0.
pub fn approach_vehicles(net: &Network, state: &SimState, l: usize, spacing_m: f64) -> Result<Vec<VehiclePosition>, EncodeError> {
    if state.flow == FlowModel::Fluid {
        return Err(EncodeError::FluidState);
    }
    let link = net.link(l);
    let mut out = Vec::new();
    for (k, lane) in state.links[l].lanes.iter().enumerate() {
        for (n, _) in lane.vehicles.iter().enumerate() {
            out.push(VehiclePosition { position_m: (n as f64 * spacing_m).min(link.length_m), speed: 0.0, lane: k });
        }
    }
    let step_m = link.free_flow_speed * net.step_s();
    for b in &state.links[l].transit {
        let remaining = b.due.saturating_sub(state.t) as f64;
        let pos = (remaining * step_m).min(link.length_m);
        for _ in &b.vehicles {
            out.push(VehiclePosition { position_m: pos, speed: link.free_flow_speed, lane: 0 });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdtseTensor {
    /// `presence[group][w]`, oldest column first.
    pub presence: Vec<Vec<u8>>,
    /// Phase id per column.
    pub phase: Vec<usize>,
}

/// Stacks the last `window` steps of each detector group's presence and
/// the phase history. Histories are oldest first.
pub fn encode_tdtse(presence: &[Vec<bool>], phases: &[usize], window: usize) -> Result<TdtseTensor, EncodeError> {
    let available = presence.iter().map(Vec::len).chain(core::iter::once(phases.len())).min().unwrap_or(0);
    if window > available {
        return Err(EncodeError::WindowTooLong { window, available });
    }
    let tail = |n: usize| n - window..n;
    Ok(TdtseTensor {
        presence: presence.iter().map(|h| h[tail(h.len())].iter().map(|b| u8::from(*b)).collect()).collect(),
        phase: phases[tail(phases.len())].to_vec(),
    })
}

/// Records detector presence (any vehicle entering the link) for the
/// incoming links of one intersection, plus its phase, step by step.
#[derive(Debug, Clone, Default)]
pub struct DetectorLog {
    pub intersection: usize,
    pub presence: Vec<Vec<bool>>,
    pub phases: Vec<usize>,
}

impl DetectorLog {
    pub fn new(net: &Network, intersection: usize) -> Self {
        Self { intersection, presence: alloc::vec![Vec::new(); net.incoming(intersection).len()], phases: Vec::new() }
    }

    pub fn record(&mut self, net: &Network, state: &SimState, ev: &StepEvents) {
        for (g, &l) in net.incoming(self.intersection).iter().enumerate() {
            self.presence[g].push(state.links[l].inflow > 0.0);
        }
        self.phases.push(ev.signals[self.intersection].phase);
    }

    pub fn encode(&self, window: usize) -> Result<TdtseTensor, EncodeError> {
        encode_tdtse(&self.presence, &self.phases, window)
    }
}
