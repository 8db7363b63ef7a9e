//! Signal interlock: phases, change intervals and how controller actions
//! are turned into legal signal states.
//!
//! Every intersection is in one of three modes. Green serves the movements of
//! the current phase; a phase change always runs the full yellow and all-red
//! intervals before the next green. `elapsed` counts the steps spent in the
//! current mode including the step being simulated, so a green that has just
//! been extended from 10 s reads 11 s.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::network::SchemeSteps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    Green,
    Yellow,
    AllRed,
}

impl SignalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalMode::Green => "green",
            SignalMode::Yellow => "yellow",
            SignalMode::AllRed => "all_red",
        }
    }
}

/// A fixed cycle: phases in order, split windows (green plus the change
/// interval at its end) in seconds, cycle length and offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclePlan {
    /// Scheme positions in service order.
    pub phases: Vec<usize>,
    pub splits_s: Vec<f64>,
    pub cycle_s: f64,
    pub offset_s: f64,
}

/// What a controller asks of one intersection for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SignalAction {
    /// Keep the current phase.
    Extend,
    /// Move on to the next phase in scheme order.
    Change,
    /// Serve the given scheme position next (variable phase sequence).
    Select(usize),
    /// Commit to a cycle plan (cycle-based control).
    Plan(CyclePlan),
}

impl SignalAction {
    pub fn as_fps_index(&self) -> Option<usize> {
        match self {
            SignalAction::Extend => Some(0),
            SignalAction::Change => Some(1),
            _ => None,
        }
    }

    pub fn from_fps_index(a: usize) -> Self {
        if a == 0 {
            SignalAction::Extend
        } else {
            SignalAction::Change
        }
    }
}

/// How an intersection is controlled for the whole episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlMode {
    /// Fixed phase sequence: binary extend/change.
    Fps,
    /// Variable phase sequence: any phase may follow.
    Vps,
    /// Cycle-based: the plan drives the signal; per-step actions are ignored.
    Cycle(CyclePlan),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("phase position {0} is not in the scheme")]
    UnknownPhase(usize),
    #[error("action {action} does not match control mode {mode}")]
    ModeMismatch { action: &'static str, mode: &'static str },
    #[error("invalid cycle plan: {0}")]
    InvalidPlan(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterlockError {
    #[error("step {step}: illegal transition {from:?} -> {to:?}")]
    Transition { step: usize, from: SignalState, to: SignalState },
    #[error("step {step}: green lasted {steps} steps, outside [{min}, {max}]")]
    GreenDuration { step: usize, steps: u32, min: u32, max: u32 },
    #[error("step {step}: action {action:?} is not feasible in state {state:?}")]
    Infeasible { step: usize, action: SignalAction, state: SignalState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignalState {
    /// Scheme position of the phase being served (or being cleared during a change).
    pub phase: usize,
    pub mode: SignalMode,
    /// Steps spent in `mode`, including the current one.
    pub elapsed: u32,
    /// Phase that gets green once the change interval ends.
    pub next_phase: usize,
    /// False for a green that was already running when observation began
    /// (a cycle plan entered mid-window); its duration is not checked.
    pub complete: bool,
}

impl SignalState {
    /// State before the first step: first phase, green, nothing served yet.
    pub fn initial() -> Self {
        Self { phase: 0, mode: SignalMode::Green, elapsed: 0, next_phase: 0, complete: true }
    }

    pub fn elapsed_s(&self, step_s: f64) -> f64 {
        f64::from(self.elapsed) * step_s
    }

    pub fn is_green(&self) -> bool {
        self.mode == SignalMode::Green
    }
}

/// Outcome of applying one step of control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transition {
    /// Length in steps of a green that ended this step.
    pub green_ended: Option<u32>,
    pub forced: bool,
    pub clamped: bool,
}

/// Applies `action` to an actuated (FPS or VPS) intersection.
///
/// Change requests below min green are clamped to Extend; at max green an
/// Extend is overridden and the next phase in scheme order follows. During
/// the change interval actions are ignored.
pub fn apply_signal_action(
    state: &mut SignalState,
    timing: SchemeSteps,
    n_phases: usize,
    mode: &ControlMode,
    action: &SignalAction,
) -> Result<Transition, SignalError> {
    let mut tr = Transition::default();
    match mode {
        ControlMode::Cycle(_) => {
            return Err(SignalError::ModeMismatch { action: "per-step", mode: "cycle" });
        }
        ControlMode::Fps if matches!(action, SignalAction::Select(_)) => {
            return Err(SignalError::ModeMismatch { action: "select", mode: "fps" });
        }
        _ => {}
    }
    if matches!(action, SignalAction::Plan(_)) {
        return Err(SignalError::ModeMismatch { action: "plan", mode: "actuated" });
    }
    if let SignalAction::Select(p) = action {
        if *p >= n_phases {
            return Err(SignalError::UnknownPhase(*p));
        }
    }

    match state.mode {
        SignalMode::Green => {
            let next_in_order = (state.phase + 1) % n_phases;
            let wanted = match action {
                SignalAction::Extend => None,
                SignalAction::Change => Some(next_in_order),
                SignalAction::Select(p) if *p == state.phase => None,
                SignalAction::Select(p) => Some(*p),
                SignalAction::Plan(_) => unreachable!(),
            };
            let e = state.elapsed;
            let target = if e >= timing.max_green {
                tr.forced = true;
                Some(next_in_order)
            } else if wanted.is_some() && e < timing.min_green {
                tr.clamped = true;
                None
            } else {
                wanted
            };
            match target {
                None => state.elapsed = e + 1,
                Some(next) => {
                    if state.complete {
                        tr.green_ended = Some(e);
                    }
                    state.mode = SignalMode::Yellow;
                    state.elapsed = 1;
                    state.next_phase = next;
                }
            }
        }
        SignalMode::Yellow => {
            if state.elapsed < timing.yellow {
                state.elapsed += 1;
            } else {
                state.mode = SignalMode::AllRed;
                state.elapsed = 1;
            }
        }
        SignalMode::AllRed => {
            if state.elapsed < timing.all_red {
                state.elapsed += 1;
            } else {
                state.mode = SignalMode::Green;
                state.phase = state.next_phase;
                state.elapsed = 1;
                state.complete = true;
            }
        }
    }
    Ok(tr)
}

impl CyclePlan {
    /// Checks the plan's internal consistency against a scheme of `n_phases`.
    pub fn validate(&self, n_phases: usize) -> Result<(), SignalError> {
        if self.phases.is_empty() || self.phases.len() != self.splits_s.len() {
            return Err(SignalError::InvalidPlan("phases and splits must be non-empty and aligned"));
        }
        if let Some(&p) = self.phases.iter().find(|&&p| p >= n_phases) {
            return Err(SignalError::UnknownPhase(p));
        }
        if !(self.cycle_s > 0.0) || self.splits_s.iter().any(|s| !(*s > 0.0)) {
            return Err(SignalError::InvalidPlan("cycle and splits must be positive"));
        }
        let total: f64 = self.splits_s.iter().sum();
        if libm::fabs(total - self.cycle_s) > 1e-9 * self.cycle_s.max(1.0) {
            return Err(SignalError::InvalidPlan("splits must sum to the cycle length"));
        }
        if !(self.offset_s >= 0.0 && self.offset_s < self.cycle_s) {
            return Err(SignalError::InvalidPlan("offset must lie in [0, cycle)"));
        }
        Ok(())
    }

    /// Checks that the plan can drive a simulator intersection: splits are
    /// whole steps and every green respects the scheme's min/max green.
    pub fn validate_for(&self, n_phases: usize, timing: SchemeSteps, step_s: f64) -> Result<(), SignalError> {
        self.validate(n_phases)?;
        for s in &self.splits_s {
            if !math::is_multiple_of(*s, step_s) {
                return Err(SignalError::InvalidPlan("splits must be whole steps"));
            }
            let green = math::steps_of(*s, step_s) as i64 - i64::from(timing.change_interval());
            if green < i64::from(timing.min_green) || green > i64::from(timing.max_green) {
                return Err(SignalError::InvalidPlan("green time outside the scheme's min/max green"));
            }
        }
        if !(self.offset_s == 0.0 || math::is_multiple_of(self.offset_s, step_s)) {
            return Err(SignalError::InvalidPlan("offset must be whole steps"));
        }
        Ok(())
    }

    /// Rounds splits to whole steps while keeping their sum equal to the
    /// cycle (largest-remainder rounding), and the offset to the nearest step.
    pub fn quantized(&self, step_s: f64) -> CyclePlan {
        let cycle_steps = math::round(self.cycle_s / step_s) as i64;
        let raw: Vec<f64> = self.splits_s.iter().map(|s| s / step_s * cycle_steps as f64 / (self.cycle_s / step_s)).collect();
        let mut steps: Vec<i64> = raw.iter().map(|r| math::floor(*r) as i64).collect();
        let mut short = cycle_steps - steps.iter().sum::<i64>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - math::floor(raw[a]);
            let fb = raw[b] - math::floor(raw[b]);
            fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if short <= 0 {
                break;
            }
            steps[i] += 1;
            short -= 1;
        }
        let offset = (math::round(self.offset_s / step_s) as i64).rem_euclid(cycle_steps.max(1));
        CyclePlan {
            phases: self.phases.clone(),
            splits_s: steps.iter().map(|s| *s as f64 * step_s).collect(),
            cycle_s: cycle_steps as f64 * step_s,
            offset_s: offset as f64 * step_s,
        }
    }

    /// Green time of entry `k` given the change interval (seconds).
    pub fn green_s(&self, k: usize, change_s: f64) -> f64 {
        (self.splits_s[k] - change_s).max(0.0)
    }
}

/// Signal indication a cycle plan prescribes at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleSignal {
    /// Index into `plan.phases`.
    pub entry: usize,
    /// Scheme position being served.
    pub phase: usize,
    pub mode: SignalMode,
    /// Steps spent in `mode` including step `t`.
    pub elapsed: u32,
    /// Whether the current mode started at or after step 0.
    pub started_in_window: bool,
}

/// Active phase of `plan` at step `t`: the split window containing
/// `(t·τ − offset) mod cycle`, with yellow then all-red at the end of each split.
pub fn apply_cycle_plan(plan: &CyclePlan, yellow_s: f64, all_red_s: f64, t: u64, step_s: f64) -> CycleSignal {
    let now = t as f64 * step_s;
    let x = math::rem_euclid(now - plan.offset_s, plan.cycle_s);
    let mut start = 0.0;
    let mut entry = plan.phases.len() - 1;
    for (k, s) in plan.splits_s.iter().enumerate() {
        if x < start + s - 1e-9 {
            entry = k;
            break;
        }
        start += s;
    }
    if entry == plan.phases.len() - 1 {
        start = plan.splits_s[..entry].iter().sum();
    }
    let split = plan.splits_s[entry];
    let u = x - start;
    let green = (split - yellow_s - all_red_s).max(0.0);
    let (mode, mode_start) = if u < green - 1e-9 {
        (SignalMode::Green, 0.0)
    } else if u < green + yellow_s - 1e-9 {
        (SignalMode::Yellow, green)
    } else {
        (SignalMode::AllRed, green + yellow_s)
    };
    let into = u - mode_start;
    let elapsed = math::floor(into / step_s + 1e-9) as u32 + 1;
    CycleSignal { entry, phase: plan.phases[entry], mode, elapsed, started_in_window: now - into >= -1e-9 }
}

/// Feasible fixed-sequence actions in `state`: only Extend while changing or
/// below min green, only Change at max green, both otherwise.
pub fn feasible_fps_actions(state: &SignalState, timing: SchemeSteps) -> &'static [SignalAction] {
    const EXTEND: &[SignalAction] = &[SignalAction::Extend];
    const CHANGE: &[SignalAction] = &[SignalAction::Change];
    const BOTH: &[SignalAction] = &[SignalAction::Extend, SignalAction::Change];
    match state.mode {
        SignalMode::Green if state.elapsed >= timing.max_green => CHANGE,
        SignalMode::Green if state.elapsed >= timing.min_green => BOTH,
        _ => EXTEND,
    }
}

/// Verifies that every action in `actions` is feasible from `start` and
/// that the resulting signal states obey the interlock.
pub fn check_fps_sequence(start: SignalState, timing: SchemeSteps, n_phases: usize, actions: &[SignalAction]) -> Result<(), InterlockError> {
    let mut state = start;
    let mut monitor = InterlockMonitor::new(timing, start);
    for (step, a) in actions.iter().enumerate() {
        if !feasible_fps_actions(&state, timing).contains(a) {
            return Err(InterlockError::Infeasible { step, action: a.clone(), state });
        }
        apply_signal_action(&mut state, timing, n_phases, &ControlMode::Fps, a).map_err(|_| InterlockError::Infeasible {
            step,
            action: a.clone(),
            state,
        })?;
        monitor.observe(step, state)?;
    }
    Ok(())
}

/// Watches successive signal states of one intersection and rejects
/// anything but green → yellow → all-red → green with full change intervals
/// and greens inside [min, max].
#[derive(Debug, Clone)]
pub struct InterlockMonitor {
    timing: SchemeSteps,
    prev: SignalState,
}

impl InterlockMonitor {
    pub fn new(timing: SchemeSteps, initial: SignalState) -> Self {
        Self { timing, prev: initial }
    }

    pub fn observe(&mut self, step: usize, next: SignalState) -> Result<(), InterlockError> {
        let p = self.prev;
        let t = self.timing;
        let bad = || InterlockError::Transition { step, from: p, to: next };
        use SignalMode::*;
        match (p.mode, next.mode) {
            (Green, Green) => {
                if next.phase != p.phase || next.elapsed != p.elapsed + 1 || next.elapsed > t.max_green {
                    return Err(bad());
                }
            }
            (Green, Yellow) => {
                if next.elapsed != 1 || next.phase != p.phase {
                    return Err(bad());
                }
                if p.complete && (p.elapsed < t.min_green || p.elapsed > t.max_green) {
                    return Err(InterlockError::GreenDuration { step, steps: p.elapsed, min: t.min_green, max: t.max_green });
                }
            }
            (Yellow, Yellow) | (AllRed, AllRed) => {
                let limit = if p.mode == Yellow { t.yellow } else { t.all_red };
                if next.phase != p.phase || next.elapsed != p.elapsed + 1 || next.elapsed > limit {
                    return Err(bad());
                }
            }
            (Yellow, AllRed) => {
                if p.elapsed != t.yellow || next.elapsed != 1 || next.phase != p.phase {
                    return Err(bad());
                }
            }
            (AllRed, Green) => {
                if p.elapsed != t.all_red || next.elapsed != 1 {
                    return Err(bad());
                }
            }
            _ => return Err(bad()),
        }
        self.prev = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn timing() -> SchemeSteps {
        SchemeSteps { yellow: 3, all_red: 2, min_green: 5, max_green: 60 }
    }

    fn green(phase: usize, elapsed: u32) -> SignalState {
        SignalState { phase, mode: SignalMode::Green, elapsed, next_phase: phase, complete: true }
    }

    #[test]
    fn extend_keeps_phase_and_counts_up() {
        let mut s = green(0, 10);
        apply_signal_action(&mut s, timing(), 2, &ControlMode::Fps, &SignalAction::Extend).unwrap();
        assert_eq!((s.phase, s.mode, s.elapsed), (0, SignalMode::Green, 11));
    }

    #[test]
    fn max_green_forces_full_interlock() {
        let mut s = green(0, 60);
        let tr = apply_signal_action(&mut s, timing(), 2, &ControlMode::Fps, &SignalAction::Extend).unwrap();
        assert!(tr.forced);
        assert_eq!(tr.green_ended, Some(60));
        let mut modes = vec![(s.mode, s.phase)];
        for _ in 0..5 {
            apply_signal_action(&mut s, timing(), 2, &ControlMode::Fps, &SignalAction::Extend).unwrap();
            modes.push((s.mode, s.phase));
        }
        use SignalMode::*;
        assert_eq!(modes, vec![(Yellow, 0), (Yellow, 0), (Yellow, 0), (AllRed, 0), (AllRed, 0), (Green, 1)]);
        assert_eq!(s.elapsed, 1);
    }

    #[test]
    fn change_below_min_green_is_clamped() {
        let mut s = green(0, 4);
        let tr = apply_signal_action(&mut s, timing(), 2, &ControlMode::Fps, &SignalAction::Change).unwrap();
        assert!(tr.clamped);
        assert_eq!((s.mode, s.elapsed), (SignalMode::Green, 5));
    }

    #[test]
    fn vps_select_and_unknown_phase() {
        let mut s = green(0, 10);
        apply_signal_action(&mut s, timing(), 3, &ControlMode::Vps, &SignalAction::Select(2)).unwrap();
        assert_eq!((s.mode, s.next_phase), (SignalMode::Yellow, 2));
        let mut s = green(0, 10);
        assert_eq!(apply_signal_action(&mut s, timing(), 3, &ControlMode::Vps, &SignalAction::Select(7)), Err(SignalError::UnknownPhase(7)));
        // forced change under VPS goes to the next phase in order, not the request
        let mut s = green(1, 60);
        apply_signal_action(&mut s, timing(), 3, &ControlMode::Vps, &SignalAction::Select(1)).unwrap();
        assert_eq!(s.next_phase, 2);
    }

    #[test]
    fn fps_rejects_select() {
        let mut s = green(0, 10);
        assert!(apply_signal_action(&mut s, timing(), 2, &ControlMode::Fps, &SignalAction::Select(1)).is_err());
    }

    fn two_phase_plan(offset: f64) -> CyclePlan {
        CyclePlan { phases: vec![0, 1], splits_s: vec![30.0, 30.0], cycle_s: 60.0, offset_s: offset }
    }

    #[test]
    fn cycle_plan_windows() {
        let p = two_phase_plan(0.0);
        assert_eq!(apply_cycle_plan(&p, 3.0, 2.0, 15, 1.0).phase, 0);
        let p = two_phase_plan(30.0);
        assert_eq!(apply_cycle_plan(&p, 3.0, 2.0, 15, 1.0).phase, 1);
        let p = two_phase_plan(0.0);
        for k in 0..5 {
            let s = apply_cycle_plan(&p, 3.0, 2.0, 60 * k, 1.0);
            assert_eq!((s.phase, s.mode, s.elapsed), (0, SignalMode::Green, 1));
        }
        // change interval at the end of the split
        let s = apply_cycle_plan(&p, 3.0, 2.0, 25, 1.0);
        assert_eq!((s.phase, s.mode, s.elapsed), (0, SignalMode::Yellow, 1));
        let s = apply_cycle_plan(&p, 3.0, 2.0, 29, 1.0);
        assert_eq!((s.phase, s.mode, s.elapsed), (0, SignalMode::AllRed, 2));
    }

    #[test]
    fn plan_validation() {
        assert!(two_phase_plan(0.0).validate(2).is_ok());
        assert!(two_phase_plan(60.0).validate(2).is_err());
        let mut p = two_phase_plan(0.0);
        p.splits_s[0] = 31.0;
        assert!(p.validate(2).is_err());
        assert!(two_phase_plan(0.0).validate_for(2, timing(), 1.0).is_ok());
        let short = CyclePlan { phases: vec![0, 1], splits_s: vec![8.0, 52.0], cycle_s: 60.0, offset_s: 0.0 };
        assert!(short.validate_for(2, timing(), 1.0).is_err());
    }

    #[test]
    fn quantize_keeps_cycle() {
        let p = CyclePlan { phases: vec![0, 1], splits_s: vec![38.333, 21.667], cycle_s: 60.0, offset_s: 0.4 };
        let q = p.quantized(1.0);
        assert_eq!(q.splits_s, vec![38.0, 22.0]);
        assert_eq!(q.offset_s, 0.0);
        assert!(q.validate(2).is_ok());
    }

    #[test]
    fn monitor_accepts_legal_run_and_rejects_short_yellow() {
        let t = timing();
        let mut s = SignalState::initial();
        let mut m = InterlockMonitor::new(t, s);
        for step in 0..200 {
            let a = if step % 7 == 0 { SignalAction::Change } else { SignalAction::Extend };
            apply_signal_action(&mut s, t, 2, &ControlMode::Fps, &a).unwrap();
            m.observe(step, s).unwrap();
        }
        let mut m = InterlockMonitor::new(t, SignalState { mode: SignalMode::Yellow, elapsed: 2, ..green(0, 0) });
        assert!(m.observe(0, SignalState { mode: SignalMode::AllRed, elapsed: 1, ..green(0, 0) }).is_err());
    }

    #[test]
    fn sequence_checker() {
        let t = SchemeSteps { yellow: 1, all_red: 1, min_green: 2, max_green: 3 };
        let s = green(0, 2);
        use SignalAction::*;
        assert!(check_fps_sequence(s, t, 2, &[Change, Extend, Extend, Extend]).is_ok());
        assert!(check_fps_sequence(s, t, 2, &[Extend, Extend]).is_err()); // must change at max
        assert!(check_fps_sequence(green(0, 1), t, 2, &[Change]).is_err()); // below min
    }
}
