//! Long-term internal simulation: trials driven by the inverse model and the
//! forward models, the corridor criterion, anti-oscillation editing, restart
//! modes and run-level classification.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{parse_err, Result};
use crate::forward_models::{predict_state, tactile_predict, ForwardModels};
use crate::inverse_model::{decide_from_q, render_blob_image, ImVariant, InverseModel};
use crate::rng::seeded_rng;
use crate::sensor::{correct_initial_state, CorrectionModel, Segment, SensoryState};
use crate::world::{apply_motor, ActuationParams, MotorCommand, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorridorCriterion {
    pub max_steps: usize,
    pub max_turns: usize,
    pub max_turn_imbalance: usize,
    pub max_trials: usize,
    pub im_invocation_cap: usize,
}

impl Default for CorridorCriterion {
    fn default() -> Self {
        Self {
            max_steps: 60,
            max_turns: 20,
            max_turn_imbalance: 10,
            max_trials: 30,
            im_invocation_cap: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    Collision,
    TurnLimit,
    Imbalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionStatus {
    Ok,
    Violated(Violation),
}

pub fn check_corridor_criterion(sequence: &[MotorCommand], collision: bool, crit: &CorridorCriterion) -> CriterionStatus {
    if collision {
        return CriterionStatus::Violated(Violation::Collision);
    }
    let left = sequence.iter().filter(|&&m| m == MotorCommand::Left).count();
    let right = sequence.iter().filter(|&&m| m == MotorCommand::Right).count();
    if left + right > crit.max_turns {
        CriterionStatus::Violated(Violation::TurnLimit)
    } else if left.abs_diff(right) > crit.max_turn_imbalance {
        CriterionStatus::Violated(Violation::Imbalance)
    } else {
        CriterionStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AntiOscillation {
    None,
    Continue,
    Forward,
    ForwardContinue,
}

impl AntiOscillation {
    pub const ALL: [AntiOscillation; 4] = [
        AntiOscillation::None,
        AntiOscillation::Forward,
        AntiOscillation::ForwardContinue,
        AntiOscillation::Continue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AntiOscillation::None => "none",
            AntiOscillation::Continue => "continue",
            AntiOscillation::Forward => "forward",
            AntiOscillation::ForwardContinue => "forward-continue",
        }
    }

    fn deletes_turns(self) -> bool {
        matches!(self, AntiOscillation::Forward | AntiOscillation::ForwardContinue)
    }
}

impl FromStr for AntiOscillation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => Ok(AntiOscillation::None),
            "continue" => Ok(AntiOscillation::Continue),
            "forward" => Ok(AntiOscillation::Forward),
            "forward-continue" => Ok(AntiOscillation::ForwardContinue),
            other => Err(format!("unknown anti-oscillation mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RestartMode {
    Full,
    Partial,
}

impl RestartMode {
    pub const ALL: [RestartMode; 2] = [RestartMode::Full, RestartMode::Partial];

    pub fn name(self) -> &'static str {
        match self {
            RestartMode::Full => "full",
            RestartMode::Partial => "partial",
        }
    }
}

impl FromStr for RestartMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(RestartMode::Full),
            "partial" => Ok(RestartMode::Partial),
            other => Err(format!("unknown restart mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskCondition {
    pub im: ImVariant,
    pub anti_osc: AntiOscillation,
    pub restart: RestartMode,
}

impl TaskCondition {
    pub fn new(im: ImVariant, anti_osc: AntiOscillation, restart: RestartMode) -> Self {
        Self { im, anti_osc, restart }
    }

    /// All 24 conditions; the position in this list is the condition index.
    pub fn all() -> Vec<TaskCondition> {
        let mut out = Vec::with_capacity(24);
        for im in ImVariant::ALL {
            for anti_osc in AntiOscillation::ALL {
                for restart in RestartMode::ALL {
                    out.push(TaskCondition { im, anti_osc, restart });
                }
            }
        }
        out
    }

    pub fn index(&self) -> usize {
        Self::all().iter().position(|c| c == self).expect("every condition is listed")
    }
}

impl fmt::Display for TaskCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.im, self.anti_osc.name(), self.restart.name())
    }
}

impl FromStr for TaskCondition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(format!("condition '{s}' must look like det/forward-continue/partial"));
        }
        Ok(TaskCondition {
            im: parts[0].parse()?,
            anti_osc: parts[1].parse()?,
            restart: parts[2].parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    CorridorFound,
    TurnLimitViolated,
    ImbalanceViolated,
    CollisionPredicted,
    InvocationCapReached,
}

impl Outcome {
    fn from_violation(v: Violation) -> Self {
        match v {
            Violation::Collision => Outcome::CollisionPredicted,
            Violation::TurnLimit => Outcome::TurnLimitViolated,
            Violation::Imbalance => Outcome::ImbalanceViolated,
        }
    }
}

/// State after one appended command of the final (edited) sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub command: MotorCommand,
    pub collision: bool,
    pub state: SensoryState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub sequence: Vec<MotorCommand>,
    pub outcome: Outcome,
    pub fm_invocations: usize,
    pub im_invocations: usize,
    /// Net simulated displacement `(forward, left)` in meters in the frame of
    /// the initial pose.
    pub displacement: (f64, f64),
    pub trace: Option<Vec<TraceStep>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    Corridor,
    DeadEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub classification: Classification,
    pub trials: Vec<TrialResult>,
    pub fm_invocations: usize,
    pub im_invocations: usize,
    /// Corrected initial state shared by all trials.
    pub initial_state: SensoryState,
}

/// Everything a simulation needs besides the initial observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimModels {
    pub fms: ForwardModels,
    pub im: InverseModel,
    /// Initial-state correction; `None` skips it.
    pub correction: Option<CorrectionModel>,
    pub actuation: ActuationParams,
}

/// Positions visited when executing `seq` from the origin facing +x.
pub fn integrate_path(seq: &[MotorCommand], start: Pose, actuation: &ActuationParams) -> Vec<Pose> {
    let mut pose = start;
    let mut out = Vec::with_capacity(seq.len() + 1);
    out.push(pose);
    for &m in seq {
        pose = apply_motor(pose, m, actuation);
        out.push(pose);
    }
    out
}

struct TrialState<'a> {
    models: &'a SimModels,
    crit: &'a CorridorCriterion,
    state: SensoryState,
    seq: Vec<MotorCommand>,
    fm_invocations: usize,
    trace: Option<Vec<TraceStep>>,
}

impl TrialState<'_> {
    fn predict(&mut self, cmd: MotorCommand) -> SensoryState {
        self.fm_invocations += 1;
        predict_state(&self.models.fms.visual, &self.state, cmd, &self.models.fms.corrector)
    }

    /// Appends a command, advancing the predicted state, and checks the
    /// criterion on the extended sequence.
    fn push(&mut self, cmd: MotorCommand) -> CriterionStatus {
        let next = self.predict(cmd);
        let collision = tactile_predict(&self.models.fms.tactile, &next);
        self.push_predicted(cmd, next, collision)
    }

    fn push_predicted(&mut self, cmd: MotorCommand, next: SensoryState, collision: bool) -> CriterionStatus {
        self.seq.push(cmd);
        if let Some(t) = &mut self.trace {
            t.push(TraceStep { command: cmd, collision, state: next.clone() });
        }
        self.state = next;
        check_corridor_criterion(&self.seq, collision, self.crit)
    }

    fn pop(&mut self) {
        self.seq.pop();
        if let Some(t) = &mut self.trace {
            t.pop();
        }
    }
}

/// Outcome of handling an IM decision that may oscillate.
enum Edit {
    /// Append this command normally.
    Append(MotorCommand),
    /// The edit already extended the sequence; this is the last status.
    Done(CriterionStatus),
    /// Both turns were removed and nothing was appended.
    Removed,
}

/// Handles a decision `cmd` that would follow the current sequence tail.
/// Only acts when the tail and `cmd` are opposite turns.
fn apply_anti_oscillation_inner(mode: AntiOscillation, cmd: MotorCommand, ts: &mut TrialState) -> Edit {
    let last = match ts.seq.last() {
        Some(&l) if l.is_turn() && Some(cmd) == l.opposite() => l,
        _ => return Edit::Append(cmd),
    };
    match mode {
        AntiOscillation::None => Edit::Append(cmd),
        AntiOscillation::Continue => Edit::Append(last),
        AntiOscillation::Forward | AntiOscillation::ForwardContinue => {
            // the second turn undoes the first on the predicted state
            ts.state = ts.predict(cmd);
            ts.pop();
            let preview = ts.predict(MotorCommand::Forward);
            if !tactile_predict(&ts.models.fms.tactile, &preview) {
                return Edit::Done(ts.push_predicted(MotorCommand::Forward, preview, false));
            }
            if mode == AntiOscillation::ForwardContinue {
                let status = ts.push(last);
                if status != CriterionStatus::Ok {
                    return Edit::Done(status);
                }
                return Edit::Done(ts.push(last));
            }
            Edit::Removed
        }
    }
}

/// Applies one anti-oscillation edit to `sequence` ending in `state`, for
/// the IM decision `cmd`. Returns the edited sequence and predicted state.
pub fn apply_anti_oscillation(
    mode: AntiOscillation,
    sequence: &[MotorCommand],
    state: &SensoryState,
    cmd: MotorCommand,
    models: &SimModels,
) -> (Vec<MotorCommand>, SensoryState) {
    let crit = CorridorCriterion {
        max_turns: usize::MAX,
        max_turn_imbalance: usize::MAX,
        ..CorridorCriterion::default()
    };
    let mut ts = TrialState {
        models,
        crit: &crit,
        state: state.clone(),
        seq: sequence.to_vec(),
        fm_invocations: 0,
        trace: None,
    };
    if let Edit::Append(c) = apply_anti_oscillation_inner(mode, cmd, &mut ts) {
        ts.push(c);
    }
    (ts.seq, ts.state)
}

fn finish(ts: TrialState, outcome: Outcome, im_invocations: usize) -> TrialResult {
    let end = *integrate_path(&ts.seq, Pose::new(0.0, 0.0, 0.0), &ts.models.actuation)
        .last()
        .expect("path has a start");
    TrialResult {
        sequence: ts.seq,
        outcome,
        fm_invocations: ts.fm_invocations,
        im_invocations,
        displacement: (end.x, end.y),
        trace: ts.trace,
    }
}

/// One simulation trial from an already corrected initial state.
pub fn run_trial(
    initial: &SensoryState,
    models: &SimModels,
    condition: &TaskCondition,
    crit: &CorridorCriterion,
    rng: &mut impl Rng,
    resume_prefix: Option<&[MotorCommand]>,
    record_trace: bool,
) -> TrialResult {
    run_trial_with(initial, models, condition.anti_osc, crit, resume_prefix, record_trace, |state, _| {
        let q = match condition.im {
            ImVariant::Random => [0.5; 3],
            _ => models.im.pair_q(&render_blob_image(state)),
        };
        decide_from_q(condition.im, &q, &models.im.random_probs, rng)
    })
}

/// Trial loop with an arbitrary decision source, called with the current
/// predicted state and sequence.
pub fn run_trial_with(
    initial: &SensoryState,
    models: &SimModels,
    anti_osc: AntiOscillation,
    crit: &CorridorCriterion,
    resume_prefix: Option<&[MotorCommand]>,
    record_trace: bool,
    mut decide: impl FnMut(&SensoryState, &[MotorCommand]) -> MotorCommand,
) -> TrialResult {
    let mut ts = TrialState {
        models,
        crit,
        state: initial.clone(),
        seq: Vec::with_capacity(crit.max_steps),
        fm_invocations: 0,
        trace: record_trace.then(Vec::new),
    };
    for &cmd in resume_prefix.unwrap_or(&[]) {
        if let CriterionStatus::Violated(v) = ts.push(cmd) {
            return finish(ts, Outcome::from_violation(v), 0);
        }
    }
    let mut im_invocations = 0;
    loop {
        if ts.seq.len() >= crit.max_steps {
            return finish(ts, Outcome::CorridorFound, im_invocations);
        }
        if im_invocations >= crit.im_invocation_cap {
            return finish(ts, Outcome::InvocationCapReached, im_invocations);
        }
        let cmd = decide(&ts.state, &ts.seq);
        im_invocations += 1;
        let status = match apply_anti_oscillation_inner(anti_osc, cmd, &mut ts) {
            Edit::Append(c) => ts.push(c),
            Edit::Done(s) => s,
            Edit::Removed => CriterionStatus::Ok,
        };
        if let CriterionStatus::Violated(v) = status {
            return finish(ts, Outcome::from_violation(v), im_invocations);
        }
    }
}

/// Restart prefix for the trial after `previous`: a random cut within the
/// first two thirds followed by three rotations in a random direction.
/// Under turn-deleting anti-oscillation modes a kept trailing turn opposite
/// to the injected rotations is dropped.
pub fn make_restart_prefix(
    mode: RestartMode,
    anti_osc: AntiOscillation,
    previous: &[MotorCommand],
    rng: &mut impl Rng,
) -> Option<Vec<MotorCommand>> {
    match mode {
        RestartMode::Full => None,
        RestartMode::Partial => {
            let limit = 2 * previous.len() / 3;
            let k = if limit == 0 { 0 } else { rng.random_range(0..limit) };
            let dir = if rng.random::<bool>() { MotorCommand::Left } else { MotorCommand::Right };
            let mut prefix = previous[..k].to_vec();
            while anti_osc.deletes_turns() && prefix.last().copied() == dir.opposite() {
                prefix.pop();
            }
            prefix.extend([dir; 3]);
            Some(prefix)
        }
    }
}

/// A full simulation run: correct the initial observation once, then run
/// trials until one finds a passage or the trial budget is spent.
pub fn run_simulation(
    observation: &SensoryState,
    models: &SimModels,
    condition: &TaskCondition,
    crit: &CorridorCriterion,
    rng: &mut impl Rng,
    record_trace: bool,
) -> RunResult {
    let initial = match &models.correction {
        Some(c) => correct_initial_state(observation, c),
        None => observation.clone(),
    };
    let mut trials: Vec<TrialResult> = Vec::new();
    for _ in 0..crit.max_trials {
        let mut trial_rng = seeded_rng(rng.random());
        let prefix = trials
            .last()
            .and_then(|prev| make_restart_prefix(condition.restart, condition.anti_osc, &prev.sequence, &mut trial_rng));
        let t = run_trial(&initial, models, condition, crit, &mut trial_rng, prefix.as_deref(), record_trace);
        let found = t.outcome == Outcome::CorridorFound;
        trials.push(t);
        if found {
            break;
        }
    }
    let classification = if trials.last().is_some_and(|t| t.outcome == Outcome::CorridorFound) {
        Classification::Corridor
    } else {
        Classification::DeadEnd
    };
    RunResult {
        classification,
        fm_invocations: trials.iter().map(|t| t.fm_invocations).sum(),
        im_invocations: trials.iter().map(|t| t.im_invocations).sum(),
        trials,
        initial_state: initial,
    }
}

/// One trial of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub initial: SensoryState,
    pub steps: Vec<TraceStep>,
}

impl TrialTrace {
    pub fn commands(&self) -> Vec<MotorCommand> {
        self.steps.iter().map(|s| s.command).collect()
    }
}

fn write_segments<W: Write>(out: &mut W, segs: &[Segment]) -> std::io::Result<()> {
    for s in segs {
        writeln!(out, "seg {} {} {} {} {}", s.obstacle_id, s.w, s.x, s.y, s.h)?;
    }
    Ok(())
}

/// Writes `trial <n> step <t> cmd <c> collision <0|1>` records, each
/// followed by the predicted segments. Step 0 (command `-`) is the corrected
/// initial state.
pub fn write_trace<W: Write>(run: &RunResult, mut out: W) -> std::io::Result<()> {
    for (n, trial) in run.trials.iter().enumerate() {
        writeln!(out, "trial {n} step 0 cmd - collision 0")?;
        write_segments(&mut out, &run.initial_state.segments)?;
        for (t, step) in trial.trace.iter().flatten().enumerate() {
            writeln!(out, "trial {n} step {} cmd {} collision {}", t + 1, step.command, step.collision as u8)?;
            write_segments(&mut out, &step.state.segments)?;
        }
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TrialTrace>> {
    let mut trials: Vec<TrialTrace> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["trial", n, "step", t, "cmd", c, "collision", hit] => {
                let n: usize = n.parse().map_err(|_| parse_err(lineno, "bad trial index"))?;
                let t: usize = t.parse().map_err(|_| parse_err(lineno, "bad step index"))?;
                if t == 0 {
                    if n != trials.len() {
                        return Err(parse_err(lineno, "trials must be consecutive"));
                    }
                    trials.push(TrialTrace { initial: SensoryState::new(0, Vec::new()), steps: Vec::new() });
                    continue;
                }
                let trial = trials
                    .get_mut(n)
                    .ok_or_else(|| parse_err(lineno, "step before its trial header"))?;
                let command = c
                    .chars()
                    .next()
                    .and_then(MotorCommand::from_char)
                    .ok_or_else(|| parse_err(lineno, format!("bad command '{c}'")))?;
                trial.steps.push(TraceStep {
                    command,
                    collision: *hit == "1",
                    state: SensoryState::new(t, Vec::new()),
                });
            }
            ["seg", id, w, x, y, h] => {
                let trial = trials.last_mut().ok_or_else(|| parse_err(lineno, "segment before any trial"))?;
                let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(lineno, format!("bad number '{s}'")));
                let seg = Segment {
                    obstacle_id: id.parse().map_err(|_| parse_err(lineno, "bad segment id"))?,
                    w: num(w)?,
                    x: num(x)?,
                    y: num(y)?,
                    h: num(h)?,
                };
                match trial.steps.last_mut() {
                    Some(step) => step.state.segments.push(seg),
                    None => trial.initial.segments.push(seg),
                }
            }
            _ => return Err(parse_err(lineno, format!("unrecognized line '{line}'"))),
        }
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_models::TactileFm;
    use crate::inverse_model::{RegressionModule, BLOB_PIXELS, MODULE_PAIRS, RANDOM_WALK_PROBS};
    use rand::Rng;
    use MotorCommand::*;

    /// An IM whose three outputs are constants, independent of the blob.
    fn constant_im(q: [f64; 3]) -> InverseModel {
        let modules = [0, 1, 2].map(|i| {
            RegressionModule::new(MODULE_PAIRS[i], q[i], vec![0.0; BLOB_PIXELS], vec![0.0; BLOB_PIXELS]).unwrap()
        });
        InverseModel { modules, variant: ImVariant::Det, random_probs: RANDOM_WALK_PROBS, n_components: 1 }
    }

    fn models(q: [f64; 3]) -> SimModels {
        let mut fms = ForwardModels::published();
        fms.corrector.enabled = false;
        SimModels {
            fms,
            im: constant_im(q),
            correction: None,
            actuation: ActuationParams::default(),
        }
    }

    fn cond(im: ImVariant, a: AntiOscillation, r: RestartMode) -> TaskCondition {
        TaskCondition::new(im, a, r)
    }

    fn seg(w: f64, x: f64, y: f64) -> Segment {
        Segment { obstacle_id: 0, w, x, y, h: 20.0 }
    }

    #[test]
    fn criterion_examples() {
        let c = CorridorCriterion::default();
        assert_eq!(check_corridor_criterion(&[Forward; 60], false, &c), CriterionStatus::Ok);
        let mut turns = vec![Left; 11];
        turns.extend([Right; 10]);
        assert_eq!(check_corridor_criterion(&turns, false, &c), CriterionStatus::Violated(Violation::TurnLimit));
        let mut imb = vec![Left; 15];
        imb.extend([Right; 4]);
        assert_eq!(check_corridor_criterion(&imb, false, &c), CriterionStatus::Violated(Violation::Imbalance));
        assert_eq!(check_corridor_criterion(&[], true, &c), CriterionStatus::Violated(Violation::Collision));
    }

    #[test]
    fn criterion_matches_brute_force_counter() {
        let c = CorridorCriterion::default();
        let mut rng = seeded_rng(21);
        for _ in 0..10_000 {
            let len = rng.random_range(0..=60);
            let p_turn = rng.random_range(0.0..0.8);
            let seq: Vec<MotorCommand> = (0..len)
                .map(|_| {
                    if rng.random_bool(p_turn) {
                        if rng.random_bool(0.6) { Left } else { Right }
                    } else {
                        Forward
                    }
                })
                .collect();
            let hit = rng.random_bool(0.05);
            let (mut l, mut r) = (0i64, 0i64);
            for m in &seq {
                match m {
                    Left => l += 1,
                    Right => r += 1,
                    Forward => {}
                }
            }
            let ok = !hit && l + r <= 20 && (l - r).abs() <= 10;
            assert_eq!(check_corridor_criterion(&seq, hit, &c) == CriterionStatus::Ok, ok);
        }
    }

    #[test]
    fn condition_grid_and_parsing() {
        let all = TaskCondition::all();
        assert_eq!(all.len(), 24);
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.to_string().parse::<TaskCondition>().unwrap(), *c);
        }
        let c: TaskCondition = "det/forward-continue/partial".parse().unwrap();
        assert_eq!(c, cond(ImVariant::Det, AntiOscillation::ForwardContinue, RestartMode::Partial));
        assert!("det/forward".parse::<TaskCondition>().is_err());
    }

    #[test]
    fn anti_oscillation_edits() {
        let m = models([0.5; 3]);
        let st = SensoryState::default();
        let seq = [Forward, Left];
        let (s, _) = apply_anti_oscillation(AntiOscillation::Forward, &seq, &st, Right, &m);
        assert_eq!(s, vec![Forward, Forward]);
        let (s, _) = apply_anti_oscillation(AntiOscillation::Continue, &seq, &st, Right, &m);
        assert_eq!(s, vec![Forward, Left, Left]);
        let (s, _) = apply_anti_oscillation(AntiOscillation::None, &seq, &st, Right, &m);
        assert_eq!(s, vec![Forward, Left, Right]);
        // not an oscillation: left after left is appended as is
        let (s, _) = apply_anti_oscillation(AntiOscillation::Forward, &seq, &st, Left, &m);
        assert_eq!(s, vec![Forward, Left, Left]);
    }

    #[test]
    fn blocked_forward_edits() {
        let m = models([0.5; 3]);
        // a wide segment dead ahead makes the forward preview collide
        let st = SensoryState::new(0, vec![seg(214.0, 0.0, 150.0)]);
        let seq = [Forward, Left];
        let (s, _) = apply_anti_oscillation(AntiOscillation::Forward, &seq, &st, Right, &m);
        assert_eq!(s, vec![Forward]);
        let (s, _) = apply_anti_oscillation(AntiOscillation::ForwardContinue, &seq, &st, Right, &m);
        assert_eq!(s, vec![Forward, Left, Left]);
    }

    #[test]
    fn det_in_open_space_finds_a_corridor() {
        let m = models([0.9, 0.9, 0.5]);
        let c = cond(ImVariant::Det, AntiOscillation::None, RestartMode::Full);
        let t = run_trial(&SensoryState::default(), &m, &c, &CorridorCriterion::default(), &mut seeded_rng(0), None, false);
        assert_eq!(t.outcome, Outcome::CorridorFound);
        assert_eq!(t.sequence, vec![Forward; 60]);
        assert_eq!(t.fm_invocations, 60);
        assert_eq!(t.im_invocations, 60);
        assert!((t.displacement.0 - 6.0).abs() < 1e-9);
    }

    #[test]
    fn forward_mode_deadlock_hits_the_invocation_cap() {
        // left/right alternation in front of a wall: every pair is deleted and
        // the blocked forward is never inserted
        let mut m = models([0.5; 3]);
        m.fms.tactile = TactileFm { threshold: 200.0 };
        let st = SensoryState::new(0, vec![seg(195.0, 0.0, 150.0)]);
        let crit = CorridorCriterion::default();
        let t = run_trial_with(&st, &m, AntiOscillation::Forward, &crit, None, false, |_, seq| {
            if seq.last() == Some(&Left) { Right } else { Left }
        });
        assert_eq!(t.outcome, Outcome::InvocationCapReached);
        assert_eq!(t.im_invocations, 300);
        assert!(t.sequence.len() <= 1);
    }

    #[test]
    fn forward_modes_never_leave_adjacent_opposite_turns() {
        let m = models([0.5; 3]);
        let crit = CorridorCriterion::default();
        let mut rng = seeded_rng(5);
        for anti in [AntiOscillation::Forward, AntiOscillation::ForwardContinue] {
            for _ in 0..50 {
                let st = SensoryState::new(0, vec![seg(rng.random_range(40.0..200.0), rng.random_range(-200.0..200.0), 130.0)]);
                let mut drng = seeded_rng(rng.random());
                let t = run_trial_with(&st, &m, anti, &crit, None, false, |_, _| ALL_CMDS[drng.random_range(0..3)]);
                assert!(
                    t.sequence.windows(2).all(|w| !(w[0].is_turn() && Some(w[1]) == w[0].opposite())),
                    "{:?}",
                    t.sequence
                );
            }
        }
    }

    const ALL_CMDS: [MotorCommand; 3] = MotorCommand::ALL;

    #[test]
    fn trials_are_deterministic() {
        let m = models([0.6, 0.4, 0.5]);
        let c = cond(ImVariant::Prob, AntiOscillation::ForwardContinue, RestartMode::Partial);
        let st = SensoryState::new(0, vec![seg(120.0, 100.0, 120.0)]);
        let a = run_simulation(&st, &m, &c, &CorridorCriterion::default(), &mut seeded_rng(3), true);
        let b = run_simulation(&st, &m, &c, &CorridorCriterion::default(), &mut seeded_rng(3), true);
        assert_eq!(a, b);
    }

    #[test]
    fn restart_prefixes() {
        let mut rng = seeded_rng(1);
        assert_eq!(make_restart_prefix(RestartMode::Full, AntiOscillation::None, &[Forward; 60], &mut rng), None);
        for _ in 0..200 {
            let p = make_restart_prefix(RestartMode::Partial, AntiOscillation::None, &[Forward; 60], &mut rng).unwrap();
            let k = p.len() - 3;
            assert!(k < 40);
            assert!(p[..k].iter().all(|&m| m == Forward));
            assert!(p[k..].iter().all(|&m| m == p[k]) && p[k].is_turn());
        }
        let p = make_restart_prefix(RestartMode::Partial, AntiOscillation::None, &[], &mut rng).unwrap();
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn partial_prefix_never_creates_oscillation_under_forward_modes() {
        let mut rng = seeded_rng(2);
        let prev = [Forward, Left, Left, Forward, Right, Right, Forward, Left, Forward];
        for _ in 0..500 {
            let p = make_restart_prefix(RestartMode::Partial, AntiOscillation::Forward, &prev, &mut rng).unwrap();
            assert!(p.windows(2).all(|w| !(w[0].is_turn() && Some(w[1]) == w[0].opposite())), "{p:?}");
        }
    }

    #[test]
    fn det_full_repeats_the_same_trial() {
        // DET never consumes randomness and FULL restarts from scratch
        let m = models([0.4, 0.6, 0.5]);
        let c = cond(ImVariant::Det, AntiOscillation::Continue, RestartMode::Full);
        let st = SensoryState::new(0, vec![seg(150.0, -80.0, 130.0), seg(150.0, 80.0, 130.0)]);
        let r = run_simulation(&st, &m, &c, &CorridorCriterion::default(), &mut seeded_rng(4), false);
        if r.classification == Classification::DeadEnd {
            assert_eq!(r.trials.len(), 30);
            assert!(r.trials.windows(2).all(|w| w[0] == w[1]));
        } else {
            assert_eq!(r.trials.len(), 1);
        }
    }

    #[test]
    fn run_stops_at_first_success_and_sums_invocations() {
        let m = models([0.5; 3]);
        let c = cond(ImVariant::Random, AntiOscillation::Forward, RestartMode::Full);
        let st = SensoryState::default();
        let r = run_simulation(&st, &m, &c, &CorridorCriterion::default(), &mut seeded_rng(8), false);
        let found = r.trials.iter().filter(|t| t.outcome == Outcome::CorridorFound).count();
        assert_eq!(found, (r.classification == Classification::Corridor) as usize);
        if found == 1 {
            assert_eq!(r.trials.last().unwrap().outcome, Outcome::CorridorFound);
        }
        assert_eq!(r.fm_invocations, r.trials.iter().map(|t| t.fm_invocations).sum::<usize>());
    }

    #[test]
    fn trace_round_trip() {
        let m = models([0.7, 0.7, 0.5]);
        let c = cond(ImVariant::Det, AntiOscillation::ForwardContinue, RestartMode::Partial);
        let st = SensoryState::new(0, vec![seg(60.0, 300.0, 105.0)]);
        let r = run_simulation(&st, &m, &c, &CorridorCriterion::default(), &mut seeded_rng(1), true);
        let mut buf = Vec::new();
        write_trace(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("trial 0 step 0 cmd - collision 0\nseg 0 "));
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), r.trials.len());
        assert_eq!(back[0].commands(), r.trials[0].sequence);
        assert_eq!(back[0].initial.segments, r.initial_state.segments);
    }
}
