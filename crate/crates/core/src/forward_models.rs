//! Visual and tactile forward models: data collection, fitting, prediction,
//! the long-term prediction corrector and iterative evaluation.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::linalg::{is_constant, least_squares, median, rms};
use crate::sensor::{
    degrade_observation, project_scene, wrap_x, CameraModel, DegradationConfig, Segment, SensoryState,
    PANORAMA_WIDTH,
};
use crate::world::{
    apply_motor, check_collision, ActuationParams, MotorCommand, ObstacleDisk, Pose, SceneLabel, WorldScene,
    DEFAULT_BUMPER_RADIUS, DEFAULT_OBSTACLE_HEIGHT, DEFAULT_OBSTACLE_RADIUS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Published,
    SyntheticFit,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Published => "published",
            Provenance::SyntheticFit => "synthetic_fit",
        }
    }
}

/// `Δ = trig(2πx/W)·(a·y² + b·y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTerm {
    pub a: f64,
    pub b: f64,
}

impl QuadTerm {
    pub fn eval(&self, y: f64) -> f64 {
        self.a * y * y + self.b * y
    }
}

/// Per-feature deltas `(Δw, Δx, Δy)`.
pub type Delta = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VisualFm {
    pub rot_left: Delta,
    pub rot_right: Delta,
    pub fwd_w: QuadTerm,
    pub fwd_x: QuadTerm,
    pub fwd_y: QuadTerm,
    pub image_width: f64,
    pub provenance: Provenance,
    /// Residual RMS of the forward fit for `(w, x, y)`.
    pub residual_rms: [f64; 3],
}

impl VisualFm {
    pub fn published() -> Self {
        Self {
            rot_left: [0.0, 60.0, 0.0],
            rot_right: [0.0, -60.0, 0.0],
            fwd_w: QuadTerm { a: 0.00501, b: -0.482 },
            fwd_x: QuadTerm { a: 0.00555, b: -0.473 },
            fwd_y: QuadTerm { a: 0.00123, b: -0.118 },
            image_width: PANORAMA_WIDTH,
            provenance: Provenance::Published,
            residual_rms: [0.0; 3],
        }
    }

    pub fn delta(&self, seg: &Segment, cmd: MotorCommand) -> Delta {
        match cmd {
            MotorCommand::Left => self.rot_left,
            MotorCommand::Right => self.rot_right,
            MotorCommand::Forward => {
                let phase = TAU * seg.x / self.image_width;
                let (s, c) = phase.sin_cos();
                [c * self.fwd_w.eval(seg.y), s * self.fwd_x.eval(seg.y), c * self.fwd_y.eval(seg.y)]
            }
        }
    }
}

/// Pulls predicted `(w, y)` back onto their joint linear relationship.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionCorrector {
    pub inv_slope: f64,
    pub inv_intercept: f64,
    pub fwd_slope: f64,
    pub fwd_intercept: f64,
    pub enabled: bool,
}

impl PredictionCorrector {
    pub fn published() -> Self {
        Self {
            inv_slope: 3.68,
            inv_intercept: -318.2,
            fwd_slope: 0.265,
            fwd_intercept: 87.0,
            enabled: true,
        }
    }

    /// Fits both regression lines (`w` on `y` and `y` on `w`) to observed
    /// segments.
    pub fn fit(data: &[Segment]) -> Result<Self> {
        let ws: Vec<f64> = data.iter().map(|s| s.w).collect();
        let ys: Vec<f64> = data.iter().map(|s| s.y).collect();
        if is_constant(&ws) || is_constant(&ys) {
            return Err(Error::DegenerateDesign("corrector data has a constant feature".into()));
        }
        let line = |x: &[f64], t: &[f64]| -> Result<(f64, f64)> {
            let a = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { x[i] } else { 1.0 });
            let b = least_squares(&a, &DVector::from_column_slice(t))?;
            Ok((b[0], b[1]))
        };
        let (inv_slope, inv_intercept) = line(&ys, &ws)?;
        let (fwd_slope, fwd_intercept) = line(&ws, &ys)?;
        Ok(Self {
            inv_slope,
            inv_intercept,
            fwd_slope,
            fwd_intercept,
            enabled: true,
        })
    }

    pub fn with_enabled(self, enabled: bool) -> Self {
        Self { enabled, ..self }
    }
}

/// `ŵ' = inv(ŷ)`, `ŵ_corr = (ŵ + ŵ')/2`, `ŷ_corr = fwd(ŵ_corr)`.
pub fn correct_prediction(w: f64, y: f64, c: &PredictionCorrector) -> (f64, f64) {
    let w_from_y = c.inv_slope * y + c.inv_intercept;
    let w_corr = 0.5 * (w + w_from_y);
    (w_corr, c.fwd_slope * w_corr + c.fwd_intercept)
}

pub fn fm_predict(fm: &VisualFm, seg: &Segment, cmd: MotorCommand, corrector: &PredictionCorrector) -> Segment {
    let d = fm.delta(seg, cmd);
    let mut w = seg.w + d[0];
    let mut y = seg.y + d[2];
    if corrector.enabled {
        (w, y) = correct_prediction(w, y, corrector);
    }
    Segment {
        obstacle_id: seg.obstacle_id,
        w,
        x: wrap_x(seg.x + d[1], fm.image_width),
        y,
        h: seg.h,
    }
}

/// Predicts every segment of `state` one step ahead.
pub fn predict_state(
    fm: &VisualFm,
    state: &SensoryState,
    cmd: MotorCommand,
    corrector: &PredictionCorrector,
) -> SensoryState {
    SensoryState::new(
        state.step + 1,
        state.segments.iter().map(|s| fm_predict(fm, s, cmd, corrector)).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TactileFm {
    pub threshold: f64,
}

impl TactileFm {
    pub fn published() -> Self {
        Self { threshold: 215.0 }
    }
}

pub fn tactile_predict(tfm: &TactileFm, state: &SensoryState) -> bool {
    state.segments.iter().any(|s| s.w > tfm.threshold)
}

/// Width of a standard obstacle touching the virtual bumper, straight ahead.
pub fn calibrate_tactile_threshold(camera: &CameraModel, bumper_radius: f64) -> Result<TactileFm> {
    let d = bumper_radius + DEFAULT_OBSTACLE_RADIUS;
    if !(bumper_radius > 0.0) || d > camera.max_range {
        return Err(Error::OutOfCalibrationRange(format!(
            "bumper radius {bumper_radius} m puts the contact distance outside (0, {}] m",
            camera.max_range
        )));
    }
    let scene = WorldScene {
        obstacles: vec![ObstacleDisk::new(0, (d, 0.0))],
        robot_start: Pose::new(0.0, 0.0, 0.0),
        label: SceneLabel::Unlabeled,
        extent: (d + 1.0, 1.0),
    };
    let obs = project_scene(&scene, &scene.robot_start, camera);
    let seg = obs
        .state
        .segment(0)
        .ok_or_else(|| Error::OutOfCalibrationRange("calibration obstacle not visible".into()))?;
    Ok(TactileFm { threshold: seg.w })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmExample {
    pub segment: Segment,
    pub command: MotorCommand,
    pub delta: Delta,
}

/// A ground-truth command sequence with the observation before every step
/// and after the last one (`states.len() == commands.len() + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FmSequence {
    pub commands: Vec<MotorCommand>,
    pub states: Vec<SensoryState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmDataConfig {
    pub sequences: usize,
    /// Sequence lengths are drawn uniformly from this inclusive range.
    pub length: (usize, usize),
    /// Probabilities of Forward, Left, Right.
    pub command_probs: [f64; 3],
    pub max_obstacles: usize,
    /// Obstacle distances are stratified across sequences over this range.
    pub distance: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for FmDataConfig {
    fn default() -> Self {
        Self {
            sequences: 120,
            length: (30, 80),
            command_probs: [0.56, 0.205, 0.235],
            max_obstacles: 2,
            distance: (0.7, 4.2),
            noise_sigma: 1.0,
        }
    }
}

fn sample_command(probs: &[f64; 3], rng: &mut impl Rng) -> MotorCommand {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (cmd, p) in MotorCommand::ALL.iter().zip(probs) {
        if u < *p {
            return *cmd;
        }
        u -= p;
    }
    MotorCommand::Right
}

/// Drives random command sequences near one or two obstacles and records
/// the observations. Forward moves that would hit an obstacle are replaced
/// by a random turn, so the recorded commands are collision-free.
pub fn collect_fm_sequences(
    cfg: &FmDataConfig,
    camera: &CameraModel,
    actuation: &ActuationParams,
    rng: &mut impl Rng,
) -> Vec<FmSequence> {
    let degrade = DegradationConfig {
        noise_sigma: cfg.noise_sigma,
        strip_threshold: 0.0,
    };
    let (lo, hi) = cfg.distance;
    (0..cfg.sequences)
        .map(|k| {
            let frac = (k as f64 + rng.random::<f64>()) / cfg.sequences.max(1) as f64;
            let d0 = lo + frac * (hi - lo);
            let n_obs = rng.random_range(1..=cfg.max_obstacles.max(1));
            let robot = Pose::new(0.0, 0.0, rng.random_range(0.0..TAU));
            let mut obstacles: Vec<ObstacleDisk> = Vec::new();
            for id in 0..n_obs as u32 {
                for _ in 0..50 {
                    let d = if id == 0 { d0 } else { rng.random_range(lo..hi) };
                    let bearing = robot.heading + rng.random_range(-PI / 3.0..PI / 3.0);
                    let cand = ObstacleDisk {
                        height: DEFAULT_OBSTACLE_HEIGHT,
                        ..ObstacleDisk::new(id, (d * bearing.cos(), d * bearing.sin()))
                    };
                    if obstacles.iter().all(|o| o.surface_gap(&cand) > 0.3) {
                        obstacles.push(cand);
                        break;
                    }
                }
            }
            let scene = WorldScene {
                obstacles,
                robot_start: robot,
                label: SceneLabel::Unlabeled,
                extent: (f64::INFINITY, f64::INFINITY),
            };
            let len = rng.random_range(cfg.length.0..=cfg.length.1);
            let mut pose = robot;
            let mut commands = Vec::with_capacity(len);
            let observe = |pose: &Pose, rng: &mut _| {
                degrade_observation(&project_scene(&scene, pose, camera), &degrade, rng)
            };
            let mut states = vec![observe(&pose, rng)];
            for t in 0..len {
                let mut cmd = sample_command(&cfg.command_probs, rng);
                if cmd == MotorCommand::Forward
                    && check_collision(&apply_motor(pose, cmd, actuation), &scene, DEFAULT_BUMPER_RADIUS)
                {
                    cmd = if rng.random::<bool>() { MotorCommand::Left } else { MotorCommand::Right };
                }
                pose = apply_motor(pose, cmd, actuation);
                commands.push(cmd);
                let mut st = observe(&pose, rng);
                st.step = t + 1;
                states.push(st);
            }
            FmSequence { commands, states }
        })
        .collect()
}

/// Writes each sequence as `sequence <n> <commands>` followed by its
/// observation dump.
pub fn write_fm_sequences<W: std::io::Write>(sequences: &[FmSequence], mut out: W) -> std::io::Result<()> {
    for (n, seq) in sequences.iter().enumerate() {
        writeln!(out, "sequence {n} {}", crate::world::sequence_string(&seq.commands))?;
        crate::sensor::write_states(&seq.states, &mut out)?;
    }
    Ok(())
}

pub fn read_fm_sequences<R: std::io::BufRead>(input: R) -> Result<Vec<FmSequence>> {
    let text = std::io::read_to_string(input)?;
    let mut out = Vec::new();
    let mut header: Option<(usize, Vec<MotorCommand>)> = None;
    let mut body = String::new();
    let mut flush = |header: Option<(usize, Vec<MotorCommand>)>, body: &str| -> Result<()> {
        if let Some((line, commands)) = header {
            let states = crate::sensor::read_states(body.as_bytes())?;
            if states.len() != commands.len() + 1 {
                return Err(crate::error::parse_err(line, "sequence needs one more state than commands"));
            }
            out.push(FmSequence { commands, states });
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("sequence ") {
            flush(header.take(), &body)?;
            body.clear();
            let cmds = rest.split_whitespace().nth(1).unwrap_or("");
            let commands = cmds
                .chars()
                .map(|c| MotorCommand::from_char(c).ok_or_else(|| crate::error::parse_err(i + 1, format!("bad command '{c}'"))))
                .collect::<Result<Vec<_>>>()?;
            header = Some((i + 1, commands));
        } else if header.is_none() && !line.trim().is_empty() {
            return Err(crate::error::parse_err(i + 1, "data before the first sequence header"));
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    flush(header, &body)?;
    Ok(out)
}

pub fn sequences_to_examples(sequences: &[FmSequence], image_width: f64) -> Vec<FmExample> {
    let mut out = Vec::new();
    for seq in sequences {
        for (t, &cmd) in seq.commands.iter().enumerate() {
            for before in &seq.states[t].segments {
                if let Some(after) = seq.states[t + 1].segment(before.obstacle_id) {
                    out.push(FmExample {
                        segment: *before,
                        command: cmd,
                        delta: [
                            after.w - before.w,
                            wrap_x(after.x - before.x, image_width),
                            after.y - before.y,
                        ],
                    });
                }
            }
        }
    }
    out
}

pub fn collect_fm_dataset(
    cfg: &FmDataConfig,
    camera: &CameraModel,
    actuation: &ActuationParams,
    rng: &mut impl Rng,
) -> Vec<FmExample> {
    sequences_to_examples(&collect_fm_sequences(cfg, camera, actuation, rng), camera.image_width)
}

pub const MIN_EXAMPLES_PER_COMMAND: usize = 100;

/// Rotation deltas are per-component medians, pooled over left examples and
/// mirrored right examples so the two turns are exact inverses. Forward
/// coefficients come from linear least squares on `{trig·y², trig·y}`.
pub fn fit_visual_fm(dataset: &[FmExample], image_width: f64) -> Result<VisualFm> {
    let by = |c: MotorCommand| dataset.iter().filter(move |e| e.command == c);
    for c in MotorCommand::ALL {
        let n = by(c).count();
        if n < MIN_EXAMPLES_PER_COMMAND {
            return Err(Error::InsufficientData(format!(
                "{n} examples for command {c}, need {MIN_EXAMPLES_PER_COMMAND}"
            )));
        }
    }

    let mut rot = [0.0; 3];
    for (k, slot) in rot.iter_mut().enumerate() {
        let mut vals: Vec<f64> = by(MotorCommand::Left)
            .map(|e| e.delta[k])
            .chain(by(MotorCommand::Right).map(|e| -e.delta[k]))
            .collect();
        *slot = median(&mut vals).expect("non-empty");
    }

    let fwd: Vec<&FmExample> = by(MotorCommand::Forward).collect();
    let xs: Vec<f64> = fwd.iter().map(|e| e.segment.x).collect();
    let ys: Vec<f64> = fwd.iter().map(|e| e.segment.y).collect();
    if is_constant(&xs) || is_constant(&ys) {
        return Err(Error::DegenerateDesign("forward examples have constant x or y".into()));
    }
    let mut terms = [QuadTerm { a: 0.0, b: 0.0 }; 3];
    let mut residual_rms = [0.0; 3];
    for k in 0..3 {
        let trig = |x: f64| {
            let p = TAU * x / image_width;
            if k == 1 {
                p.sin()
            } else {
                p.cos()
            }
        };
        let design = DMatrix::from_fn(fwd.len(), 2, |i, j| {
            let c = trig(xs[i]);
            if j == 0 {
                c * ys[i] * ys[i]
            } else {
                c * ys[i]
            }
        });
        let target = DVector::from_iterator(fwd.len(), fwd.iter().map(|e| e.delta[k]));
        let b = least_squares(&design, &target)?;
        terms[k] = QuadTerm { a: b[0], b: b[1] };
        residual_rms[k] = rms((0..fwd.len()).map(|i| target[i] - trig(xs[i]) * terms[k].eval(ys[i])));
    }
    Ok(VisualFm {
        rot_left: rot,
        rot_right: [-rot[0], -rot[1], -rot[2]],
        fwd_w: terms[0],
        fwd_x: terms[1],
        fwd_y: terms[2],
        image_width,
        provenance: Provenance::SyntheticFit,
        residual_rms,
    })
}

/// Mean absolute iterative prediction errors, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FmErrorReport {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub count: usize,
}

impl FmErrorReport {
    pub fn published_without_corrector() -> Self {
        Self { x: 35.5, y: 4.75, w: 17.0, count: 0 }
    }

    pub fn published_with_corrector() -> Self {
        Self { x: 40.6, y: 4.16, w: 16.3, count: 0 }
    }
}

/// Feeds the FM its own predictions for `horizon` steps from each
/// non-overlapping window start and compares against the recorded
/// observation at the end of the window.
pub fn evaluate_fm_iterative(
    fm: &VisualFm,
    corrector: &PredictionCorrector,
    sequences: &[FmSequence],
    horizon: usize,
) -> FmErrorReport {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for seq in sequences {
        let n = seq.commands.len();
        let mut start = 0;
        while start + horizon <= n {
            let mut pred = seq.states[start].clone();
            for &cmd in &seq.commands[start..start + horizon] {
                pred = predict_state(fm, &pred, cmd, corrector);
            }
            let truth = &seq.states[start + horizon];
            for p in &pred.segments {
                if let Some(t) = truth.segment(p.obstacle_id) {
                    sum[0] += wrap_x(p.x - t.x, fm.image_width).abs();
                    sum[1] += (p.y - t.y).abs();
                    sum[2] += (p.w - t.w).abs();
                    count += 1;
                }
            }
            if horizon == 0 {
                break;
            }
            start += horizon;
        }
    }
    if count == 0 {
        return FmErrorReport::default();
    }
    let n = count as f64;
    FmErrorReport {
        x: sum[0] / n,
        y: sum[1] / n,
        w: sum[2] / n,
        count,
    }
}

/// The visual FM, tactile FM and prediction corrector as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModels {
    pub visual: VisualFm,
    pub tactile: TactileFm,
    pub corrector: PredictionCorrector,
}

impl ForwardModels {
    pub fn published() -> Self {
        Self {
            visual: VisualFm::published(),
            tactile: TactileFm::published(),
            corrector: PredictionCorrector::published(),
        }
    }

    pub fn to_text(&self) -> String {
        let v = &self.visual;
        let c = &self.corrector;
        let mut s = String::new();
        let mut kv = |k: &str, val: String| {
            writeln!(s, "{k} {val}").expect("writing to a String cannot fail");
        };
        kv("provenance", v.provenance.name().to_string());
        kv("image_width", v.image_width.to_string());
        for (name, d) in [("rot_left", v.rot_left), ("rot_right", v.rot_right)] {
            kv(&format!("{name}_dw"), d[0].to_string());
            kv(&format!("{name}_dx"), d[1].to_string());
            kv(&format!("{name}_dy"), d[2].to_string());
        }
        for (name, t) in [("w", v.fwd_w), ("x", v.fwd_x), ("y", v.fwd_y)] {
            kv(&format!("fwd_a{name}"), t.a.to_string());
            kv(&format!("fwd_b{name}"), t.b.to_string());
        }
        kv("rms_w", v.residual_rms[0].to_string());
        kv("rms_x", v.residual_rms[1].to_string());
        kv("rms_y", v.residual_rms[2].to_string());
        kv("tactile_threshold", self.tactile.threshold.to_string());
        kv("corrector_inv_slope", c.inv_slope.to_string());
        kv("corrector_inv_intercept", c.inv_intercept.to_string());
        kv("corrector_fwd_slope", c.fwd_slope.to_string());
        kv("corrector_fwd_intercept", c.fwd_intercept.to_string());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let provenance = match kv.raw("provenance") {
            Some("published") => Provenance::Published,
            Some("synthetic_fit") => Provenance::SyntheticFit,
            other => {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("unknown provenance {other:?}"),
                })
            }
        };
        let delta = |name: &str| -> Result<Delta> {
            Ok([
                kv.require(&format!("{name}_dw"))?,
                kv.require(&format!("{name}_dx"))?,
                kv.require(&format!("{name}_dy"))?,
            ])
        };
        let term = |name: &str| -> Result<QuadTerm> {
            Ok(QuadTerm {
                a: kv.require(&format!("fwd_a{name}"))?,
                b: kv.require(&format!("fwd_b{name}"))?,
            })
        };
        Ok(Self {
            visual: VisualFm {
                rot_left: delta("rot_left")?,
                rot_right: delta("rot_right")?,
                fwd_w: term("w")?,
                fwd_x: term("x")?,
                fwd_y: term("y")?,
                image_width: kv.require("image_width")?,
                provenance,
                residual_rms: [kv.require("rms_w")?, kv.require("rms_x")?, kv.require("rms_y")?],
            },
            tactile: TactileFm {
                threshold: kv.require("tactile_threshold")?,
            },
            corrector: PredictionCorrector {
                inv_slope: kv.require("corrector_inv_slope")?,
                inv_intercept: kv.require("corrector_inv_intercept")?,
                fwd_slope: kv.require("corrector_fwd_slope")?,
                fwd_intercept: kv.require("corrector_fwd_intercept")?,
                enabled: true,
            },
        })
    }
}
