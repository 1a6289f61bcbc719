//! Training pipeline, the condition grid harness, metric tables and the
//! bird's-eye rendering of simulated trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::forward_models::{
    calibrate_tactile_threshold, collect_fm_sequences, fit_visual_fm, sequences_to_examples, FmSequence,
    ForwardModels, PredictionCorrector, VisualFm,
};
use crate::inverse_model::{build_im_training_set, fit_inverse_model, ImVariant, InverseModel};
use crate::rng::{derive_seed, seeded_rng};
use crate::sensor::{
    correction_dataset, degrade_observation, fit_correction_model, project_scene, CorrectionModel,
    DistanceCalibration, SensoryState,
};
use crate::simulation::{
    integrate_path, run_simulation, AntiOscillation, Classification, RestartMode, RunResult, SimModels,
    TaskCondition, TrialTrace,
};
use crate::world::{generate_scene, Pose, SceneLabel, WorldScene};

/// Seed streams, so that independent stages never share random numbers.
pub mod stream {
    pub const TRAINING_SCENES: u64 = 1;
    pub const FM_DATA: u64 = 2;
    pub const CORRECTION_DATA: u64 = 3;
    pub const IM_TRAINING: u64 = 4;
    pub const TEST_SCENES: u64 = 5;
    pub const OBSERVATION: u64 = 6;
    pub const RUNS: u64 = 7;
    pub const FM_TEST: u64 = 8;
}

fn label_code(label: SceneLabel) -> u64 {
    match label {
        SceneLabel::DeadEnd => 0,
        SceneLabel::Corridor => 1,
        SceneLabel::Unlabeled => 2,
    }
}

/// `dead_ends` dead ends followed by `corridors` corridors.
pub fn generate_scene_set(cfg: &Config, dead_ends: usize, corridors: usize, seed: u64, stream: u64) -> Result<Vec<WorldScene>> {
    let kinds = std::iter::repeat_n(SceneLabel::DeadEnd, dead_ends).chain(std::iter::repeat_n(SceneLabel::Corridor, corridors));
    kinds
        .enumerate()
        .map(|(i, kind)| generate_scene(kind, derive_seed(seed, &[stream, label_code(kind), i as u64]), &cfg.scene_gen))
        .collect()
}

pub fn fm_training_sequences(cfg: &Config, seed: u64) -> Vec<FmSequence> {
    collect_fm_sequences(&cfg.fm_data, &cfg.camera, &cfg.actuation, &mut seeded_rng(derive_seed(seed, &[stream::FM_DATA])))
}

/// Held-out sequences for iterative FM evaluation.
pub fn fm_test_sequences(cfg: &Config, seed: u64) -> Vec<FmSequence> {
    let data = crate::forward_models::FmDataConfig {
        sequences: cfg.fm_test_sequences,
        length: (cfg.fm_eval_horizon, cfg.fm_eval_horizon.max(cfg.fm_data.length.1)),
        ..cfg.fm_data.clone()
    };
    collect_fm_sequences(&data, &cfg.camera, &cfg.actuation, &mut seeded_rng(derive_seed(seed, &[stream::FM_TEST])))
}

/// Fits the visual FM and the prediction corrector and calibrates the
/// tactile threshold. With `published` set the published constants are used and
/// `sequences` is ignored.
pub fn fit_forward_models(cfg: &Config, sequences: &[FmSequence], published: bool) -> Result<ForwardModels> {
    let mut fms = if published {
        ForwardModels { visual: VisualFm::published(), ..ForwardModels::published() }
    } else {
        let examples = sequences_to_examples(sequences, cfg.camera.image_width);
        let visual = fit_visual_fm(&examples, cfg.camera.image_width)?;
        let segments: Vec<_> = sequences.iter().flat_map(|s| s.states.iter().flat_map(|st| st.segments.iter().copied())).collect();
        let corrector = PredictionCorrector::fit(&segments)?;
        ForwardModels { visual, corrector, tactile: calibrate_tactile_threshold(&cfg.camera, cfg.bumper_radius)? }
    };
    if let Some(t) = cfg.tactile_threshold {
        fms.tactile.threshold = t;
    }
    if let Some(b) = cfg.corrector_inv_intercept {
        fms.corrector.inv_intercept = b;
    }
    fms.corrector.enabled = cfg.corrector_enabled;
    Ok(fms)
}

pub fn fit_correction(cfg: &Config, seed: u64, published: bool) -> Result<CorrectionModel> {
    if published {
        return Ok(CorrectionModel::published());
    }
    let mut rng = seeded_rng(derive_seed(seed, &[stream::CORRECTION_DATA]));
    let data = correction_dataset(&cfg.camera, &cfg.correction_sampling, &mut rng);
    let split = cfg
        .correction_split_row
        .unwrap_or_else(|| cfg.camera.near_far_row(cfg.scene_gen.obstacle_radius, cfg.scene_gen.obstacle_height));
    fit_correction_model(&data, split)
}

pub fn train_inverse_model(cfg: &Config, fms: &ForwardModels, seed: u64) -> Result<InverseModel> {
    let scenes = generate_scene_set(cfg, cfg.training_dead_ends, cfg.training_corridors, seed, stream::TRAINING_SCENES)?;
    let mut rng = seeded_rng(derive_seed(seed, &[stream::IM_TRAINING]));
    let examples = build_im_training_set(&scenes, fms, &cfg.im_training, &cfg.camera, &cfg.degradation, &cfg.actuation, &mut rng);
    let mut im = fit_inverse_model(&examples, cfg.n_components, ImVariant::Det)?;
    im.random_probs = cfg.random_probs;
    Ok(im)
}

/// The whole training pipeline.
pub fn train_models(cfg: &Config, seed: u64, published: bool) -> Result<SimModels> {
    let sequences = if published { Vec::new() } else { fm_training_sequences(cfg, seed) };
    let fms = fit_forward_models(cfg, &sequences, published)?;
    let correction = fit_correction(cfg, seed, published)?;
    let im = train_inverse_model(cfg, &fms, seed)?;
    Ok(SimModels {
        fms,
        im,
        correction: cfg.initial_correction.then_some(correction),
        actuation: cfg.actuation,
    })
}

/// The real initial observation of a scene, taken once and reused for all
/// repetitions and conditions.
pub fn initial_observation(cfg: &Config, scene: &WorldScene, scene_index: usize, seed: u64) -> SensoryState {
    let mut rng = seeded_rng(derive_seed(seed, &[stream::OBSERVATION, scene_index as u64]));
    degrade_observation(&project_scene(scene, &scene.robot_start, &cfg.camera), &cfg.degradation, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dead_ends: usize,
    pub corridors: usize,
    pub runs_per_scene: usize,
    pub conditions: Vec<TaskCondition>,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { dead_ends: 10, corridors: 10, runs_per_scene: 5, conditions: TaskCondition::all(), master_seed: 0 }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs_per_scene == 0 {
            return Err(Error::InvalidParameter("runs_per_scene must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one simulation run in the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub condition: TaskCondition,
    pub scene: usize,
    pub label: SceneLabel,
    pub repetition: usize,
    pub classification: Classification,
    pub trials: usize,
    pub fm_invocations: usize,
    pub im_invocations: usize,
}

impl RunRecord {
    pub fn correct(&self) -> bool {
        matches!(
            (self.label, self.classification),
            (SceneLabel::Corridor, Classification::Corridor) | (SceneLabel::DeadEnd, Classification::DeadEnd)
        )
    }
}

/// Runs every (condition, scene, repetition) in parallel. Records come back
/// sorted by that key regardless of scheduling.
pub fn run_grid(cfg: &Config, exp: &ExperimentConfig, scenes: &[WorldScene], models: &SimModels) -> Result<Vec<RunRecord>> {
    exp.validate()?;
    let observations: Vec<SensoryState> =
        scenes.iter().enumerate().map(|(i, s)| initial_observation(cfg, s, i, exp.master_seed)).collect();
    let mut jobs = Vec::new();
    for &cond in &exp.conditions {
        for scene in 0..scenes.len() {
            for rep in 0..exp.runs_per_scene {
                jobs.push((cond, scene, rep));
            }
        }
    }
    let mut records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(condition, scene, repetition)| {
            let m = SimModels { im: models.im.with_variant(condition.im), ..models.clone() };
            let seed = derive_seed(exp.master_seed, &[stream::RUNS, condition.index() as u64, scene as u64, repetition as u64]);
            let run = run_simulation(&observations[scene], &m, &condition, &cfg.criterion, &mut seeded_rng(seed), false);
            RunRecord {
                condition,
                scene,
                label: scenes[scene].label,
                repetition,
                classification: run.classification,
                trials: run.trials.len(),
                fm_invocations: run.fm_invocations,
                im_invocations: run.im_invocations,
            }
        })
        .collect();
    records.sort_by_key(|r| (r.condition.index(), r.scene, r.repetition));
    Ok(records)
}

/// Sample mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMetrics {
    /// Percent of corridor runs classified as corridor; `None` without
    /// corridor scenes.
    pub corridor_success: Option<f64>,
    pub dead_end_success: Option<f64>,
    /// Trials per run over runs on true corridors classified as corridors.
    pub trials: Option<MeanSd>,
    /// FM invocations per run over all runs.
    pub fm_invocations: Option<MeanSd>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub conditions: BTreeMap<TaskCondition, ConditionMetrics>,
}

fn percent(records: &[&RunRecord], label: SceneLabel) -> Option<f64> {
    let on: Vec<_> = records.iter().filter(|r| r.label == label).collect();
    (!on.is_empty()).then(|| 100.0 * on.iter().filter(|r| r.correct()).count() as f64 / on.len() as f64)
}

impl MetricsTable {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut grouped: BTreeMap<TaskCondition, Vec<&RunRecord>> = BTreeMap::new();
        for r in records {
            grouped.entry(r.condition).or_default().push(r);
        }
        let conditions = grouped
            .into_iter()
            .map(|(c, rs)| {
                let trials: Vec<f64> = rs
                    .iter()
                    .filter(|r| r.label == SceneLabel::Corridor && r.classification == Classification::Corridor)
                    .map(|r| r.trials as f64)
                    .collect();
                let fm: Vec<f64> = rs.iter().map(|r| r.fm_invocations as f64).collect();
                let m = ConditionMetrics {
                    corridor_success: percent(&rs, SceneLabel::Corridor),
                    dead_end_success: percent(&rs, SceneLabel::DeadEnd),
                    trials: MeanSd::of(&trials),
                    fm_invocations: MeanSd::of(&fm),
                    runs: rs.len(),
                };
                (c, m)
            })
            .collect();
        Self { conditions }
    }

    pub fn get(&self, c: &TaskCondition) -> Option<&ConditionMetrics> {
        self.conditions.get(c)
    }
}

pub fn run_experiment(cfg: &Config, exp: &ExperimentConfig, scenes: &[WorldScene], models: &SimModels) -> Result<MetricsTable> {
    Ok(MetricsTable::from_records(&run_grid(cfg, exp, scenes, models)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Success,
    Trials,
    FmInvocations,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Success, Metric::Trials, Metric::FmInvocations];

    pub fn file_stem(self) -> &'static str {
        match self {
            Metric::Success => "success",
            Metric::Trials => "trials",
            Metric::FmInvocations => "fm_invocations",
        }
    }
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |p| format!("{p:.1}"))
}

fn opt_mean_sd(v: Option<MeanSd>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |m| format!("{:.*} ({:.*})", decimals, m.mean, decimals, m.sd))
}

/// Comma-separated table with anti-oscillation rows and IM/restart columns.
/// Conditions missing from the table show `-`; an empty table yields only
/// the header.
pub fn export_metrics(table: &MetricsTable, metric: Metric) -> String {
    let columns: Vec<(ImVariant, RestartMode)> =
        ImVariant::ALL.iter().flat_map(|&im| RestartMode::ALL.map(|r| (im, r))).collect();
    let mut out = String::from("mode");
    for (im, r) in &columns {
        let _ = write!(out, ",{}/{}", im.name().to_uppercase(), r.name().to_uppercase());
    }
    out.push('\n');
    if table.conditions.is_empty() {
        return out;
    }
    for anti in AntiOscillation::ALL {
        out.push_str(&anti.name().to_uppercase().replace('-', "_"));
        for &(im, restart) in &columns {
            let cell = match table.get(&TaskCondition::new(im, anti, restart)) {
                None => "-".to_string(),
                Some(m) => match metric {
                    Metric::Success => format!("{} / {}", opt_pct(m.corridor_success), opt_pct(m.dead_end_success)),
                    Metric::Trials => opt_mean_sd(m.trials, 2),
                    Metric::FmInvocations => opt_mean_sd(m.fm_invocations, 0),
                },
            };
            let _ = write!(out, ",{cell}");
        }
        out.push('\n');
    }
    out
}

/// Obstacle positions in the robot frame reconstructed from a perceived
/// state: bearing from `x`, distance from `w` through the calibration curve.
pub fn perceived_positions(state: &SensoryState, calibration: &DistanceCalibration, image_width: f64) -> Vec<(u32, f64, f64)> {
    state
        .segments
        .iter()
        .map(|s| {
            let bearing = -s.x * std::f64::consts::TAU / image_width;
            let d = calibration.distance(s.w);
            (s.obstacle_id, d * bearing.cos(), d * bearing.sin())
        })
        .collect()
}

/// Ground-truth obstacle centers in the frame of `robot`.
pub fn to_robot_frame(scene: &WorldScene, robot: &Pose) -> Vec<(u32, f64, f64)> {
    let (s, c) = robot.heading.sin_cos();
    scene
        .obstacles
        .iter()
        .map(|o| {
            let (dx, dy) = (o.center.0 - robot.x, o.center.1 - robot.y);
            (o.id, c * dx + s * dy, -s * dx + c * dy)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirdseyeOptions {
    pub obstacle_radius: f64,
    pub pixels_per_meter: f64,
    pub image_width: f64,
}

impl Default for BirdseyeOptions {
    fn default() -> Self {
        Self { obstacle_radius: crate::world::DEFAULT_OBSTACLE_RADIUS, pixels_per_meter: 80.0, image_width: crate::sensor::PANORAMA_WIDTH }
    }
}

/// SVG of perceived obstacles and every trial trajectory, in the robot frame
/// with the robot at the origin facing right. Ground truth is drawn as
/// dashed outlines when a scene is given.
pub fn render_birdseye(
    scene: Option<&WorldScene>,
    traces: &[TrialTrace],
    calibration: &DistanceCalibration,
    actuation: &crate::world::ActuationParams,
    opts: &BirdseyeOptions,
) -> String {
    let perceived = traces
        .first()
        .map(|t| perceived_positions(&t.initial, calibration, opts.image_width))
        .unwrap_or_default();
    let truth = scene.map(|s| to_robot_frame(s, &s.robot_start)).unwrap_or_default();
    let paths: Vec<Vec<Pose>> =
        traces.iter().map(|t| integrate_path(&t.commands(), Pose::new(0.0, 0.0, 0.0), actuation)).collect();

    let r = opts.obstacle_radius;
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    pts.extend(perceived.iter().chain(&truth).flat_map(|&(_, x, y)| [(x - r, y - r), (x + r, y + r)]));
    pts.extend(paths.iter().flatten().map(|p| (p.x, p.y)));
    let (min_x, max_x) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_y, max_y) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let margin = 0.5;
    let k = opts.pixels_per_meter;
    let width = (max_x - min_x + 2.0 * margin) * k;
    let height = (max_y - min_y + 2.0 * margin) * k;
    // world y points up, SVG y points down
    let px = |x: f64| (x - min_x + margin) * k;
    let py = |y: f64| (max_y - y + margin) * k;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for &(id, x, y) in &truth {
        let _ = writeln!(
            svg,
            r#"<circle class="truth" data-id="{id}" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#,
            px(x),
            py(y),
            r * k
        );
    }
    for &(id, x, y) in &perceived {
        let _ = writeln!(
            svg,
            r#"<circle class="perceived" data-id="{id}" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="darkred" fill-opacity="0.6"/>"#,
            px(x),
            py(y),
            r * k
        );
    }
    for (n, path) in paths.iter().enumerate() {
        let points: Vec<String> = path.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="trial" data-trial="{n}" points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            points.join(" ")
        );
    }
    let _ = writeln!(svg, r#"<circle class="robot" cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#, px(0.0), py(0.0));
    svg.push_str("</svg>\n");
    svg
}

/// Simulates one scene under one condition, keeping the trace.
pub fn simulate_scene(
    cfg: &Config,
    scene: &WorldScene,
    models: &SimModels,
    condition: &TaskCondition,
    seed: u64,
) -> RunResult {
    let obs = initial_observation(cfg, scene, 0, seed);
    let m = SimModels { im: models.im.with_variant(condition.im), ..models.clone() };
    let mut rng = seeded_rng(derive_seed(seed, &[stream::RUNS, condition.index() as u64]));
    run_simulation(&obs, &m, condition, &cfg.criterion, &mut rng, true)
}
