//! Every tunable constant in one key-value file.
//!
//! Keys are dotted paths (`camera.horizon_row 87`). Pairs and triples are
//! written as whitespace-separated numbers, optional values as `auto`.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::fmt::Write as _;

use crate::error::{parse_err, Error, Result};
use crate::experiment::ExperimentConfig;
use crate::forward_models::FmDataConfig;
use crate::inverse_model::{ImTrainingConfig, RANDOM_WALK_PROBS};
use crate::kv::KeyValues;
use crate::sensor::{CameraModel, CorrectionSampling, DegradationConfig};
use crate::simulation::{CorridorCriterion, TaskCondition};
use crate::world::{ActuationParams, SceneGenConfig, DEFAULT_BUMPER_RADIUS};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub camera: CameraModel,
    pub degradation: DegradationConfig,
    pub actuation: ActuationParams,
    pub scene_gen: SceneGenConfig,
    pub fm_data: FmDataConfig,
    pub fm_test_sequences: usize,
    pub fm_eval_horizon: usize,
    pub correction_sampling: CorrectionSampling,
    /// Row separating the near and far width models; `None` derives it from
    /// the camera.
    pub correction_split_row: Option<f64>,
    pub initial_correction: bool,
    pub bumper_radius: f64,
    /// Overrides the calibrated tactile threshold.
    pub tactile_threshold: Option<f64>,
    pub corrector_enabled: bool,
    /// Overrides the fitted `w = a·y + b` intercept of the corrector.
    pub corrector_inv_intercept: Option<f64>,
    pub im_training: ImTrainingConfig,
    pub training_dead_ends: usize,
    pub training_corridors: usize,
    pub n_components: usize,
    pub random_probs: [f64; 3],
    pub criterion: CorridorCriterion,
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            degradation: DegradationConfig::default(),
            actuation: ActuationParams::default(),
            scene_gen: SceneGenConfig::default(),
            fm_data: FmDataConfig::default(),
            fm_test_sequences: 60,
            fm_eval_horizon: 50,
            correction_sampling: CorrectionSampling::default(),
            correction_split_row: None,
            initial_correction: true,
            bumper_radius: DEFAULT_BUMPER_RADIUS,
            tactile_threshold: None,
            corrector_enabled: true,
            corrector_inv_intercept: None,
            im_training: ImTrainingConfig::default(),
            training_dead_ends: 10,
            training_corridors: 10,
            n_components: 8,
            random_probs: RANDOM_WALK_PROBS,
            criterion: CorridorCriterion::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

enum Field<'a> {
    F64(&'a mut f64),
    Usize(&'a mut usize),
    U64(&'a mut u64),
    Bool(&'a mut bool),
    Pair(&'a mut (f64, f64)),
    UsizePair(&'a mut (usize, usize)),
    Triple(&'a mut [f64; 3]),
    Auto(&'a mut Option<f64>),
    Conditions(&'a mut Vec<TaskCondition>),
}

fn fields(c: &mut Config) -> Vec<(&'static str, Field<'_>)> {
    use Field::*;
    let cam = &mut c.camera;
    let sg = &mut c.scene_gen;
    let fd = &mut c.fm_data;
    let im = &mut c.im_training;
    let cr = &mut c.criterion;
    let ex = &mut c.experiment;
    vec![
        ("camera.image_width", F64(&mut cam.image_width)),
        ("camera.image_height", F64(&mut cam.image_height)),
        ("camera.horizon_row", F64(&mut cam.horizon_row)),
        ("camera.row_gain", F64(&mut cam.row_gain)),
        ("camera.camera_height", F64(&mut cam.camera_height)),
        ("camera.magnification", F64(&mut cam.magnification)),
        ("camera.chassis_occlusion_row", F64(&mut cam.chassis_occlusion_row)),
        ("camera.min_segment_area", F64(&mut cam.min_segment_area)),
        ("camera.max_range", F64(&mut cam.max_range)),
        ("degradation.noise_sigma", F64(&mut c.degradation.noise_sigma)),
        ("degradation.strip_threshold", F64(&mut c.degradation.strip_threshold)),
        ("actuation.forward_step", F64(&mut c.actuation.forward_step)),
        ("actuation.turn_angle", F64(&mut c.actuation.turn_angle)),
        ("scene.obstacle_count", Usize(&mut sg.obstacle_count)),
        ("scene.extent", Pair(&mut sg.extent)),
        ("scene.obstacle_radius", F64(&mut sg.obstacle_radius)),
        ("scene.obstacle_height", F64(&mut sg.obstacle_height)),
        ("scene.dead_end_max_gap", F64(&mut sg.dead_end_max_gap)),
        ("scene.wall_gap", Pair(&mut sg.wall_gap)),
        ("scene.corridor_gap", Pair(&mut sg.corridor_gap)),
        ("scene.corridor_gap_count", Usize(&mut sg.corridor_gap_count)),
        ("scene.half_width", Pair(&mut sg.half_width)),
        ("scene.start_distance", Pair(&mut sg.start_distance)),
        ("scene.max_back_distance", F64(&mut sg.max_back_distance)),
        ("scene.heading_jitter", F64(&mut sg.heading_jitter)),
        ("scene.position_jitter", F64(&mut sg.position_jitter)),
        ("scene.max_attempts", Usize(&mut sg.max_attempts)),
        ("fm_data.sequences", Usize(&mut fd.sequences)),
        ("fm_data.length", UsizePair(&mut fd.length)),
        ("fm_data.command_probs", Triple(&mut fd.command_probs)),
        ("fm_data.max_obstacles", Usize(&mut fd.max_obstacles)),
        ("fm_data.distance", Pair(&mut fd.distance)),
        ("fm_data.noise_sigma", F64(&mut fd.noise_sigma)),
        ("fm_eval.test_sequences", Usize(&mut c.fm_test_sequences)),
        ("fm_eval.horizon", Usize(&mut c.fm_eval_horizon)),
        ("correction.samples", Usize(&mut c.correction_sampling.count)),
        ("correction.distance", Pair(&mut c.correction_sampling.distance)),
        ("correction.noise_sigma", F64(&mut c.correction_sampling.noise_sigma)),
        ("correction.split_row", Auto(&mut c.correction_split_row)),
        ("correction.enabled", Bool(&mut c.initial_correction)),
        ("tactile.bumper_radius", F64(&mut c.bumper_radius)),
        ("tactile.threshold", Auto(&mut c.tactile_threshold)),
        ("corrector.enabled", Bool(&mut c.corrector_enabled)),
        ("corrector.inv_intercept", Auto(&mut c.corrector_inv_intercept)),
        ("im.starts_per_scene", Usize(&mut im.starts_per_scene)),
        ("im.steps", Usize(&mut im.steps)),
        ("im.search_depth", Usize(&mut im.search_depth)),
        ("im.cost_forward", F64(&mut im.costs.forward)),
        ("im.cost_rotation", F64(&mut im.costs.rotation)),
        ("im.cost_translation_rotation_switch", F64(&mut im.costs.translation_rotation_switch)),
        ("im.cost_opposite_rotation_switch", F64(&mut im.costs.opposite_rotation_switch)),
        ("im.walk_probs", Triple(&mut im.walk_probs)),
        ("im.start_jitter", F64(&mut im.start_jitter)),
        ("im.heading_jitter", F64(&mut im.heading_jitter)),
        ("im.bumper_radius", F64(&mut im.bumper_radius)),
        ("im.training_dead_ends", Usize(&mut c.training_dead_ends)),
        ("im.training_corridors", Usize(&mut c.training_corridors)),
        ("im.n_components", Usize(&mut c.n_components)),
        ("im.random_probs", Triple(&mut c.random_probs)),
        ("criterion.max_steps", Usize(&mut cr.max_steps)),
        ("criterion.max_turns", Usize(&mut cr.max_turns)),
        ("criterion.max_turn_imbalance", Usize(&mut cr.max_turn_imbalance)),
        ("criterion.max_trials", Usize(&mut cr.max_trials)),
        ("criterion.im_invocation_cap", Usize(&mut cr.im_invocation_cap)),
        ("experiment.dead_ends", Usize(&mut ex.dead_ends)),
        ("experiment.corridors", Usize(&mut ex.corridors)),
        ("experiment.runs_per_scene", Usize(&mut ex.runs_per_scene)),
        ("experiment.conditions", Conditions(&mut ex.conditions)),
        ("experiment.master_seed", U64(&mut ex.master_seed)),
    ]
}

fn numbers(key: &str, raw: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = raw
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("{key}: bad number '{t}'")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("{key}: expected {n} numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_field(key: &str, raw: &str, field: Field) -> std::result::Result<(), String> {
    let bad = |e: &dyn std::fmt::Display| format!("{key}: {e}");
    match field {
        Field::F64(v) => *v = raw.parse().map_err(|e| bad(&e))?,
        Field::Usize(v) => *v = raw.parse().map_err(|e| bad(&e))?,
        Field::U64(v) => *v = raw.parse().map_err(|e| bad(&e))?,
        Field::Bool(v) => *v = raw.parse().map_err(|e| bad(&e))?,
        Field::Pair(v) => {
            let n = numbers(key, raw, 2)?;
            *v = (n[0], n[1]);
        }
        Field::UsizePair(v) => {
            let n: Vec<usize> = raw.split_whitespace().map(|t| t.parse().map_err(|e| bad(&e))).collect::<std::result::Result<_, _>>()?;
            if n.len() != 2 {
                return Err(format!("{key}: expected 2 integers"));
            }
            *v = (n[0], n[1]);
        }
        Field::Triple(v) => {
            let n = numbers(key, raw, 3)?;
            *v = [n[0], n[1], n[2]];
        }
        Field::Auto(v) => *v = if raw == "auto" { None } else { Some(raw.parse().map_err(|e| bad(&e))?) },
        Field::Conditions(v) => {
            *v = if raw == "all" {
                TaskCondition::all()
            } else {
                raw.split_whitespace().map(|t| t.parse::<TaskCondition>()).collect::<std::result::Result<_, _>>()?
            }
        }
    }
    Ok(())
}

fn format_field(field: &Field) -> String {
    match field {
        Field::F64(v) => format!("{v}"),
        Field::Usize(v) => format!("{v}"),
        Field::U64(v) => format!("{v}"),
        Field::Bool(v) => format!("{v}"),
        Field::Pair(v) => format!("{} {}", v.0, v.1),
        Field::UsizePair(v) => format!("{} {}", v.0, v.1),
        Field::Triple(v) => format!("{} {} {}", v[0], v[1], v[2]),
        Field::Auto(v) => v.map_or_else(|| "auto".to_string(), |x| x.to_string()),
        Field::Conditions(v) => {
            if **v == TaskCondition::all() {
                "all".to_string()
            } else {
                v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
            }
        }
    }
}

impl Config {
    /// Defaults overridden by whatever keys the text sets.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut cfg = Config::default();
        let mut fs = fields(&mut cfg);
        for key in kv.keys() {
            let pos = fs
                .iter()
                .position(|(k, _)| *k == key)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown config key '{key}'")))?;
            let (_, field) = fs.swap_remove(pos);
            parse_field(key, kv.raw(key).unwrap_or(""), field).map_err(|m| parse_err(line_of(text, key), m))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        for (key, field) in fields(&mut copy) {
            let _ = writeln!(out, "{key} {}", format_field(&field));
        }
        out
    }

    pub fn keys() -> Vec<&'static str> {
        fields(&mut Config::default()).into_iter().map(|(k, _)| k).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.actuation.validate()?;
        self.scene_gen.validate()?;
        self.experiment.validate()?;
        let probs_ok = |p: &[f64; 3]| p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-6;
        if !probs_ok(&self.random_probs) || !probs_ok(&self.fm_data.command_probs) || !probs_ok(&self.im_training.walk_probs) {
            return Err(Error::InvalidParameter("command probabilities must be non-negative and sum to 1".into()));
        }
        if self.n_components == 0 {
            return Err(Error::InvalidParameter("im.n_components must be at least 1".into()));
        }
        if self.criterion.max_trials == 0 || self.criterion.max_steps == 0 {
            return Err(Error::InvalidParameter("criterion limits must be positive".into()));
        }
        Ok(())
    }
}

fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| l.split_whitespace().next() == Some(key))
        .map_or(0, |i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse_model::ImVariant;
    use crate::simulation::{AntiOscillation, RestartMode};

    #[test]
    fn round_trip_defaults() {
        let c = Config::default();
        assert_eq!(Config::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_written_once() {
        let text = Config::default().to_text();
        let keys = Config::keys();
        assert_eq!(text.lines().count(), keys.len());
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), keys.len());
    }

    #[test]
    fn overrides() {
        let c = Config::from_text(
            "# desk run\ncamera.horizon_row 90\nscene.wall_gap 0.2 0.3\ntactile.threshold 210\n\
             experiment.conditions det/forward-continue/partial random/forward/full\ncorrector.enabled false\n",
        )
        .unwrap();
        assert_eq!(c.camera.horizon_row, 90.0);
        assert_eq!(c.scene_gen.wall_gap, (0.2, 0.3));
        assert_eq!(c.tactile_threshold, Some(210.0));
        assert!(!c.corrector_enabled);
        assert_eq!(
            c.experiment.conditions,
            vec![
                TaskCondition::new(ImVariant::Det, AntiOscillation::ForwardContinue, RestartMode::Partial),
                TaskCondition::new(ImVariant::Random, AntiOscillation::Forward, RestartMode::Full),
            ]
        );
        assert_eq!(Config::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Config::from_text("camera.horizn_row 90\n").is_err());
        assert!(matches!(Config::from_text("\nscene.extent 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(Config::from_text("im.random_probs 0.5 0.5 0.5\n").is_err());
        assert!(Config::from_text("experiment.runs_per_scene 0\n").is_err());
    }
}
