//! Synthetic panoramic camera. Obstacles are projected straight to segment
//! features `(w, x, y, h)` in unfolded-panorama pixels; there is no raster.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{parse_err, Error, Result};
use crate::linalg::{is_constant, least_squares, r_squared};
use crate::world::{normalize_angle, ObstacleDisk, Pose, WorldScene};

pub const PANORAMA_WIDTH: f64 = 1571.0;
pub const PANORAMA_HEIGHT: f64 = 214.0;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_pi(theta: f64) -> f64 {
    let t = normalize_angle(theta);
    if t > PI {
        t - TAU
    } else {
        t
    }
}

/// Wraps a horizontal panorama offset to `(-width/2, width/2]`.
pub fn wrap_x(x: f64, width: f64) -> f64 {
    let half = width / 2.0;
    let t = (x + half).rem_euclid(width) - half;
    if t <= -half {
        t + width
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub image_width: f64,
    pub image_height: f64,
    pub horizon_row: f64,
    /// Row offset per unit of (height difference / ground distance).
    pub row_gain: f64,
    /// Height of the mirror's effective viewpoint above the floor, meters.
    pub camera_height: f64,
    /// Relative width gain per 100 rows below the horizon.
    pub magnification: f64,
    /// Rows at and below this one are hidden by the robot's own chassis.
    pub chassis_occlusion_row: f64,
    pub min_segment_area: f64,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            image_width: PANORAMA_WIDTH,
            image_height: PANORAMA_HEIGHT,
            horizon_row: 87.0,
            row_gain: 88.33,
            camera_height: 0.6,
            magnification: 0.085,
            chassis_occlusion_row: 175.0,
            min_segment_area: 60.0,
            max_range: 4.5,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        if !(self.row_gain > 0.0 && self.max_range > 0.0) {
            return Err(Error::InvalidParameter(
                "row_gain and max_range must be positive".into(),
            ));
        }
        Ok(())
    }

    fn clamp_row(&self, y: f64) -> f64 {
        y.clamp(0.0, self.image_height)
    }

    /// Image row of the top edge of an obstacle of `height` at ground distance `d`.
    pub fn top_row(&self, d: f64, height: f64) -> f64 {
        self.clamp_row(self.horizon_row + self.row_gain * (self.camera_height - height) / d)
    }

    /// Image row of the obstacle's foot (nearest ground contact).
    pub fn bottom_row(&self, d: f64, radius: f64) -> f64 {
        if d <= radius {
            return self.image_height;
        }
        self.clamp_row(self.horizon_row + self.row_gain * self.camera_height / (d - radius))
    }

    fn pixels_per_radian(&self, y: f64) -> f64 {
        self.image_width / TAU * (1.0 + self.magnification * (y - self.horizon_row) / 100.0)
    }

    /// Segment width of a disk of `radius` at center distance `d` whose top
    /// edge sits on row `y`.
    pub fn width_at(&self, d: f64, radius: f64, y: f64) -> f64 {
        2.0 * (radius / d).min(1.0).asin() * self.pixels_per_radian(y)
    }

    /// Horizontal offset of a bearing relative to the heading (counterclockwise
    /// positive). Straight ahead is 0, obstacles on the left have negative x.
    pub fn x_of_bearing(&self, rel_bearing: f64) -> f64 {
        wrap_x(-rel_bearing * self.image_width / TAU, self.image_width)
    }

    /// Segment of a single unoccluded disk.
    pub fn project_disk(&self, id: u32, d: f64, rel_bearing: f64, radius: f64, height: f64) -> Segment {
        let y = self.top_row(d, height);
        let bottom = self.bottom_row(d, radius).min(self.chassis_occlusion_row);
        Segment {
            obstacle_id: id,
            w: self.width_at(d, radius, y),
            x: self.x_of_bearing(rel_bearing),
            y,
            h: (bottom - y).max(0.0),
        }
    }

    /// Top row at which an obstacle's foot reaches the chassis occlusion row,
    /// i.e. where `h` switches from growing to shrinking on approach.
    pub fn near_far_row(&self, radius: f64, height: f64) -> f64 {
        let d = radius + self.row_gain * self.camera_height / (self.chassis_occlusion_row - self.horizon_row);
        self.top_row(d, height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub obstacle_id: u32,
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensoryState {
    pub step: usize,
    pub segments: Vec<Segment>,
}

impl SensoryState {
    pub fn new(step: usize, segments: Vec<Segment>) -> Self {
        Self { step, segments }
    }

    pub fn segment(&self, id: u32) -> Option<&Segment> {
        self.segments.iter().find(|s| s.obstacle_id == id)
    }
}

/// Inter-obstacle occlusion of one segment by nearer obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    pub obstacle_id: u32,
    /// Rows of the occluded obstacle visible above its occluders.
    pub strip: f64,
    /// Unoccluded azimuthal pieces as `(x_center, width)` in pixels.
    pub visible: Vec<(f64, f64)>,
}

impl Occlusion {
    pub fn widest_piece(&self) -> Option<(f64, f64)> {
        self.visible
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub state: SensoryState,
    pub occlusions: Vec<Occlusion>,
}

/// Removes the union of `cuts` from `[lo, hi]`.
fn subtract_intervals(lo: f64, hi: f64, cuts: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pieces = Vec::new();
    let mut cursor = lo;
    for &(a, b) in cuts.iter() {
        if b <= cursor {
            continue;
        }
        if a >= hi {
            break;
        }
        if a > cursor {
            pieces.push((cursor, a));
        }
        cursor = cursor.max(b);
    }
    if cursor < hi {
        pieces.push((cursor, hi));
    }
    pieces
}

struct Candidate<'a> {
    obstacle: &'a ObstacleDisk,
    d: f64,
    bearing: f64,
    half_angle: f64,
}

/// Projects every obstacle within range. Segments are ordered by obstacle id.
pub fn project_scene(scene: &WorldScene, robot: &Pose, camera: &CameraModel) -> Observation {
    let mut cands: Vec<Candidate> = scene
        .obstacles
        .iter()
        .filter_map(|o| {
            let d = robot.distance_to(o.center);
            (d <= camera.max_range).then(|| Candidate {
                obstacle: o,
                d,
                bearing: wrap_pi((o.center.1 - robot.y).atan2(o.center.0 - robot.x) - robot.heading),
                half_angle: (o.radius / d).min(1.0).asin(),
            })
        })
        .collect();
    cands.sort_by(|a, b| a.d.total_cmp(&b.d).then(a.obstacle.id.cmp(&b.obstacle.id)));

    let mut segments = Vec::new();
    let mut occlusions = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        let o = c.obstacle;
        let mut seg = camera.project_disk(o.id, c.d, c.bearing, o.radius, o.height);
        let mut cuts = Vec::new();
        let mut strip = seg.h;
        for front in &cands[..i] {
            let delta = wrap_pi(front.bearing - c.bearing);
            if delta.abs() >= front.half_angle + c.half_angle {
                continue;
            }
            cuts.push((delta - front.half_angle, delta + front.half_angle));
            let front_top = camera.top_row(front.d, front.obstacle.height);
            strip = strip.min((front_top - seg.y).clamp(0.0, seg.h));
        }
        if cuts.is_empty() {
            if seg.w * seg.h >= camera.min_segment_area {
                segments.push(seg);
            }
            continue;
        }
        let ppr = camera.pixels_per_radian(seg.y);
        let visible: Vec<(f64, f64)> = subtract_intervals(-c.half_angle, c.half_angle, &mut cuts)
            .into_iter()
            .map(|(a, b)| (camera.x_of_bearing(c.bearing + 0.5 * (a + b)), (b - a) * ppr))
            .collect();
        let occ = Occlusion {
            obstacle_id: o.id,
            strip,
            visible,
        };
        let open: f64 = occ.visible.iter().map(|p| p.1).sum();
        let area = strip * seg.w + open * (seg.h - strip);
        if strip <= 0.0 {
            match occ.widest_piece() {
                Some((x, w)) => {
                    seg.x = x;
                    seg.w = w;
                }
                None => continue,
            }
        }
        if area >= camera.min_segment_area && seg.w > 0.0 {
            segments.push(seg);
            occlusions.push(occ);
        }
    }
    segments.sort_by_key(|s| s.obstacle_id);
    occlusions.sort_by_key(|o| o.obstacle_id);
    Observation {
        state: SensoryState::new(0, segments),
        occlusions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationConfig {
    /// Standard deviation of the additive pixel noise on w, x, y, h.
    pub noise_sigma: f64,
    /// An occluded obstacle whose visible top strip is thinner than this is
    /// seen only through its widest unoccluded azimuthal piece.
    pub strip_threshold: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 1.0,
            strip_threshold: 2.0,
        }
    }
}

impl DegradationConfig {
    pub fn none() -> Self {
        Self {
            noise_sigma: 0.0,
            strip_threshold: 0.0,
        }
    }
}

/// Applies the misperception model: thin occluded obstacles collapse to their
/// visible chord, then every feature receives Gaussian pixel noise.
pub fn degrade_observation(obs: &Observation, cfg: &DegradationConfig, rng: &mut impl Rng) -> SensoryState {
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite sigma"));
    let mut out = Vec::with_capacity(obs.state.segments.len());
    for seg in &obs.state.segments {
        let mut s = *seg;
        if let Some(occ) = obs.occlusions.iter().find(|o| o.obstacle_id == s.obstacle_id) {
            if occ.strip < cfg.strip_threshold {
                match occ.widest_piece() {
                    Some((x, w)) => {
                        s.x = x;
                        s.w = w;
                    }
                    None => continue,
                }
            }
        }
        if let Some(n) = &noise {
            s.w = (s.w + n.sample(rng)).max(1.0);
            s.x = wrap_x(s.x + n.sample(rng), PANORAMA_WIDTH);
            s.y = (s.y + n.sample(rng)).clamp(0.0, PANORAMA_HEIGHT);
            s.h = (s.h + n.sample(rng)).max(0.0);
        }
        out.push(s);
    }
    SensoryState::new(obs.state.step, out)
}

/// `ŵ = a_y·y + a_h·h + a_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthModel {
    pub a_y: f64,
    pub a_h: f64,
    pub a_0: f64,
    pub r2: f64,
}

impl WidthModel {
    pub fn predict(&self, y: f64, h: f64) -> f64 {
        self.a_y * y + self.a_h * h + self.a_0
    }
}

/// Initial-state correction: piecewise width models split on `y` plus the
/// line `y = line_slope·w + line_intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionModel {
    pub split_row: f64,
    pub far: WidthModel,
    pub near: WidthModel,
    pub line_slope: f64,
    pub line_intercept: f64,
    pub line_r2: f64,
}

impl CorrectionModel {
    /// The coefficients measured on the original robot.
    pub fn published() -> Self {
        Self {
            split_row: 135.0,
            far: WidthModel { a_y: 2.12, a_h: 1.35, a_0: -197.6, r2: 0.97 },
            near: WidthModel { a_y: 3.53, a_h: -0.039, a_0: -291.4, r2: 0.80 },
            line_slope: 0.265,
            line_intercept: 87.0,
            line_r2: 0.98,
        }
    }

    pub fn width_model(&self, y: f64) -> &WidthModel {
        if y < self.split_row {
            &self.far
        } else {
            &self.near
        }
    }

    pub fn expected_width(&self, y: f64, h: f64) -> f64 {
        self.width_model(y).predict(y, h)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("split_row {}\n", self.split_row);
        for (name, m) in [("far", &self.far), ("near", &self.near)] {
            s += &format!("{name}_a_y {}\n{name}_a_h {}\n{name}_a_0 {}\n{name}_r2 {}\n", m.a_y, m.a_h, m.a_0, m.r2);
        }
        s += &format!("line_slope {}\nline_intercept {}\nline_r2 {}\n", self.line_slope, self.line_intercept, self.line_r2);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = crate::kv::KeyValues::parse(text)?;
        let width = |name: &str| -> Result<WidthModel> {
            Ok(WidthModel {
                a_y: kv.require(&format!("{name}_a_y"))?,
                a_h: kv.require(&format!("{name}_a_h"))?,
                a_0: kv.require(&format!("{name}_a_0"))?,
                r2: kv.get(&format!("{name}_r2"))?.unwrap_or(f64::NAN),
            })
        };
        Ok(Self {
            split_row: kv.require("split_row")?,
            far: width("far")?,
            near: width("near")?,
            line_slope: kv.require("line_slope")?,
            line_intercept: kv.require("line_intercept")?,
            line_r2: kv.get("line_r2")?.unwrap_or(f64::NAN),
        })
    }
}

fn fit_width_model(points: &[&Segment]) -> Result<WidthModel> {
    let ys: Vec<f64> = points.iter().map(|s| s.y).collect();
    let hs: Vec<f64> = points.iter().map(|s| s.h).collect();
    if is_constant(&ys) || is_constant(&hs) {
        return Err(Error::DegenerateDesign("constant regressor in width model".into()));
    }
    let a = DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => ys[i],
        1 => hs[i],
        _ => 1.0,
    });
    let t = DVector::from_iterator(points.len(), points.iter().map(|s| s.w));
    let b = least_squares(&a, &t)?;
    let pred: Vec<f64> = (0..points.len()).map(|i| b[0] * ys[i] + b[1] * hs[i] + b[2]).collect();
    Ok(WidthModel {
        a_y: b[0],
        a_h: b[1],
        a_0: b[2],
        r2: r_squared(t.as_slice(), &pred),
    })
}

pub const MIN_CORRECTION_POINTS: usize = 50;

/// Fits the correction model by ordinary least squares on segments whose
/// width is fully observed.
pub fn fit_correction_model(dataset: &[Segment], split_row: f64) -> Result<CorrectionModel> {
    let (far, near): (Vec<&Segment>, Vec<&Segment>) = dataset.iter().partition(|s| s.y < split_row);
    for (name, side) in [("far", &far), ("near", &near)] {
        if side.len() < MIN_CORRECTION_POINTS {
            return Err(Error::InsufficientData(format!(
                "{} {name} points, need {MIN_CORRECTION_POINTS}",
                side.len()
            )));
        }
    }
    let far_m = fit_width_model(&far)?;
    let near_m = fit_width_model(&near)?;

    let ws: Vec<f64> = dataset.iter().map(|s| s.w).collect();
    if is_constant(&ws) {
        return Err(Error::DegenerateDesign("constant width in line fit".into()));
    }
    let a = DMatrix::from_fn(dataset.len(), 2, |i, j| if j == 0 { ws[i] } else { 1.0 });
    let t = DVector::from_iterator(dataset.len(), dataset.iter().map(|s| s.y));
    let b = least_squares(&a, &t)?;
    let pred: Vec<f64> = ws.iter().map(|w| b[0] * w + b[1]).collect();
    Ok(CorrectionModel {
        split_row,
        far: far_m,
        near: near_m,
        line_slope: b[0],
        line_intercept: b[1],
        line_r2: r_squared(t.as_slice(), &pred),
    })
}

/// Averages each observed width with the width expected from `(y, h)` and
/// moves `y` onto the width line. Only meant for the initial real state.
pub fn correct_initial_state(state: &SensoryState, model: &CorrectionModel) -> SensoryState {
    let segments = state
        .segments
        .iter()
        .map(|s| {
            let w = 0.5 * (s.w + model.expected_width(s.y, s.h));
            Segment {
                w,
                y: model.line_slope * w + model.line_intercept,
                ..*s
            }
        })
        .collect();
    SensoryState::new(state.step, segments)
}

/// Sampling of single unoccluded obstacles used to fit the correction model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionSampling {
    pub count: usize,
    pub distance: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for CorrectionSampling {
    fn default() -> Self {
        Self {
            count: 2000,
            distance: (0.55, 4.3),
            noise_sigma: 0.5,
        }
    }
}

pub fn correction_dataset(
    camera: &CameraModel,
    sampling: &CorrectionSampling,
    rng: &mut impl Rng,
) -> Vec<Segment> {
    let noise = (sampling.noise_sigma > 0.0).then(|| Normal::new(0.0, sampling.noise_sigma).expect("finite sigma"));
    (0..sampling.count)
        .map(|i| {
            let d = rng.random_range(sampling.distance.0..sampling.distance.1);
            let bearing = rng.random_range(-PI..PI);
            let mut s = camera.project_disk(
                i as u32,
                d,
                bearing,
                crate::world::DEFAULT_OBSTACLE_RADIUS,
                crate::world::DEFAULT_OBSTACLE_HEIGHT,
            );
            if let Some(n) = &noise {
                s.w += n.sample(rng);
                s.y += n.sample(rng);
                s.h = (s.h + n.sample(rng)).max(0.0);
            }
            s
        })
        .collect()
}

/// A standard obstacle dead ahead at each of `distances`.
pub fn calibration_sweep(camera: &CameraModel, distances: &[f64]) -> Vec<Segment> {
    distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            camera.project_disk(
                i as u32,
                d,
                0.0,
                crate::world::DEFAULT_OBSTACLE_RADIUS,
                crate::world::DEFAULT_OBSTACLE_HEIGHT,
            )
        })
        .collect()
}

/// Width-to-distance lookup built from a dense calibration sweep. Used for
/// visualisation only.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCalibration {
    /// `(w, d)` with `w` strictly decreasing.
    table: Vec<(f64, f64)>,
}

impl DistanceCalibration {
    pub fn sweep(camera: &CameraModel) -> Self {
        let start = crate::world::DEFAULT_OBSTACLE_RADIUS + 0.05;
        let n = ((camera.max_range - start) / 0.01).ceil() as usize;
        let ds: Vec<f64> = (0..=n).map(|i| start + i as f64 * 0.01).collect();
        let table = calibration_sweep(camera, &ds)
            .iter()
            .zip(&ds)
            .map(|(s, &d)| (s.w, d))
            .collect();
        Self { table }
    }

    pub fn distance(&self, w: f64) -> f64 {
        let t = &self.table;
        if w >= t[0].0 {
            return t[0].1;
        }
        let last = t[t.len() - 1];
        if w <= last.0 {
            return last.1;
        }
        let i = t.partition_point(|p| p.0 > w);
        let (w0, d0) = t[i - 1];
        let (w1, d1) = t[i];
        d0 + (w - w0) / (w1 - w0) * (d1 - d0)
    }
}

pub fn write_states<W: Write>(states: &[SensoryState], mut out: W) -> std::io::Result<()> {
    for st in states {
        writeln!(out, "obs_state {}", st.step)?;
        for s in &st.segments {
            writeln!(out, "seg {} {} {} {} {}", s.obstacle_id, s.w, s.x, s.y, s.h)?;
        }
    }
    Ok(())
}

pub fn read_states<R: BufRead>(input: R) -> Result<Vec<SensoryState>> {
    let mut states: Vec<SensoryState> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["obs_state", t] => {
                let step = t.parse().map_err(|_| parse_err(lineno, "bad step index"))?;
                states.push(SensoryState::new(step, Vec::new()));
            }
            ["seg", id, rest @ ..] if rest.len() == 4 => {
                let st = states
                    .last_mut()
                    .ok_or_else(|| parse_err(lineno, "segment before obs_state"))?;
                let id = id.parse().map_err(|_| parse_err(lineno, "bad segment id"))?;
                let mut v = [0.0; 4];
                for (slot, tok) in v.iter_mut().zip(rest) {
                    *slot = tok
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad number '{tok}'")))?;
                }
                st.segments.push(Segment { obstacle_id: id, w: v[0], x: v[1], y: v[2], h: v[3] });
            }
            _ => return Err(parse_err(lineno, format!("unrecognized line '{line}'"))),
        }
    }
    Ok(states)
}
