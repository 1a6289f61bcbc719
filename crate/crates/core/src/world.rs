//! Ground-truth 2D world: robot pose and actuation, disk obstacles, collision
//! geometry, and the parametric dead-end / corridor scene generator.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{parse_err, Error, Result};
use crate::rng::seeded_rng;

/// Effective on-the-spot rotation per turn command: 60 px of a 1571 px
/// panorama, i.e. about 13.75 degrees.
pub const DEFAULT_TURN_ANGLE: f64 = TAU * 60.0 / 1571.0;
pub const DEFAULT_FORWARD_STEP: f64 = 0.10;
pub const DEFAULT_BUMPER_RADIUS: f64 = 0.30;
pub const DEFAULT_OBSTACLE_RADIUS: f64 = 0.20;
pub const DEFAULT_OBSTACLE_HEIGHT: f64 = 0.30;

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Robot pose in world coordinates. Heading is counterclockwise from +x and
/// kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (p.0 - self.x).hypot(p.1 - self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotorCommand {
    Forward,
    Left,
    Right,
}

impl MotorCommand {
    /// Canonical order used for tie-breaking and enumeration.
    pub const ALL: [MotorCommand; 3] = [MotorCommand::Forward, MotorCommand::Left, MotorCommand::Right];

    pub fn is_turn(self) -> bool {
        !matches!(self, MotorCommand::Forward)
    }

    /// The counteracting turn, or `None` for `Forward`.
    pub fn opposite(self) -> Option<MotorCommand> {
        match self {
            MotorCommand::Forward => None,
            MotorCommand::Left => Some(MotorCommand::Right),
            MotorCommand::Right => Some(MotorCommand::Left),
        }
    }

    pub fn index(self) -> usize {
        match self {
            MotorCommand::Forward => 0,
            MotorCommand::Left => 1,
            MotorCommand::Right => 2,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            MotorCommand::Forward => 'F',
            MotorCommand::Left => 'L',
            MotorCommand::Right => 'R',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'F' => Some(MotorCommand::Forward),
            'L' => Some(MotorCommand::Left),
            'R' => Some(MotorCommand::Right),
            _ => None,
        }
    }
}

impl fmt::Display for MotorCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Renders a command sequence as a compact string such as `FFLLF`.
pub fn sequence_string(seq: &[MotorCommand]) -> String {
    seq.iter().map(|c| c.as_char()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuationParams {
    pub forward_step: f64,
    pub turn_angle: f64,
}

impl Default for ActuationParams {
    fn default() -> Self {
        Self {
            forward_step: DEFAULT_FORWARD_STEP,
            turn_angle: DEFAULT_TURN_ANGLE,
        }
    }
}

impl ActuationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.forward_step > 0.0) {
            return Err(Error::InvalidParameter("forward_step must be positive".into()));
        }
        if !(self.turn_angle > 0.0 && self.turn_angle < PI / 2.0) {
            return Err(Error::InvalidParameter("turn_angle must lie in (0, pi/2)".into()));
        }
        Ok(())
    }
}

/// Executes one motor command on the ground-truth pose. Turns are pure
/// rotations on the spot.
pub fn apply_motor(pose: Pose, cmd: MotorCommand, params: &ActuationParams) -> Pose {
    match cmd {
        MotorCommand::Forward => Pose::new(
            pose.x + params.forward_step * pose.heading.cos(),
            pose.y + params.forward_step * pose.heading.sin(),
            pose.heading,
        ),
        MotorCommand::Left => Pose::new(pose.x, pose.y, pose.heading + params.turn_angle),
        MotorCommand::Right => Pose::new(pose.x, pose.y, pose.heading - params.turn_angle),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorTag {
    Yellow,
    Green,
    Red,
}

impl ColorTag {
    pub const ALL: [ColorTag; 3] = [ColorTag::Yellow, ColorTag::Green, ColorTag::Red];

    pub fn name(self) -> &'static str {
        match self {
            ColorTag::Yellow => "yellow",
            ColorTag::Green => "green",
            ColorTag::Red => "red",
        }
    }
}

impl FromStr for ColorTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "yellow" => Ok(ColorTag::Yellow),
            "green" => Ok(ColorTag::Green),
            "red" => Ok(ColorTag::Red),
            other => Err(format!("unknown color '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleDisk {
    pub id: u32,
    pub center: (f64, f64),
    pub radius: f64,
    pub height: f64,
    pub color: ColorTag,
}

impl ObstacleDisk {
    pub fn new(id: u32, center: (f64, f64)) -> Self {
        Self {
            id,
            center,
            radius: DEFAULT_OBSTACLE_RADIUS,
            height: DEFAULT_OBSTACLE_HEIGHT,
            color: ColorTag::Yellow,
        }
    }

    /// Surface-to-surface distance to another disk (negative when they overlap).
    pub fn surface_gap(&self, other: &ObstacleDisk) -> f64 {
        let d = (self.center.0 - other.center.0).hypot(self.center.1 - other.center.1);
        d - self.radius - other.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneLabel {
    DeadEnd,
    Corridor,
    Unlabeled,
}

impl SceneLabel {
    pub fn name(self) -> &'static str {
        match self {
            SceneLabel::DeadEnd => "dead_end",
            SceneLabel::Corridor => "corridor",
            SceneLabel::Unlabeled => "unlabeled",
        }
    }
}

impl FromStr for SceneLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dead_end" | "dead-end" | "deadend" => Ok(SceneLabel::DeadEnd),
            "corridor" => Ok(SceneLabel::Corridor),
            "unlabeled" => Ok(SceneLabel::Unlabeled),
            other => Err(format!("unknown scene label '{other}'")),
        }
    }
}

impl fmt::Display for SceneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldScene {
    /// Obstacles in arrangement order: consecutive entries are neighbours
    /// along the wall chain.
    pub obstacles: Vec<ObstacleDisk>,
    pub robot_start: Pose,
    pub label: SceneLabel,
    pub extent: (f64, f64),
}

impl WorldScene {
    pub fn validate(&self) -> Result<()> {
        for o in &self.obstacles {
            if !(o.radius > 0.0 && o.height > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "obstacle {} must have positive radius and height",
                    o.id
                )));
            }
            let (x, y) = o.center;
            if x < 0.0 || y < 0.0 || x > self.extent.0 || y > self.extent.1 {
                return Err(Error::InvalidParameter(format!(
                    "obstacle {} lies outside the scene extent",
                    o.id
                )));
            }
        }
        check_overlaps(&self.obstacles)
    }

    pub fn obstacle(&self, id: u32) -> Option<&ObstacleDisk> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.obstacles.len().max(1) as f64;
        let (sx, sy) = self
            .obstacles
            .iter()
            .fold((0.0, 0.0), |(sx, sy), o| (sx + o.center.0, sy + o.center.1));
        (sx / n, sy / n)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "scene {} {} {}", self.label, self.extent.0, self.extent.1)?;
        let r = &self.robot_start;
        writeln!(out, "robot {} {} {}", r.x, r.y, r.heading)?;
        for o in &self.obstacles {
            writeln!(
                out,
                "obs {} {} {} {} {} {}",
                o.id,
                o.center.0,
                o.center.1,
                o.radius,
                o.height,
                o.color.name()
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("scene text is ASCII")
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut header: Option<(SceneLabel, (f64, f64))> = None;
        let mut robot = None;
        let mut obstacles = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() || toks[0].starts_with('#') {
                continue;
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad number '{s}'")))
            };
            match (toks[0], toks.len()) {
                ("scene", 4) => {
                    let label = toks[1].parse().map_err(|e: String| parse_err(lineno, e))?;
                    header = Some((label, (num(toks[2])?, num(toks[3])?)));
                }
                ("robot", 4) => {
                    robot = Some(Pose::new(num(toks[1])?, num(toks[2])?, num(toks[3])?));
                }
                ("obs", 7) => {
                    let id = toks[1]
                        .parse::<u32>()
                        .map_err(|_| parse_err(lineno, "bad obstacle id"))?;
                    obstacles.push(ObstacleDisk {
                        id,
                        center: (num(toks[2])?, num(toks[3])?),
                        radius: num(toks[4])?,
                        height: num(toks[5])?,
                        color: toks[6].parse().map_err(|e: String| parse_err(lineno, e))?,
                    });
                }
                _ => return Err(parse_err(lineno, format!("unrecognized line '{line}'"))),
            }
        }
        let (label, extent) = header.ok_or_else(|| parse_err(0, "missing 'scene' header"))?;
        let robot_start = robot.ok_or_else(|| parse_err(0, "missing 'robot' line"))?;
        let scene = WorldScene {
            obstacles,
            robot_start,
            label,
            extent,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }
}

fn check_overlaps(obstacles: &[ObstacleDisk]) -> Result<()> {
    for (i, a) in obstacles.iter().enumerate() {
        for b in &obstacles[i + 1..] {
            if a.surface_gap(b) <= 0.0 {
                return Err(Error::Overlap { a: a.id, b: b.id });
            }
        }
    }
    Ok(())
}

/// True iff the virtual bumper of a robot at `pose` touches any obstacle.
pub fn check_collision(pose: &Pose, scene: &WorldScene, bumper_radius: f64) -> bool {
    scene
        .obstacles
        .iter()
        .any(|o| pose.distance_to(o.center) < bumper_radius + o.radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapStat {
    pub first: u32,
    pub second: u32,
    /// Surface-to-surface distance in meters.
    pub gap: f64,
}

/// Surface gaps between neighbouring obstacles along the arrangement chain.
pub fn gap_statistics(scene: &WorldScene) -> Result<Vec<GapStat>> {
    if scene.obstacles.len() < 2 {
        return Err(Error::InvalidParameter(
            "gap statistics need at least two obstacles".into(),
        ));
    }
    check_overlaps(&scene.obstacles)?;
    Ok(scene
        .obstacles
        .windows(2)
        .map(|w| GapStat {
            first: w[0].id,
            second: w[1].id,
            gap: w[0].surface_gap(&w[1]),
        })
        .collect())
}

/// Scene generator parameters. Obstacles are laid out along a U-shaped
/// wall chain (left wall, back wall, right wall) open towards the robot.
/// Corridors widen one gap in the back half of the chain into a passage.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGenConfig {
    pub obstacle_count: usize,
    pub extent: (f64, f64),
    pub obstacle_radius: f64,
    pub obstacle_height: f64,
    /// Upper bound on every non-passage surface gap.
    pub dead_end_max_gap: f64,
    /// Range the ordinary wall gaps are drawn from.
    pub wall_gap: (f64, f64),
    /// Range of the passage width in corridor scenes.
    pub corridor_gap: (f64, f64),
    pub corridor_gap_count: usize,
    /// Lateral offset of the side walls (obstacle centers) from the axis.
    pub half_width: (f64, f64),
    /// Distance of the robot start in front of the entrance line; negative
    /// values place it inside the mouth.
    pub start_distance: (f64, f64),
    /// Upper bound on the distance from the robot start to the back wall.
    pub max_back_distance: f64,
    pub heading_jitter: f64,
    pub position_jitter: f64,
    pub max_attempts: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            obstacle_count: 10,
            extent: (3.0, 4.0),
            obstacle_radius: DEFAULT_OBSTACLE_RADIUS,
            obstacle_height: DEFAULT_OBSTACLE_HEIGHT,
            dead_end_max_gap: 0.55,
            wall_gap: (0.20, 0.45),
            corridor_gap: (0.85, 1.10),
            corridor_gap_count: 1,
            half_width: (0.90, 1.10),
            start_distance: (-0.8, -0.4),
            max_back_distance: 3.3,
            heading_jitter: 15f64.to_radians(),
            position_jitter: 0.03,
            max_attempts: 1000,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.obstacle_count < 4 {
            return bad("scene generation needs at least four obstacles");
        }
        if !(self.obstacle_radius > 0.0 && self.obstacle_height > 0.0) {
            return bad("obstacle radius and height must be positive");
        }
        if self.wall_gap.0 > self.wall_gap.1 || self.wall_gap.0 < 0.0 {
            return bad("wall_gap range is empty");
        }
        if self.corridor_gap.0 > self.corridor_gap.1 {
            return bad("corridor_gap range is empty");
        }
        if self.corridor_gap_count == 0 || self.corridor_gap_count > 2 {
            return bad("corridor_gap_count must be 1 or 2");
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Point at arc length `s` along the open U polyline
/// (-a,0) -> (-a,depth) -> (a,depth) -> (a,0).
fn u_point(s: f64, a: f64, depth: f64) -> (f64, f64) {
    if s <= depth {
        (-a, s)
    } else if s <= depth + 2.0 * a {
        (-a + (s - depth), depth)
    } else {
        (a, depth - (s - depth - 2.0 * a))
    }
}

pub fn generate_scene(kind: SceneLabel, seed: u64, params: &SceneGenConfig) -> Result<WorldScene> {
    params.validate()?;
    if kind == SceneLabel::Unlabeled {
        return Err(Error::InvalidParameter(
            "scenes can only be generated as dead ends or corridors".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut last_reason = String::new();
    for _ in 0..params.max_attempts {
        match try_layout(kind, params, &mut rng) {
            Ok(scene) => return Ok(scene),
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::GenerationFailure {
        attempts: params.max_attempts,
        reason: last_reason,
    })
}

fn try_layout(
    kind: SceneLabel,
    p: &SceneGenConfig,
    rng: &mut impl Rng,
) -> std::result::Result<WorldScene, String> {
    let n = p.obstacle_count;
    let intervals = n - 1;
    let r = p.obstacle_radius;
    let a = uniform(rng, p.half_width);
    let start = uniform(rng, p.start_distance);

    let mut gaps: Vec<f64> = (0..intervals).map(|_| uniform(rng, p.wall_gap)).collect();
    let mut passages = Vec::new();
    if kind == SceneLabel::Corridor {
        while passages.len() < p.corridor_gap_count {
            let j = rng.random_range(1..intervals - 1);
            if !passages.contains(&j) {
                passages.push(j);
            }
        }
        for &j in &passages {
            gaps[j] = uniform(rng, p.corridor_gap);
        }
    }

    let spacing: Vec<f64> = gaps.iter().map(|g| g + 2.0 * r).collect();
    let total: f64 = spacing.iter().sum();
    let depth = (total - 2.0 * a) / 2.0;
    if depth < 1.0 {
        return Err(format!("arrangement too shallow ({depth:.2} m)"));
    }
    if start + depth > p.max_back_distance {
        return Err(format!("back wall too far ({:.2} m)", start + depth));
    }

    let mut arc = Vec::with_capacity(n);
    let mut s = 0.0;
    arc.push(0.0);
    for sp in &spacing {
        s += sp;
        arc.push(s);
    }
    for &j in &passages {
        let m = 0.5 * (arc[j] + arc[j + 1]);
        if m < 0.5 * depth || m > total - 0.5 * depth {
            return Err("passage not in the back half of the arrangement".into());
        }
    }

    // entrance line at local y = 0; robot start at local (0, -start), inside
    // the mouth when start is negative
    let base_y = start.max(0.0) + 0.3;
    let cx = p.extent.0 / 2.0;
    let mut obstacles = Vec::with_capacity(n);
    for (i, &si) in arc.iter().enumerate() {
        let (lx, ly) = u_point(si, a, depth);
        let jx = uniform(rng, (-p.position_jitter, p.position_jitter));
        let jy = uniform(rng, (-p.position_jitter, p.position_jitter));
        let color = ColorTag::ALL[rng.random_range(0..3)];
        obstacles.push(ObstacleDisk {
            id: i as u32,
            center: (cx + lx + jx, base_y + ly + jy),
            radius: r,
            height: p.obstacle_height,
            color,
        });
    }

    for o in &obstacles {
        let (x, y) = o.center;
        if x - r < 0.0 || y - r < 0.0 || x + r > p.extent.0 || y + r > p.extent.1 {
            return Err("arrangement does not fit the extent".into());
        }
    }
    for (i, a_o) in obstacles.iter().enumerate() {
        for b_o in &obstacles[i + 1..] {
            if a_o.surface_gap(b_o) < 0.02 {
                return Err("obstacles too close".into());
            }
        }
    }
    for (j, w) in obstacles.windows(2).enumerate() {
        let g = w[0].surface_gap(&w[1]);
        if passages.contains(&j) {
            if g < p.corridor_gap.0 || g > p.corridor_gap.1 {
                return Err(format!("passage width {g:.3} out of range"));
            }
        } else if g > p.dead_end_max_gap {
            return Err(format!("wall gap {g:.3} exceeds the dead-end bound"));
        }
    }

    let robot_xy = (cx, base_y - start);
    let mut scene = WorldScene {
        obstacles,
        robot_start: Pose::new(robot_xy.0, robot_xy.1, 0.0),
        label: kind,
        extent: p.extent,
    };
    let (gx, gy) = scene.centroid();
    let heading = (gy - robot_xy.1).atan2(gx - robot_xy.0)
        + uniform(rng, (-p.heading_jitter, p.heading_jitter));
    scene.robot_start = Pose::new(robot_xy.0, robot_xy.1, heading);
    if check_collision(&scene.robot_start, &scene, DEFAULT_BUMPER_RADIUS) {
        return Err("robot start collides".into());
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn scene_with(obstacles: Vec<ObstacleDisk>) -> WorldScene {
        WorldScene {
            obstacles,
            robot_start: Pose::new(0.0, 0.0, 0.0),
            label: SceneLabel::Unlabeled,
            extent: (10.0, 10.0),
        }
    }

    #[test]
    fn forward_moves_one_step_along_heading() {
        let p = apply_motor(Pose::new(0.0, 0.0, 0.0), MotorCommand::Forward, &ActuationParams::default());
        assert_abs_diff_eq!(p.x, 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.heading, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn left_turn_is_sixty_panorama_pixels() {
        let p = apply_motor(Pose::new(0.0, 0.0, 0.0), MotorCommand::Left, &ActuationParams::default());
        assert_abs_diff_eq!(p.heading, 60.0 / 1571.0 * TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(p.heading, 0.23998, epsilon = 5e-5);
        assert_eq!((p.x, p.y), (0.0, 0.0));
    }

    #[test]
    fn heading_wraps_below_zero() {
        let p = apply_motor(Pose::new(0.0, 0.0, 0.0), MotorCommand::Right, &ActuationParams::default());
        assert!(p.heading > PI && p.heading < TAU);
    }

    #[test]
    fn actuation_validation() {
        assert!(ActuationParams::default().validate().is_ok());
        let bad = ActuationParams { turn_angle: 2.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn collision_threshold_is_bumper_plus_radius() {
        let s = scene_with(vec![ObstacleDisk::new(0, (0.49, 0.0))]);
        assert!(check_collision(&Pose::new(0.0, 0.0, 0.0), &s, 0.30));
        let s = scene_with(vec![ObstacleDisk::new(0, (0.51, 0.0))]);
        assert!(!check_collision(&Pose::new(0.0, 0.0, 0.0), &s, 0.30));
        assert!(!check_collision(&Pose::new(0.0, 0.0, 0.0), &scene_with(vec![]), 0.30));
    }

    #[test]
    fn gap_of_two_disks() {
        let s = scene_with(vec![
            ObstacleDisk::new(0, (1.0, 1.0)),
            ObstacleDisk::new(1, (2.05, 1.0)),
        ]);
        let g = gap_statistics(&s).unwrap();
        assert_eq!(g.len(), 1);
        assert_abs_diff_eq!(g[0].gap, 0.65, epsilon = 1e-12);
    }

    #[test]
    fn gap_statistics_rejects_overlap_and_singletons() {
        let s = scene_with(vec![
            ObstacleDisk::new(0, (1.0, 1.0)),
            ObstacleDisk::new(1, (1.3, 1.0)),
        ]);
        assert!(matches!(gap_statistics(&s), Err(Error::Overlap { .. })));
        let s = scene_with(vec![ObstacleDisk::new(0, (1.0, 1.0))]);
        assert!(gap_statistics(&s).is_err());
    }

    #[test]
    fn generated_corridor_has_one_passage() {
        let cfg = SceneGenConfig::default();
        for seed in 0..20 {
            let s = generate_scene(SceneLabel::Corridor, seed, &cfg).unwrap();
            s.validate().unwrap();
            assert_eq!(s.obstacles.len(), 10);
            let gaps = gap_statistics(&s).unwrap();
            let wide: Vec<_> = gaps.iter().filter(|g| g.gap > cfg.dead_end_max_gap).collect();
            assert_eq!(wide.len(), 1, "seed {seed}");
            assert!(wide[0].gap >= 0.85 && wide[0].gap <= 1.10);
            assert_eq!(s.label, SceneLabel::Corridor);
        }
    }

    #[test]
    fn two_passage_corridors_are_configurable() {
        let cfg = SceneGenConfig { corridor_gap_count: 2, ..Default::default() };
        let s = generate_scene(SceneLabel::Corridor, 3, &cfg).unwrap();
        let wide = gap_statistics(&s).unwrap().iter().filter(|g| g.gap > 0.55).count();
        assert_eq!(wide, 2);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneGenConfig::default();
        let a = generate_scene(SceneLabel::DeadEnd, 42, &cfg).unwrap();
        let b = generate_scene(SceneLabel::DeadEnd, 42, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(SceneLabel::DeadEnd, 43, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unsatisfiable_generation_fails() {
        let cfg = SceneGenConfig {
            dead_end_max_gap: 0.1,
            max_attempts: 20,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(SceneLabel::DeadEnd, 1, &cfg),
            Err(Error::GenerationFailure { .. })
        ));
        assert!(generate_scene(SceneLabel::Unlabeled, 1, &SceneGenConfig::default()).is_err());
    }

    #[test]
    fn robot_starts_inside_the_mouth_facing_the_arrangement() {
        let cfg = SceneGenConfig::default();
        for seed in 0..10 {
            let s = generate_scene(SceneLabel::DeadEnd, seed, &cfg).unwrap();
            let (gx, gy) = s.centroid();
            let bearing = (gy - s.robot_start.y).atan2(gx - s.robot_start.x);
            let off = (normalize_angle(s.robot_start.heading - bearing + PI) - PI).abs();
            assert!(off <= cfg.heading_jitter + 1e-9);
            // the two chain ends sit on the entrance line
            let first = s.obstacles[0].center;
            let last = s.obstacles[s.obstacles.len() - 1].center;
            let entrance = 0.5 * (first.1 + last.1);
            let inside = s.robot_start.y - entrance;
            assert!(inside > 0.4 - 0.05 && inside < 0.8 + 0.05, "{inside}");
            assert!(s.robot_start.x > first.0 && s.robot_start.x < last.0);
        }
    }

    #[test]
    fn scene_file_round_trip() {
        let s = generate_scene(SceneLabel::Corridor, 9, &SceneGenConfig::default()).unwrap();
        let text = s.to_text();
        assert!(text.starts_with("scene corridor 3 4\nrobot "));
        let back = WorldScene::from_text(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn scene_file_errors_carry_line_numbers() {
        let err = WorldScene::from_text("scene corridor 3 4\nrobot 1 1 0\nobs 0 1 x 0.2 0.3 red\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(WorldScene::from_text("robot 1 1 0\n").is_err());
    }

    proptest! {
        #[test]
        fn rotations_keep_position(x in -5.0..5.0f64, y in -5.0..5.0f64, h in 0.0..TAU) {
            let p = Pose::new(x, y, h);
            let params = ActuationParams::default();
            for cmd in [MotorCommand::Left, MotorCommand::Right] {
                let q = apply_motor(p, cmd, &params);
                prop_assert_eq!((q.x, q.y), (p.x, p.y));
                prop_assert!(q.heading >= 0.0 && q.heading < TAU);
            }
            let back = apply_motor(apply_motor(p, MotorCommand::Left, &params), MotorCommand::Right, &params);
            let dh = (normalize_angle(back.heading - p.heading + PI) - PI).abs();
            prop_assert!(dh < 1e-12);
        }

        #[test]
        fn collision_matches_grid_clearance(px in 0.0..3.0f64, py in 0.0..3.0f64, seed in 0u64..50) {
            // brute force: sample the bumper disk boundary and interior on a grid
            let mut rng = seeded_rng(seed);
            let obstacles: Vec<ObstacleDisk> = (0..3)
                .map(|i| ObstacleDisk::new(i, (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))))
                .collect();
            let scene = scene_with(obstacles);
            let pose = Pose::new(px, py, 0.0);
            let clearance = scene
                .obstacles
                .iter()
                .map(|o| pose.distance_to(o.center) - o.radius - 0.30)
                .fold(f64::INFINITY, f64::min);
            prop_assume!(clearance.abs() > 1e-3);
            let mut touched = false;
            for o in &scene.obstacles {
                for i in 0..=80 {
                    for j in 0..=80 {
                        let gx = px - 0.3 + 0.6 * i as f64 / 80.0;
                        let gy = py - 0.3 + 0.6 * j as f64 / 80.0;
                        let in_bumper = (gx - px).hypot(gy - py) <= 0.3;
                        let in_obst = (gx - o.center.0).hypot(gy - o.center.1) < o.radius;
                        touched |= in_bumper && in_obst;
                    }
                }
            }
            // grid resolution 7.5 mm: only assert away from the boundary
            prop_assume!(clearance.abs() > 0.01);
            prop_assert_eq!(check_collision(&pose, &scene, 0.30), touched);
        }
    }
}
