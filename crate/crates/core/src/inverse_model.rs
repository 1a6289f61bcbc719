//! Inverse model: blob images, pairwise PLS regression modules, the three
//! decision variants, and training data from cost-minimising short-term
//! search.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{parse_err, Error, Result};
use crate::forward_models::{predict_state, tactile_predict, ForwardModels};
use crate::sensor::{degrade_observation, project_scene, CameraModel, DegradationConfig, SensoryState, PANORAMA_HEIGHT, PANORAMA_WIDTH};
use crate::world::{apply_motor, check_collision, ActuationParams, MotorCommand, Pose, WorldScene};

pub const BLOB_WIDTH: usize = 197;
pub const BLOB_HEIGHT: usize = 42;
pub const BLOB_PIXELS: usize = BLOB_WIDTH * BLOB_HEIGHT;

/// Binary panorama with every segment drawn as a filled disk. Row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BlobImage {
    pixels: Vec<u8>,
}

impl fmt::Debug for BlobImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlobImage({} of {} set)", self.count(), BLOB_PIXELS)
    }
}

impl Default for BlobImage {
    fn default() -> Self {
        Self { pixels: vec![0; BLOB_PIXELS] }
    }
}

impl BlobImage {
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.pixels[row * BLOB_WIDTH + col] != 0
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Indices of set pixels in the vectorised image.
    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pixels.iter().enumerate().filter(|(_, &p)| p != 0).map(|(i, _)| i)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(BLOB_PIXELS, self.pixels.iter().map(|&p| p as f64))
    }

    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != BLOB_PIXELS {
            return Err(Error::InvalidParameter(format!(
                "blob image needs {BLOB_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self { pixels: pixels.into_iter().map(|p| (p != 0) as u8).collect() })
    }

    /// Plain (ASCII) portable graymap, set pixels white.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "P2\n{BLOB_WIDTH} {BLOB_HEIGHT}\n255")?;
        for row in self.pixels.chunks(BLOB_WIDTH) {
            let line: Vec<&str> = row.iter().map(|&p| if p != 0 { "255" } else { "0" }).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn render_blob_image(state: &SensoryState) -> BlobImage {
    let sx = BLOB_WIDTH as f64 / PANORAMA_WIDTH;
    let sy = BLOB_HEIGHT as f64 / PANORAMA_HEIGHT;
    let wf = BLOB_WIDTH as f64;
    let mut img = BlobImage::default();
    for s in &state.segments {
        let cx = (wf / 2.0).floor() + s.x * sx;
        let cy = s.y * sy;
        let r = s.w * sx / 2.0;
        if !(r >= 0.0) {
            continue;
        }
        let row_lo = (cy - r).ceil().max(0.0) as usize;
        let row_hi = (cy + r).floor().min(BLOB_HEIGHT as f64 - 1.0);
        if row_hi < 0.0 {
            continue;
        }
        let span = r.floor() as i64 + 1;
        let c0 = cx.round() as i64;
        for row in row_lo..=row_hi as usize {
            let dy = row as f64 - cy;
            for c in (c0 - span)..=(c0 + span) {
                let dx = c as f64 - cx;
                if dx * dx + dy * dy <= r * r {
                    let col = c.rem_euclid(BLOB_WIDTH as i64) as usize;
                    img.pixels[row * BLOB_WIDTH + col] = 1;
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub forward: f64,
    pub rotation: f64,
    pub translation_rotation_switch: f64,
    pub opposite_rotation_switch: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            forward: 0.0,
            rotation: 20.0,
            translation_rotation_switch: 10.0,
            opposite_rotation_switch: 1000.0,
        }
    }
}

impl CostParams {
    pub fn move_cost(&self, m: MotorCommand) -> f64 {
        if m.is_turn() {
            self.rotation
        } else {
            self.forward
        }
    }

    pub fn switch_cost(&self, prev: MotorCommand, next: MotorCommand) -> f64 {
        match (prev.is_turn(), next.is_turn()) {
            (false, false) => 0.0,
            (true, true) if prev == next => 0.0,
            (true, true) => self.opposite_rotation_switch,
            _ => self.translation_rotation_switch,
        }
    }

    pub fn sequence_cost(&self, seq: &[MotorCommand]) -> f64 {
        seq.iter().map(|&m| self.move_cost(m)).sum::<f64>()
            + seq.windows(2).map(|w| self.switch_cost(w[0], w[1])).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub sequence: Vec<MotorCommand>,
    pub cost: f64,
}

impl SearchResult {
    pub fn first(&self) -> MotorCommand {
        self.sequence[0]
    }
}

struct Search<'a> {
    fms: &'a ForwardModels,
    costs: &'a CostParams,
    depth: usize,
    path: Vec<MotorCommand>,
    best: Option<SearchResult>,
}

impl Search<'_> {
    fn visit(&mut self, state: &SensoryState, cost: f64) {
        if let Some(b) = &self.best {
            if cost >= b.cost {
                return;
            }
        }
        if self.path.len() == self.depth {
            self.best = Some(SearchResult { sequence: self.path.clone(), cost });
            return;
        }
        let corrector = self.fms.corrector.with_enabled(false);
        for m in MotorCommand::ALL {
            let next = predict_state(&self.fms.visual, state, m, &corrector);
            if tactile_predict(&self.fms.tactile, &next) {
                continue;
            }
            let step = self.costs.move_cost(m)
                + self.path.last().map_or(0.0, |&p| self.costs.switch_cost(p, m));
            self.path.push(m);
            self.visit(&next, cost + step);
            self.path.pop();
        }
    }
}

/// Cheapest collision-free command sequence of length `depth` under the
/// forward models (corrector off). Ties go to the sequence that comes first
/// in Forward < Left < Right order. `None` when every sequence collides.
pub fn short_term_search(
    state: &SensoryState,
    fms: &ForwardModels,
    depth: usize,
    costs: &CostParams,
) -> Option<SearchResult> {
    assert!(depth >= 1, "search depth must be at least 1");
    let mut s = Search {
        fms,
        costs,
        depth,
        path: Vec::with_capacity(depth),
        best: None,
    };
    s.visit(state, 0.0);
    s.best
}

/// PLS1 regression result: `q̂(x) = offset + βᵀ(x − x̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsModel {
    pub mean: DVector<f64>,
    pub beta: DVector<f64>,
    pub components: usize,
}

/// NIPALS PLS1 on centered data. Extraction stops early once the residual
/// covariance vanishes, so `n_components` above the rank is harmless.
pub fn pls_fit(x: &DMatrix<f64>, q: &[f64], n_components: usize) -> Result<PlsModel> {
    let (n, p) = x.shape();
    if n != q.len() {
        return Err(Error::InvalidParameter(format!("{n} rows but {} labels", q.len())));
    }
    if n_components == 0 {
        return Err(Error::InvalidParameter("n_components must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData("PLS needs at least two examples".into()));
    }
    let mean = x.row_mean().transpose();
    let mut xr = x.clone();
    for mut row in xr.row_iter_mut() {
        row -= mean.transpose();
    }
    let scale = xr.norm();
    if scale == 0.0 {
        return Err(Error::DegenerateDesign("PLS design has zero variance".into()));
    }
    let q_mean = q.iter().sum::<f64>() / n as f64;
    let mut yr = DVector::from_iterator(n, q.iter().map(|v| v - q_mean));

    let mut ws: Vec<DVector<f64>> = Vec::new();
    let mut ps: Vec<DVector<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let tol = 1e-12 * scale * (1.0 + yr.norm());
    for _ in 0..n_components {
        let mut w = xr.tr_mul(&yr);
        let wn = w.norm();
        if wn <= tol {
            break;
        }
        w /= wn;
        let t = &xr * &w;
        let tt = t.dot(&t);
        if tt <= tol * tol {
            break;
        }
        let pl = xr.tr_mul(&t) / tt;
        let c = yr.dot(&t) / tt;
        xr -= &t * pl.transpose();
        yr -= &t * c;
        ws.push(w);
        ps.push(pl);
        cs.push(c);
    }
    let k = ws.len();
    if k == 0 {
        return Ok(PlsModel { mean, beta: DVector::zeros(p), components: 0 });
    }
    let w = DMatrix::from_columns(&ws);
    let pm = DMatrix::from_columns(&ps);
    let ptw = pm.tr_mul(&w);
    let inv = ptw
        .try_inverse()
        .ok_or_else(|| Error::DegenerateDesign("singular PLS loading matrix".into()))?;
    let beta = w * (inv * DVector::from_vec(cs));
    Ok(PlsModel { mean, beta, components: k })
}

/// One pairwise movement-selector module.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModule {
    pub pair: (MotorCommand, MotorCommand),
    pub offset: f64,
    pub mean: Vec<f64>,
    pub beta: Vec<f64>,
    base: f64,
}

impl RegressionModule {
    pub fn new(pair: (MotorCommand, MotorCommand), offset: f64, mean: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if mean.len() != BLOB_PIXELS || beta.len() != BLOB_PIXELS {
            return Err(Error::InvalidParameter(format!(
                "module vectors must have length {BLOB_PIXELS}"
            )));
        }
        let base = offset - mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
        Ok(Self { pair, offset, mean, beta, base })
    }

    pub fn from_pls(pair: (MotorCommand, MotorCommand), model: &PlsModel) -> Result<Self> {
        Self::new(pair, 0.5, model.mean.as_slice().to_vec(), model.beta.as_slice().to_vec())
    }

    /// Regression weights as a graymap laid out like the blob image: mid
    /// gray is zero, white the largest positive weight.
    pub fn write_beta_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let scale = self.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        writeln!(out, "P2\n{BLOB_WIDTH} {BLOB_HEIGHT}\n255")?;
        for row in self.beta.chunks(BLOB_WIDTH) {
            let line: Vec<String> = row
                .iter()
                .map(|b| {
                    let v = if scale > 0.0 { 127.5 + 127.5 * b / scale } else { 127.5 };
                    (v.round() as u8).to_string()
                })
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// `q̂(m1, m2) = 0.5 + βᵀ(x − x̄)`, exploiting that blob pixels are 0/1.
pub fn im_regression_q(module: &RegressionModule, blob: &BlobImage) -> f64 {
    module.base + blob.set_indices().map(|i| module.beta[i]).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImVariant {
    Det,
    Prob,
    Random,
}

impl ImVariant {
    pub const ALL: [ImVariant; 3] = [ImVariant::Det, ImVariant::Prob, ImVariant::Random];

    pub fn name(self) -> &'static str {
        match self {
            ImVariant::Det => "det",
            ImVariant::Prob => "prob",
            ImVariant::Random => "random",
        }
    }
}

impl FromStr for ImVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "det" => Ok(ImVariant::Det),
            "prob" => Ok(ImVariant::Prob),
            "random" => Ok(ImVariant::Random),
            other => Err(format!("unknown inverse-model variant '{other}'")),
        }
    }
}

impl fmt::Display for ImVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MODULE_PAIRS: [(MotorCommand, MotorCommand); 3] = [
    (MotorCommand::Forward, MotorCommand::Left),
    (MotorCommand::Forward, MotorCommand::Right),
    (MotorCommand::Left, MotorCommand::Right),
];

/// Canonical module outputs `[q(F,L), q(F,R), q(L,R)]`.
pub type PairQ = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct InverseModel {
    pub modules: [RegressionModule; 3],
    pub variant: ImVariant,
    pub random_probs: [f64; 3],
    pub n_components: usize,
}

pub const RANDOM_WALK_PROBS: [f64; 3] = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];

impl InverseModel {
    pub fn with_variant(&self, variant: ImVariant) -> Self {
        Self { variant, ..self.clone() }
    }

    pub fn pair_q(&self, blob: &BlobImage) -> PairQ {
        [
            im_regression_q(&self.modules[0], blob),
            im_regression_q(&self.modules[1], blob),
            im_regression_q(&self.modules[2], blob),
        ]
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "variant {}", self.variant)?;
        writeln!(out, "n_components {}", self.n_components)?;
        writeln!(
            out,
            "random_probs {} {} {}",
            self.random_probs[0], self.random_probs[1], self.random_probs[2]
        )?;
        for m in &self.modules {
            writeln!(out, "module {} {}", m.pair.0, m.pair.1)?;
            writeln!(out, "offset {}", m.offset)?;
            let row = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            writeln!(out, "mean {}", row(&m.mean))?;
            writeln!(out, "beta {}", row(&m.beta))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut variant = None;
        let mut n_components = None;
        let mut random_probs = RANDOM_WALK_PROBS;
        let mut modules = Vec::new();
        let mut pending: Option<((MotorCommand, MotorCommand), f64, Option<Vec<f64>>)> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let (key, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
            let floats = || -> Result<Vec<f64>> {
                rest.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(lineno, format!("bad number '{t}'"))))
                    .collect()
            };
            match key {
                "" => {}
                "variant" => variant = Some(rest.trim().parse().map_err(|e: String| parse_err(lineno, e))?),
                "n_components" => {
                    n_components = Some(rest.trim().parse().map_err(|_| parse_err(lineno, "bad n_components"))?)
                }
                "random_probs" => {
                    let v = floats()?;
                    if v.len() != 3 {
                        return Err(parse_err(lineno, "random_probs needs three values"));
                    }
                    random_probs = [v[0], v[1], v[2]];
                }
                "module" => {
                    let cmds: Vec<MotorCommand> = rest
                        .split_whitespace()
                        .filter_map(|t| t.chars().next().and_then(MotorCommand::from_char))
                        .collect();
                    if cmds.len() != 2 {
                        return Err(parse_err(lineno, "module needs two commands"));
                    }
                    pending = Some(((cmds[0], cmds[1]), 0.5, None));
                }
                "offset" | "mean" | "beta" => {
                    let p = pending.as_mut().ok_or_else(|| parse_err(lineno, format!("'{key}' before 'module'")))?;
                    match key {
                        "offset" => p.1 = rest.trim().parse().map_err(|_| parse_err(lineno, "bad offset"))?,
                        "mean" => p.2 = Some(floats()?),
                        _ => {
                            let (pair, offset, mean) = pending.take().expect("checked above");
                            let mean = mean.ok_or_else(|| parse_err(lineno, "'beta' before 'mean'"))?;
                            modules.push(
                                RegressionModule::new(pair, offset, mean, floats()?)
                                    .map_err(|e| parse_err(lineno, e.to_string()))?,
                            );
                        }
                    }
                }
                other => return Err(parse_err(lineno, format!("unknown key '{other}'"))),
            }
        }
        let modules: [RegressionModule; 3] = modules
            .try_into()
            .map_err(|_| parse_err(0, "expected exactly three modules"))?;
        for (m, want) in modules.iter().zip(MODULE_PAIRS) {
            if m.pair != want {
                return Err(parse_err(0, "modules must be F-L, F-R, L-R in that order"));
            }
        }
        Ok(Self {
            modules,
            variant: variant.ok_or_else(|| parse_err(0, "missing variant"))?,
            random_probs,
            n_components: n_components.ok_or_else(|| parse_err(0, "missing n_components"))?,
        })
    }
}

/// `q̂(a, b)` for any ordered pair of distinct commands.
pub fn q_between(q: &PairQ, a: MotorCommand, b: MotorCommand) -> f64 {
    use MotorCommand::*;
    match (a, b) {
        (Forward, Left) => q[0],
        (Forward, Right) => q[1],
        (Left, Right) => q[2],
        (Left, Forward) => 1.0 - q[0],
        (Right, Forward) => 1.0 - q[1],
        (Right, Left) => 1.0 - q[2],
        _ => panic!("q is only defined for distinct commands"),
    }
}

/// Ridge goodness `g(m) = min_{m' ≠ m} q̂(m, m')`, indexed F, L, R.
pub fn goodness_from_q(q: &PairQ) -> [f64; 3] {
    MotorCommand::ALL.map(|m| {
        MotorCommand::ALL
            .iter()
            .filter(|&&o| o != m)
            .map(|&o| q_between(q, m, o))
            .fold(f64::INFINITY, f64::min)
    })
}

pub fn im_goodness(im: &InverseModel, blob: &BlobImage) -> [f64; 3] {
    goodness_from_q(&im.pair_q(blob))
}

/// `p(m) ∝ Π q̂(m, m')` over the clamped canonical outputs.
pub fn prob_distribution(q: &PairQ) -> [f64; 3] {
    let c = q.map(|v| v.clamp(0.0, 1.0));
    let raw = MotorCommand::ALL.map(|m| {
        MotorCommand::ALL
            .iter()
            .filter(|&&o| o != m)
            .map(|&o| q_between(&c, m, o))
            .product::<f64>()
    });
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.map(|p| p / total)
    } else {
        [1.0 / 3.0; 3]
    }
}

pub fn sample_from(probs: &[f64; 3], rng: &mut impl Rng) -> MotorCommand {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (m, p) in MotorCommand::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *m;
        }
    }
    MotorCommand::ALL
        .iter()
        .zip(probs)
        .rev()
        .find(|(_, p)| **p > 0.0)
        .map_or(MotorCommand::Right, |(m, _)| *m)
}

/// Decision from module outputs. DET breaks ties Forward > Left > Right.
pub fn decide_from_q(variant: ImVariant, q: &PairQ, random_probs: &[f64; 3], rng: &mut impl Rng) -> MotorCommand {
    match variant {
        ImVariant::Det => {
            let g = goodness_from_q(q);
            let mut best = 0;
            for i in 1..3 {
                if g[i] > g[best] {
                    best = i;
                }
            }
            MotorCommand::ALL[best]
        }
        ImVariant::Prob => sample_from(&prob_distribution(q), rng),
        ImVariant::Random => sample_from(random_probs, rng),
    }
}

pub fn im_decide(im: &InverseModel, blob: &BlobImage, rng: &mut impl Rng) -> MotorCommand {
    let q = match im.variant {
        ImVariant::Random => [0.5; 3],
        _ => im.pair_q(blob),
    };
    decide_from_q(im.variant, &q, &im.random_probs, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImExample {
    pub blob: BlobImage,
    pub label: MotorCommand,
}

/// Examples and 0/1 targets for module `(m1, m2)`: label `m1` maps to 1,
/// `m2` to 0, anything else is left out.
pub fn module_targets(examples: &[ImExample], pair: (MotorCommand, MotorCommand)) -> (Vec<&ImExample>, Vec<f64>) {
    examples
        .iter()
        .filter_map(|e| {
            if e.label == pair.0 {
                Some((e, 1.0))
            } else if e.label == pair.1 {
                Some((e, 0.0))
            } else {
                None
            }
        })
        .unzip()
}

/// Fits the three pairwise modules.
pub fn fit_inverse_model(examples: &[ImExample], n_components: usize, variant: ImVariant) -> Result<InverseModel> {
    let mut modules = Vec::with_capacity(3);
    for pair in MODULE_PAIRS {
        let (rows, q) = module_targets(examples, pair);
        if !q.contains(&1.0) || !q.contains(&0.0) {
            return Err(Error::InsufficientData(format!(
                "module {}-{} needs examples of both commands",
                pair.0, pair.1
            )));
        }
        let x = DMatrix::from_fn(rows.len(), BLOB_PIXELS, |i, j| rows[i].blob.pixels[j] as f64);
        let model = pls_fit(&x, &q, n_components)?;
        modules.push(RegressionModule::from_pls(pair, &model)?);
    }
    Ok(InverseModel {
        modules: modules.try_into().expect("three modules"),
        variant,
        random_probs: RANDOM_WALK_PROBS,
        n_components,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImTrainingConfig {
    pub starts_per_scene: usize,
    pub steps: usize,
    pub search_depth: usize,
    pub costs: CostParams,
    /// Probabilities of the executed random moves (Forward, Left, Right).
    pub walk_probs: [f64; 3],
    /// Start positions after the first are jittered by up to this many meters.
    pub start_jitter: f64,
    pub heading_jitter: f64,
    pub bumper_radius: f64,
}

impl Default for ImTrainingConfig {
    fn default() -> Self {
        Self {
            starts_per_scene: 8,
            steps: 50,
            search_depth: 7,
            costs: CostParams::default(),
            walk_probs: [0.5, 0.25, 0.25],
            start_jitter: 0.4,
            heading_jitter: 0.2,
            bumper_radius: crate::world::DEFAULT_BUMPER_RADIUS,
        }
    }
}

/// Labels real observations along random walks with the first move of the
/// cheapest collision-free short-term sequence.
#[allow(clippy::too_many_arguments)]
pub fn build_im_training_set(
    scenes: &[WorldScene],
    fms: &ForwardModels,
    cfg: &ImTrainingConfig,
    camera: &CameraModel,
    degradation: &DegradationConfig,
    actuation: &ActuationParams,
    rng: &mut impl Rng,
) -> Vec<ImExample> {
    let mut out = Vec::new();
    for scene in scenes {
        for k in 0..cfg.starts_per_scene {
            // viewing directions are spread evenly around the start heading
            let view = scene.robot_start.heading + k as f64 * std::f64::consts::TAU / cfg.starts_per_scene as f64;
            let mut pose = Pose::new(scene.robot_start.x, scene.robot_start.y, view);
            if k > 0 {
                for _ in 0..100 {
                    let cand = Pose::new(
                        scene.robot_start.x + rng.random_range(-cfg.start_jitter..=cfg.start_jitter),
                        scene.robot_start.y + rng.random_range(-cfg.start_jitter..=cfg.start_jitter),
                        view + rng.random_range(-cfg.heading_jitter..=cfg.heading_jitter),
                    );
                    if !check_collision(&cand, scene, cfg.bumper_radius) {
                        pose = cand;
                        break;
                    }
                }
            }
            for _ in 0..cfg.steps {
                let obs = degrade_observation(&project_scene(scene, &pose, camera), degradation, rng);
                if let Some(best) = short_term_search(&obs, fms, cfg.search_depth, &cfg.costs) {
                    out.push(ImExample { blob: render_blob_image(&obs), label: best.first() });
                }
                let mut cmd = sample_from(&cfg.walk_probs, rng);
                if !cmd.is_turn() && check_collision(&apply_motor(pose, cmd, actuation), scene, cfg.bumper_radius) {
                    cmd = if rng.random::<bool>() { MotorCommand::Left } else { MotorCommand::Right };
                }
                pose = apply_motor(pose, cmd, actuation);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_models::{TactileFm, VisualFm};
    use crate::rng::seeded_rng;
    use crate::sensor::Segment;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn seg(id: u32, w: f64, x: f64, y: f64) -> Segment {
        Segment { obstacle_id: id, w, x, y, h: 20.0 }
    }

    #[test]
    fn empty_state_renders_black() {
        assert_eq!(render_blob_image(&SensoryState::default()).count(), 0);
    }

    #[test]
    fn centered_disk_geometry() {
        let img = render_blob_image(&SensoryState::new(0, vec![seg(0, 100.0, 0.0, 120.0)]));
        let r = 100.0 * 197.0 / 1571.0 / 2.0;
        let cy = 120.0 * 42.0 / 214.0;
        assert_abs_diff_eq!(r, 6.27, epsilon = 0.01);
        assert_abs_diff_eq!(cy, 23.55, epsilon = 0.01);
        let area = std::f64::consts::PI * r * r;
        assert!((img.count() as f64 - area).abs() < 0.1 * area, "{} vs {area}", img.count());
        assert!(img.get(98, 23) && img.get(98, 24));
        assert!(img.get(98 + 6, 24) && !img.get(98 + 7, 24) && !img.get(98 - 7, 24));
        // bounding box is symmetric about the center column
        let cols: Vec<usize> = (0..BLOB_WIDTH).filter(|&c| (0..BLOB_HEIGHT).any(|r| img.get(c, r))).collect();
        assert_eq!(cols.first().map(|c| 98 - c), cols.last().map(|c| c - 98));
    }

    #[test]
    fn disks_wrap_across_the_seam() {
        let img = render_blob_image(&SensoryState::new(0, vec![seg(0, 100.0, 785.0, 120.0)]));
        let left = (0..10).any(|c| (0..BLOB_HEIGHT).any(|r| img.get(c, r)));
        let right = (BLOB_WIDTH - 10..BLOB_WIDTH).any(|c| (0..BLOB_HEIGHT).any(|r| img.get(c, r)));
        assert!(left && right);
    }

    #[test]
    fn pgm_header() {
        let mut buf = Vec::new();
        BlobImage::default().write_pgm(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("P2\n197 42\n255\n"));
        assert_eq!(text.lines().count(), 3 + BLOB_HEIGHT);
    }

    #[test]
    fn beta_pgm_maps_zero_to_mid_gray() {
        let mut beta = vec![0.0; BLOB_PIXELS];
        beta[0] = 2.0;
        beta[1] = -2.0;
        let m = RegressionModule::new(MODULE_PAIRS[0], 0.5, vec![0.0; BLOB_PIXELS], beta).unwrap();
        let mut buf = Vec::new();
        m.write_beta_pgm(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: Vec<&str> = text.lines().nth(3).unwrap().split(' ').take(3).collect();
        assert_eq!(first, ["255", "0", "128"]);
    }

    #[test]
    fn sequence_costs() {
        use MotorCommand::*;
        let c = CostParams::default();
        assert_eq!(c.sequence_cost(&[Forward; 7]), 0.0);
        assert_eq!(c.sequence_cost(&[Left, Forward, Forward, Forward, Forward, Forward, Forward]), 30.0);
        assert_eq!(c.sequence_cost(&[Left, Left, Forward, Forward, Forward, Forward, Forward]), 50.0);
        assert_eq!(c.sequence_cost(&[Left, Right]), 1040.0);
    }

    fn fms() -> ForwardModels {
        ForwardModels::published()
    }

    #[test]
    fn open_space_search_goes_forward() {
        let r = short_term_search(&SensoryState::default(), &fms(), 7, &CostParams::default()).unwrap();
        assert_eq!(r.sequence, vec![MotorCommand::Forward; 7]);
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn blocked_front_turns_left() {
        // a wide segment dead ahead collides on the first forward step; the
        // mirror-symmetric left and right detours cost the same, so the tie
        // goes to left
        let state = SensoryState::new(0, vec![seg(0, 214.0, 0.0, 150.0)]);
        let r = short_term_search(&state, &fms(), 7, &CostParams::default()).unwrap();
        assert_eq!(r.first(), MotorCommand::Left);
        assert!(r.cost >= 30.0);
    }

    #[test]
    fn enclosed_state_has_no_survivor() {
        let mut f = fms();
        f.tactile = TactileFm { threshold: 10.0 };
        let state = SensoryState::new(0, vec![seg(0, 50.0, 0.0, 100.0)]);
        assert!(short_term_search(&state, &f, 3, &CostParams::default()).is_none());
    }

    fn brute_force(state: &SensoryState, f: &ForwardModels, depth: usize, costs: &CostParams) -> Option<(Vec<MotorCommand>, f64)> {
        let corr = f.corrector.with_enabled(false);
        let mut best: Option<(Vec<MotorCommand>, f64)> = None;
        for code in 0..3usize.pow(depth as u32) {
            let mut seq = Vec::with_capacity(depth);
            let mut c = code;
            for _ in 0..depth {
                seq.push(MotorCommand::ALL[c % 3]);
                c /= 3;
            }
            seq.reverse();
            let mut s = state.clone();
            let mut hit = false;
            for &m in &seq {
                s = predict_state(&f.visual, &s, m, &corr);
                hit |= tactile_predict(&f.tactile, &s);
            }
            if hit {
                continue;
            }
            let cost = costs.sequence_cost(&seq);
            if best.as_ref().is_none_or(|b| cost < b.1) {
                best = Some((seq, cost));
            }
        }
        best
    }

    #[test]
    fn search_matches_brute_force_on_random_states() {
        let f = fms();
        let costs = CostParams::default();
        let mut rng = seeded_rng(17);
        for _ in 0..200 {
            let n = rng.random_range(0..5);
            let segs = (0..n)
                .map(|i| seg(i, rng.random_range(30.0..214.0), rng.random_range(-785.0..785.0), rng.random_range(95.0..160.0)))
                .collect();
            let st = SensoryState::new(0, segs);
            let got = short_term_search(&st, &f, 5, &costs).map(|r| (r.sequence, r.cost));
            assert_eq!(got, brute_force(&st, &f, 5, &costs));
        }
    }

    fn ols(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
        let n = x.nrows();
        let mean = x.row_mean();
        let mut xc = x.clone();
        for mut r in xc.row_iter_mut() {
            r -= &mean;
        }
        let ym = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
        (xc.transpose() * &xc).try_inverse().unwrap() * xc.transpose() * yc
    }

    #[test]
    fn pls_with_full_components_equals_ols() {
        let mut rng = seeded_rng(5);
        let x = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = pls_fit(&x, &y, 5).unwrap();
        let b = ols(&x, &y);
        assert!((m.beta - b).amax() < 1e-8);
    }

    #[test]
    fn pls_single_direction_is_exact() {
        let dir = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let scores = [-1.0, -0.5, 0.0, 0.25, 1.0, 2.0];
        let x = DMatrix::from_fn(6, 3, |i, j| scores[i] * dir[j]);
        let y: Vec<f64> = scores.iter().map(|s| 0.3 * s + 0.1).collect();
        let m = pls_fit(&x, &y, 4).unwrap();
        assert_eq!(m.components, 1);
        let ym = y.iter().sum::<f64>() / 6.0;
        for i in 0..6 {
            let pred = ym + m.beta.dot(&(x.row(i).transpose() - &m.mean));
            assert_abs_diff_eq!(pred, y[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn pls_is_invariant_to_duplicated_columns() {
        let mut rng = seeded_rng(8);
        let x = DMatrix::from_fn(30, 6, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let dup = DMatrix::from_fn(30, 12, |i, j| x[(i, j % 6)]);
        let a = pls_fit(&x, &y, 3).unwrap();
        let b = pls_fit(&dup, &y, 3).unwrap();
        for i in 0..30 {
            let pa = a.beta.dot(&(x.row(i).transpose() - &a.mean));
            let pb = b.beta.dot(&(dup.row(i).transpose() - &b.mean));
            assert_abs_diff_eq!(pa, pb, epsilon = 1e-10);
        }
    }

    #[test]
    fn pls_rejects_constant_design() {
        let x = DMatrix::from_element(5, 3, 1.0);
        assert!(matches!(pls_fit(&x, &[0.0, 1.0, 0.0, 1.0, 1.0], 2), Err(Error::DegenerateDesign(_))));
    }

    fn toy_module(beta_scale: f64) -> RegressionModule {
        let mean = vec![0.25; BLOB_PIXELS];
        let beta = (0..BLOB_PIXELS).map(|i| beta_scale * ((i % 7) as f64 - 3.0) * 1e-3).collect();
        RegressionModule::new((MotorCommand::Forward, MotorCommand::Left), 0.5, mean, beta).unwrap()
    }

    #[test]
    fn q_at_the_mean_is_one_half() {
        let m = RegressionModule::new(
            (MotorCommand::Forward, MotorCommand::Left),
            0.5,
            vec![1.0; BLOB_PIXELS],
            (0..BLOB_PIXELS).map(|i| i as f64 * 1e-4).collect(),
        )
        .unwrap();
        let all_on = BlobImage::from_pixels(vec![1; BLOB_PIXELS]).unwrap();
        assert_abs_diff_eq!(im_regression_q(&m, &all_on), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn sparse_q_matches_dense_formula() {
        let m = toy_module(1.0);
        let mut rng = seeded_rng(3);
        let blob = BlobImage::from_pixels((0..BLOB_PIXELS).map(|_| rng.random_bool(0.1) as u8).collect()).unwrap();
        let dense = 0.5
            + blob.to_vector().iter().zip(&m.mean).zip(&m.beta).map(|((x, mu), b)| b * (x - mu)).sum::<f64>();
        assert_abs_diff_eq!(im_regression_q(&m, &blob), dense, epsilon = 1e-9);
    }

    #[test]
    fn reverse_q_complements() {
        let q = [0.8, 0.3, 0.55];
        for (a, b) in MODULE_PAIRS {
            assert_eq!(q_between(&q, a, b) + q_between(&q, b, a), 1.0);
        }
    }

    #[test]
    fn goodness_is_the_ridge_minimum() {
        let g = goodness_from_q(&[0.8, 0.6, 0.5]);
        assert_abs_diff_eq!(g[0], 0.6);
        assert_eq!(goodness_from_q(&[0.5; 3]), [0.5; 3]);
    }

    #[test]
    fn det_ties_prefer_forward_then_left() {
        let mut rng = seeded_rng(0);
        assert_eq!(decide_from_q(ImVariant::Det, &[0.5; 3], &RANDOM_WALK_PROBS, &mut rng), MotorCommand::Forward);
        // F loses to L, L and R tie at 0.5 against each other
        assert_eq!(decide_from_q(ImVariant::Det, &[0.2, 0.2, 0.5], &RANDOM_WALK_PROBS, &mut rng), MotorCommand::Left);
        assert_eq!(decide_from_q(ImVariant::Det, &[0.2, 0.2, 0.1], &RANDOM_WALK_PROBS, &mut rng), MotorCommand::Right);
    }

    #[test]
    fn det_is_invariant_under_monotone_transforms() {
        let mut rng = seeded_rng(2);
        for _ in 0..500 {
            let q = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let g = goodness_from_q(&q);
            let gt = g.map(|v| (3.0 * v + 1.0).exp());
            let argmax = |v: [f64; 3]| (0..3).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            assert_eq!(argmax(g), argmax(gt));
            assert_eq!(MotorCommand::ALL[argmax(g)], decide_from_q(ImVariant::Det, &q, &RANDOM_WALK_PROBS, &mut rng));
        }
    }

    #[test]
    fn prob_distribution_cases() {
        assert_eq!(prob_distribution(&[1.0, 1.0, 0.3]), [1.0, 0.0, 0.0]);
        let u = prob_distribution(&[0.5; 3]);
        for p in u {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
        // clamping: out-of-range outputs behave like 0 and 1
        assert_eq!(prob_distribution(&[1.7, 1.2, 0.3]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn random_walk_frequencies() {
        let mut rng = seeded_rng(99);
        let mut counts = [0usize; 3];
        for _ in 0..60_000 {
            counts[decide_from_q(ImVariant::Random, &[0.5; 3], &RANDOM_WALK_PROBS, &mut rng).index()] += 1;
        }
        for (c, p) in counts.iter().zip(RANDOM_WALK_PROBS) {
            assert!((*c as f64 / 60_000.0 - p).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn module_targets_partition_labels() {
        use MotorCommand::*;
        let ex: Vec<ImExample> = [Forward, Left, Left, Right, Forward, Left]
            .iter()
            .map(|&label| ImExample { blob: BlobImage::default(), label })
            .collect();
        let (rows, q) = module_targets(&ex, (Forward, Left));
        assert_eq!(rows.len(), 5);
        assert_eq!(q.iter().filter(|&&v| v == 1.0).count(), 2);
        let (rows, q) = module_targets(&ex, (Left, Right));
        assert_eq!((rows.len(), q.iter().sum::<f64>()), (4, 3.0));
        let total: usize = MODULE_PAIRS.iter().map(|&p| module_targets(&ex, p).0.len()).sum();
        assert_eq!(total, 2 * ex.len());
    }

    /// Blobs with a disk on the left, right or nowhere near the front, with
    /// labels that steer away from it.
    fn separable_blobs(n: usize, seed: u64) -> Vec<ImExample> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|i| {
                let (x, label) = match i % 3 {
                    0 => (rng.random_range(-700.0..-500.0), MotorCommand::Forward),
                    1 => (rng.random_range(60.0..250.0), MotorCommand::Left),
                    _ => (rng.random_range(-250.0..-60.0), MotorCommand::Right),
                };
                let w = rng.random_range(60.0..140.0);
                let y = rng.random_range(100.0..140.0);
                ImExample { blob: render_blob_image(&SensoryState::new(0, vec![seg(0, w, x, y)])), label }
            })
            .collect()
    }

    #[test]
    fn det_separates_toy_blobs() {
        let train = separable_blobs(300, 1);
        let test = separable_blobs(150, 2);
        let im = fit_inverse_model(&train, 8, ImVariant::Det).unwrap();
        let mut rng = seeded_rng(0);
        let correct = test.iter().filter(|e| im_decide(&im, &e.blob, &mut rng) == e.label).count();
        assert!(correct as f64 / test.len() as f64 >= 0.95, "{correct}/{}", test.len());
        let fl = &im.modules[0];
        let f_example = test.iter().find(|e| e.label == MotorCommand::Forward).unwrap();
        assert!(im_regression_q(fl, &f_example.blob) > 0.5);
    }

    #[test]
    fn model_file_round_trip() {
        let im = fit_inverse_model(&separable_blobs(60, 3), 2, ImVariant::Prob).unwrap();
        let mut buf = Vec::new();
        im.write_to(&mut buf).unwrap();
        let back = InverseModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, im);
        assert!(InverseModel::read_from("variant det\n".as_bytes()).is_err());
    }

    #[test]
    fn training_set_is_deterministic_and_labelled() {
        use crate::world::{generate_scene, SceneGenConfig, SceneLabel};
        let scene = generate_scene(SceneLabel::DeadEnd, 1, &SceneGenConfig::default()).unwrap();
        let cfg = ImTrainingConfig { starts_per_scene: 2, steps: 10, ..Default::default() };
        let cam = CameraModel::default();
        let run = |seed| {
            build_im_training_set(
                std::slice::from_ref(&scene),
                &fms(),
                &cfg,
                &cam,
                &DegradationConfig::default(),
                &ActuationParams::default(),
                &mut seeded_rng(seed),
            )
        };
        let a = run(4);
        assert_eq!(a, run(4));
        assert!(!a.is_empty() && a.len() <= 20);
    }

    #[test]
    fn published_fm_is_usable_for_search() {
        // one segment drifting forward eventually triggers the bumper
        let fm = VisualFm::published();
        let corr = fms().corrector.with_enabled(false);
        let mut s = SensoryState::new(0, vec![seg(0, 150.0, 0.0, 140.0)]);
        let mut hit = false;
        for _ in 0..10 {
            s = predict_state(&fm, &s, MotorCommand::Forward, &corr);
            hit |= tactile_predict(&TactileFm::published(), &s);
        }
        assert!(hit);
    }
}
