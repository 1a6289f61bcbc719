use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use affordsim::config::Config;
use affordsim::error::Error;
use affordsim::experiment::{
    export_metrics, fit_correction, fit_forward_models, fm_test_sequences, fm_training_sequences, generate_scene_set,
    initial_observation, render_birdseye, run_grid, simulate_scene, stream, train_inverse_model, BirdseyeOptions,
    Metric, MetricsTable, RunRecord,
};
use affordsim::forward_models::{
    evaluate_fm_iterative, read_fm_sequences, write_fm_sequences, FmErrorReport, ForwardModels,
};
use affordsim::inverse_model::InverseModel;
use affordsim::sensor::{write_states, CorrectionModel, DistanceCalibration};
use affordsim::simulation::{read_trace, write_trace, SimModels, TaskCondition};
use affordsim::world::{sequence_string, WorldScene};

const FM_FILE: &str = "fm.txt";
const CORRECTION_FILE: &str = "correction.txt";
const IM_FILE: &str = "im.txt";

#[derive(Parser)]
#[command(name = "affordsim", version, about = "Corridor / dead-end detection by simulated movement")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; defaults to `experiment.master_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for render-birdseye).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Use the published FM and correction constants instead of fitting.
    #[arg(long, global = true)]
    paper_coefficients: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled test scenes.
    GenScenes {
        #[arg(long)]
        dead_ends: Option<usize>,
        #[arg(long)]
        corridors: Option<usize>,
    },
    /// Record random-walk sequences for FM training and evaluation.
    CollectFmData,
    /// Fit the forward models and the initial-state correction.
    FitFm {
        /// Training sequences from collect-fm-data; collected afresh if absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Iterative FM error with and without the prediction corrector.
    EvalFm {
        #[arg(long)]
        models: Option<PathBuf>,
        /// Test sequences from collect-fm-data; collected afresh if absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the inverse model from short-term search labels.
    TrainIm {
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Run one scene under one condition and write its trace.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "det/forward-continue/partial")]
        condition: TaskCondition,
        /// Directory holding fm.txt, correction.txt and im.txt; models are
        /// trained in memory if absent.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Run the condition grid and export metric tables.
    Experiment {
        #[arg(long)]
        models: Option<PathBuf>,
        /// Restrict the grid to one condition.
        #[arg(long)]
        condition: Option<TaskCondition>,
    },
    /// Draw perceived obstacles and trial paths from a trace as SVG.
    RenderBirdseye {
        #[arg(long)]
        trace: PathBuf,
        /// Scene file for a ground-truth overlay.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::from_text(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Config::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_model_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingModel(path.display().to_string()).into());
    }
    Ok(fs::read_to_string(&path)?)
}

fn load_fms(dir: &Path, cfg: &Config) -> Result<ForwardModels> {
    let mut fms = ForwardModels::from_text(&read_model_file(dir, FM_FILE)?)?;
    fms.corrector.enabled = cfg.corrector_enabled;
    Ok(fms)
}

fn load_models(dir: &Path, cfg: &Config) -> Result<SimModels> {
    let fms = load_fms(dir, cfg)?;
    let correction = CorrectionModel::from_text(&read_model_file(dir, CORRECTION_FILE)?)?;
    let im = InverseModel::read_from(read_model_file(dir, IM_FILE)?.as_bytes())?;
    Ok(SimModels { fms, im, correction: cfg.initial_correction.then_some(correction), actuation: cfg.actuation })
}

fn models_or_train(dir: Option<&Path>, cfg: &Config, seed: u64, published: bool) -> Result<SimModels> {
    match dir {
        Some(d) => load_models(d, cfg),
        None => {
            eprintln!("no --models given, training in memory");
            Ok(affordsim::experiment::train_models(cfg, seed, published)?)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn read_scene(path: &Path) -> Result<WorldScene> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(WorldScene::from_text(&text)?)
}

fn print_fm_report(name: &str, r: &FmErrorReport) {
    let n = if r.count > 0 { format!("  ({} comparisons)", r.count) } else { String::new() };
    println!("{name:<24} x {:>7.2}  y {:>6.2}  w {:>6.2}{n}", r.x, r.y, r.w);
}

fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    use std::io::Write;
    let mut out = create(path)?;
    writeln!(out, "condition,scene,label,repetition,classification,trials,fm_invocations,im_invocations")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:?},{},{},{}",
            r.condition,
            r.scene,
            r.label.name(),
            r.repetition,
            r.classification,
            r.trials,
            r.fm_invocations,
            r.im_invocations
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = load_config(c.config.as_deref())?;
    let seed = c.seed.unwrap_or(cfg.experiment.master_seed);
    let out = &c.out;
    match cli.command {
        Command::GenScenes { dead_ends, corridors } => {
            let (d, k) = (dead_ends.unwrap_or(cfg.experiment.dead_ends), corridors.unwrap_or(cfg.experiment.corridors));
            let scenes = generate_scene_set(&cfg, d, k, seed, stream::TEST_SCENES)?;
            for (i, scene) in scenes.iter().enumerate() {
                write_text(&out.join(format!("scene_{i:03}.txt")), &scene.to_text())?;
                write_states(&[initial_observation(&cfg, scene, i, seed)], create(&out.join(format!("observation_{i:03}.txt")))?)?;
            }
            println!("wrote {} scenes ({d} dead ends, {k} corridors) to {}", scenes.len(), out.display());
        }
        Command::CollectFmData => {
            let train = fm_training_sequences(&cfg, seed);
            let test = fm_test_sequences(&cfg, seed);
            write_fm_sequences(&train, create(&out.join("fm_train.txt"))?)?;
            write_fm_sequences(&test, create(&out.join("fm_test.txt"))?)?;
            println!("wrote {} training and {} test sequences to {}", train.len(), test.len(), out.display());
        }
        Command::FitFm { data } => {
            let sequences = match (&data, c.paper_coefficients) {
                (_, true) => Vec::new(),
                (Some(p), false) => read_fm_sequences(BufReader::new(fs::File::open(p)?))?,
                (None, false) => fm_training_sequences(&cfg, seed),
            };
            let fms = fit_forward_models(&cfg, &sequences, c.paper_coefficients)?;
            let correction = fit_correction(&cfg, seed, c.paper_coefficients)?;
            write_text(&out.join(FM_FILE), &fms.to_text())?;
            write_text(&out.join(CORRECTION_FILE), &correction.to_text())?;
            println!("{}", fms.to_text());
            println!("{}", correction.to_text());
        }
        Command::EvalFm { models, data } => {
            let fms = match &models {
                Some(d) => load_fms(d, &cfg)?,
                None => fit_forward_models(&cfg, &fm_training_sequences(&cfg, seed), c.paper_coefficients)?,
            };
            let test = match &data {
                Some(p) => read_fm_sequences(BufReader::new(fs::File::open(p)?))?,
                None => fm_test_sequences(&cfg, seed),
            };
            let h = cfg.fm_eval_horizon;
            println!("mean absolute error after {h} predicted steps, pixels");
            print_fm_report("without corrector", &evaluate_fm_iterative(&fms.visual, &fms.corrector.with_enabled(false), &test, h));
            print_fm_report("with corrector", &evaluate_fm_iterative(&fms.visual, &fms.corrector.with_enabled(true), &test, h));
            print_fm_report("published, without", &FmErrorReport::published_without_corrector());
            print_fm_report("published, with", &FmErrorReport::published_with_corrector());
        }
        Command::TrainIm { models } => {
            let fms = match &models {
                Some(d) => load_fms(d, &cfg)?,
                None => fit_forward_models(&cfg, &fm_training_sequences(&cfg, seed), c.paper_coefficients)?,
            };
            let im = train_inverse_model(&cfg, &fms, seed)?;
            im.write_to(create(&out.join(IM_FILE))?)?;
            for m in &im.modules {
                let path = out.join(format!("beta_{}{}.pgm", m.pair.0, m.pair.1));
                m.write_beta_pgm(create(&path)?)?;
            }
            println!("wrote {} and weight images to {}", IM_FILE, out.display());
        }
        Command::Simulate { scene, condition, models } => {
            let scene = read_scene(&scene)?;
            let models = models_or_train(models.as_deref(), &cfg, seed, c.paper_coefficients)?;
            let run = simulate_scene(&cfg, &scene, &models, &condition, seed);
            write_states(&[initial_observation(&cfg, &scene, 0, seed)], create(&out.join("observation.txt"))?)?;
            write_trace(&run, create(&out.join("trace.txt"))?)?;
            println!("condition {condition}: {:?} after {} trials", run.classification, run.trials.len());
            println!("fm invocations {}, im invocations {}", run.fm_invocations, run.im_invocations);
            for (n, t) in run.trials.iter().enumerate() {
                println!("trial {n:>2} {:?} {}", t.outcome, sequence_string(&t.sequence));
            }
        }
        Command::Experiment { models, condition } => {
            if let Some(cond) = condition {
                cfg.experiment.conditions = vec![cond];
            }
            cfg.experiment.master_seed = seed;
            let start = Instant::now();
            let models = models_or_train(models.as_deref(), &cfg, seed, c.paper_coefficients)?;
            let exp = &cfg.experiment;
            let scenes = generate_scene_set(&cfg, exp.dead_ends, exp.corridors, seed, stream::TEST_SCENES)?;
            let records = run_grid(&cfg, exp, &scenes, &models)?;
            let table = MetricsTable::from_records(&records);
            write_records(&out.join("runs.csv"), &records)?;
            for metric in Metric::ALL {
                let csv = export_metrics(&table, metric);
                write_text(&out.join(format!("{}.csv", metric.file_stem())), &csv)?;
                println!("{}\n{csv}", metric.file_stem());
            }
            println!("{} runs in {:.1} s", records.len(), start.elapsed().as_secs_f64());
        }
        Command::RenderBirdseye { trace, scene } => {
            let traces = read_trace(BufReader::new(fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?))?;
            if traces.is_empty() {
                bail!("{} holds no trials", trace.display());
            }
            let scene = scene.as_deref().map(read_scene).transpose()?;
            let calibration = DistanceCalibration::sweep(&cfg.camera);
            let opts = BirdseyeOptions {
                obstacle_radius: cfg.scene_gen.obstacle_radius,
                image_width: cfg.camera.image_width,
                ..BirdseyeOptions::default()
            };
            let svg = render_birdseye(scene.as_ref(), &traces, &calibration, &cfg.actuation, &opts);
            let path = if out.extension().is_some_and(|e| e == "svg") { out.clone() } else { out.join("birdseye.svg") };
            write_text(&path, &svg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
