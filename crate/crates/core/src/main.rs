use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cmgai::baseline::{BaselineConfig, FpcaGpr};
use cmgai::cli::config::{RunConfig, Task};
use cmgai::cli::experiment::{
    detect_task, fit_model, generate_at, ingest, prepare, run_experiment, score_mean, write_mean,
    Observations, Reference, MAX_NEGATIVE_JACOBIAN_FRACTION,
};
use cmgai::cli::plot::{emit_plot, PlotLabels, Series};
use cmgai::cli::synth::{synth_fixture, FixtureKind};
use cmgai::manifold::{integrate_geodesic, BuiltinMetric, Euclidean, Lobachevsky, Trajectory};
use cmgai::nn::Matrix;
use cmgai::ot_discrete::{solve_monge, solve_monge_time_dependent, trajectory_cost, DiscreteDistribution};
use cmgai::pfode::{
    default_eps, fit_score, initial_noise, sample_many, GaussianScore, Integrator, Score, ScoreTrainConfig,
    TrainedScore, VeSchedule, DEFAULT_STEPS,
};
use cmgai::transport::{CmGaiModel, MeanData};
use cmgai::{Error, Result};

/// Continuum-mechanics optimal transport: learn how a data distribution moves
/// with a physical condition and generate it at unseen conditions.
#[derive(Parser, Debug)]
#[command(name = "cmgai", version)]
struct Cli {
    /// Random seed (overrides the config file's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts (overrides the config file's out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Run configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact discrete Monge assignment between two equal-size point sets.
    OtDiscrete(OtArgs),
    /// Integrate a geodesic under a built-in metric.
    Geodesic(GeodesicArgs),
    /// Train a transport model and save it as JSON.
    Train(TrainArgs),
    /// Generate the mean curve or field at a raw condition.
    Generate(GenerateArgs),
    /// FPCA + Gaussian-process baseline prediction for curves.
    Baseline(BaselineArgs),
    /// Sample the probability-flow ODE of a score model.
    SamplePfode(PfodeArgs),
    /// Write a synthetic dataset, its held-out target and a run config.
    Synth(SynthArgs),
    /// Full pipeline from a config: ingest, train, generate, compare.
    Run,
}

#[derive(Args, Debug)]
struct OtArgs {
    /// Source CSV: position components then mass per row.
    #[arg(long)]
    src: PathBuf,
    /// Target CSV in the same layout.
    #[arg(long)]
    dst: PathBuf,
    /// Also report straight-line trajectories and their action.
    #[arg(long)]
    time_dependent: bool,
}

#[derive(Args, Debug)]
struct GeodesicArgs {
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Initial position, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    x0: Vec<f64>,
    /// Initial velocity, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    v0: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Trajectory CSV `t,x1..xN,v1..vN`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Euclidean,
    Lobachevsky,
}

impl From<MetricArg> for BuiltinMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => BuiltinMetric::Euclidean,
            MetricArg::Lobachevsky => BuiltinMetric::Lobachevsky,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training CSV files (replace the config's data list).
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Model JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw condition (e.g. temperature) to generate at.
    #[arg(long, allow_hyphen_values = true)]
    target: f64,
    /// Output CSV; diagnostics go to the same path with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG plot of the generated mean.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Ground truth CSV at the target for an NRMSE score.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// Curve CSV files `condition,strain,stress`.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    target: f64,
    /// Output CSV `strain,mean,std`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PfodeArgs {
    /// `gaussian:<std>` or a score model JSON.
    #[arg(long)]
    score: String,
    /// Fit a score network on this CSV first and save it to the `--score` path.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Data dimension for the Gaussian score.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = IntegratorArg::SecondOrder)]
    integrator: IntegratorArg,
    #[arg(long, default_value_t = VeSchedule::default().sigma_min)]
    sigma_min: f64,
    #[arg(long, default_value_t = VeSchedule::default().sigma_max)]
    sigma_max: f64,
    /// Training epochs when `--fit` is given.
    #[arg(long, default_value_t = ScoreTrainConfig::default().epochs)]
    epochs: usize,
    /// Samples CSV `x1..xD`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IntegratorArg {
    SecondOrder,
    Euler,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Field dimension.
    #[arg(long, default_value_t = 500)]
    dim: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Curves,
    Fields,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::OtDiscrete(a) => ot_discrete(a),
        Command::Geodesic(a) => geodesic(a),
        Command::Train(a) => train(cli, a),
        Command::Generate(a) => generate(a),
        Command::Baseline(a) => baseline(a),
        Command::SamplePfode(a) => sample_pfode(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Run => run(cli),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a headerless or headed numeric CSV into rows.
fn numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no numeric rows".into(),
        });
    }
    Ok(rows)
}

fn distribution(path: &Path) -> Result<DiscreteDistribution> {
    let rows = numeric_rows(path)?;
    let mut points = Vec::with_capacity(rows.len());
    let mut masses = Vec::with_capacity(rows.len());
    for r in rows {
        if r.len() < 2 {
            return Err(Error::invalid(format!("{}: rows need position components and a mass", path.display())));
        }
        masses.push(r[r.len() - 1]);
        points.push(r[..r.len() - 1].to_vec());
    }
    DiscreteDistribution::new(points, masses)
}

fn ot_discrete(a: &OtArgs) -> Result<i32> {
    let src = distribution(&a.src)?;
    let dst = distribution(&a.dst)?;
    let (map, cost) = solve_monge(&src, &dst)?;
    println!("source,target");
    for (i, j) in map.assignment.iter().enumerate() {
        println!("{i},{j}");
    }
    println!("cost,{cost}");
    if a.time_dependent {
        let traj = solve_monge_time_dependent(&src, &dst)?;
        println!("trajectory_cost,{}", trajectory_cost(&traj, &src)?);
    }
    Ok(0)
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states[0].position.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    header.extend((1..=n).map(|k| format!("v{k}")));
    let mut s = header.join(",") + "\n";
    for (t, st) in traj.times.iter().zip(&traj.states) {
        let _ = write!(s, "{t}");
        for v in st.position.iter().chain(&st.velocity) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn geodesic(a: &GeodesicArgs) -> Result<i32> {
    let traj = match BuiltinMetric::from(a.metric) {
        BuiltinMetric::Euclidean => integrate_geodesic(
            &Euclidean { dim: a.x0.len() },
            &a.x0,
            &a.v0,
            a.t_end,
            a.steps,
            None,
        )?,
        BuiltinMetric::Lobachevsky => integrate_geodesic(&Lobachevsky, &a.x0, &a.v0, a.t_end, a.steps, None)?,
    };
    write_text(&a.out, &trajectory_csv(&traj))?;
    if let Some(reason) = &traj.aborted {
        warn!("integration stopped at t = {}: {reason}", traj.times[traj.times.len() - 1]);
    }
    Ok(0)
}

/// Config from `--config`, or defaults with the task guessed from the data.
fn base_config(cli: &Cli, data: &[PathBuf]) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let first = data.first().ok_or_else(|| Error::invalid("no data files given"))?;
            RunConfig {
                task: detect_task(first)?,
                ..RunConfig::default()
            }
        }
    };
    if !data.is_empty() {
        cfg.data = data.to_vec();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out_dir {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<i32> {
    let mut cfg = base_config(cli, &a.data)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.baseline = false;
    cfg.validate()?;
    let observations = ingest(cfg.task, &cfg.data).map_err(|e| e.in_stage("ingest"))?;
    let prepared = prepare(&cfg, observations).map_err(|e| e.in_stage("density"))?;
    let model = match fit_model(&cfg, &prepared) {
        Ok(m) => m,
        Err(Error::Diverged { epoch, checkpoint }) => {
            let path = a.out.with_extension("checkpoint.json");
            checkpoint.save(&path)?;
            warn!("best checkpoint written to {}", path.display());
            return Err(Error::Diverged { epoch, checkpoint }.in_stage("train"));
        }
        Err(e) => return Err(e.in_stage("train")),
    };
    model.save(&a.out)?;
    let d = &model.diagnostics;
    info!(
        "trained {} epochs, best epoch {:?}, det F ≤ 0 on {:.3}% of validation draws",
        d.history.len(),
        d.best_epoch,
        100.0 * d.negative_jacobian_fraction
    );
    Ok(if d.negative_jacobian_fraction > MAX_NEGATIVE_JACOBIAN_FRACTION {
        warn!("negative Jacobian fraction above {:.0}%", 100.0 * MAX_NEGATIVE_JACOBIAN_FRACTION);
        2
    } else {
        0
    })
}

#[derive(serde::Serialize)]
struct GenerateSidecar<'a> {
    target_condition: f64,
    target_time: f64,
    dropped_fraction: f64,
    negative_jacobian_fraction: f64,
    best_epoch: Option<usize>,
    nrmse: Option<f64>,
    loss_history: &'a [cmgai::transport::EpochRecord],
}

fn generate(a: &GenerateArgs) -> Result<i32> {
    let model = CmGaiModel::load(&a.model)?;
    if !model.is_trained() {
        return Err(Error::invalid("model is untrained; nothing to generate"));
    }
    let generated = generate_at(&model, a.target)?;
    write_mean(&generated.mean, &a.out)?;
    let task = match generated.mean {
        MeanData::Curve { .. } => Task::Curves,
        _ => Task::Fields,
    };
    let score = match &a.reference {
        Some(p) => {
            let reference = match ingest(task, &[p.clone()])? {
                Observations::Curves(c) => Reference::Curve(
                    c.into_iter()
                        .min_by(|x, y| (x.condition - a.target).abs().total_cmp(&(y.condition - a.target).abs()))
                        .expect("ingest returns at least one curve"),
                ),
                Observations::Fields(f) => Reference::Field(
                    f.iter()
                        .min_by(|x, y| (x.condition - a.target).abs().total_cmp(&(y.condition - a.target).abs()))
                        .expect("ingest returns at least one field")
                        .mean(),
                ),
            };
            Some(score_mean(&generated.mean, &reference)?)
        }
        None => None,
    };
    let sidecar = GenerateSidecar {
        target_condition: a.target,
        target_time: generated.t,
        dropped_fraction: generated.dropped_fraction,
        negative_jacobian_fraction: model.diagnostics.negative_jacobian_fraction,
        best_epoch: model.diagnostics.best_epoch,
        nrmse: score,
        loss_history: &model.diagnostics.history,
    };
    write_text(&a.out.with_extension("json"), &(serde_json::to_string_pretty(&sidecar)? + "\n"))?;
    if let Some(p) = &a.plot {
        let series = match &generated.mean {
            MeanData::Curve { strains, stresses } => Series::line("generated", strains, stresses),
            MeanData::Field { values } | MeanData::Vector { values } => {
                let idx: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
                Series::line("generated", &idx, values)
            }
        };
        emit_plot(
            &[series],
            &PlotLabels {
                title: format!("Generated at {}", a.target),
                ..PlotLabels::default()
            },
            p,
        )?;
    }
    if let Some(s) = score {
        println!("nrmse,{s}");
    }
    Ok(0)
}

fn baseline(a: &BaselineArgs) -> Result<i32> {
    let curves = match ingest(Task::Curves, &a.data)? {
        Observations::Curves(c) => c,
        Observations::Fields(_) => unreachable!("curve ingestion returns curves"),
    };
    let fitted = FpcaGpr::fit(&curves, &BaselineConfig::default())?;
    let (mean, std) = fitted.predict(a.target)?;
    let mut text = String::from("strain,mean,std\n");
    for ((e, m), s) in fitted.strain_grid().iter().zip(&mean).zip(&std) {
        let _ = writeln!(text, "{e},{m},{s}");
    }
    write_text(&a.out, &text)?;
    Ok(0)
}

fn load_score(a: &PfodeArgs, schedule: &VeSchedule, seed: u64) -> Result<Box<dyn Score>> {
    if let Some(std) = a.score.strip_prefix("gaussian:") {
        let data_std: f64 = std
            .parse()
            .map_err(|_| Error::invalid(format!("`{std}` is not a standard deviation")))?;
        if !(data_std > 0.0 && data_std.is_finite()) {
            return Err(Error::invalid("the Gaussian score needs a positive std"));
        }
        return Ok(Box::new(GaussianScore { data_std }));
    }
    let path = PathBuf::from(&a.score);
    if let Some(data_path) = &a.fit {
        let rows = numeric_rows(data_path)?;
        let cfg = ScoreTrainConfig {
            epochs: a.epochs,
            seed,
            ..ScoreTrainConfig::default()
        };
        let (model, losses) = fit_score(&Matrix::from_rows(&rows), schedule, &cfg)?;
        info!("score loss {:?} → {:?}", losses.first(), losses.last());
        write_text(&path, &(serde_json::to_string(&model)? + "\n"))?;
        return Ok(Box::new(model));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let model: TrainedScore = serde_json::from_str(&text)?;
    Ok(Box::new(model))
}

fn sample_pfode(cli: &Cli, a: &PfodeArgs) -> Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    let schedule = VeSchedule::new(a.sigma_min, a.sigma_max, 1.0)?;
    let score = load_score(a, &schedule, seed)?;
    let dim = score.dim().unwrap_or(a.dim);
    let init = initial_noise(&schedule, dim, a.n, seed)?;
    let integrator = match a.integrator {
        IntegratorArg::SecondOrder => Integrator::SecondOrder,
        IntegratorArg::Euler => Integrator::Euler,
    };
    let samples = sample_many(score.as_ref(), &schedule, &init, a.steps, default_eps(&schedule), integrator)?;
    let header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    let mut text = header.join(",") + "\n";
    for r in 0..samples.shape().0 {
        let row: Vec<String> = samples.row(r).iter().map(|v| v.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(&a.out, &text)?;
    Ok(0)
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<i32> {
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = cli.seed.unwrap_or(0);
    let kind = match a.kind {
        KindArg::Curves => FixtureKind::Curves,
        KindArg::Fields => FixtureKind::Fields,
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dir = dir.canonicalize().map_err(|e| Error::io(&dir, e))?;
    let files = synth_fixture(kind, a.dim, seed, &dir)?;
    let mut cfg = RunConfig::for_fixture(kind, &files, seed);
    cfg.out_dir = Some(dir.join("run"));
    cfg.baseline = kind == FixtureKind::Curves;
    let cfg_path = dir.join("config.json");
    cfg.save(&cfg_path)?;
    println!("{}", cfg_path.display());
    Ok(0)
}

fn run(cli: &Cli) -> Result<i32> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::invalid("`run` needs --config <json>"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out_dir {
        cfg.out_dir = Some(o.clone());
    }
    let report = run_experiment(&cfg)?;
    if let Some(v) = report.target_nrmse {
        println!("target_nrmse,{v}");
    }
    if let Some(v) = report.baseline_nrmse {
        println!("baseline_nrmse,{v}");
    }
    println!("negative_jacobian_fraction,{}", report.negative_jacobian_fraction);
    Ok(if report.jacobian_check_passed { 0 } else { 2 })
}
