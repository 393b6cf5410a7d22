use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use otproj::curve_proj::{admm_project_with, read_curve, write_curve, AdmmOptions, ConstraintConfig, ConstraintSystem};
use otproj::descent::{self, poisson_init, DescentConfig, MeasureState, StopRule, WeightMode};
use otproj::ot_dual::{NewtonMode, SolverOptions};
use otproj::pipeline::{
    assign_colors, build_density, curvle, dash, render_png, run_bench, write_svg, BenchConfig, BenchDensity, CurveJob,
    CurveKind, Image, RenderMode, RenderSpec, Tone,
};
use otproj::{Error, GridDensity, Point, SiteSet};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_BAD_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "otproj", version, about = "Approximate images with dots, curves or dashes by optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate an image with dots.
    Stipple(StippleArgs),
    /// Approximate an image with one constrained curve.
    Curvle(CurvleArgs),
    /// Approximate an image with segments of fixed length.
    Dash(DashArgs),
    /// Project a curve onto a constraint set.
    ProjectCurve(ProjectArgs),
    /// Run the timing benchmarks.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// Input image (PNG or PGM) or density grid (.grid / .txt).
    input: PathBuf,
    /// Number of points.
    #[arg(short = 'n', long, default_value_t = 4096)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop once this SNR in dB is reached.
    #[arg(long, default_value_t = 31.0)]
    snr_stop: f64,
    /// Output drawing (.svg or .png).
    #[arg(short, long)]
    out: PathBuf,
    /// Per-iteration CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Initial points as CSV, e.g. the result for the previous video frame.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Final points as CSV.
    #[arg(long)]
    points_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ToneArg::Dark)]
    tone: ToneArg,
    /// Color each mark from the image, on a black background.
    #[arg(long)]
    color: bool,
    /// Canvas width in pixels.
    #[arg(long, default_value_t = 1024)]
    canvas: u32,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, value_enum, default_value_t = NewtonArg::Regularized)]
    newton: NewtonArg,
    /// Dual solver tolerance on the largest mass mismatch.
    #[arg(long, default_value_t = 1e-7)]
    dual_tol: f64,
}

#[derive(Args)]
struct StippleArgs {
    #[command(flatten)]
    common: Common,
    /// Weight handling: fixed equal weights, or optimal weights.
    #[arg(long, value_enum, default_value_t = WeightArg::Fixed)]
    weights: WeightArg,
    /// Dot radius in canvas pixels.
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct CurvleArgs {
    #[command(flatten)]
    common: Common,
    /// Bound on the distance between consecutive points.
    #[arg(long)]
    speed: Option<f64>,
    /// Bound on the second difference.
    #[arg(long)]
    accel: Option<f64>,
    /// Fix the distance between consecutive points to `speed`.
    #[arg(long)]
    geometric: bool,
    /// Closed curve.
    #[arg(long)]
    circular: bool,
    /// Coarser resolutions solved before the requested one.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Stroke width in canvas pixels.
    #[arg(long)]
    stroke: Option<f64>,
}

#[derive(Args)]
struct DashArgs {
    #[command(flatten)]
    common: Common,
    /// Segment length (default 1/√n).
    #[arg(long)]
    length: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    stroke: Option<f64>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Curve CSV (`x,y` rows).
    curve: PathBuf,
    /// Constraint description (TOML or JSON).
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, required_unless_present = "constraints")]
    speed: Option<f64>,
    #[arg(long, required_unless_present = "constraints")]
    accel: Option<f64>,
    #[arg(long)]
    geometric: bool,
    #[arg(long)]
    circular: bool,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    max_iter: usize,
    /// Output CSV.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = DensityArg::Uniform)]
    density: DensityArg,
    /// Point counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 4096, 16384])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 31.0)]
    snr_stop: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, value_enum, default_value_t = NewtonArg::Regularized)]
    newton: NewtonArg,
    /// CSV report (standard output when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ToneArg {
    Dark,
    Light,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Fixed,
    Simplex,
}

#[derive(Clone, Copy, ValueEnum)]
enum NewtonArg {
    Regularized,
    Lm,
    Pure,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Uniform,
    HalfSplit,
}

impl From<NewtonArg> for NewtonMode {
    fn from(a: NewtonArg) -> Self {
        match a {
            NewtonArg::Regularized => NewtonMode::Regularized,
            NewtonArg::Lm => NewtonMode::LevenbergMarquardt,
            NewtonArg::Pure => NewtonMode::Pure,
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    BadInput(anyhow::Error),
    Other(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::EmptyCellEncountered(..) | Error::EmptyCell(_) => Failure::Other(e.into()),
            _ => Failure::BadInput(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

type CliResult = std::result::Result<bool, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_BAD_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Stipple(a) => stipple(a),
        Command::Curvle(a) => curve(a),
        Command::Dash(a) => dashes(a),
        Command::ProjectCurve(a) => project(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(Failure::BadInput(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

struct Loaded {
    density: GridDensity,
    image: Option<Image>,
    aspect: f64,
}

fn load_input(c: &Common) -> Result<Loaded, Failure> {
    if !c.input.exists() {
        return Err(Failure::BadInput(anyhow::anyhow!("{} does not exist", c.input.display())));
    }
    let ext = c.input.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "grid" || ext == "txt" {
        let density = GridDensity::load(&c.input)?.normalize()?;
        let aspect = density.height() as f64 / density.width() as f64;
        return Ok(Loaded {
            density,
            image: None,
            aspect,
        });
    }
    let img = Image::open(&c.input).map_err(|e| match e {
        Error::Io(io) => Failure::BadInput(anyhow::Error::new(io).context(format!("reading {}", c.input.display()))),
        other => other.into(),
    })?;
    let tone = match c.tone {
        ToneArg::Dark => Tone::DarkIsDense,
        ToneArg::Light => Tone::LightIsDense,
    };
    let density = build_density(&img, tone)?;
    let aspect = img.height as f64 / img.width as f64;
    Ok(Loaded {
        density,
        image: Some(img),
        aspect,
    })
}

fn validate_common(c: &Common) -> Result<(), Failure> {
    let bad = |m: &str| Err(Failure::BadInput(anyhow::anyhow!("{m}")));
    if c.points == 0 {
        return bad("--points must be positive");
    }
    if !(c.snr_stop > 0.0) {
        return bad("--snr-stop must be positive");
    }
    if !(c.dual_tol > 0.0) {
        return bad("--dual-tol must be positive");
    }
    if c.time_limit.is_some_and(|t| !(t > 0.0)) {
        return bad("--time-limit must be positive");
    }
    Ok(())
}

fn descent_config(c: &Common) -> DescentConfig {
    DescentConfig {
        max_iter: c.max_iter,
        stop: StopRule::Snr(c.snr_stop),
        time_limit: c.time_limit.map(Duration::from_secs_f64),
        dual: SolverOptions {
            tol: c.dual_tol,
            mode: c.newton.into(),
            ..SolverOptions::default()
        },
        ..DescentConfig::default()
    }
}

fn read_points(path: &Path) -> Result<Vec<Point>, Failure> {
    let f = File::open(path).map_err(|e| Failure::BadInput(anyhow::Error::new(e).context(format!("reading {}", path.display()))))?;
    Ok(read_curve(BufReader::new(f))?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let f = File::create(path).map_err(|e| Failure::Other(anyhow::Error::new(e).context(format!("creating {}", path.display()))))?;
    Ok(BufWriter::new(f))
}

fn write_outputs(c: &Common, loaded: &Loaded, st: &MeasureState, mut spec: RenderSpec) -> Result<(), Failure> {
    let pts = st.sites.positions();
    spec.aspect = loaded.aspect;
    if c.color {
        spec.colors = Some(match &loaded.image {
            Some(img) => assign_colors(img, pts),
            None => vec![[1.0; 3]; pts.len()],
        });
    }
    let ext = c.out.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => {
            let img = render_png(pts, &spec)?;
            img.save(&c.out).map_err(|e| Failure::Other(e.into()))?;
        }
        _ => {
            let mut w = create(&c.out)?;
            write_svg(pts, &spec, &mut w)?;
            w.flush()?;
        }
    }
    if let Some(p) = &c.points_out {
        write_curve(pts, create(p)?)?;
    }
    if let Some(p) = &c.trace {
        descent::write_trace(&st.trace, create(p)?)?;
    }
    report(st);
    Ok(())
}

fn report(st: &MeasureState) {
    eprintln!(
        "{} points, {} iterations ({} dual), F = {:.6e}, SNR = {}, stop: {:?}",
        st.sites.len(),
        st.iterations,
        st.dual_iterations,
        st.f,
        st.snr.map_or("n/a".to_string(), |s| format!("{s:.2} dB")),
        st.stop
    );
}

fn check_output_ext(out: &Path) -> Result<(), Failure> {
    match out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("svg") | Some("png") => Ok(()),
        _ => Err(Failure::BadInput(anyhow::anyhow!("--out must end in .svg or .png"))),
    }
}

fn stipple(a: StippleArgs) -> CliResult {
    let c = &a.common;
    validate_common(c)?;
    check_output_ext(&c.out)?;
    let loaded = load_input(c)?;
    let d = &loaded.density;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let x = match &c.init {
        Some(p) => read_points(p)?,
        None => poisson_init(d, c.points, &mut rng)?,
    };
    let init = SiteSet::uniform(x)?;
    let mut cfg = descent_config(c);
    cfg.weight_mode = match a.weights {
        WeightArg::Fixed => WeightMode::Fixed,
        WeightArg::Simplex => WeightMode::Simplex,
    };
    let st = descent::run(d, &init, &cfg)?;
    let mut spec = RenderSpec::new(RenderMode::Stipple, c.canvas, st.sites.len());
    if let Some(r) = a.radius {
        spec.radius = r;
    }
    write_outputs(c, &loaded, &st, spec)?;
    Ok(st.converged())
}

fn curve(a: CurvleArgs) -> CliResult {
    let c = &a.common;
    validate_common(c)?;
    check_output_ext(&c.out)?;
    let loaded = load_input(c)?;
    let mut job = CurveJob::new(c.points);
    job.circular = a.circular;
    job.kind = if a.geometric { CurveKind::Geometric } else { CurveKind::Kinematic };
    if let Some(s) = a.speed {
        job.speed = s;
    }
    job.accel = a.accel.unwrap_or(job.speed);
    job.levels = a.levels;
    job.descent = descent_config(c);
    job.admm = AdmmOptions {
        beta: a.beta,
        ..AdmmOptions::default()
    };
    let init = c.init.as_deref().map(read_points).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let run = curvle(&loaded.density, &job, init, &mut rng)?;
    let (set, eq) = run.system.violation(run.state.sites.positions());
    eprintln!("constraint violation {set:.3e}, equality residual {eq:.3e}");
    let mut spec = RenderSpec::new(RenderMode::Curve { closed: a.circular }, c.canvas, c.points);
    if let Some(s) = a.stroke {
        spec.stroke = s;
    }
    write_outputs(c, &loaded, &run.state, spec)?;
    Ok(run.state.converged())
}

fn dashes(a: DashArgs) -> CliResult {
    let c = &a.common;
    validate_common(c)?;
    check_output_ext(&c.out)?;
    let loaded = load_input(c)?;
    let len = a.length.unwrap_or(1.0 / (c.points.max(1) as f64).sqrt());
    let init = c.init.as_deref().map(read_points).transpose()?;
    let admm = AdmmOptions {
        beta: a.beta,
        ..AdmmOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let (st, system) = dash(&loaded.density, c.points, len, &descent_config(c), &admm, init, &mut rng)?;
    let (set, _) = system.violation(st.sites.positions());
    eprintln!("segment length violation {set:.3e}");
    let mut spec = RenderSpec::new(RenderMode::Dash, c.canvas, c.points);
    if let Some(s) = a.stroke {
        spec.stroke = s;
    }
    write_outputs(c, &loaded, &st, spec)?;
    Ok(st.converged())
}

fn project(a: ProjectArgs) -> CliResult {
    let z = read_points(&a.curve)?;
    let (cs, mut opts) = match &a.constraints {
        Some(p) => {
            let cfg = ConstraintConfig::load(p)?;
            (cfg.build(z.len())?, cfg.admm_options())
        }
        None => {
            let (s, acc) = (a.speed.unwrap_or_default(), a.accel.unwrap_or_default());
            let cs = if a.geometric {
                ConstraintSystem::geometric(z.len(), a.circular, s, acc)?
            } else {
                ConstraintSystem::kinematic(z.len(), a.circular, s, acc)?
            };
            (cs, AdmmOptions::default())
        }
    };
    if let Some(b) = a.beta {
        opts.beta = b;
    }
    if let Some(t) = a.tol {
        opts.tol = t;
    }
    opts.max_iter = a.max_iter;
    let out = admm_project_with(&z, &cs, &opts, None)?;
    write_curve(&out.x, create(&a.out)?)?;
    let (set, eq) = cs.violation(&out.x);
    eprintln!(
        "{} iterations, primal {:.3e}, dual {:.3e}, constraint violation {set:.3e}, equality residual {eq:.3e}",
        out.iterations, out.state.primal, out.state.dual
    );
    Ok(out.converged)
}

fn bench(a: BenchArgs) -> CliResult {
    let cfg = BenchConfig {
        density: match a.density {
            DensityArg::Uniform => BenchDensity::Uniform,
            DensityArg::HalfSplit => BenchDensity::HalfSplit,
        },
        sizes: a.sizes,
        seed: a.seed,
        snr_stop: a.snr_stop,
        max_iter: a.max_iter,
        time_limit: a.time_limit.map(Duration::from_secs_f64),
        mode: a.newton.into(),
    };
    let rows = match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            let rows = run_bench(&cfg, Some(&mut w))?;
            w.flush()?;
            rows
        }
        None => {
            let mut w = std::io::stdout().lock();
            run_bench(&cfg, Some(&mut w))?
        }
    };
    Ok(rows.iter().all(|r| r.converged()))
}
