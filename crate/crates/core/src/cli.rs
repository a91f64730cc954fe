//! Command-line front end.
//!
//! Every run writes `manifest.json` into its output directory recording the
//! subcommand, the resolved configuration text, inputs and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::domain::DomainMask;
use crate::error::{Error, Result};
use crate::imaging::{field_to_image, generate_test_image, image_to_field, synthetic_state, write_raw, IntensityImage, TestImageKind};
use crate::marcher::{Direction, MarchConfig, MarchReport, Marcher};
use crate::modal::{log_spaced, perturbation, smooth_modal_data, verify_lemma1, verify_lemma2, verify_theorem_bounds, ModalGrid};
use crate::operator::StateField;
use crate::params::{sig3, SchemeParams};
use crate::Field;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_PARAMETER: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Component order of image triples on the command line and in file names.
pub const FIELD_ORDER: [&str; 3] = ["u", "w", "v"];

#[derive(Debug, Parser)]
#[command(name = "backmarch", version, about = "Stabilized backward marching for coupled sound and heat flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// March desired T_max images back to t = 0.
    Assimilate(RunArgs),
    /// March t = 0 images forward to T_max.
    Evolve(RunArgs),
    /// Assimilate, then evolve the result and compare with the targets.
    Roundtrip(RunArgs),
    /// Check the stability and error inequalities on the linear modal problem.
    Verify(VerifyArgs),
    /// Write the synthetic test images.
    GenImages(CommonArgs),
    /// Write the smoother multiplier table as CSV.
    DumpSmoother(DumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the grid size from the configuration.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Three PGM images in the order u, w, v; synthetic images when absent.
    #[arg(long, num_args = 3, value_names = ["U", "W", "V"])]
    pub images: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub no_smoothing: bool,
    #[arg(long, default_value_t = 10)]
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Modes per direction in the modal checks.
    #[arg(long, default_value_t = 64)]
    pub modes: usize,
    /// Norm of the perturbation in the backward check.
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Largest mode index written in each direction.
    #[arg(long, default_value_t = 64)]
    pub limit: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub config: String,
    pub input_images: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub smoothing: Option<bool>,
    pub snapshot_stride: Option<usize>,
    pub n_steps: Option<usize>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Blowup { .. } | Error::NonFinite(_) => EXIT_BLOWUP,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_PARAMETER,
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARAMETER } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Assimilate(args) => cmd_assimilate(args),
        Command::Evolve(args) => cmd_evolve(args),
        Command::Roundtrip(args) => cmd_roundtrip(args),
        Command::Verify(args) => cmd_verify(args),
        Command::GenImages(args) => cmd_gen_images(args),
        Command::DumpSmoother(args) => cmd_dump_smoother(args),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(grid) = common.grid {
        cfg.grid = grid;
    }
    Ok(cfg)
}

struct Session {
    manifest: RunManifest,
}

impl Session {
    fn start(name: &str, common: &CommonArgs, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&common.out)?;
        Ok(Session {
            manifest: RunManifest {
                subcommand: name.to_string(),
                config_path: common.config.clone(),
                config: cfg.to_text(),
                input_images: Vec::new(),
                output_dir: common.out.clone(),
                seed: common.seed,
                smoothing: None,
                snapshot_stride: None,
                n_steps: None,
                started_unix: unix_now(),
                finished_unix: 0.0,
            },
        })
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = unix_now();
        let path = self.manifest.output_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Reads the three images or synthesizes them from `seed`, as fields on `mask`.
fn load_inputs(args: &RunArgs, mask: &DomainMask, session: &mut Session) -> Result<StateField> {
    let Some(paths) = &args.images else {
        return synthetic_state(mask, args.common.seed);
    };
    session.manifest.input_images = paths.clone();
    let images: Vec<IntensityImage> = paths.iter().map(|p| IntensityImage::read_pgm(p)).collect::<Result<_>>()?;
    let u = image_to_field(&images[0], mask)?;
    let w = image_to_field(&images[1], mask)?;
    let v = image_to_field(&images[2], mask)?;
    Ok(StateField::new(u, v, w))
}

fn component<'s>(state: &'s StateField, name: &str) -> &'s Field {
    match name {
        "u" => &state.u,
        "v" => &state.v,
        _ => &state.w,
    }
}

/// `<prefix>_<f>.pgm`, `<prefix>_<f>.raw` and `<prefix>_<f>.json` per component.
fn write_state(state: &StateField, mask: &DomainMask, dir: &Path, prefix: &str) -> Result<()> {
    for name in FIELD_ORDER {
        let field = component(state, name);
        let (img, range) = field_to_image(field, mask.grid());
        img.write_pgm(&dir.join(format!("{prefix}_{name}.pgm")))?;
        write_raw(field, &dir.join(format!("{prefix}_{name}.raw")))?;
        let json = serde_json::to_string(&range).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join(format!("{prefix}_{name}.json")), json + "\n")?;
    }
    Ok(())
}

fn write_march_csv(report: &MarchReport, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    report.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn blowup_error(report: &MarchReport) -> Option<Error> {
    report.blowup.map(|b| Error::Blowup {
        step: b.step,
        max_norm: b.max_norm,
    })
}

fn march_config(args: &RunArgs, direction: Direction, params: &SchemeParams) -> MarchConfig {
    let mut cfg = MarchConfig::new(direction, params.n_steps);
    cfg.smoothing = !args.no_smoothing;
    cfg.snapshot_stride = args.snapshot_stride.max(1);
    cfg
}

fn prepare(name: &str, args: &RunArgs) -> Result<(RunConfig, SchemeParams, Session)> {
    let cfg = load_config(&args.common)?;
    let params = cfg.scheme_params()?;
    if args.snapshot_stride == 0 {
        return Err(Error::param("snapshot_stride", "must be at least 1"));
    }
    let mut session = Session::start(name, &args.common, &cfg)?;
    session.manifest.smoothing = Some(!args.no_smoothing);
    session.manifest.snapshot_stride = Some(args.snapshot_stride);
    session.manifest.n_steps = Some(params.n_steps);
    Ok((cfg, params, session))
}

pub fn cmd_assimilate(args: &RunArgs) -> Result<i32> {
    let (cfg, params, mut session) = prepare("assimilate", args)?;
    let disc = cfg.discretization(&params)?;
    let target = load_inputs(args, &disc.mask, &mut session)?;
    let marcher = Marcher::new(&params, &disc);
    let report = marcher.march(&target, params.t_max, &march_config(args, Direction::Backward, &params))?;
    let out = &args.common.out;
    write_march_csv(&report, &out.join("march_backward.csv"))?;
    write_state(&report.final_state, &disc.mask, out, "initial")?;
    session.finish()?;
    match blowup_error(&report) {
        Some(e) => Err(e),
        None => {
            println!("assimilated {} steps back to t = 0", report.steps_completed);
            Ok(EXIT_OK)
        }
    }
}

pub fn cmd_evolve(args: &RunArgs) -> Result<i32> {
    let (cfg, params, mut session) = prepare("evolve", args)?;
    let disc = cfg.discretization(&params)?;
    let start = load_inputs(args, &disc.mask, &mut session)?;
    let marcher = Marcher::new(&params, &disc);
    let report = marcher.march(&start, 0.0, &march_config(args, Direction::Forward, &params))?;
    let out = &args.common.out;
    write_march_csv(&report, &out.join("march_forward.csv"))?;
    write_state(&report.final_state, &disc.mask, out, "evolved")?;
    session.finish()?;
    match blowup_error(&report) {
        Some(e) => Err(e),
        None => {
            println!("evolved {} steps to t = {}", report.steps_completed, params.t_max);
            Ok(EXIT_OK)
        }
    }
}

pub fn cmd_roundtrip(args: &RunArgs) -> Result<i32> {
    let (cfg, params, mut session) = prepare("roundtrip", args)?;
    let disc = cfg.discretization(&params)?;
    let target = load_inputs(args, &disc.mask, &mut session)?;
    let marcher = Marcher::new(&params, &disc);
    let trip = marcher.assimilate_roundtrip(&target, !args.no_smoothing, args.snapshot_stride)?;
    let out = &args.common.out;
    write_march_csv(&trip.backward, &out.join("march_backward.csv"))?;
    write_state(&trip.backward.final_state, &disc.mask, out, "initial")?;
    if let Some(forward) = &trip.forward {
        write_march_csv(forward, &out.join("march_forward.csv"))?;
        write_state(&forward.final_state, &disc.mask, out, "evolved")?;
    }
    if let Some(metrics) = &trip.metrics {
        let mut file = BufWriter::new(File::create(out.join("metrics.csv"))?);
        metrics.write_csv(&mut file)?;
        file.flush()?;
        println!("{:<6}{:>14}{:>14}{:>12}", "field", "desired L1", "evolved L1", "rel err");
        for r in &metrics.rows {
            let err = r.rel_err_pct.map_or_else(|| "NA".to_string(), |e| format!("{e:.2}%"));
            println!("{:<6}{:>14.2}{:>14.2}{:>12}", r.field, r.desired_l1, r.evolved_l1, err);
        }
    }
    session.finish()?;
    if let Some(e) = blowup_error(&trip.backward).or_else(|| trip.forward.as_ref().and_then(blowup_error)) {
        return Err(e);
    }
    Ok(EXIT_OK)
}

fn constants_block(params: &SchemeParams) -> String {
    let c = params.compute_constants();
    format!(
        "zeta_J = {}  T_max = {}  |dt| = {}  p = {}  omega = {}\n\
         K1 = {}\nK2 = {}\nK3 = {}\nK4 = {}\n1 + K1^2 = {}\n",
        params.zeta_j,
        sig3(params.t_max),
        sig3(params.dt_abs()),
        params.p,
        sig3(params.omega),
        sig3(c.k1),
        sig3(c.k2),
        sig3(c.k3),
        sig3(c.k4),
        sig3(c.delta_amplification),
    )
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let cfg = load_config(&args.common)?;
    let params = cfg.scheme_params()?;
    let session = Session::start("verify", &args.common, &cfg)?;
    print!("{}", constants_block(&params));

    let mut failures: Vec<String> = Vec::new();
    let lemma1 = verify_lemma1(&params, &log_spaced(1.0, 1e9, 10_000))?;
    println!("Lemma 1: worst margin {:e} at zeta = {:e}", lemma1.worst_margin, lemma1.worst_zeta);
    if let Some(z) = lemma1.failures.first() {
        failures.push(format!("Lemma 1 at zeta = {z:e}"));
    }

    let grid = ModalGrid::square(&params, args.modes)?;
    let data = smooth_modal_data(&grid, args.common.seed);
    let lemma2 = verify_lemma2(&params, &grid, &data, params.dt, params.n_steps);
    println!(
        "Lemma 2: max step norm {:.12} (cap {:.12}), envelope ratio {:.6}",
        lemma2.max_step_norm, lemma2.step_cap, lemma2.worst_envelope_ratio
    );
    if !lemma2.passed() {
        failures.push("Lemma 2 step norm or envelope".to_string());
    }

    let none = vec![[0.0; 3]; grid.len()];
    let kick = perturbation(&grid, args.delta, 8, args.common.seed.wrapping_add(1));
    for (label, direction, perturb, file) in [
        ("Theorem 1 (forward)", Direction::Forward, &none, "bound_forward.csv"),
        ("Theorem 2 (backward)", Direction::Backward, &kick, "bound_backward.csv"),
    ] {
        let report = verify_theorem_bounds(&params, &grid, &data, perturb, direction);
        let mut out = BufWriter::new(File::create(args.common.out.join(file))?);
        report.write_csv(&mut out)?;
        out.flush()?;
        let min_margin = report.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        println!("{label}: {} rows, min margin {min_margin:e}, K5 = {:e}", report.rows.len(), report.k5);
        if let Some(row) = report.first_violation {
            failures.push(format!("{label} at step {}: error {:e} > bound {:e}", row.step, row.error, row.bound));
        }
    }
    session.finish()?;
    if let Some(first) = failures.first() {
        println!("FAIL: {first}");
        Ok(EXIT_VERIFY_FAILED)
    } else {
        println!("PASS");
        Ok(EXIT_OK)
    }
}

pub fn cmd_gen_images(args: &CommonArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let session = Session::start("gen-images", args, &cfg)?;
    for (kind, name) in TestImageKind::ALL.iter().zip(FIELD_ORDER) {
        let img = generate_test_image(*kind, args.seed, cfg.grid)?;
        img.write_pgm(&args.out.join(format!("{name}_{}.pgm", kind.name())))?;
    }
    session.finish()?;
    Ok(EXIT_OK)
}

pub fn cmd_dump_smoother(args: &DumpArgs) -> Result<i32> {
    let cfg = load_config(&args.common)?;
    let params = cfg.scheme_params()?;
    let session = Session::start("dump-smoother", &args.common, &cfg)?;
    let disc = cfg.discretization(&params)?;
    let mut out = BufWriter::new(File::create(args.common.out.join("smoother.csv"))?);
    disc.table.write_csv(&mut out, args.limit)?;
    out.flush()?;
    session.finish()?;
    Ok(EXIT_OK)
}
