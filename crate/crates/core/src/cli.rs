//! Command-line front end. Exit codes: 0 success, 1 usage, 2 bad input
//! data, 3 runtime failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::io::{self, IoError, LoadedRig, MotionFile};
use crate::losses::LossBreakdown;
use crate::metrics;
use crate::optimizer::{build_critic, Checkpoint, CriticKind, Optimizer, Problem, RunConfig, RunError};
use crate::renderer::FrameSequence;
use crate::springmass::{build_mask, SpringSystem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rigmotion", version, about = "Animate a rigged mesh from a text prompt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a motion for a prompt and export it.
    Animate(AnimateArgs),
    /// Export the procedural prior without optimizing.
    InitOnly(InitArgs),
    /// Run the spring-mass layer over an existing motion file.
    Simulate(SimulateArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Load and check a rig bundle.
    ValidateRig(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriticArg {
    Mock,
    Bridge,
}

#[derive(Debug, Args)]
struct AnimateArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    prompt: String,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    critic: Option<CriticArg>,
    #[arg(long, value_name = "HOST:PORT")]
    bridge_addr: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum MetricsCommand {
    /// Mesh Laplacian Distortion against the rig's rest mesh.
    Mld(MldArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["motion", "obj_dir"])))]
struct MldArgs {
    #[arg(long)]
    rig: PathBuf,
    /// Motion JSON; deformed with the same pipeline as `animate`.
    #[arg(long)]
    motion: Option<PathBuf>,
    /// Directory of `frame_*.obj` files.
    #[arg(long)]
    obj_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    rig: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_) | RunError::Asset { .. } | RunError::AssetFormat { .. } | RunError::Init(_) | RunError::Checkpoint(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Animate(a) => animate(a, out),
        Command::InitOnly(a) => init_only(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Metrics(MetricsCommand::Mld(a)) => mld(a, out),
        Command::ValidateRig(a) => validate_rig(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
    }
}

fn load_rig(dir: &Path, out: &mut dyn Write) -> CliResult<LoadedRig> {
    let loaded = io::load_rig(dir)?;
    for w in &loaded.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    Ok(loaded)
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Motion JSON always; frames and geometry as the config asks.
fn export(problem: &Problem, cfg: &RunConfig, motion: &crate::skeleton::MotionParams, dir: &Path) -> CliResult<Vec<String>> {
    let mut written = vec!["motion.json".to_string()];
    io::save_motion(&dir.join("motion.json"), &MotionFile::new(problem.skeleton(), motion, cfg.fps))?;
    let o = &cfg.output;
    if !(o.png_frames || o.raw_frames || o.obj_sequence) {
        return Ok(written);
    }
    let (frames, verts): (FrameSequence, _) = problem.render_motion(motion, cfg)?;
    if o.png_frames {
        io::save_png_frames(&dir.join("frames"), &frames)?;
        written.push("frames/".into());
    }
    if o.raw_frames {
        io::save_raw_frames(&dir.join("frames.f32"), &frames)?;
        written.push("frames.f32".into());
    }
    if o.obj_sequence {
        let mesh = &problem.rig.mesh;
        io::save_obj_sequence(&dir.join("mesh"), verts.data(), mesh.vertex_count(), &mesh.faces, mesh.colors.as_deref())?;
        written.push("mesh/".into());
    }
    Ok(written)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    format_version: u32,
    prompt: &'a str,
    rig: &'a str,
    action: String,
    morphology: String,
    critic: &'a str,
    seed: u64,
    frames: usize,
    iterations: usize,
    final_loss: Option<LossBreakdown>,
    outputs: Vec<String>,
}

fn animate(a: AnimateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    match a.critic {
        Some(CriticArg::Mock) => cfg.critic.kind = CriticKind::Mock,
        Some(CriticArg::Bridge) => cfg.critic.kind = CriticKind::Bridge,
        None => {}
    }
    if a.bridge_addr.is_some() {
        cfg.critic.bridge_addr = a.bridge_addr.clone();
    }
    cfg.validate().map_err(|e| CliError::Data(e.to_string()))?;

    let loaded = load_rig(&a.rig, out)?;
    let problem = Problem::with_mask(&loaded.rig, &a.prompt, &cfg, loaded.mask)?;
    let mut critic = build_critic(&problem, &cfg)?;
    let mut opt = match &a.resume {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
            let ckpt = Checkpoint::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Optimizer::resume(&problem, &cfg, ckpt)?
        }
        None => Optimizer::new(&problem, &cfg),
    };
    let _ = writeln!(
        out,
        "{}: action {} ({}), {} joints, {} vertices, {} dynamic, critic {}",
        loaded.rig.name,
        problem.init.action.as_str(),
        problem.init.morphology.class.as_str(),
        problem.skeleton().len(),
        problem.rig.mesh.vertex_count(),
        problem.mask.dynamic_count(),
        critic.name()
    );

    std::fs::create_dir_all(&a.out).map_err(write_err(&a.out))?;
    cfg_write(&a.out, &cfg)?;
    let log_path = a.out.join("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(write_err(&log_path))?);
    let mut side_err: Option<CliError> = None;
    let every = cfg.output.checkpoint_every;
    let ckpt_path = a.out.join("checkpoint.json");
    let outcome = opt.run(critic.as_mut(), |rec, o| {
        if side_err.is_some() {
            return;
        }
        if let Err(e) = writeln!(log, "{}", serde_json::to_string(rec).expect("record serializes")) {
            side_err = Some(write_err(&log_path)(e));
        } else if every > 0 && rec.iteration % every == 0 {
            if let Err(e) = io::write_atomic(&ckpt_path, o.checkpoint().to_json().as_bytes()) {
                side_err = Some(e.into());
            }
        }
    });
    log.flush().map_err(write_err(&log_path))?;
    if let Some(e) = side_err {
        return Err(e);
    }
    let history = match outcome {
        Ok(h) => h,
        Err(RunError::NonFinite { iteration, last_good }) => {
            io::write_atomic(&ckpt_path, last_good.to_json().as_bytes())?;
            return Err(CliError::Runtime(format!(
                "non-finite values at iteration {iteration}; state after iteration {} saved to {}",
                last_good.iteration,
                ckpt_path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    io::write_atomic(&ckpt_path, opt.checkpoint().to_json().as_bytes())?;
    let motion = opt.motion()?;
    let mut outputs = export(&problem, &cfg, &motion, &a.out)?;
    outputs.extend(["log.jsonl", "checkpoint.json", "config.toml", "run.json"].map(String::from));
    let summary = RunSummary {
        format_version: io::FORMAT_VERSION,
        prompt: &a.prompt,
        rig: &loaded.rig.name,
        action: problem.init.action.as_str().to_string(),
        morphology: problem.init.morphology.class.as_str().to_string(),
        critic: critic.name(),
        seed: cfg.seed,
        frames: cfg.frames,
        iterations: opt.iteration(),
        final_loss: history.last().map(|r| r.loss),
        outputs,
    };
    io::write_atomic(&a.out.join("run.json"), to_json(&summary).as_bytes())?;
    if let Some(last) = history.last() {
        let _ = writeln!(out, "done: {} iterations, final loss {:.6}", opt.iteration(), last.loss.total);
    }
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(())
}

fn cfg_write(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    io::write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct InitSummary<'a> {
    format_version: u32,
    prompt: &'a str,
    action: String,
    morphology: String,
    cyclic: bool,
    /// Per foot joint, one flag per frame.
    contacts: std::collections::BTreeMap<&'a str, &'a [bool]>,
}

fn init_only(a: InitArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let loaded = load_rig(&a.rig, out)?;
    let problem = Problem::with_mask(&loaded.rig, &a.prompt, &cfg, loaded.mask)?;
    std::fs::create_dir_all(&a.out).map_err(write_err(&a.out))?;
    export(&problem, &cfg, &problem.init.params, &a.out)?;
    let summary = InitSummary {
        format_version: io::FORMAT_VERSION,
        prompt: &a.prompt,
        action: problem.init.action.as_str().to_string(),
        morphology: problem.init.morphology.class.as_str().to_string(),
        cyclic: problem.init.template.cyclic,
        contacts: problem.init.contacts.iter().map(|(j, c)| (problem.skeleton().joint(*j).name.as_str(), c.as_slice())).collect(),
    };
    io::write_atomic(&a.out.join("init.json"), to_json(&summary).as_bytes())?;
    let _ = writeln!(out, "prior: {} ({}), {} frames -> {}", summary.action, summary.morphology, cfg.frames, a.out.display());
    Ok(())
}

fn deformed_frames(loaded: &LoadedRig, motion: &MotionFile, motion_path: &Path, cfg: &RunConfig) -> CliResult<(Vec<f64>, usize)> {
    let rig = &loaded.rig;
    motion.check_skeleton(motion_path, &rig.skeleton)?;
    let params = motion.params();
    let g = crate::kinematics::forward_kinematics_params(&rig.skeleton, &params).map_err(|e| CliError::Runtime(e.to_string()))?;
    let lbs = crate::kinematics::skin(&rig.skeleton, &rig.mesh, &g).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mask = loaded.mask.clone().unwrap_or_else(|| build_mask(&rig.skeleton, &rig.mesh));
    let verts = if cfg.secondary_motion && mask.dynamic_count() > 0 {
        let sys = SpringSystem::for_mesh(&rig.mesh, &mask, &cfg.spring).map_err(|e| CliError::Data(e.to_string()))?;
        sys.simulate_sequence(&lbs).map_err(|e| CliError::Runtime(e.to_string()))?
    } else {
        lbs
    };
    Ok((verts.data().to_vec(), params.frames))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.secondary_motion = true;
    let loaded = load_rig(&a.rig, out)?;
    let motion = io::load_motion(&a.motion)?;
    let (verts, frames) = deformed_frames(&loaded, &motion, &a.motion, &cfg)?;
    let mesh = &loaded.rig.mesh;
    io::save_obj_sequence(&a.out.join("mesh"), &verts, mesh.vertex_count(), &mesh.faces, mesh.colors.as_deref())?;
    let _ = writeln!(out, "simulated {frames} frames -> {}", a.out.join("mesh").display());
    Ok(())
}

fn mld(a: MldArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let loaded = load_rig(&a.rig, out)?;
    let mesh = &loaded.rig.mesh;
    let frames = if let Some(p) = &a.motion {
        let motion = io::load_motion(p)?;
        let (verts, _) = deformed_frames(&loaded, &motion, p, &cfg)?;
        metrics::frames_from_flat(&verts, mesh.vertex_count())
    } else {
        let dir = a.obj_dir.as_ref().expect("clap enforces one source");
        let seq = io::load_obj_sequence(dir)?;
        if seq.is_empty() {
            return Err(CliError::Data(format!("{}: no frame_*.obj files", dir.display())));
        }
        // exports are in normalized scene units, like the loaded rest mesh
        let report = metrics::mld(&mesh.vertices, &mesh.faces, &seq.into_iter().map(|m| m.vertices).collect::<Vec<_>>())
            .map_err(|e| CliError::Data(e.to_string()))?;
        return emit_report(&report, a.out.as_deref(), out);
    };
    let report = metrics::mld(&mesh.vertices, &mesh.faces, &frames).map_err(|e| CliError::Data(e.to_string()))?;
    emit_report(&report, a.out.as_deref(), out)
}

fn emit_report(report: &metrics::MldReport, path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let text = to_json(report);
    if let Some(p) = path {
        io::write_atomic(p, text.as_bytes())?;
    }
    writeln!(out, "{text}").map_err(|e| CliError::Runtime(e.to_string()))
}

#[derive(Serialize)]
struct RigReport {
    name: String,
    joints: usize,
    vertices: usize,
    faces: usize,
    dynamic_vertices: usize,
    mask: &'static str,
    scale: f64,
    warnings: Vec<String>,
}

fn validate_rig(a: ValidateArgs, out: &mut dyn Write) -> CliResult<()> {
    let loaded = load_rig(&a.rig, out)?;
    let rig = &loaded.rig;
    let (mask, source) = match &loaded.mask {
        Some(m) => (m.clone(), "file"),
        None => (build_mask(&rig.skeleton, &rig.mesh), "derived"),
    };
    let report = RigReport {
        name: rig.name.clone(),
        joints: rig.skeleton.len(),
        vertices: rig.mesh.vertex_count(),
        faces: rig.mesh.faces.len(),
        dynamic_vertices: mask.dynamic_count(),
        mask: source,
        scale: loaded.normalization.scale,
        warnings: loaded.warnings.clone(),
    };
    writeln!(out, "{}", to_json(&report)).map_err(|e| CliError::Runtime(e.to_string()))
}
