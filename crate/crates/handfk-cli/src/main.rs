//! `handfk`: one binary over every pipeline stage, with reproducible
//! seeds and diffable outputs. Data goes to stdout or `--out` files; the
//! resolved configuration and progress notes go to stderr.
//!
//! Exit codes: 0 success, 1 rejected input (bad flags, malformed files,
//! failed checks), 2 runtime failure mid-computation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use handfk::evalkit::{self, EvalError};
use handfk::fk;
use handfk::preproc::{
    self, BuildOptions, CameraIntrinsics, CropSpec, DatasetKind, MappingTable, PreprocError,
};
use handfk::skeleton::{
    self, KinematicTree, PoseVector, ScaleMode, ScaleVector, SkeletonError,
};
use handfk::solver::{self, Algorithm, FitConfig, SolverError};
use handfk::synth::{self, FdSteps, SynthSpec};
use handfk::toynet::{self, ToynetError, TrainConfig};
use handfk_cli::params;

/// Environment variable naming a default tree config file.
const TREE_ENV: &str = "HANDFK_TREE";

#[derive(Parser)]
#[command(name = "handfk", version, about = "Hand skeleton FK toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Skeleton config file (falls back to $HANDFK_TREE, then the
    /// bundled default hand).
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    /// Master seed for anything randomized.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Scale mode: global, five, or multi.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run forward kinematics on pose/scale parameter files.
    Fk(FkCmd),
    /// Compare analytic Jacobians against central finite differences.
    Gradcheck(GradcheckCmd),
    /// Fit pose and scales to a target joints file.
    Fit(FitCmd),
    /// Re-estimate rest bone lengths from annotated frames.
    Calibrate(CalibrateCmd),
    /// Generate a synthetic sample file.
    Synth(SynthCmd),
    /// Build a binary corpus from a dataset directory.
    Preprocess(PreprocessCmd),
    /// Train the toy regressor on a synthetic sample file.
    TrainToy(TrainToyCmd),
    /// Score predicted joints against ground truth.
    Eval(EvalCmd),
}

#[derive(Args)]
struct FkCmd {
    /// Pose parameter file; rest pose when omitted.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Scale parameter file; all ones when omitted.
    #[arg(long)]
    scales: Option<PathBuf>,
    /// Also write the joints file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    /// Random interior points per mode.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Central-difference step for pose parameters (radians/mm).
    #[arg(long, default_value_t = 1e-5)]
    h_theta: f64,
    /// Central-difference step for scale parameters.
    #[arg(long, default_value_t = 1e-6)]
    h_s: f64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct FitCmd {
    /// Target joints file.
    #[arg(long)]
    target: PathBuf,
    /// Write the fit report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// gauss_newton (default) or descent.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Extra seeded attempts when the first fit stalls above the cost
    /// tolerance.
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Initial pose file; default init when omitted.
    #[arg(long)]
    init_pose: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateCmd {
    /// Annotations file (frames of 16 joints).
    #[arg(long)]
    annotations: PathBuf,
    /// Where to write the updated tree config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthCmd {
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Output sample file.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of each DoF range to sample.
    #[arg(long, default_value_t = 0.8)]
    margin: f64,
    #[arg(long, default_value_t = 0.8)]
    scale_lo: f64,
    #[arg(long, default_value_t = 1.25)]
    scale_hi: f64,
    /// Gaussian joint noise in millimeters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct PreprocessCmd {
    /// Dataset root directory.
    #[arg(long)]
    dataset: PathBuf,
    /// icvl, nyu, or msra2015.
    #[arg(long)]
    kind: String,
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    /// Crop cube side in millimeters.
    #[arg(long, default_value_t = 300.0)]
    cube_mm: f64,
    /// Output image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Joint mapping table file; bundled table when omitted.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

#[derive(Args)]
struct TrainToyCmd {
    /// Synthetic sample file from `handfk synth`.
    #[arg(long)]
    samples: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    out: PathBuf,
    /// Plain-text loss table path.
    #[arg(long)]
    loss_history: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
}

#[derive(Args)]
struct EvalCmd {
    /// Predicted joints (annotations file).
    #[arg(long)]
    predictions: PathBuf,
    /// Ground-truth joints (annotations file).
    #[arg(long)]
    truths: PathBuf,
    /// Comma-separated thresholds in millimeters.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    /// Also write the plot-data file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures split by exit code: bad input versus broken run.
enum CliError {
    Validation(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

impl CliError {
    fn validation(module: &str, detail: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{module}: {detail}"))
    }

    fn runtime(module: &str, detail: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{module}: {detail}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (tree, tree_source) = resolve_tree(&cli.global)?;
    match cli.command {
        Command::Fk(cmd) => cmd_fk(&cli.global, &tree, &tree_source, cmd),
        Command::Gradcheck(cmd) => cmd_gradcheck(&cli.global, &tree, &tree_source, cmd),
        Command::Fit(cmd) => cmd_fit(&cli.global, &tree, &tree_source, cmd),
        Command::Calibrate(cmd) => cmd_calibrate(&cli.global, &tree, &tree_source, cmd),
        Command::Synth(cmd) => cmd_synth(&cli.global, &tree, &tree_source, cmd),
        Command::Preprocess(cmd) => cmd_preprocess(&cli.global, &tree_source, cmd),
        Command::TrainToy(cmd) => cmd_train_toy(&cli.global, &tree, &tree_source, cmd),
        Command::Eval(cmd) => cmd_eval(&cli.global, &tree_source, cmd),
    }
}

/// Flag, then environment, then the bundled default.
fn resolve_tree(global: &GlobalOpts) -> CliResult<(KinematicTree, String)> {
    let path = global
        .tree
        .clone()
        .or_else(|| std::env::var_os(TREE_ENV).map(PathBuf::from));
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::validation("skeleton", format!("{}: {e}", path.display()))
            })?;
            let tree = skeleton::load_tree(&text).map_err(|e| {
                CliError::validation("skeleton", format!("{}: {e}", path.display()))
            })?;
            Ok((tree, path.display().to_string()))
        }
        None => Ok((skeleton::default_tree(), "<bundled default>".into())),
    }
}

fn resolve_mode(global: &GlobalOpts) -> CliResult<ScaleMode> {
    match &global.mode {
        Some(name) => ScaleMode::from_name(name).ok_or_else(|| {
            CliError::validation(
                "cli",
                format!("unknown mode {name:?}; expected global, five, or multi"),
            )
        }),
        None => Ok(ScaleMode::Five),
    }
}

/// The "resolved config" line every run prints before doing work.
fn announce(global: &GlobalOpts, tree_source: &str, subcommand: &str, details: &str) {
    eprintln!(
        "resolved: subcommand={subcommand} tree={tree_source} seed={} {details}",
        global.seed
    );
}

fn read_input(path: &Path, module: &str) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(module, format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, content: &[u8], module: &str) -> CliResult<()> {
    std::fs::write(path, content)
        .map_err(|e| CliError::runtime(module, format!("{}: {e}", path.display())))
}

/// Writes command output to stdout. A consumer that stopped reading
/// (`handfk ... | head`) is not a crash: the run dies quietly with the
/// conventional 128+SIGPIPE status. Output files are always written
/// before stdout so a dead pipe never loses a requested artifact.
fn emit_stdout(text: &str) -> CliResult<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(141),
        Err(e) => Err(CliError::runtime("cli", format!("stdout: {e}"))),
    }
}

fn fk_error(e: handfk::FkError, input: &str) -> CliError {
    CliError::validation("fk_core", format!("{input}: {e}"))
}

fn solver_error(e: SolverError, input: &str) -> CliError {
    match e {
        SolverError::NonFiniteCost { .. } => CliError::runtime("solver", format!("{input}: {e}")),
        _ => CliError::validation("solver", format!("{input}: {e}")),
    }
}

fn skeleton_error(e: SkeletonError, input: &str) -> CliError {
    CliError::validation("skeleton", format!("{input}: {e}"))
}

fn synth_error(e: synth::SynthError) -> CliError {
    CliError::validation("synth", e)
}

fn preproc_error(e: PreprocError, input: &str) -> CliError {
    match e {
        PreprocError::Io(_) | PreprocError::Image(_) => {
            CliError::runtime("preproc", format!("{input}: {e}"))
        }
        _ => CliError::validation("preproc", format!("{input}: {e}")),
    }
}

fn toynet_error(e: ToynetError, input: &str) -> CliError {
    match e {
        ToynetError::Io(_) | ToynetError::NonFiniteLoss { .. } => {
            CliError::runtime("toynet", format!("{input}: {e}"))
        }
        _ => CliError::validation("toynet", format!("{input}: {e}")),
    }
}

fn eval_error(e: EvalError, input: &str) -> CliError {
    match e {
        EvalError::Io(_) => CliError::runtime("evalkit", format!("{input}: {e}")),
        _ => CliError::validation("evalkit", format!("{input}: {e}")),
    }
}

fn cmd_fk(
    global: &GlobalOpts,
    tree: &KinematicTree,
    tree_source: &str,
    cmd: FkCmd,
) -> CliResult<()> {
    let theta = match &cmd.pose {
        Some(path) => params::parse_pose(&read_input(path, "cli")?, &path.display().to_string())
            .map_err(CliError::Validation)?,
        None => PoseVector::zeros(),
    };
    let scales = match &cmd.scales {
        Some(path) => {
            let s = params::parse_scales(
                &read_input(path, "cli")?,
                &path.display().to_string(),
            )
            .map_err(CliError::Validation)?;
            if let Some(name) = &global.mode {
                if ScaleMode::from_name(name) != Some(s.mode()) {
                    return Err(CliError::validation(
                        "cli",
                        format!(
                            "--mode {name} conflicts with scale file mode {}",
                            s.mode().name()
                        ),
                    ));
                }
            }
            s
        }
        None => ScaleVector::ones(resolve_mode(global)?),
    };
    announce(
        global,
        tree_source,
        "fk",
        &format!(
            "mode={} pose={} scales={}",
            scales.mode().name(),
            cmd.pose
                .as_deref()
                .map_or("<rest>".into(), |p| p.display().to_string()),
            cmd.scales
                .as_deref()
                .map_or("<ones>".into(), |p| p.display().to_string()),
        ),
    );

    let result = fk::forward(&theta, &scales, tree)
        .map_err(|e| fk_error(e, cmd.pose.as_deref().map_or("<rest pose>", |_| "pose file")))?;
    let text = params::write_joints(result.joints());
    if let Some(out) = &cmd.out {
        write_output(out, text.as_bytes(), "cli")?;
    }
    emit_stdout(&text)
}

fn cmd_gradcheck(
    global: &GlobalOpts,
    tree: &KinematicTree,
    tree_source: &str,
    cmd: GradcheckCmd,
) -> CliResult<()> {
    if cmd.n == 0 {
        return Err(CliError::validation("cli", "--n must be positive"));
    }
    let modes: Vec<ScaleMode> = match &global.mode {
        Some(_) => vec![resolve_mode(global)?],
        None => ScaleMode::ALL.to_vec(),
    };
    announce(
        global,
        tree_source,
        "gradcheck",
        &format!(
            "modes={} n={} h_theta={:e} h_s={:e} tolerance={:e}",
            modes
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
            cmd.n,
            cmd.h_theta,
            cmd.h_s,
            cmd.tolerance
        ),
    );

    let steps = FdSteps {
        h_theta: cmd.h_theta,
        h_s: cmd.h_s,
    };
    let mut all_ok = true;
    for (i, &mode) in modes.iter().enumerate() {
        let spec = SynthSpec {
            n_samples: cmd.n,
            seed: global.seed.wrapping_add(i as u64),
            mode,
            ..SynthSpec::default()
        };
        let samples = synth::generate(&spec, tree).map_err(synth_error)?;
        let mut worst = 0.0f64;
        for sample in &samples {
            let analytic_pose = fk::pose_jacobian(&sample.theta, &sample.scales, tree)
                .map_err(|e| fk_error(e, "sampled point"))?;
            let analytic_scale = fk::scale_jacobian(&sample.theta, &sample.scales, tree)
                .map_err(|e| fk_error(e, "sampled point"))?;
            let (fd_pose, fd_scale) =
                synth::fd_jacobian(&sample.theta, &sample.scales, tree, steps)
                    .map_err(synth_error)?;
            worst = worst
                .max(synth::max_relative_error(
                    analytic_pose.matrix(),
                    fd_pose.matrix(),
                ))
                .max(synth::max_relative_error(
                    analytic_scale.matrix(),
                    fd_scale.matrix(),
                ));
        }
        emit_stdout(&format!(
            "mode {}: max relative error {worst:e} over {} points\n",
            mode.name(),
            cmd.n
        ))?;
        all_ok &= worst <= cmd.tolerance;
    }
    if !all_ok {
        return Err(CliError::validation(
            "synth",
            format!("gradient check exceeded tolerance {:e}", cmd.tolerance),
        ));
    }
    Ok(())
}

fn cmd_fit(
    global: &GlobalOpts,
    tree: &KinematicTree,
    tree_source: &str,
    cmd: FitCmd,
) -> CliResult<()> {
    let mode = resolve_mode(global)?;
    let algorithm = match &cmd.algorithm {
        Some(name) => Algorithm::from_name(name).ok_or_else(|| {
            CliError::validation(
                "cli",
                format!("unknown algorithm {name:?}; expected gauss_newton or descent"),
            )
        })?,
        None => Algorithm::GaussNewton,
    };
    let target_text = read_input(&cmd.target, "cli")?;
    let target = params::parse_joints(&target_text, &cmd.target.display().to_string())
        .map_err(CliError::Validation)?;
    let init = match &cmd.init_pose {
        Some(path) => {
            let theta =
                params::parse_pose(&read_input(path, "cli")?, &path.display().to_string())
                    .map_err(CliError::Validation)?;
            Some((theta, ScaleVector::ones(mode)))
        }
        None => None,
    };
    announce(
        global,
        tree_source,
        "fit",
        &format!(
            "mode={} algorithm={} max_iters={} restarts={} target={}",
            mode.name(),
            algorithm.name(),
            cmd.max_iters,
            cmd.restarts,
            cmd.target.display()
        ),
    );

    let cfg = FitConfig {
        mode,
        algorithm,
        max_iters: cmd.max_iters,
        restarts: cmd.restarts,
        seed: global.seed,
        ..FitConfig::new(mode)
    };
    let report = solver::fit(&target, tree, &cfg, init)
        .map_err(|e| solver_error(e, &cmd.target.display().to_string()))?;
    eprintln!(
        "fit: converged={} iterations={} final_cost={:e}",
        report.converged, report.iterations, report.final_cost
    );
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::runtime("cli", format!("serializing report: {e}")))?;
    json.push('\n');
    match &cmd.out {
        Some(out) => write_output(out, json.as_bytes(), "cli"),
        None => emit_stdout(&json),
    }
}

fn cmd_calibrate(
    global: &GlobalOpts,
    tree: &KinematicTree,
    tree_source: &str,
    cmd: CalibrateCmd,
) -> CliResult<()> {
    let text = read_input(&cmd.annotations, "cli")?;
    let frames = params::parse_annotations(&text, &cmd.annotations.display().to_string())
        .map_err(CliError::Validation)?;
    announce(
        global,
        tree_source,
        "calibrate",
        &format!(
            "annotations={} frames={} out={}",
            cmd.annotations.display(),
            frames.len(),
            cmd.out.display()
        ),
    );

    let calibrated = skeleton::calibrate_rest_lengths(tree, &frames)
        .map_err(|e| skeleton_error(e, &cmd.annotations.display().to_string()))?;
    write_output(&cmd.out, calibrated.to_config_string().as_bytes(), "cli")?;
    let lengths = calibrated.rest_lengths();
    let mut text = String::new();
    for (b, bone) in calibrated.bones().iter().enumerate() {
        text.push_str(&format!(
            "bone {b} ({} -> {}): {} mm\n",
            calibrated.joint_name(bone.parent),
            calibrated.joint_name(bone.child),
            lengths[b]
        ));
    }
    emit_stdout(&text)
}

fn cmd_synth(
    global: &GlobalOpts,
    tree: &KinematicTree,
    tree_source: &str,
    cmd: SynthCmd,
) -> CliResult<()> {
    if cmd.n == 0 {
        return Err(CliError::validation("cli", "--n must be positive"));
    }
    let mode = resolve_mode(global)?;
    announce(
        global,
        tree_source,
        "synth",
        &format!(
            "mode={} n={} margin={} scales=[{}, {}] noise={}mm out={}",
            mode.name(),
            cmd.n,
            cmd.margin,
            cmd.scale_lo,
            cmd.scale_hi,
            cmd.noise,
            cmd.out.display()
        ),
    );
    let spec = SynthSpec {
        n_samples: cmd.n,
        seed: global.seed,
        mode,
        margin: cmd.margin,
        scale_lo: cmd.scale_lo,
        scale_hi: cmd.scale_hi,
        noise_sigma_mm: cmd.noise,
    };
    let samples = synth::generate(&spec, tree).map_err(synth_error)?;
    let text = params::write_synth_samples(&samples, mode);
    write_output(&cmd.out, text.as_bytes(), "cli")?;
    eprintln!("synth: wrote {} samples to {}", samples.len(), cmd.out.display());
    Ok(())
}

fn cmd_preprocess(global: &GlobalOpts, tree_source: &str, cmd: PreprocessCmd) -> CliResult<()> {
    let kind = DatasetKind::from_name(&cmd.kind).ok_or_else(|| {
        CliError::validation(
            "cli",
            format!(
                "unknown dataset kind {:?}; expected icvl, nyu, or msra2015",
                cmd.kind
            ),
        )
    })?;
    let mapping = match &cmd.mapping {
        Some(path) => Some(
            MappingTable::parse(&read_input(path, "preproc")?)
                .map_err(|e| preproc_error(e, &path.display().to_string()))?,
        ),
        None => None,
    };
    announce(
        global,
        tree_source,
        "preprocess",
        &format!(
            "dataset={} kind={} cube_mm={} size={} mapping={} out={}",
            cmd.dataset.display(),
            kind,
            cmd.cube_mm,
            cmd.size,
            cmd.mapping
                .as_deref()
                .map_or("<bundled>".into(), |p| p.display().to_string()),
            cmd.out.display()
        ),
    );

    let options = BuildOptions {
        crop: Some(CropSpec {
            cube_side_mm: cmd.cube_mm,
            output_size: cmd.size,
        }),
        intrinsics: Some(CameraIntrinsics::defaults_for(kind)),
        mapping,
    };
    let summary = preproc::build_corpus(&cmd.dataset, kind, &cmd.out, &options)
        .map_err(|e| preproc_error(e, &cmd.dataset.display().to_string()))?;
    emit_stdout(&format!("{summary}\n"))
}

fn cmd_train_toy(
    global: &GlobalOpts,
    tree: &KinematicTree,
    tree_source: &str,
    cmd: TrainToyCmd,
) -> CliResult<()> {
    let text = read_input(&cmd.samples, "cli")?;
    let (mode, samples) =
        params::parse_synth_samples(&text, &cmd.samples.display().to_string())
            .map_err(CliError::Validation)?;
    if let Some(name) = &global.mode {
        if ScaleMode::from_name(name) != Some(mode) {
            return Err(CliError::validation(
                "cli",
                format!("--mode {name} conflicts with sample file mode {}", mode.name()),
            ));
        }
    }
    announce(
        global,
        tree_source,
        "train-toy",
        &format!(
            "mode={} samples={} n={} epochs={} batch_size={} lr={} momentum={} out={}",
            mode.name(),
            cmd.samples.display(),
            samples.len(),
            cmd.epochs,
            cmd.batch_size,
            cmd.lr,
            cmd.momentum,
            cmd.out.display()
        ),
    );

    let cfg = TrainConfig {
        learning_rate: cmd.lr,
        momentum: cmd.momentum,
        epochs: cmd.epochs,
        batch_size: cmd.batch_size,
        seed: global.seed,
    };
    let input = cmd.samples.display().to_string();
    let (net, history) =
        toynet::train(&samples, tree, mode, &cfg).map_err(|e| toynet_error(e, &input))?;
    net.save(&cmd.out)
        .map_err(|e| toynet_error(e, &cmd.out.display().to_string()))?;
    if let Some(path) = &cmd.loss_history {
        toynet::write_loss_history(path, &history)
            .map_err(|e| toynet_error(e, &path.display().to_string()))?;
    }
    match (history.first(), history.last()) {
        (Some(first), Some(last)) => emit_stdout(&format!(
            "trained {} epochs: mean loss {first:.9e} -> {last:.9e}\n",
            history.len()
        )),
        _ => emit_stdout("trained 0 epochs: initialization saved unchanged\n"),
    }
}

fn cmd_eval(global: &GlobalOpts, tree_source: &str, cmd: EvalCmd) -> CliResult<()> {
    let pred_text = read_input(&cmd.predictions, "cli")?;
    let predictions =
        params::parse_annotations(&pred_text, &cmd.predictions.display().to_string())
            .map_err(CliError::Validation)?;
    let truth_text = read_input(&cmd.truths, "cli")?;
    let truths = params::parse_annotations(&truth_text, &cmd.truths.display().to_string())
        .map_err(CliError::Validation)?;
    announce(
        global,
        tree_source,
        "eval",
        &format!(
            "predictions={} truths={} frames={} thresholds={:?}",
            cmd.predictions.display(),
            cmd.truths.display(),
            predictions.len(),
            cmd.thresholds
        ),
    );

    let report = evalkit::evaluate(&predictions, &truths, &cmd.thresholds)
        .map_err(|e| eval_error(e, &cmd.predictions.display().to_string()))?;
    let text = evalkit::format_curves(&report);
    if let Some(out) = &cmd.out {
        write_output(out, text.as_bytes(), "cli")?;
    }
    emit_stdout(&text)
}
