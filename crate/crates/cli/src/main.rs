//! `lrqp` command line: QP solving, SVM training and prediction, kernel
//! factorization and report verification.

mod instance;
mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrqp::io::{parse_libsvm, Dataset};
use lrqp::ipm::{solve, Backend, Mode, SolverOptions};
use lrqp::kernel::{exact_gaussian_kernel, gaussian_lowrank_factor, DEFAULT_RANK_CAP, EXACT_KERNEL_CAP};
use lrqp::oracle::{dense_solve_qp, kkt_residuals};
use lrqp::svm::{exact_qp, train_detailed, training_instance, KernelChoice, SvmModel, SvmSpec, TrainOptions, Variant};
use lrqp::QpInstance;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use instance::InstanceFile;
use report::{kkt_deviation, Report, SolutionVectors};

const USAGE_EXIT: u8 = 64;
const VERIFY_TOLERANCE: f64 = 1e-12;
const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "lrqp", version, about = "Interior point QP solver for low-rank objectives, with SVM training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a QP given as a JSON instance file.
    SolveQp {
        instance: PathBuf,
        /// Override the outer radius of the instance.
        #[arg(long = "radius-R")]
        radius_r: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train an SVM on a LIBSVM file.
    TrainSvm {
        data: PathBuf,
        #[command(flatten)]
        svm: SvmArgs,
        /// Write the trained model here.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Factor the Gaussian kernel matrix of a LIBSVM file.
    FactorKernel {
        data: PathBuf,
        /// Entrywise accuracy of the factorization.
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        /// Write the text dump of the factors here.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Compare against the exact kernel matrix.
        #[arg(long)]
        oracle: bool,
    },
    /// Recompute the KKT residuals of a report and compare.
    Verify {
        report_file: PathBuf,
        /// The instance (solve-qp) or data file (train-svm) the report came from.
        input: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a saved model on a LIBSVM file.
    Predict {
        model: PathBuf,
        data: PathBuf,
        /// Write `decision label` lines here instead of into the report.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Common {
    /// Target accuracy.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = BackendArg::Dense)]
    backend: BackendArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Practical)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step length in practical mode.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Write the JSON report here instead of standard output.
    #[serde(skip)]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also solve with the dense reference solver and compare.
    #[arg(long)]
    oracle: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendArg {
    Dense,
    Lowrank,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Theory,
    Practical,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Hard,
    CSvc,
    NuSvc,
    OneClass,
    EpsSvr,
    NuSvr,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KernelArg {
    Linear,
    Gaussian,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SvmArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::CSvc)]
    variant: VariantArg,
    #[serde(rename = "C")]
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    /// Tube half-width of epsilon-SVR.
    #[arg(long, default_value_t = 0.1)]
    svr_epsilon: f64,
    /// Box radius of the hard-margin dual.
    #[serde(rename = "radius_R")]
    #[arg(long = "radius-R", default_value_t = 10.0)]
    radius_r: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Linear)]
    kernel: KernelArg,
    /// Entrywise kernel accuracy; derived from --epsilon when absent.
    #[arg(long)]
    kernel_epsilon: Option<f64>,
}

impl SvmArgs {
    fn variant(&self) -> Variant {
        match self.variant {
            VariantArg::Hard => Variant::HardMargin { radius: self.radius_r },
            VariantArg::CSvc => Variant::CSvc { c: self.c },
            VariantArg::NuSvc => Variant::NuSvc { nu: self.nu },
            VariantArg::OneClass => Variant::OneClass { nu: self.nu },
            VariantArg::EpsSvr => Variant::EpsSvr { tube: self.svr_epsilon, c: self.c },
            VariantArg::NuSvr => Variant::NuSvr { nu: self.nu, c: self.c },
        }
    }

    fn spec(&self, data: &Dataset) -> SvmSpec {
        let (x, y) = data.to_dense();
        let kernel = match self.kernel {
            KernelArg::Linear => KernelChoice::Linear,
            KernelArg::Gaussian => KernelChoice::Gaussian { epsilon: self.kernel_epsilon },
        };
        let y = (!matches!(self.variant, VariantArg::OneClass)).then_some(y);
        SvmSpec { x, y, variant: self.variant(), kernel }
    }
}

impl Common {
    fn mode(&self) -> Mode {
        match self.mode {
            ModeArg::Theory => Mode::Theory,
            ModeArg::Practical => Mode::Practical,
        }
    }

    fn backend(&self) -> Backend {
        match self.backend {
            BackendArg::Dense => Backend::Dense,
            BackendArg::Lowrank => Backend::LowRank,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Lib(lrqp::Error),
    Json(serde_json::Error),
    Mismatch(String),
}

impl From<lrqp::Error> for CliError {
    fn from(e: lrqp::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Json(e) => write!(f, "json: {e}"),
            CliError::Mismatch(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_validation() || matches!(e, lrqp::Error::Io(_)) => 2,
            CliError::Lib(_) => 3,
            CliError::Json(_) | CliError::Mismatch(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE_EXIT } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    let start = Instant::now();
    let (mut report, dest) = match command {
        Command::SolveQp { instance, radius_r, common } => (solve_qp(&instance, radius_r, &common)?, common.report),
        Command::TrainSvm { data, svm, model, common } => {
            (train_svm(&data, &svm, model.as_deref(), &common)?, common.report)
        }
        Command::FactorKernel { data, epsilon, dump, report, oracle } => {
            (factor_kernel(&data, epsilon, dump.as_deref(), oracle)?, report)
        }
        Command::Verify { report_file, input, report } => (verify(&report_file, &input)?, report),
        Command::Predict { model, data, output, report } => (predict(&model, &data, output.as_deref())?, report),
    };
    report.timing.seconds = start.elapsed().as_secs_f64();
    write_report(&report, dest.as_deref())?;
    if let Some(v) = &report.verify {
        if v["match"] != json!(true) {
            return Err(CliError::Mismatch(format!(
                "recomputed residuals deviate by {} (tolerance {VERIFY_TOLERANCE:e})",
                v["max_deviation"]
            )));
        }
    }
    Ok(())
}

fn with_path(path: &Path, e: std::io::Error) -> CliError {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| with_path(path, e))
}

fn write_report(report: &Report, dest: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report)?;
    match dest {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| with_path(path, e))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_instance(path: &Path, radius_r: Option<f64>) -> CliResult<QpInstance> {
    let mut file: InstanceFile = serde_json::from_reader(BufReader::new(open(path)?))?;
    if radius_r.is_some() {
        file.outer_radius = radius_r;
    }
    Ok(file.to_instance()?)
}

fn solve_qp(path: &Path, radius_r: Option<f64>, common: &Common) -> CliResult<Report> {
    let inst = read_instance(path, radius_r)?;
    let opts = SolverOptions {
        epsilon: common.epsilon,
        mode: common.mode(),
        backend: common.backend(),
        alpha: common.alpha,
        max_iterations: common.max_iterations,
        seed: common.seed,
        ..Default::default()
    };
    let mut params = serde_json::to_value(common)?;
    params["radius_R"] = json!(radius_r);
    let mut report = Report::new("solve-qp", common.seed, params);
    let sol = solve(&inst, &opts)?;
    let kkt = kkt_residuals(&inst, &sol.x, &sol.s, &sol.y)?;
    report.objective = Some(kkt.objective);
    report.iterations = Some(sol.report.iterations);
    report.radii = Some(inst.radii());
    report.set_solver(&sol.report)?;
    if common.oracle {
        let o = dense_solve_qp(&inst, ORACLE_TOLERANCE)?;
        report.oracle = Some(json!({
            "objective": o.objective,
            "excess": kkt.objective - o.objective,
            "x_distance": (&sol.x - &o.x).norm(),
        }));
    }
    report.kkt = Some(kkt);
    report.solution = Some(SolutionVectors::new(&sol.x, &sol.y, &sol.s));
    Ok(report)
}

fn read_data(path: &Path) -> CliResult<Dataset> {
    let data = parse_libsvm(path).map_err(|e| match e {
        lrqp::Error::Io(e) => with_path(path, e),
        e => e.into(),
    })?;
    if data.is_empty() {
        return Err(lrqp::Error::InvalidParameter(format!("{} holds no rows", path.display())).into());
    }
    Ok(data)
}

fn train_options(common: &Common) -> TrainOptions {
    TrainOptions {
        epsilon: common.epsilon,
        mode: common.mode(),
        backend: common.backend(),
        alpha: common.alpha,
        seed: common.seed,
        max_iterations: common.max_iterations,
        ..Default::default()
    }
}

fn train_svm(path: &Path, svm: &SvmArgs, model_path: Option<&Path>, common: &Common) -> CliResult<Report> {
    let data = read_data(path)?;
    let spec = svm.spec(&data);
    let mut params = serde_json::to_value(common)?;
    params["svm"] = serde_json::to_value(svm)?;
    let mut report = Report::new("train-svm", common.seed, params);
    let out = train_detailed(&spec, &train_options(common))?;
    let (inst, sol) = (&out.instance, &out.solution);
    report.objective = Some(out.report.dual_objective);
    report.iterations = Some(sol.report.iterations);
    report.radii = Some(inst.radii());
    report.kkt = Some(kkt_residuals(inst, &sol.x, &sol.s, &sol.y)?);
    report.set_solver(&sol.report)?;
    report.svm = Some(json!({
        "variant": out.model.variant.to_string(),
        "n": data.len(),
        "dim": data.dim,
        "bias": out.model.bias,
        "support": out.report.support,
        "constraint_residual": out.report.constraint_residual,
        "qp_epsilon": out.report.qp_epsilon,
        "training_error": training_error(&out.model, &data)?,
    }));
    if let Some(eps) = out.report.kernel_epsilon {
        report.kernel = Some(json!({
            "epsilon": eps,
            "degree": out.report.kernel_degree,
            "rank": out.report.kernel_rank,
            "solver_rank": out.report.solver_rank,
        }));
    }
    if common.oracle {
        let exact = exact_qp(&spec)?;
        let o = dense_solve_qp(&exact, ORACLE_TOLERANCE)?;
        let best = if spec.variant.negated() { -o.objective } else { o.objective };
        report.oracle = Some(json!({
            "objective": best,
            "difference": out.report.dual_objective - best,
        }));
    }
    report.solution = Some(SolutionVectors::new(&sol.x, &sol.y, &sol.s));
    if let Some(p) = model_path {
        let mut w = BufWriter::new(create(p)?);
        out.model.write_text(&mut w)?;
        w.flush()?;
    }
    Ok(report)
}

/// Misclassification rate, or mean squared error for regression. Absent
/// for one-class models.
fn training_error(model: &SvmModel, data: &Dataset) -> CliResult<Option<f64>> {
    let (x, y) = data.to_dense();
    let regression = matches!(model.variant, Variant::EpsSvr { .. } | Variant::NuSvr { .. });
    if matches!(model.variant, Variant::OneClass { .. }) {
        return Ok(None);
    }
    let mut total = 0.0;
    for (i, row) in x.row_iter().enumerate() {
        let row: Vec<f64> = row.iter().copied().collect();
        let (decision, label) = model.predict(&row[..model.dim().min(row.len())])?;
        total += if regression { (decision - y[i]).powi(2) } else { f64::from(u8::from(label != y[i])) };
    }
    Ok(Some(total / data.len() as f64))
}

fn factor_kernel(path: &Path, epsilon: f64, dump: Option<&Path>, oracle: bool) -> CliResult<Report> {
    let data = read_data(path)?;
    let (x, _) = data.to_dense();
    let params = json!({ "epsilon": epsilon, "oracle": oracle, "rank_cap": DEFAULT_RANK_CAP });
    let mut report = Report::new("factor-kernel", 0, params);
    let f = gaussian_lowrank_factor(&x, epsilon, DEFAULT_RANK_CAP)?;
    let mut kernel = json!({
        "n": data.len(),
        "dim": data.dim,
        "q": f.degree,
        "k": f.rank,
        "radius": f.radius,
        "sup_error": f.poly.sup_error,
        "pruned_bound": f.pruned_bound,
        "entry_bound": f.entry_bound(),
    });
    if oracle {
        if data.len() > EXACT_KERNEL_CAP {
            return Err(lrqp::Error::InvalidParameter(format!("exact comparison needs at most {EXACT_KERNEL_CAP} points")).into());
        }
        let exact = exact_gaussian_kernel(&x)?;
        let approx: DMatrix<f64> = &f.u * f.v.transpose();
        kernel["max_entry_error"] = json!((approx - exact).amax());
    }
    report.kernel = Some(kernel);
    if let Some(p) = dump {
        let mut w = BufWriter::new(create(p)?);
        f.write_text(&mut w)?;
        w.flush()?;
    }
    Ok(report)
}

fn verify(report_path: &Path, input: &Path) -> CliResult<Report> {
    let stored: Report = serde_json::from_reader(BufReader::new(open(report_path)?))?;
    let missing = |what: &str| CliError::Mismatch(format!("report has no {what} section"));
    let kkt = stored.kkt.as_ref().ok_or_else(|| missing("kkt"))?;
    let solution = stored.solution.as_ref().ok_or_else(|| missing("solution"))?;
    let inst = match stored.command.as_str() {
        "solve-qp" => {
            let radius_r = stored.params.get("radius_R").and_then(|v| v.as_f64());
            read_instance(input, radius_r)?
        }
        "train-svm" => {
            let common: Common = serde_json::from_value(stored.params.clone())?;
            let svm: SvmArgs = serde_json::from_value(stored.params["svm"].clone())?;
            let spec = svm.spec(&read_data(input)?);
            training_instance(&spec, common.epsilon)?.0
        }
        other => return Err(CliError::Mismatch(format!("cannot verify a '{other}' report"))),
    };
    let (x, y, s) = solution.vectors();
    let fresh = kkt_residuals(&inst, &x, &s, &y)?;
    let deviation = kkt_deviation(kkt, &fresh);
    let mut report = Report::new("verify", stored.seed, json!({ "source": stored.command }));
    report.verify = Some(json!({
        "max_deviation": deviation,
        "tolerance": VERIFY_TOLERANCE,
        "match": deviation <= VERIFY_TOLERANCE,
    }));
    report.objective = Some(fresh.objective);
    report.kkt = Some(fresh);
    Ok(report)
}

fn predict(model_path: &Path, data_path: &Path, output: Option<&Path>) -> CliResult<Report> {
    let model = SvmModel::read_text(BufReader::new(open(model_path)?))?;
    let data = read_data(data_path)?;
    if data.dim > model.dim() {
        return Err(lrqp::Error::Dimension { what: "features", expected: model.dim(), found: data.dim }.into());
    }
    let mut x = DMatrix::zeros(data.len(), model.dim());
    for (i, row) in data.rows.iter().enumerate() {
        for &(j, v) in row {
            x[(i, j)] = v;
        }
    }
    let mut lines = Vec::with_capacity(data.len());
    for row in x.row_iter() {
        let row: Vec<f64> = row.iter().copied().collect();
        lines.push(model.predict(&row)?);
    }
    let mut summary = json!({ "n": data.len(), "variant": model.variant.to_string() });
    summary["error"] = json!(training_error(&model, &data)?);
    match output {
        Some(p) => {
            let mut w = BufWriter::new(create(p)?);
            for (d, l) in &lines {
                writeln!(w, "{d} {l}")?;
            }
            w.flush()?;
        }
        None => summary["predictions"] = json!(lines.iter().map(|(d, l)| json!({"decision": d, "label": l})).collect::<Vec<_>>()),
    }
    let mut report = Report::new("predict", 0, json!({ "model": model_path, "data": data_path }));
    report.predict = Some(summary);
    Ok(report)
}
