//! Command-line entry point: data generation, teacher training, student
//! distillation, KD vs KD+MR comparison, and gradient checking.
//!
//! Exit codes: 0 success, 1 runtime/data error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmdistill::config::DistillConfig;
use mmdistill::error::Error;
use mmdistill::model::ModalNet;
use mmdistill::train::{ArchSpec, RelationTrace};
use mmdistill::{data, heatmap, train};

#[derive(Parser)]
#[command(name = "mmdistill", version, about = "Multimodal distillation lab with a Gram-matrix relation loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset CSV.
    GenData(GenDataArgs),
    /// Train a teacher network with tri-modality cross entropy.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a student against a frozen teacher, tracing relation matrices.
    Distill(DistillArgs),
    /// Compare plain KD against KD plus the relation loss over several seeds.
    Compare(CompareArgs),
    /// Verify analytic gradients of the full loss against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Number of classes.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..))]
    text_dim: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..))]
    image_dim: u64,
    /// Observation noise std added to features after labeling.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTeacherArgs {
    /// Dataset CSV (split 80/10/10 internally under the config seed).
    #[arg(long)]
    data: PathBuf,
    /// Config document (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    hidden_dim: u64,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    depth: u64,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    data: PathBuf,
    /// Teacher model document.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Student hidden-layer count.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    student_depth: u64,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
    #[arg(long)]
    out_trace: PathBuf,
    /// Directory for per-epoch heatmaps (default: directory of --out-trace).
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    hidden_dim: u64,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    teacher_depth: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    student_depth: u64,
    /// Output path for the plain-text table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Test-only hook: perturb analytic gradients so the check must fail.
    #[arg(long, hide = true, default_value_t = false)]
    corrupt_backward: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                // contract violations surfaced past clap are usage errors
                Error::Param(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> mmdistill::Result<DistillConfig> {
    match path {
        None => Ok(DistillConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Data(format!("cannot read config {}: {e}", p.display())))?;
            DistillConfig::from_json(&text)
        }
    }
}

fn load_dataset(path: &Path) -> mmdistill::Result<data::Dataset> {
    data::read_csv(path)
}

fn cmd_gen_data(a: GenDataArgs) -> mmdistill::Result<ExitCode> {
    let ds = data::generate(
        a.n as usize,
        a.text_dim as usize,
        a.image_dim as usize,
        a.classes as usize,
        a.noise,
        a.seed,
    )?;
    data::write_csv(&ds, &a.out)?;
    println!(
        "wrote {} samples ({} classes, text {}, image {}) to {}",
        ds.samples.len(),
        ds.num_classes,
        ds.text_dim,
        ds.image_dim,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_teacher(a: TrainTeacherArgs) -> mmdistill::Result<ExitCode> {
    let cfg = load_config(&a.config)?;
    let ds = load_dataset(&a.data)?;
    let (train_set, val_set, test_set) = data::split(&ds, (0.8, 0.1, 0.1), cfg.seed)?;
    let init = ModalNet::new(
        ds.text_dim,
        ds.image_dim,
        a.hidden_dim as usize,
        ds.num_classes,
        a.depth as usize,
        cfg.seed,
    )?;
    let (teacher, mut report) = train::train_teacher(init, &train_set, &val_set, &cfg)?;
    report.test_accuracy = Some(train::evaluate(&teacher, &test_set, mmdistill::ModalityMode::Joint)?);
    std::fs::write(&a.out_model, teacher.to_json()?)?;
    std::fs::write(&a.out_report, report.to_json()?)?;
    println!(
        "teacher trained: val acc {:.4}, test acc {:.4} ({:.1}s)",
        train::evaluate(&teacher, &val_set, mmdistill::ModalityMode::Joint)?,
        report.test_accuracy.unwrap(),
        report.wall_clock_seconds
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_distill(a: DistillArgs) -> mmdistill::Result<ExitCode> {
    let cfg = load_config(&a.config)?;
    let ds = load_dataset(&a.data)?;
    let teacher_text = std::fs::read_to_string(&a.teacher)
        .map_err(|e| Error::Data(format!("cannot read teacher {}: {e}", a.teacher.display())))?;
    let teacher = ModalNet::from_json(&teacher_text)?;
    if teacher.text_dim != ds.text_dim || teacher.image_dim != ds.image_dim {
        return Err(Error::Dim(format!(
            "teacher expects dims ({}, {}), dataset has ({}, {})",
            teacher.text_dim, teacher.image_dim, ds.text_dim, ds.image_dim
        )));
    }
    let (train_set, val_set, test_set) = data::split(&ds, (0.8, 0.1, 0.1), cfg.seed)?;
    let init = ModalNet::new(
        teacher.text_dim,
        teacher.image_dim,
        teacher.hidden_dim,
        teacher.num_classes,
        a.student_depth as usize,
        cfg.seed.wrapping_add(1),
    )?;
    let (student, mut report, trace) =
        train::distill_student(&teacher, init, &train_set, &val_set, &cfg)?;
    report.test_accuracy = Some(train::evaluate(&student, &test_set, mmdistill::ModalityMode::Joint)?);

    std::fs::write(&a.out_model, student.to_json()?)?;
    std::fs::write(&a.out_report, report.to_json()?)?;
    std::fs::write(&a.out_trace, trace.to_json()?)?;
    let heat_dir = a
        .heatmap_dir
        .unwrap_or_else(|| a.out_trace.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&heat_dir)?;
    write_heatmaps(&trace, &heat_dir)?;

    println!(
        "student distilled: val acc {:.4}, test acc {:.4}, final frobenius {:.6} ({:.1}s)",
        train::evaluate(&student, &val_set, mmdistill::ModalityMode::Joint)?,
        report.test_accuracy.unwrap(),
        trace.records.last().map(|r| r.frobenius_distance).unwrap_or(f64::NAN),
        report.wall_clock_seconds
    );
    Ok(ExitCode::SUCCESS)
}

fn write_heatmaps(trace: &RelationTrace, dir: &Path) -> mmdistill::Result<()> {
    for rec in &trace.records {
        let n = rec.epoch;
        heatmap::emit_heatmap(&rec.g_teacher, &dir.join(format!("trace_epoch{n}_gt.pgm")))?;
        heatmap::emit_heatmap(&rec.g_student, &dir.join(format!("trace_epoch{n}_gs.pgm")))?;
        heatmap::emit_heatmap(&rec.abs_distance, &dir.join(format!("trace_epoch{n}_absdiff.pgm")))?;
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> mmdistill::Result<ExitCode> {
    let cfg = load_config(&a.config)?;
    let ds = load_dataset(&a.data)?;
    let arch = ArchSpec {
        hidden_dim: a.hidden_dim as usize,
        teacher_depth: a.teacher_depth as usize,
        student_depth: a.student_depth as usize,
    };
    let cmp = train::compare_kd_vs_mr(&ds, &cfg, arch, a.seeds as usize)?;
    let text = cmp.render_text();
    std::fs::write(&a.out, &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> mmdistill::Result<ExitCode> {
    let report = mmdistill::check::run_gradcheck(a.seed, a.trials as usize, a.corrupt_backward)?;
    println!(
        "gradcheck: {} trials, {} parameters, max relative error {:.3e}",
        report.trials, report.params_checked, report.max_rel_err
    );
    if report.passed() {
        println!("gradcheck: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck: FAIL");
        Ok(ExitCode::from(1))
    }
}
