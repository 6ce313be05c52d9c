//! Teacher training, student distillation, evaluation, and the per-epoch
//! relation trace.
//!
//! Training is single-threaded over a mutable model and fully deterministic
//! under the config seed: fixed shuffle order, sequential gradient
//! accumulation, no wall-clock dependence in any emitted document.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DistillConfig, OptimizerKind};
use crate::data::{argmax, Dataset};
use crate::error::{Error, Result};
use crate::loss::{total_distill_loss, GramMatrix};
use crate::model::{ModalNet, ModalityMode};
use crate::tensor::Tape;

/// Number of fixed validation samples averaged for each trace checkpoint.
pub const PROBE_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss_total: f64,
    pub loss_ce: f64,
    pub loss_kd: f64,
    pub loss_mr: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub test_accuracy: Option<f64>,
    pub config: DistillConfig,
    /// Measured run time; deliberately not serialized so that identical runs
    /// emit byte-identical report documents.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report document: {e}")))
    }

    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_accuracy)
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_accuracy).fold(None, |acc, v| {
            Some(match acc {
                None => v,
                Some(a) if v > a => v,
                Some(a) => a,
            })
        })
    }
}

/// One relation-trace checkpoint: probe-set means of the teacher and student
/// Gram matrices and their distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub g_teacher: [[f64; 3]; 3],
    pub g_student: [[f64; 3]; 3],
    pub abs_distance: [[f64; 3]; 3],
    pub frobenius_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RelationTrace {
    pub records: Vec<TraceRecord>,
}

impl RelationTrace {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("trace document: {e}")))
    }
}

/// SGD or Adam over a net's parameters.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    /// Adam first/second moments, two buffers (weight, bias) per layer.
    moments: Vec<(Vec<f64>, Vec<f64>)>,
    second_moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &ModalNet) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = net
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();
        Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            moments: zeros.clone(),
            second_moments: zeros,
        }
    }

    pub fn step(&mut self, net: &mut ModalNet, grads: &[(Vec<f64>, Vec<f64>)]) {
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (gw, gb)) in net.layers.iter_mut().zip(grads) {
                    for (w, g) in layer.weight.iter_mut().zip(gw) {
                        *w -= lr * g;
                    }
                    for (b, g) in layer.bias.iter_mut().zip(gb) {
                        *b -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (li, (layer, (gw, gb))) in net.layers.iter_mut().zip(grads).enumerate() {
                    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                        for i in 0..p.len() {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                            let mhat = m[i] / bc1;
                            let vhat = v[i] / bc2;
                            p[i] -= lr * mhat / (vhat.sqrt() + epsilon);
                        }
                    };
                    update(
                        &mut layer.weight,
                        gw,
                        &mut self.moments[li].0,
                        &mut self.second_moments[li].0,
                    );
                    update(
                        &mut layer.bias,
                        gb,
                        &mut self.moments[li].1,
                        &mut self.second_moments[li].1,
                    );
                }
            }
        }
    }
}

/// Fraction of samples whose argmax logit equals the label; ties break
/// toward the lowest class index.
pub fn evaluate(net: &ModalNet, ds: &Dataset, mode: ModalityMode) -> Result<f64> {
    if ds.samples.is_empty() {
        return Err(Error::Param("evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for s in &ds.samples {
        let (logits, _) = net.forward_values(s, mode)?;
        if argmax(&logits) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.samples.len() as f64)
}

fn probe_trace(
    teacher: &ModalNet,
    student: &ModalNet,
    probe: &[crate::data::ModalSample],
    cfg: &DistillConfig,
    epoch: usize,
) -> Result<TraceRecord> {
    let mut gt_sum = [[0.0; 3]; 3];
    let mut gs_sum = [[0.0; 3]; 3];
    for s in probe {
        let gt = GramMatrix::from_activations(
            &teacher.activations_matrix(s, cfg.relation_source)?,
            cfg.normalize_rows,
        );
        let gs = GramMatrix::from_activations(
            &student.activations_matrix(s, cfg.relation_source)?,
            cfg.normalize_rows,
        );
        for i in 0..3 {
            for j in 0..3 {
                gt_sum[i][j] += gt.values[i][j];
                gs_sum[i][j] += gs.values[i][j];
            }
        }
    }
    let n = probe.len() as f64;
    for i in 0..3 {
        for j in 0..3 {
            gt_sum[i][j] /= n;
            gs_sum[i][j] /= n;
        }
    }
    let g_teacher = GramMatrix { values: gt_sum };
    let g_student = GramMatrix { values: gs_sum };
    Ok(TraceRecord {
        epoch,
        g_teacher: g_teacher.values,
        g_student: g_student.values,
        abs_distance: g_teacher.abs_diff(&g_student),
        frobenius_distance: g_teacher.frobenius_distance(&g_student),
    })
}

fn check_compat(teacher: &ModalNet, student: &ModalNet) -> Result<()> {
    if teacher.text_dim != student.text_dim || teacher.image_dim != student.image_dim {
        return Err(Error::Dim(format!(
            "teacher input dims ({}, {}) differ from student input dims ({}, {})",
            teacher.text_dim, teacher.image_dim, student.text_dim, student.image_dim
        )));
    }
    if teacher.num_classes != student.num_classes {
        return Err(Error::Dim(format!(
            "teacher has {} classes, student has {}",
            teacher.num_classes, student.num_classes
        )));
    }
    Ok(())
}

fn run_training(
    teacher: Option<&ModalNet>,
    mut net: ModalNet,
    ds_train: &Dataset,
    ds_val: &Dataset,
    cfg: &DistillConfig,
) -> Result<(ModalNet, TrainReport, RelationTrace)> {
    cfg.validate()?;
    if ds_train.samples.is_empty() || ds_val.samples.is_empty() {
        return Err(Error::Param("training and validation sets must be nonempty".into()));
    }
    if let Some(t) = teacher {
        check_compat(t, &net)?;
    }
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net);
    let probe: Vec<_> = ds_val.samples.iter().take(PROBE_SIZE).cloned().collect();

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut trace = RelationTrace::default();
    let mut best: Option<(f64, ModalNet)> = None;

    let n = ds_train.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let (mut sum_total, mut sum_ce, mut sum_kd, mut sum_mr) = (0.0, 0.0, 0.0, 0.0);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tape = Tape::new();
            let lifted = net.lift(&tape, true)?;
            let mut batch_loss = None;
            for &si in batch {
                let parts = total_distill_loss(&tape, teacher, &lifted, &ds_train.samples[si], cfg)?;
                sum_total += parts.total.item();
                sum_ce += parts.ce.item();
                sum_kd += parts.kd.item();
                sum_mr += parts.mr.item();
                batch_loss = Some(match batch_loss {
                    None => parts.total,
                    Some(acc) => {
                        let acc: crate::tensor::Var<'_> = acc;
                        acc.add(parts.total)?
                    }
                });
            }
            let loss = batch_loss.expect("nonempty batch").scale(1.0 / batch.len() as f64);
            if !loss.item().is_finite() {
                return Err(Error::Training { epoch, batch: batch_idx });
            }
            tape.backward(loss)?;
            let grads = lifted.grads();
            opt.step(&mut net, &grads);
        }
        let inv = 1.0 / n as f64;
        let val_accuracy = evaluate(&net, ds_val, ModalityMode::Joint)?;
        records.push(TrainRecord {
            epoch,
            train_loss_total: sum_total * inv,
            loss_ce: sum_ce * inv,
            loss_kd: sum_kd * inv,
            loss_mr: sum_mr * inv,
            val_accuracy,
        });
        if let Some(t) = teacher {
            trace.records.push(probe_trace(t, &net, &probe, cfg, epoch)?);
        }
        let better = match &best {
            None => true,
            Some((acc, _)) => val_accuracy > *acc,
        };
        if better {
            best = Some((val_accuracy, net.clone()));
        }
    }

    let (_, best_net) = best.expect("epochs >= 1");
    let report = TrainReport {
        records,
        test_accuracy: None,
        config: cfg.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best_net, report, trace))
}

/// Supervised teacher training: tri-modality cross entropy only, no
/// distillation terms. Returns the best-validation-accuracy snapshot.
pub fn train_teacher(
    init: ModalNet,
    ds_train: &Dataset,
    ds_val: &Dataset,
    cfg: &DistillConfig,
) -> Result<(ModalNet, TrainReport)> {
    let teacher_cfg = DistillConfig { lambda_kd: 0.0, lambda_mr: 0.0, ..cfg.clone() };
    let (net, report, _) = run_training(None, init, ds_train, ds_val, &teacher_cfg)?;
    Ok((net, report))
}

/// Distill a student against a frozen teacher, tracing the relation
/// matrices over a fixed probe subset of the validation set every epoch.
pub fn distill_student(
    teacher: &ModalNet,
    init: ModalNet,
    ds_train: &Dataset,
    ds_val: &Dataset,
    cfg: &DistillConfig,
) -> Result<(ModalNet, TrainReport, RelationTrace)> {
    run_training(Some(teacher), init, ds_train, ds_val, cfg)
}

/// Architecture knobs shared by the comparison harness and the CLI.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArchSpec {
    pub hidden_dim: usize,
    pub teacher_depth: usize,
    pub student_depth: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        // deep teacher, shallow student, shared width
        ArchSpec { hidden_dim: 32, teacher_depth: 6, student_depth: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareArm {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub final_frobenius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub teacher_val_accuracy: f64,
    pub kd: CompareArm,
    pub mr: CompareArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub median_kd: CompareArm,
    pub median_mr: CompareArm,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_arm(arms: &[&CompareArm]) -> CompareArm {
    let mut val: Vec<f64> = arms.iter().map(|a| a.val_accuracy).collect();
    let mut test: Vec<f64> = arms.iter().map(|a| a.test_accuracy).collect();
    let mut fro: Vec<f64> = arms.iter().map(|a| a.final_frobenius).collect();
    CompareArm {
        val_accuracy: median(&mut val),
        test_accuracy: median(&mut test),
        final_frobenius: median(&mut fro),
    }
}

/// For each seed: train one teacher, then distill the same student
/// initialization twice — plain KD (lambda_mr = 0) versus KD plus the
/// relation loss — and tabulate accuracies and final relation distance.
pub fn compare_kd_vs_mr(
    ds: &Dataset,
    cfg: &DistillConfig,
    arch: ArchSpec,
    num_seeds: usize,
) -> Result<Comparison> {
    if num_seeds == 0 {
        return Err(Error::Param("num_seeds must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rows = Vec::with_capacity(num_seeds);
    for k in 0..num_seeds {
        let seed = cfg.seed.wrapping_add(k as u64);
        let (train, val, test) = crate::data::split(ds, (0.8, 0.1, 0.1), seed)?;
        let teacher_init = ModalNet::new(
            ds.text_dim,
            ds.image_dim,
            arch.hidden_dim,
            ds.num_classes,
            arch.teacher_depth,
            seed.wrapping_mul(2).wrapping_add(1),
        )?;
        let run_cfg = DistillConfig { seed, ..cfg.clone() };
        let (teacher, _) = train_teacher(teacher_init, &train, &val, &run_cfg)?;
        let teacher_val_accuracy = evaluate(&teacher, &val, ModalityMode::Joint)?;

        let student_init = ModalNet::new(
            ds.text_dim,
            ds.image_dim,
            arch.hidden_dim,
            ds.num_classes,
            arch.student_depth,
            seed.wrapping_mul(2).wrapping_add(2),
        )?;
        let arm = |lambda_mr: f64| -> Result<CompareArm> {
            let arm_cfg = DistillConfig { lambda_mr, ..run_cfg.clone() };
            let (student, _report, trace) =
                distill_student(&teacher, student_init.clone(), &train, &val, &arm_cfg)?;
            Ok(CompareArm {
                val_accuracy: evaluate(&student, &val, ModalityMode::Joint)?,
                test_accuracy: evaluate(&student, &test, ModalityMode::Joint)?,
                final_frobenius: trace.records.last().map(|r| r.frobenius_distance).unwrap_or(f64::NAN),
            })
        };
        let kd = arm(0.0)?;
        let mr = arm(if cfg.lambda_mr > 0.0 { cfg.lambda_mr } else { 1.0 })?;
        rows.push(CompareRow { seed, teacher_val_accuracy, kd, mr });
    }
    let median_kd = median_arm(&rows.iter().map(|r| &r.kd).collect::<Vec<_>>());
    let median_mr = median_arm(&rows.iter().map(|r| &r.mr).collect::<Vec<_>>());
    Ok(Comparison { rows, median_kd, median_mr })
}

impl Comparison {
    /// Aligned plain-text table, one row per seed and arm plus medians.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:<10} {:>12} {:>10} {:>10} {:>12}\n",
            "seed", "arm", "teacher_val", "val", "test", "frobenius"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<10} {:>12.4} {:>10.4} {:>10.4} {:>12.6}\n",
                r.seed, "KD", r.teacher_val_accuracy, r.kd.val_accuracy, r.kd.test_accuracy, r.kd.final_frobenius
            ));
            out.push_str(&format!(
                "{:<10} {:<10} {:>12.4} {:>10.4} {:>10.4} {:>12.6}\n",
                r.seed, "KD+MR", r.teacher_val_accuracy, r.mr.val_accuracy, r.mr.test_accuracy, r.mr.final_frobenius
            ));
        }
        out.push_str(&format!(
            "{:<10} {:<10} {:>12} {:>10.4} {:>10.4} {:>12.6}\n",
            "median", "KD", "-", self.median_kd.val_accuracy, self.median_kd.test_accuracy, self.median_kd.final_frobenius
        ));
        out.push_str(&format!(
            "{:<10} {:<10} {:>12} {:>10.4} {:>10.4} {:>12.6}\n",
            "median", "KD+MR", "-", self.median_mr.val_accuracy, self.median_mr.test_accuracy, self.median_mr.final_frobenius
        ));
        out.push('\n');
        out.push_str(
            "Published full-scale reference (not reproduced at this scale): \
             VE test 71.22 (KD) vs 72.45 (ours); NLVR test 73.62 (KD) vs 75.33 (ours); \
             HM test 68.22 (KD) vs 69.54 (ours).\n",
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
