//! Distillation losses: tri-modality cross entropy, tempered KD, and the
//! modality-level Gram-matrix relation loss.
//!
//! Teacher-side quantities are always computed off the tape and inserted as
//! constants, so no gradient can reach teacher parameters. Teacher and
//! student share the raw numeric kernels, which makes the zero-loss
//! identities (equal weights ⇒ kd == 0 and mr == 0) exact rather than
//! approximate.

use crate::config::{DistillConfig, RelationMode};
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::model::{ActivationSource, ModalNet, ModalityActivations, ModalityMode, TapeNet};
use crate::tensor::{
    log_softmax_scaled, matmul_raw, normalize_rows_raw, softmax_scaled, Tape, Var,
};

/// The 3×3 modality-relation matrix G = A·Aᵀ of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramMatrix {
    pub values: [[f64; 3]; 3],
}

impl GramMatrix {
    pub fn zeros() -> Self {
        GramMatrix { values: [[0.0; 3]; 3] }
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 9);
        let mut values = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                values[i][j] = flat[i * 3 + j];
            }
        }
        GramMatrix { values }
    }

    /// Build G from a 3×D activation matrix, optionally row-normalized.
    /// Uses the same kernels as the tape route.
    pub fn from_activations(acts: &ModalityActivations, normalize_rows: bool) -> Self {
        Self::from_flat(&gram_raw(&acts.values, acts.width, normalize_rows))
    }

    pub fn flat(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = self.values[i][j];
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..3 {
            for j in 0..3 {
                if (self.values[i][j] - self.values[j][i]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest eigenvalue of the symmetric 3×3 matrix, by cyclic Jacobi
    /// rotations (more accurate than the trigonometric closed form on
    /// near-rank-deficient matrices).
    pub fn min_eigenvalue(&self) -> f64 {
        let mut a = self.values;
        for _ in 0..30 {
            let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
            if off == 0.0 {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let prev = a;
                for k in 0..3 {
                    a[p][k] = c * prev[p][k] - s * prev[q][k];
                    a[q][k] = s * prev[p][k] + c * prev[q][k];
                }
                let prev = a;
                for k in 0..3 {
                    a[k][p] = c * prev[k][p] - s * prev[k][q];
                    a[k][q] = s * prev[k][p] + c * prev[k][q];
                }
            }
        }
        a[0][0].min(a[1][1]).min(a[2][2])
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    pub fn abs_diff(&self, other: &GramMatrix) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (self.values[i][j] - other.values[i][j]).abs();
            }
        }
        out
    }

    pub fn frobenius_distance(&self, other: &GramMatrix) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.values[i][j] - other.values[i][j];
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Raw Gram computation for a row-major 3×width matrix.
fn gram_raw(values: &[f64], width: usize, normalize_rows: bool) -> Vec<f64> {
    let a = if normalize_rows {
        normalize_rows_raw(values, 3, width)
    } else {
        values.to_vec()
    };
    let mut at = vec![0.0; a.len()];
    for i in 0..3 {
        for j in 0..width {
            at[j * 3 + i] = a[i * width + j];
        }
    }
    matmul_raw(&a, &at, 3, width, 3)
}

/// Differentiable G = A·Aᵀ of a 3×D activation matrix on the tape.
pub fn gram_var<'t>(acts: Var<'t>, normalize_rows: bool) -> Result<Var<'t>> {
    let shape = acts.shape();
    if shape.len() != 2 || shape[0] != 3 {
        return Err(Error::Dim(format!("gram: expected a 3×D matrix, got shape {shape:?}")));
    }
    let a = if normalize_rows { acts.normalize_rows()? } else { acts };
    a.matmul(a.transpose()?)
}

/// Tempered distillation loss
/// `T² · KL(softmax(teacher/T) ‖ softmax(student/T))`.
///
/// Teacher logits are plain values: constants on the tape.
pub fn kd_loss<'t>(
    tape: &'t Tape,
    teacher_logits: &[f64],
    student_logits: Var<'t>,
    temperature: f64,
) -> Result<Var<'t>> {
    if temperature <= 0.0 {
        return Err(Error::Param(format!(
            "kd temperature must be positive, got {temperature}"
        )));
    }
    let n = student_logits.len();
    if teacher_logits.len() != n {
        return Err(Error::Dim(format!(
            "kd_loss: teacher has {} logits, student has {}",
            teacher_logits.len(),
            n
        )));
    }
    let p_t = softmax_scaled(teacher_logits, temperature);
    let lp_t = log_softmax_scaled(teacher_logits, temperature);
    // Σ p_t·log p_t, in the same index order as the tape-side sum below so
    // identical logits cancel exactly.
    let teacher_entropy_term: f64 = p_t.iter().zip(&lp_t).map(|(p, l)| p * l).sum();

    let lp_s = student_logits.log_softmax_t(temperature)?;
    let p_t_const = tape.leaf(&student_logits.shape(), p_t, false)?;
    let cross = p_t_const.mul(lp_s)?.sum();
    let kl = tape.scalar(teacher_entropy_term).sub(cross)?;
    Ok(kl.scale(temperature * temperature))
}

/// Cross entropy `−log softmax(logits)[label]`.
pub fn ce_loss<'t>(logits: Var<'t>, label: usize) -> Result<Var<'t>> {
    if label >= logits.len() {
        return Err(Error::Data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(logits.log_softmax_t(1.0)?.pick(label)?.scale(-1.0))
}

/// `α·CE(text) + β·CE(image) + γ·CE(joint)` for one sample.
pub fn tri_modality_ce<'t>(
    student: &TapeNet<'t>,
    sample: &ModalSample,
    cfg: &DistillConfig,
) -> Result<Var<'t>> {
    let mut logits = Vec::with_capacity(3);
    for mode in ModalityMode::ALL {
        logits.push(student.forward(sample, mode)?.0);
    }
    weighted_ce(&logits, sample.label, cfg)
}

fn weighted_ce<'t>(
    logits_per_mode: &[Var<'t>],
    label: usize,
    cfg: &DistillConfig,
) -> Result<Var<'t>> {
    let weights = [cfg.alpha, cfg.beta, cfg.gamma];
    let mut total = None;
    for (logits, w) in logits_per_mode.iter().zip(weights) {
        let term = ce_loss(*logits, label)?.scale(w);
        total = Some(match total {
            None => term,
            Some(acc) => {
                let acc: Var<'t> = acc;
                acc.add(term)?
            }
        });
    }
    Ok(total.expect("three modes"))
}

/// Relation loss between teacher (constant) and student activation matrices.
///
/// Gram mode: mean over the 9 entries of (G_t − G_s)². RawActivations mode:
/// mean over the 3·D entries of (A_t − A_s)².
pub fn relation_loss<'t>(
    tape: &'t Tape,
    teacher_acts: &ModalityActivations,
    student_acts: Var<'t>,
    cfg: &DistillConfig,
) -> Result<Var<'t>> {
    let s_shape = student_acts.shape();
    if s_shape.len() != 2 || s_shape[0] != 3 {
        return Err(Error::Dim(format!(
            "relation_loss: student activations must be 3×D, got {s_shape:?}"
        )));
    }
    match cfg.relation_mode {
        RelationMode::Gram => {
            let g_t = gram_raw(&teacher_acts.values, teacher_acts.width, cfg.normalize_rows);
            let g_t = tape.leaf(&[3, 3], g_t, false)?;
            let g_s = gram_var(student_acts, cfg.normalize_rows)?;
            // mean over exactly 9 entries
            Ok(g_t.sub(g_s)?.square().mean())
        }
        RelationMode::RawActivations => {
            if teacher_acts.width != s_shape[1] {
                return Err(Error::Dim(format!(
                    "relation_loss: raw-activation widths differ (teacher {}, student {}); \
                     use Gram mode to compare networks of different output width",
                    teacher_acts.width, s_shape[1]
                )));
            }
            let a_t = tape.leaf(&[3, teacher_acts.width], teacher_acts.values.clone(), false)?;
            Ok(a_t.sub(student_acts)?.square().mean())
        }
    }
}

/// The separately reported terms of one sample's distillation loss.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub ce: Var<'t>,
    /// KD term already averaged over the three modality passes.
    pub kd: Var<'t>,
    pub mr: Var<'t>,
}

/// Full per-sample objective:
/// `CE + λ_kd · mean over modes of KD + λ_mr · relation`.
///
/// `teacher` is `None` for teacher pretraining, where the KD and relation
/// terms are identically zero.
pub fn total_distill_loss<'t>(
    tape: &'t Tape,
    teacher: Option<&ModalNet>,
    student: &TapeNet<'t>,
    sample: &ModalSample,
    cfg: &DistillConfig,
) -> Result<LossParts<'t>> {
    // one forward per mode, shared by all three loss families
    let mut s_logits = Vec::with_capacity(3);
    let mut s_hidden = Vec::with_capacity(3);
    for mode in ModalityMode::ALL {
        let (l, h) = student.forward(sample, mode)?;
        s_logits.push(l);
        s_hidden.push(h);
    }
    let ce = weighted_ce(&s_logits, sample.label, cfg)?;

    let (kd, mr) = match teacher {
        None => (tape.scalar(0.0), tape.scalar(0.0)),
        Some(teacher) => {
            let mut kd_sum = None;
            for (mode, s_l) in ModalityMode::ALL.iter().zip(&s_logits) {
                let (t_logits, _) = teacher.forward_values(sample, *mode)?;
                let term = kd_loss(tape, &t_logits, *s_l, cfg.temperature)?;
                kd_sum = Some(match kd_sum {
                    None => term,
                    Some(acc) => {
                        let acc: Var<'t> = acc;
                        acc.add(term)?
                    }
                });
            }
            let kd = kd_sum.expect("three modes").scale(1.0 / 3.0);

            let teacher_acts = teacher.activations_matrix(sample, cfg.relation_source)?;
            let rows: Vec<Var<'t>> = match cfg.relation_source {
                ActivationSource::Logits => s_logits.clone(),
                ActivationSource::Hidden => s_hidden.clone(),
            };
            let student_acts = tape.stack_rows(&rows)?;
            let mr = relation_loss(tape, &teacher_acts, student_acts, cfg)?;
            (kd, mr)
        }
    };

    let total = ce.add(kd.scale(cfg.lambda_kd))?.add(mr.scale(cfg.lambda_mr))?;
    Ok(LossParts { total, ce, kd, mr })
}
