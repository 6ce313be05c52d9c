//! Finite-difference verification of the full distillation loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DistillConfig, RelationMode};
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::loss::total_distill_loss;
use crate::model::{ActivationSource, ModalNet};
use crate::tensor::{finite_diff_grad, rel_err, Tape};

/// Outcome of one gradient-check sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_err: f64,
    pub params_checked: usize,
}

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn flatten(net: &ModalNet) -> Vec<f64> {
    net.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).cloned())
        .collect()
}

fn unflatten(template: &ModalNet, params: &[f64]) -> ModalNet {
    let mut net = template.clone();
    let mut k = 0;
    for l in net.layers.iter_mut() {
        let nw = l.weight.len();
        l.weight.copy_from_slice(&params[k..k + nw]);
        k += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&params[k..k + nb]);
        k += nb;
    }
    net
}

/// Compare analytic gradients of the total distillation loss against central
/// finite differences on random toy instances (all dims ≤ 8), cycling
/// through both relation modes, both activation sources, and row
/// normalization on and off.
///
/// `corrupt_backward` is a test-only hook that perturbs the analytic
/// gradients before comparison; a healthy harness must then fail.
pub fn run_gradcheck(seed: u64, trials: usize, corrupt_backward: bool) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::Param("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0_f64;
    let mut params_checked = 0usize;

    for trial in 0..trials {
        let text_dim = rng.gen_range(2..=4);
        let image_dim = rng.gen_range(2..=4);
        let hidden_dim = rng.gen_range(2..=5);
        let num_classes = rng.gen_range(2..=4);
        let teacher = ModalNet::new(
            text_dim,
            image_dim,
            hidden_dim,
            num_classes,
            rng.gen_range(1..=3),
            rng.gen(),
        )?;
        let mut student = ModalNet::new(
            text_dim,
            image_dim,
            hidden_dim,
            num_classes,
            rng.gen_range(1..=2),
            rng.gen(),
        )?;
        // jitter every parameter, biases included: freshly initialized nets
        // have zero biases, so dead relu rows put downstream pre-activations
        // exactly on the kink (and zero rows on the row-normalization
        // discontinuity), where finite differences are meaningless
        for l in student.layers.iter_mut() {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w += rng.gen_range(-0.25..0.25);
            }
        }
        let sample = ModalSample {
            text_feats: (0..text_dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            image_feats: (0..image_dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            label: rng.gen_range(0..num_classes),
        };
        let cfg = DistillConfig {
            temperature: [1.0, 2.0, 4.0][trial % 3],
            relation_mode: if trial % 2 == 0 { RelationMode::Gram } else { RelationMode::RawActivations },
            relation_source: if trial % 4 < 2 { ActivationSource::Logits } else { ActivationSource::Hidden },
            normalize_rows: trial % 3 == 1,
            alpha: rng.gen_range(0.1..1.0),
            beta: rng.gen_range(0.1..1.0),
            gamma: rng.gen_range(0.1..1.0),
            lambda_kd: rng.gen_range(0.5..1.5),
            lambda_mr: rng.gen_range(0.5..1.5),
            ..Default::default()
        };

        let tape = Tape::new();
        let lifted = student.lift(&tape, true)?;
        let parts = total_distill_loss(&tape, Some(&teacher), &lifted, &sample, &cfg)?;
        tape.backward(parts.total)?;
        let mut analytic: Vec<f64> = lifted
            .grads()
            .into_iter()
            .flat_map(|(w, b)| w.into_iter().chain(b))
            .collect();
        if corrupt_backward {
            for g in analytic.iter_mut() {
                *g = *g * 1.01 + 1e-3;
            }
        }

        let flat = flatten(&student);
        let numeric = finite_diff_grad(
            |p| {
                let net = unflatten(&student, p);
                let t = Tape::new();
                let lifted = net.lift(&t, true)?;
                Ok(total_distill_loss(&t, Some(&teacher), &lifted, &sample, &cfg)?.total.item())
            },
            &flat,
            STEP,
        )?;

        params_checked += flat.len();
        for (a, n) in analytic.iter().zip(&numeric) {
            max_err = max_err.max(rel_err(*a, *n));
        }
    }

    Ok(GradCheckReport { trials, max_rel_err: max_err, params_checked })
}
