//! Feed-forward multimodal classifiers with three input modes.
//!
//! A [`ModalNet`] consumes an assembled vector
//! `[text or zeros] ++ [image or zeros] ++ [mask_t, mask_i]` so that a single
//! network serves text-only, image-only, and joint passes. The two mask bits
//! disambiguate an absent modality from genuinely zero features.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::tensor::{add_raw, matmul_raw, relu_raw, Tape, Var};

/// Input mode, in the canonical row order used for activation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityMode {
    TextOnly,
    ImageOnly,
    Joint,
}

impl ModalityMode {
    pub const ALL: [ModalityMode; 3] = [ModalityMode::TextOnly, ModalityMode::ImageOnly, ModalityMode::Joint];

    /// Canonical row index: TextOnly=0, ImageOnly=1, Joint=2.
    pub fn index(self) -> usize {
        match self {
            ModalityMode::TextOnly => 0,
            ModalityMode::ImageOnly => 1,
            ModalityMode::Joint => 2,
        }
    }
}

/// Which network output feeds the activation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationSource {
    Logits,
    Hidden,
}

/// One affine layer, weight stored row-major as in_dim×out_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Multimodal feed-forward classifier. `depth` counts hidden (relu) layers;
/// `layers` holds them plus the final affine output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalNet {
    pub text_dim: usize,
    pub image_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub depth: usize,
    pub layers: Vec<Layer>,
}

/// The 3×D matrix A: one output row per modality mode of a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityActivations {
    /// Row-major 3×`width` values in canonical mode order.
    pub values: Vec<f64>,
    pub width: usize,
    pub source: ActivationSource,
}

impl ModalityActivations {
    pub fn row(&self, mode: ModalityMode) -> &[f64] {
        let i = mode.index();
        &self.values[i * self.width..(i + 1) * self.width]
    }
}

impl ModalNet {
    /// Glorot-uniform weights, zero biases, deterministic under `seed`.
    pub fn new(
        text_dim: usize,
        image_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        depth: usize,
        seed: u64,
    ) -> Result<Self> {
        for (name, v) in [
            ("text_dim", text_dim),
            ("image_dim", image_dim),
            ("hidden_dim", hidden_dim),
            ("num_classes", num_classes),
            ("depth", depth),
        ] {
            if v == 0 {
                return Err(Error::Param(format!("{name} must be at least 1")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth + 1);
        let mut in_dim = text_dim + image_dim + 2;
        for layer_idx in 0..=depth {
            let out_dim = if layer_idx == depth { num_classes } else { hidden_dim };
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let weight: Vec<f64> = (0..in_dim * out_dim).map(|_| dist.sample(&mut rng)).collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weight,
                bias: vec![0.0; out_dim],
            });
            in_dim = out_dim;
        }
        Ok(ModalNet { text_dim, image_dim, hidden_dim, num_classes, depth, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.text_dim + self.image_dim + 2
    }

    /// Zero-fill absent modalities and append the two presence-mask bits.
    pub fn assemble_input(&self, sample: &ModalSample, mode: ModalityMode) -> Result<Vec<f64>> {
        if sample.text_feats.len() != self.text_dim {
            return Err(Error::Data(format!(
                "text_feats has length {}, net expects text_dim {}",
                sample.text_feats.len(),
                self.text_dim
            )));
        }
        if sample.image_feats.len() != self.image_dim {
            return Err(Error::Data(format!(
                "image_feats has length {}, net expects image_dim {}",
                sample.image_feats.len(),
                self.image_dim
            )));
        }
        let use_text = mode != ModalityMode::ImageOnly;
        let use_image = mode != ModalityMode::TextOnly;
        let mut x = Vec::with_capacity(self.input_dim());
        if use_text {
            x.extend_from_slice(&sample.text_feats);
        } else {
            x.extend(std::iter::repeat(0.0).take(self.text_dim));
        }
        if use_image {
            x.extend_from_slice(&sample.image_feats);
        } else {
            x.extend(std::iter::repeat(0.0).take(self.image_dim));
        }
        x.push(if use_text { 1.0 } else { 0.0 });
        x.push(if use_image { 1.0 } else { 0.0 });
        Ok(x)
    }

    /// Pure forward pass off the tape: (logits, last hidden activation).
    ///
    /// Uses the same raw kernels as the tape ops, so it is bitwise identical
    /// to [`TapeNet::forward`] on equal weights.
    pub fn forward_values(&self, sample: &ModalSample, mode: ModalityMode) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = self.assemble_input(sample, mode)?;
        let mut hidden = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = matmul_raw(&x, &layer.weight, 1, layer.in_dim, layer.out_dim);
            let y = add_raw(&y, &layer.bias);
            if i < self.depth {
                x = relu_raw(&y);
                if i == self.depth - 1 {
                    hidden = x.clone();
                }
            } else {
                x = y;
            }
        }
        Ok((x, hidden))
    }

    /// Stack forward outputs for all three modes in canonical order.
    pub fn activations_matrix(
        &self,
        sample: &ModalSample,
        source: ActivationSource,
    ) -> Result<ModalityActivations> {
        let width = match source {
            ActivationSource::Logits => self.num_classes,
            ActivationSource::Hidden => self.hidden_dim,
        };
        let mut values = Vec::with_capacity(3 * width);
        for mode in ModalityMode::ALL {
            let (logits, hidden) = self.forward_values(sample, mode)?;
            match source {
                ActivationSource::Logits => values.extend_from_slice(&logits),
                ActivationSource::Hidden => values.extend_from_slice(&hidden),
            }
        }
        Ok(ModalityActivations { values, width, source })
    }

    /// Lift parameters onto a tape. `trainable` marks them as gradient
    /// targets; a frozen teacher lifts with `false` (or stays off-tape).
    pub fn lift<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<TapeNet<'t>> {
        let mut params = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.leaf(&[layer.in_dim, layer.out_dim], layer.weight.clone(), trainable)?;
            let b = tape.leaf(&[1, layer.out_dim], layer.bias.clone(), trainable)?;
            params.push((w, b));
        }
        Ok(TapeNet {
            tape,
            params,
            text_dim: self.text_dim,
            image_dim: self.image_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            depth: self.depth,
        })
    }

    /// Read accumulated parameter gradients back out of a lifted net.
    pub fn serialize(&self) -> ModelDoc {
        ModelDoc {
            schema_version: 1,
            text_dim: self.text_dim,
            image_dim: self.image_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            depth: self.depth,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.in_dim,
                    cols: l.out_dim,
                    weights: l.weight.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn deserialize(doc: &ModelDoc) -> Result<Self> {
        doc.validate()?;
        Ok(ModalNet {
            text_dim: doc.text_dim,
            image_dim: doc.image_dim,
            hidden_dim: doc.hidden_dim,
            num_classes: doc.num_classes,
            depth: doc.depth,
            layers: doc
                .layers
                .iter()
                .map(|l| Layer {
                    in_dim: l.rows,
                    out_dim: l.cols,
                    weight: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.serialize())?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model document: {e}")))?;
        Self::deserialize(&doc)
    }
}

/// On-disk model document, schema_version 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub schema_version: u32,
    pub text_dim: usize,
    pub image_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub depth: usize,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelDoc {
    fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::Parse(format!(
                "model document: unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.layers.len() != self.depth + 1 {
            return Err(Error::Parse(format!(
                "model document: depth {} requires {} layers, found {} at layers",
                self.depth,
                self.depth + 1,
                self.layers.len()
            )));
        }
        let mut expect_in = self.text_dim + self.image_dim + 2;
        for (i, l) in self.layers.iter().enumerate() {
            if l.rows != expect_in {
                return Err(Error::Parse(format!(
                    "model document: layers[{i}].rows is {}, expected {expect_in}",
                    l.rows
                )));
            }
            if l.weights.len() != l.rows * l.cols {
                return Err(Error::Parse(format!(
                    "model document: layers[{i}].weights has {} values, expected {}",
                    l.weights.len(),
                    l.rows * l.cols
                )));
            }
            if l.bias.len() != l.cols {
                return Err(Error::Parse(format!(
                    "model document: layers[{i}].bias has {} values, expected {}",
                    l.bias.len(),
                    l.cols
                )));
            }
            let expect_out = if i == self.depth { self.num_classes } else { self.hidden_dim };
            if l.cols != expect_out {
                return Err(Error::Parse(format!(
                    "model document: layers[{i}].cols is {}, expected {expect_out}",
                    l.cols
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!(
                    "model document: layers[{i}] contains a non-finite value"
                )));
            }
            expect_in = l.cols;
        }
        Ok(())
    }
}

/// A net's parameters lifted onto one gradient tape.
pub struct TapeNet<'t> {
    tape: &'t Tape,
    pub params: Vec<(Var<'t>, Var<'t>)>,
    text_dim: usize,
    image_dim: usize,
    hidden_dim: usize,
    pub num_classes: usize,
    depth: usize,
}

impl<'t> TapeNet<'t> {
    /// Tape forward pass: (logits, last hidden activation), both `[1, d]`.
    pub fn forward(&self, sample: &ModalSample, mode: ModalityMode) -> Result<(Var<'t>, Var<'t>)> {
        // assemble_input wants a net; reuse the same checks inline
        let shell = ModalNet {
            text_dim: self.text_dim,
            image_dim: self.image_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            depth: self.depth,
            layers: Vec::new(),
        };
        let input = shell.assemble_input(sample, mode)?;
        let in_dim = input.len();
        let mut x = self.tape.leaf(&[1, in_dim], input, false)?;
        let mut hidden = None;
        for (i, (w, b)) in self.params.iter().enumerate() {
            let y = x.matmul(*w)?.add(*b)?;
            if i < self.depth {
                x = y.relu();
                if i == self.depth - 1 {
                    hidden = Some(x);
                }
            } else {
                x = y;
            }
        }
        Ok((x, hidden.expect("depth >= 1")))
    }

    /// Stacked 3×D activation matrix over all three modes.
    pub fn activations_matrix(
        &self,
        sample: &ModalSample,
        source: ActivationSource,
    ) -> Result<Var<'t>> {
        let mut rows = Vec::with_capacity(3);
        for mode in ModalityMode::ALL {
            let (logits, hidden) = self.forward(sample, mode)?;
            rows.push(match source {
                ActivationSource::Logits => logits,
                ActivationSource::Hidden => hidden,
            });
        }
        self.tape.stack_rows(&rows)
    }

    /// Parameter gradients in layer order, shaped like the source net.
    pub fn grads(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.params
            .iter()
            .map(|(w, b)| {
                (
                    w.grad().unwrap_or_else(|| vec![0.0; w.len()]),
                    b.grad().unwrap_or_else(|| vec![0.0; b.len()]),
                )
            })
            .collect()
    }
}
