//! The trainable embedding function (two-layer tanh encoder) and classifier
//! head, with forward passes and analytic parameter gradients.
//!
//! The encoder output is deliberately NOT normalized here; the normalization
//! policy belongs to the loss layer so exactly one place owns it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::numeric::{Matrix, SeededRng};

/// Which evaluation partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

/// A raw input vector with identity label and split assignment; the unit of
/// every dataset in this workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub label: usize,
    pub split: Split,
    pub x: Vec<f64>,
}

/// Weights of the embedding function: x -> W2 tanh(W1 x + b1) + b2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderParams {
    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
    pub fn init(input_dim: usize, hidden_dim: usize, embedding_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if embedding_dim < 2 {
            return Err(CoreError::invalid_parameter(
                "embedding_dim",
                "embedding dimension must be at least 2",
            ));
        }
        if input_dim == 0 || hidden_dim == 0 {
            return Err(CoreError::invalid_parameter(
                "dims",
                "input and hidden dimensions must be positive",
            ));
        }
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden_dim as f64).sqrt();
        let mut w1 = Matrix::zeros(hidden_dim, input_dim);
        for r in 0..hidden_dim {
            for c in 0..input_dim {
                w1.set(r, c, rng.uniform(-s1, s1));
            }
        }
        let b1 = (0..hidden_dim).map(|_| rng.uniform(-s1, s1)).collect();
        let mut w2 = Matrix::zeros(embedding_dim, hidden_dim);
        for r in 0..embedding_dim {
            for c in 0..hidden_dim {
                w2.set(r, c, rng.uniform(-s2, s2));
            }
        }
        let b2 = (0..embedding_dim).map(|_| rng.uniform(-s2, s2)).collect();
        Ok(EncoderParams { w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }
}

/// Classifier head: z -> W z + b over K identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ClassifierParams {
    pub fn init(class_count: usize, embedding_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if class_count < 2 {
            return Err(CoreError::invalid_parameter(
                "class_count",
                "need at least 2 classes",
            ));
        }
        let s = 1.0 / (embedding_dim as f64).sqrt();
        let mut w = Matrix::zeros(class_count, embedding_dim);
        for r in 0..class_count {
            for c in 0..embedding_dim {
                w.set(r, c, rng.uniform(-s, s));
            }
        }
        let b = (0..class_count).map(|_| rng.uniform(-s, s)).collect();
        Ok(ClassifierParams { w, b })
    }

    pub fn class_count(&self) -> usize {
        self.w.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.w.cols()
    }

    /// SHA-256 over the exact bit patterns of all weights; identifies a
    /// classifier snapshot byte-for-byte.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.w.rows() as u64).to_le_bytes());
        hasher.update((self.w.cols() as u64).to_le_bytes());
        for v in self.w.data() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        for v in &self.b {
            hasher.update(v.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.iter().all(|v| v.is_finite())
    }
}

/// A classifier snapshot that can no longer be trained. Constructing one is
/// the freeze: the discriminative bank only accepts this type, so it cannot
/// be built from a classifier that is still moving.
#[derive(Debug, Clone)]
pub struct FrozenClassifier {
    params: ClassifierParams,
    fingerprint: String,
}

impl FrozenClassifier {
    pub fn new(params: ClassifierParams) -> Self {
        let fingerprint = params.fingerprint();
        FrozenClassifier {
            params,
            fingerprint,
        }
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// Forward pass: W2 tanh(W1 x + b1) + b2.
pub fn encode(p: &EncoderParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "encode: input has length {}, encoder expects {}",
            x.len(),
            p.input_dim()
        )));
    }
    let mut a = p.w1.matvec(x)?;
    for (ai, bi) in a.iter_mut().zip(p.b1.iter()) {
        *ai = (*ai + bi).tanh();
    }
    let mut out = p.w2.matvec(&a)?;
    for (oi, bi) in out.iter_mut().zip(p.b2.iter()) {
        *oi += bi;
    }
    Ok(out)
}

/// Logits: W z + b.
pub fn classify(c: &ClassifierParams, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != c.embedding_dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "classify: embedding has length {}, classifier expects {}",
            z.len(),
            c.embedding_dim()
        )));
    }
    let mut out = c.w.matvec(z)?;
    for (oi, bi) in out.iter_mut().zip(c.b.iter()) {
        *oi += bi;
    }
    Ok(out)
}

/// Gradients of `upstream . encode(p, x)` with respect to each parameter
/// block of the encoder.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        EncoderGrads {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            b1: vec![0.0; p.b1.len()],
            w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
            b2: vec![0.0; p.b2.len()],
        }
    }

    pub fn accumulate(&mut self, other: &EncoderGrads, scale: f64) {
        for (a, b) in self.w1.data_mut().iter_mut().zip(other.w1.data()) {
            *a += b * scale;
        }
        for (a, b) in self.b1.iter_mut().zip(other.b1.iter()) {
            *a += b * scale;
        }
        for (a, b) in self.w2.data_mut().iter_mut().zip(other.w2.data()) {
            *a += b * scale;
        }
        for (a, b) in self.b2.iter_mut().zip(other.b2.iter()) {
            *a += b * scale;
        }
    }
}

/// Analytic chain-rule gradients for the encoder given the upstream gradient
/// at the embedding output.
pub fn encode_backward(p: &EncoderParams, x: &[f64], upstream: &[f64]) -> Result<EncoderGrads> {
    if x.len() != p.input_dim() {
        return Err(CoreError::DimensionMismatch(
            "encode_backward: input length mismatch".into(),
        ));
    }
    if upstream.len() != p.embedding_dim() {
        return Err(CoreError::DimensionMismatch(
            "encode_backward: upstream length mismatch".into(),
        ));
    }
    // forward to the hidden activation
    let mut h = p.w1.matvec(x)?;
    for (hi, bi) in h.iter_mut().zip(p.b1.iter()) {
        *hi = (*hi + bi).tanh();
    }

    let mut grads = EncoderGrads::zeros_like(p);
    grads.b2.copy_from_slice(upstream);
    grads.w2.add_outer(upstream, &h, 1.0)?;

    // back through W2 and tanh
    let gh = p.w2.matvec_transpose(upstream)?;
    let ga: Vec<f64> = gh
        .iter()
        .zip(h.iter())
        .map(|(g, hv)| g * (1.0 - hv * hv))
        .collect();
    grads.b1.copy_from_slice(&ga);
    grads.w1.add_outer(&ga, x, 1.0)?;
    Ok(grads)
}

/// Gradients of `upstream . classify(c, z)` for the classifier block, plus
/// the gradient passed down to the embedding.
#[derive(Debug, Clone)]
pub struct ClassifierGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ClassifierGrads {
    pub fn zeros_like(c: &ClassifierParams) -> Self {
        ClassifierGrads {
            w: Matrix::zeros(c.w.rows(), c.w.cols()),
            b: vec![0.0; c.b.len()],
        }
    }

    pub fn accumulate(&mut self, other: &ClassifierGrads, scale: f64) {
        for (a, b) in self.w.data_mut().iter_mut().zip(other.w.data()) {
            *a += b * scale;
        }
        for (a, b) in self.b.iter_mut().zip(other.b.iter()) {
            *a += b * scale;
        }
    }
}

pub fn classify_backward(
    c: &ClassifierParams,
    z: &[f64],
    upstream: &[f64],
) -> Result<(ClassifierGrads, Vec<f64>)> {
    if z.len() != c.embedding_dim() || upstream.len() != c.class_count() {
        return Err(CoreError::DimensionMismatch(
            "classify_backward: shape mismatch".into(),
        ));
    }
    let mut grads = ClassifierGrads::zeros_like(c);
    grads.b.copy_from_slice(upstream);
    grads.w.add_outer(upstream, z, 1.0)?;
    let grad_z = c.w.matvec_transpose(upstream)?;
    Ok((grads, grad_z))
}

/// On-disk model snapshot: shape metadata plus flat row-major weight arrays,
/// the creating seed, and the config hash of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub class_count: usize,
    pub encoder_w1: Vec<f64>,
    pub encoder_b1: Vec<f64>,
    pub encoder_w2: Vec<f64>,
    pub encoder_b2: Vec<f64>,
    pub classifier_w: Vec<f64>,
    pub classifier_b: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl ModelCheckpoint {
    pub fn from_params(
        encoder: &EncoderParams,
        classifier: &ClassifierParams,
        seed: u64,
        config_hash: &str,
    ) -> Self {
        ModelCheckpoint {
            input_dim: encoder.input_dim(),
            hidden_dim: encoder.hidden_dim(),
            embedding_dim: encoder.embedding_dim(),
            class_count: classifier.class_count(),
            encoder_w1: encoder.w1.data().to_vec(),
            encoder_b1: encoder.b1.clone(),
            encoder_w2: encoder.w2.data().to_vec(),
            encoder_b2: encoder.b2.clone(),
            classifier_w: classifier.w.data().to_vec(),
            classifier_b: classifier.b.clone(),
            seed,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn to_params(&self) -> Result<(EncoderParams, ClassifierParams)> {
        let encoder = EncoderParams {
            w1: Matrix::from_flat(self.hidden_dim, self.input_dim, self.encoder_w1.clone())?,
            b1: self.encoder_b1.clone(),
            w2: Matrix::from_flat(self.embedding_dim, self.hidden_dim, self.encoder_w2.clone())?,
            b2: self.encoder_b2.clone(),
        };
        let classifier = ClassifierParams {
            w: Matrix::from_flat(self.class_count, self.embedding_dim, self.classifier_w.clone())?,
            b: self.classifier_b.clone(),
        };
        if encoder.b1.len() != self.hidden_dim
            || encoder.b2.len() != self.embedding_dim
            || classifier.b.len() != self.class_count
        {
            return Err(CoreError::DimensionMismatch(
                "checkpoint bias lengths disagree with shape metadata".into(),
            ));
        }
        Ok((encoder, classifier))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| CoreError::Protocol(format!("malformed checkpoint: {e}")))
    }
}
