//! A small dense regressor whose last layer is the forward-kinematics
//! map: the network emits pose and scale parameters, FK turns them into
//! joints, and the joint-space loss backpropagates through the analytic
//! Jacobians into the weights.
//!
//! Inputs are flattened noisy joint coordinates scaled to O(1); outputs
//! are squashed onto the DoF limits and scale bounds with a sigmoid, so
//! every prediction is a valid hand by construction no matter how raw the
//! weights are.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fk::{self, FkError};
use crate::skeleton::{
    JointSet, KinematicTree, PoseVector, ScaleMode, ScaleVector, COORD_COUNT, DOF_COUNT,
};
use crate::synth::SynthSample;

/// Divisor taking millimeter joint coordinates to feature units. Covers
/// the root-translation range plus finger reach, so features land in
/// roughly `[-2, 2]`.
pub const FEATURE_SCALE_MM: f64 = 250.0;

/// The joint-space loss is divided by this length squared during
/// training, which keeps the pinned learning rate stable: raw mm² losses
/// are O(10^4) and would need a much smaller step.
pub const LOSS_SCALE_MM: f64 = 150.0;

/// First bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HFKTOY1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
/// Stream separator so the shuffle rng never collides with weight init.
const SHUFFLE_STREAM: u64 = 0x7040_11AD;

#[derive(Debug, Error)]
pub enum ToynetError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Fk(#[from] FkError),
    #[error("training config: {0}")]
    InvalidConfig(String),
    #[error("training needs at least one sample")]
    EmptySampleSet,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

/// Minibatch SGD hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds both weight initialization and epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ToynetError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ToynetError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(ToynetError::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(ToynetError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fully-connected rectifier network with a bounded output map.
///
/// `layer_sizes` runs input to output; the last entry is always
/// `21 + K` for the configured scale mode. The output squash is
/// `lo + (hi - lo) * sigmoid(raw)` per component, so parameters always
/// sit strictly inside their limits and gradients never die at a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    mode: ScaleMode,
    layer_sizes: Vec<usize>,
    /// `weights[l]` is (out x in) for layer l; column-major storage.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    out_lo: DVector<f64>,
    out_hi: DVector<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mode_id(mode: ScaleMode) -> u32 {
    match mode {
        ScaleMode::Global => 1,
        ScaleMode::Five => 2,
        ScaleMode::Multi => 3,
    }
}

fn mode_from_id(id: u32) -> Option<ScaleMode> {
    ScaleMode::ALL.into_iter().find(|m| mode_id(*m) == id)
}

impl ToyNet {
    /// Seeded network with the default 48 -> 64 -> 64 -> 21+K shape.
    pub fn new(tree: &KinematicTree, mode: ScaleMode, seed: u64) -> Self {
        Self::with_hidden(tree, mode, &DEFAULT_HIDDEN, seed)
    }

    /// Weights are uniform in `±1/sqrt(fan_in)`, drawn layer by layer in
    /// row-major order; biases start at zero.
    pub fn with_hidden(
        tree: &KinematicTree,
        mode: ScaleMode,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        let out_dim = DOF_COUNT + mode.param_count();
        let mut layer_sizes = vec![COORD_COUNT];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(out_dim);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in layer_sizes.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let mut w = DMatrix::zeros(n_out, n_in);
            for r in 0..n_out {
                for c in 0..n_in {
                    w[(r, c)] = rng.gen_range(-bound..=bound);
                }
            }
            weights.push(w);
            biases.push(DVector::zeros(n_out));
        }

        let mut out_lo = DVector::zeros(out_dim);
        let mut out_hi = DVector::zeros(out_dim);
        for (i, dof) in tree.dofs().iter().enumerate() {
            out_lo[i] = dof.lo;
            out_hi[i] = dof.hi;
        }
        let bounds = tree.scale_bounds();
        for i in DOF_COUNT..out_dim {
            out_lo[i] = bounds.lo;
            out_hi[i] = bounds.hi;
        }

        ToyNet {
            mode,
            layer_sizes,
            weights,
            biases,
            out_lo,
            out_hi,
        }
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Weight matrix per layer, `layer_sizes[l+1] x layer_sizes[l]`.
    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    /// Mutable weights, for external perturbation; weights carry no
    /// invariant of their own, validity is enforced by the output squash.
    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    /// Activations per layer (input first) and the raw output, shared by
    /// inference and backprop.
    fn forward_raw(&self, features: &[f64; COORD_COUNT]) -> (Vec<DVector<f64>>, DVector<f64>) {
        let mut acts = vec![DVector::from_row_slice(features)];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().expect("nonempty") + b;
            if l == last {
                return (acts, z);
            }
            z.apply(|v| *v = v.max(0.0));
            acts.push(z);
        }
        unreachable!("network always has at least one layer");
    }

    fn squash(&self, raw: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(raw.len(), |i, _| {
            self.out_lo[i] + (self.out_hi[i] - self.out_lo[i]) * sigmoid(raw[i])
        })
    }

    fn split_params(&self, params: &DVector<f64>) -> (PoseVector, ScaleVector) {
        let mut theta = PoseVector::zeros();
        theta.0.copy_from_slice(&params.as_slice()[..DOF_COUNT]);
        let scales = ScaleVector::new(self.mode, params.as_slice()[DOF_COUNT..].to_vec())
            .expect("output dimension matches the mode");
        (theta, scales)
    }

    /// Runs the network and FK; outputs always satisfy joint limits,
    /// scale bounds, and bone-length conservation because the squash
    /// keeps parameters in range and FK constructs the joints.
    pub fn predict(
        &self,
        features: &[f64; COORD_COUNT],
        tree: &KinematicTree,
    ) -> Result<(PoseVector, ScaleVector, JointSet), ToynetError> {
        let (_, raw) = self.forward_raw(features);
        let (theta, scales) = self.split_params(&self.squash(&raw));
        let joints = *fk::forward(&theta, &scales, tree)?.joints();
        Ok((theta, scales, joints))
    }

    /// Normalized training loss for one sample, without gradients.
    /// Finite-difference checks of [`ToyNet::backprop`] go through this.
    pub fn sample_loss(
        &self,
        features: &[f64; COORD_COUNT],
        target: &JointSet,
        tree: &KinematicTree,
    ) -> Result<f64, ToynetError> {
        let (_, raw) = self.forward_raw(features);
        let (theta, scales) = self.split_params(&self.squash(&raw));
        Ok(fk::loss(&theta, &scales, tree, target)? / (LOSS_SCALE_MM * LOSS_SCALE_MM))
    }

    /// Normalized loss plus weight/bias gradients for one sample. The
    /// chain runs through the squash, the kinematic layer, and the
    /// residual, so these are gradients of the full composite objective.
    pub fn backprop(
        &self,
        features: &[f64; COORD_COUNT],
        target: &JointSet,
        tree: &KinematicTree,
    ) -> Result<(f64, Grads), ToynetError> {
        let (acts, raw) = self.forward_raw(features);
        let (theta, scales) = self.split_params(&self.squash(&raw));

        let (fkres, pose_jac, scale_jac) = fk::forward_with_jacobians(&theta, &scales, tree)?;
        let r = fk::residual(fkres.joints(), target);
        let inv2 = 1.0 / (LOSS_SCALE_MM * LOSS_SCALE_MM);
        let loss = 0.5 * r.norm_squared() * inv2;

        // dL/d(params), then through the squash to dL/d(raw output).
        let g_theta = pose_jac.matrix().transpose() * &r;
        let g_scale = scale_jac.matrix().transpose() * &r;
        let out_dim = raw.len();
        let mut delta = DVector::zeros(out_dim);
        for i in 0..out_dim {
            let g_param = inv2
                * if i < DOF_COUNT {
                    g_theta[i]
                } else {
                    g_scale[i - DOF_COUNT]
                };
            let s = sigmoid(raw[i]);
            delta[i] = g_param * (self.out_hi[i] - self.out_lo[i]) * s * (1.0 - s);
        }

        let mut grads = Grads::zeros_like(self);
        for l in (0..self.weights.len()).rev() {
            grads.w[l] = &delta * acts[l].transpose();
            grads.b[l] = delta.clone();
            if l > 0 {
                let mut back = self.weights[l].transpose() * delta;
                // Rectifier gate: activation > 0 iff pre-activation > 0.
                for (v, a) in back.iter_mut().zip(acts[l].iter()) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = back;
            }
        }
        Ok((loss, grads))
    }

    /// Minibatch SGD with momentum over the sample set; targets are each
    /// sample's (noisy) joints and features are those same joints scaled.
    /// Returns the mean normalized loss per epoch.
    pub fn train_in_place(
        &mut self,
        samples: &[SynthSample],
        tree: &KinematicTree,
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>, ToynetError> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(ToynetError::EmptySampleSet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
        let mut velocity = Grads::zeros_like(self);
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..samples.len()).collect();

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
                let mut batch_grads = Grads::zeros_like(self);
                let mut batch_loss = 0.0;
                for &i in batch {
                    let features = features_from_joints(&samples[i].joints);
                    let (loss, grads) = self.backprop(&features, &samples[i].joints, tree)?;
                    batch_loss += loss;
                    batch_grads.add_assign(&grads);
                }
                if !batch_loss.is_finite() {
                    return Err(ToynetError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                epoch_loss += batch_loss;
                let inv_batch = 1.0 / batch.len() as f64;
                for l in 0..self.weights.len() {
                    velocity.w[l] *= cfg.momentum;
                    velocity.w[l] -= &batch_grads.w[l] * (cfg.learning_rate * inv_batch);
                    self.weights[l] += &velocity.w[l];
                    velocity.b[l] *= cfg.momentum;
                    velocity.b[l] -= &batch_grads.b[l] * (cfg.learning_rate * inv_batch);
                    self.biases[l] += &velocity.b[l];
                }
            }
            history.push(epoch_loss / samples.len() as f64);
        }
        Ok(history)
    }

    /// Little-endian checkpoint: magic, version, mode, layer sizes,
    /// output bounds, then per-layer weights (row-major) and biases.
    pub fn save(&self, path: &Path) -> Result<(), ToynetError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&mode_id(self.mode).to_le_bytes())?;
        out.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &size in &self.layer_sizes {
            out.write_all(&(size as u32).to_le_bytes())?;
        }
        for v in self.out_lo.iter().chain(self.out_hi.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.write_all(&w[(r, c)].to_le_bytes())?;
                }
            }
            for v in b.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ToynetError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ToynetError::CheckpointFormat(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ToynetError::CheckpointFormat(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let mode = mode_from_id(read_u32(&mut r)?)
            .ok_or_else(|| ToynetError::CheckpointFormat("unknown scale mode id".into()))?;
        let n_layers = read_u32(&mut r)? as usize;
        if n_layers < 2 {
            return Err(ToynetError::CheckpointFormat(format!(
                "need at least 2 layer sizes, got {n_layers}"
            )));
        }
        let mut layer_sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layer_sizes.push(read_u32(&mut r)? as usize);
        }
        let out_dim = DOF_COUNT + mode.param_count();
        if layer_sizes[0] != COORD_COUNT || *layer_sizes.last().expect("n >= 2") != out_dim {
            return Err(ToynetError::CheckpointFormat(format!(
                "layer sizes {layer_sizes:?} do not match a {COORD_COUNT} -> {out_dim} network"
            )));
        }
        let mut out_lo = DVector::zeros(out_dim);
        let mut out_hi = DVector::zeros(out_dim);
        for i in 0..out_dim {
            out_lo[i] = read_f64(&mut r)?;
        }
        for i in 0..out_dim {
            out_hi[i] = read_f64(&mut r)?;
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in layer_sizes.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let mut w = DMatrix::zeros(n_out, n_in);
            for row in 0..n_out {
                for col in 0..n_in {
                    w[(row, col)] = read_f64(&mut r)?;
                }
            }
            let mut b = DVector::zeros(n_out);
            for i in 0..n_out {
                b[i] = read_f64(&mut r)?;
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(ToyNet {
            mode,
            layer_sizes,
            weights,
            biases,
            out_lo,
            out_hi,
        })
    }
}

/// Per-layer gradient (or velocity) storage matching a net's shape.
pub struct Grads {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Grads {
    fn zeros_like(net: &ToyNet) -> Self {
        Grads {
            w: net
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Flattened joint coordinates in feature units; the network's input.
pub fn features_from_joints(joints: &JointSet) -> [f64; COORD_COUNT] {
    let mut features = joints.to_flat();
    for v in features.iter_mut() {
        *v /= FEATURE_SCALE_MM;
    }
    features
}

/// Trains a fresh seeded network on the sample set; returns the network
/// and its per-epoch mean loss history. Zero epochs returns the
/// initialization untouched.
pub fn train(
    samples: &[SynthSample],
    tree: &KinematicTree,
    mode: ScaleMode,
    cfg: &TrainConfig,
) -> Result<(ToyNet, Vec<f64>), ToynetError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ToynetError::EmptySampleSet);
    }
    let mut net = ToyNet::new(tree, mode, cfg.seed);
    let history = net.train_in_place(samples, tree, cfg)?;
    Ok((net, history))
}

/// Plain-text loss table: one `epoch loss` row per epoch.
pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<(), ToynetError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# epoch mean_loss")?;
    for (epoch, loss) in history.iter().enumerate() {
        writeln!(out, "{epoch} {loss:.9e}")?;
    }
    out.flush()?;
    Ok(())
}
