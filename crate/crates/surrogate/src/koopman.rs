//! Consistent Koopman autoencoder.
//!
//! A tanh MLP maps a flattened, normalized snapshot to a latent vector `z ∈ ℝ^κ`.
//! In latent space the dynamics are linear: `z_{t+1} = C·z_t` forward and
//! `z_{t−1} = D·z_t` backward. Training penalizes reconstruction, multi-step
//! prediction in both directions, and the departure of `D·C` from the identity.

use std::path::Path;

use pistm_core::io::{load_checkpoint, save_checkpoint};
use pistm_core::linalg::matmul;
use pistm_core::{Adam, AdamConfig, ComputeGraph, FieldSource, FlowFieldSequence, NodeId, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, SurrogateError};
use crate::init::{affine, glorot, near_identity, permutation};
use crate::norm::FieldNormalizer;

pub const CHECKPOINT_KIND: &str = "koopman";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub identity: f64,
    pub forward: f64,
    pub backward: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            identity: 1.0,
            forward: 1.0,
            backward: 1.0,
            consistency: 0.2,
        }
    }
}

/// Starting point of the latent operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorInit {
    /// `C = D = I` plus uniform noise.
    Identity,
    /// Ridge least-squares fit of one-step latent transitions of the initial
    /// encoder over the training snapshots, forward for `C` and backward for `D`.
    LeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KaeTrainConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Prediction horizon λ of the loss.
    pub horizon: usize,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of the initial one
    /// (geometric decay in between).
    pub final_lr_fraction: f64,
    pub operator_init: OperatorInit,
    /// Amplitude of the uniform noise added to the identity initialization of `C` and `D`.
    pub operator_init_noise: f64,
    /// Multiplier on the Glorot range of the encoder and decoder input layers.
    /// Values below 1 start both maps closer to their linear regime.
    pub input_layer_gain: f64,
    /// Epochs over which the training horizon grows linearly from 1 to λ
    /// (0 trains at λ throughout).
    pub horizon_ramp_epochs: usize,
    pub seed: u64,
}

impl Default for KaeTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 256,
            horizon: 8,
            weights: LossWeights::default(),
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            final_lr_fraction: 0.1,
            operator_init: OperatorInit::LeastSquares,
            operator_init_noise: 0.01,
            input_layer_gain: 1.0,
            horizon_ramp_epochs: 0,
            seed: 0,
        }
    }
}

impl KaeTrainConfig {
    pub fn validate(&self, snapshots: usize) -> Result<()> {
        let w = &self.weights;
        if [w.identity, w.forward, w.backward, w.consistency]
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return contract("loss weights must be finite and non-negative");
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.horizon == 0 {
            return contract("latent dimension, hidden width and horizon must be positive");
        }
        if self.batch_size == 0 {
            return contract("batch size must be positive");
        }
        if !(self.input_layer_gain > 0.0 && self.input_layer_gain.is_finite()) {
            return contract("input layer gain must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.final_lr_fraction > 0.0) {
            return contract("learning rate schedule must be positive");
        }
        if self.horizon >= snapshots {
            return contract(format!(
                "horizon {} needs more than {snapshots} history snapshots",
                self.horizon
            ));
        }
        Ok(())
    }
}

/// Loss terms, each averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KaeLoss {
    pub total: f64,
    pub identity: f64,
    pub forward: f64,
    pub backward: f64,
    pub consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KaeTrainReport {
    pub initial: KaeLoss,
    pub last: KaeLoss,
    pub steps: u64,
}

/// Parameter order inside [`KoopmanModel::params`].
pub const PARAM_NAMES: [&str; 10] = [
    "enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2", "c", "d",
];
const ENC_W1: usize = 0;
const ENC_B1: usize = 1;
const ENC_W2: usize = 2;
const ENC_B2: usize = 3;
const DEC_W1: usize = 4;
const DEC_B1: usize = 5;
const DEC_W2: usize = 6;
const DEC_B2: usize = 7;
const OP_C: usize = 8;
const OP_D: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    field_dims: Vec<usize>,
    latent_dim: usize,
    params: Vec<Tensor>,
    norm: FieldNormalizer,
    config: KaeTrainConfig,
    report: Option<KaeTrainReport>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    field_dims: Vec<usize>,
    latent_dim: usize,
    norm_scale: f64,
    config: KaeTrainConfig,
    report: Option<KaeTrainReport>,
}

impl KoopmanModel {
    /// Freshly initialized model for snapshots of shape `field_dims`.
    pub fn init(field_dims: &[usize], norm: FieldNormalizer, config: &KaeTrainConfig) -> Result<Self> {
        let d_in: usize = field_dims.iter().product();
        if norm.dim() != d_in {
            return contract(format!(
                "normalizer has {} entries, snapshots have {d_in}",
                norm.dim()
            ));
        }
        let (h, k) = (config.hidden, config.latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = vec![
            glorot(&mut rng, &[d_in, h], d_in, h).scale(config.input_layer_gain),
            Tensor::zeros(&[h]),
            glorot(&mut rng, &[h, k], h, k),
            Tensor::zeros(&[k]),
            glorot(&mut rng, &[k, h], k, h).scale(config.input_layer_gain),
            Tensor::zeros(&[h]),
            glorot(&mut rng, &[h, d_in], h, d_in),
            Tensor::zeros(&[d_in]),
            near_identity(&mut rng, k, config.operator_init_noise),
            near_identity(&mut rng, k, config.operator_init_noise),
        ];
        Ok(Self {
            field_dims: field_dims.to_vec(),
            latent_dim: k,
            params,
            norm,
            config: config.clone(),
            report: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn field_dims(&self) -> &[usize] {
        &self.field_dims
    }

    pub fn input_dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn normalizer(&self) -> &FieldNormalizer {
        &self.norm
    }

    pub fn config(&self) -> &KaeTrainConfig {
        &self.config
    }

    pub fn report(&self) -> Option<&KaeTrainReport> {
        self.report.as_ref()
    }

    pub fn forward_operator(&self) -> &Tensor {
        &self.params[OP_C]
    }

    pub fn backward_operator(&self) -> &Tensor {
        &self.params[OP_D]
    }

    /// Replaces the latent operators, e.g. to install a known inverse pair.
    pub fn set_operators(&mut self, c: Tensor, d: Tensor) -> Result<()> {
        let k = self.latent_dim;
        if c.dims() != [k, k] || d.dims() != [k, k] {
            return contract(format!("operators must both be {k}×{k}"));
        }
        self.params[OP_C] = c;
        self.params[OP_D] = d;
        Ok(())
    }

    /// `‖D·C − I‖_F / √κ`.
    pub fn consistency_error(&self) -> f64 {
        let dc = matmul(&self.params[OP_D], &self.params[OP_C]).expect("square operators");
        let k = self.latent_dim;
        dc.sub(&Tensor::eye(k)).expect("square").frobenius_norm() / (k as f64).sqrt()
    }

    fn check_field(&self, field: &Tensor) -> Result<()> {
        if field.len() != self.input_dim() {
            return Err(pistm_core::CoreError::Shape(format!(
                "field {:?} does not match model input {:?}",
                field.dims(),
                self.field_dims
            ))
            .into());
        }
        Ok(())
    }

    /// Latent codes of a batch of normalized rows `[n, d_in]`.
    fn encode_rows(&self, x: &Tensor) -> Result<Tensor> {
        let h = affine(x, &self.params[ENC_W1], &self.params[ENC_B1])?.map(f64::tanh);
        Ok(affine(&h, &self.params[ENC_W2], &self.params[ENC_B2])?)
    }

    /// Normalized reconstructions of latent rows `[n, κ]`.
    fn decode_rows(&self, z: &Tensor) -> Result<Tensor> {
        let h = affine(z, &self.params[DEC_W1], &self.params[DEC_B1])?.map(f64::tanh);
        Ok(affine(&h, &self.params[DEC_W2], &self.params[DEC_B2])?)
    }

    /// Latent vector of one snapshot.
    pub fn encode(&self, field: &Tensor) -> Result<Tensor> {
        self.check_field(field)?;
        let x = self.norm.normalize(field)?;
        Ok(self.encode_rows(&x)?.reshape(&[self.latent_dim])?)
    }

    /// Snapshot (in physical units, shaped like the training fields) of a latent vector.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let rows = z.clone().reshape(&[1, self.latent_dim])?;
        let x = self.norm.denormalize(&self.decode_rows(&rows)?)?;
        Ok(x.reshape(&self.field_dims)?)
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(pistm_core::CoreError::Shape(format!(
                "latent vector has {} entries, model has κ = {}",
                z.len(),
                self.latent_dim
            ))
            .into());
        }
        Ok(())
    }

    fn evolve(&self, op: usize, z: &Tensor, steps: usize) -> Result<Tensor> {
        self.check_latent(z)?;
        let mut v = z.data().to_vec();
        for _ in 0..steps {
            v = pistm_core::linalg::matvec(&self.params[op], &v)?;
        }
        Ok(Tensor::new(&[self.latent_dim], v)?)
    }

    /// `Cˢ·z`.
    pub fn evolve_forward(&self, z: &Tensor, steps: usize) -> Result<Tensor> {
        self.evolve(OP_C, z, steps)
    }

    /// `Dˢ·z`.
    pub fn evolve_backward(&self, z: &Tensor, steps: usize) -> Result<Tensor> {
        self.evolve(OP_D, z, steps)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = Meta {
            field_dims: self.field_dims.clone(),
            latent_dim: self.latent_dim,
            norm_scale: self.norm.scale(),
            config: self.config.clone(),
            report: self.report.clone(),
        };
        let mean = Tensor::new(&[self.norm.dim()], self.norm.mean().to_vec())?;
        let mut named: Vec<(&str, &Tensor)> =
            PARAM_NAMES.iter().copied().zip(self.params.iter()).collect();
        named.push(("norm_mean", &mean));
        save_checkpoint(dir, CHECKPOINT_KIND, serde_json::to_value(meta).map_err(fmt_err)?, &named)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let mut ck = load_checkpoint(dir, CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.manifest.meta.clone()).map_err(fmt_err)?;
        let params = PARAM_NAMES
            .iter()
            .map(|n| ck.take(n))
            .collect::<pistm_core::Result<Vec<_>>>()?;
        let norm = FieldNormalizer::from_parts(ck.take("norm_mean")?.into_data(), meta.norm_scale)?;
        let mut model = Self::init_shapes_only(&meta, norm)?;
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.dims() != p.dims() {
                return Err(SurrogateError::Format(format!(
                    "parameter dims {:?} do not match configuration {:?}",
                    p.dims(),
                    slot.dims()
                )));
            }
            *slot = p;
        }
        model.report = meta.report;
        Ok(model)
    }

    fn init_shapes_only(meta: &Meta, norm: FieldNormalizer) -> Result<Self> {
        if meta.latent_dim != meta.config.latent_dim {
            return Err(SurrogateError::Format("latent dimension mismatch".into()));
        }
        let mut cfg = meta.config.clone();
        cfg.operator_init_noise = 0.0;
        Self::init(&meta.field_dims, norm, &cfg).map(|mut m| {
            m.config = meta.config.clone();
            m
        })
    }
}

fn fmt_err(e: serde_json::Error) -> SurrogateError {
    SurrogateError::Format(e.to_string())
}

/// Node ids of one loss graph.
pub struct LossGraph {
    pub graph: ComputeGraph,
    pub params: Vec<NodeId>,
    pub total: NodeId,
    pub identity: NodeId,
    pub forward: NodeId,
    pub backward: NodeId,
    pub consistency: NodeId,
}

impl LossGraph {
    pub fn values(&self) -> KaeLoss {
        let v = |id| self.graph.value(id).data()[0];
        KaeLoss {
            total: v(self.total),
            identity: v(self.identity),
            forward: v(self.forward),
            backward: v(self.backward),
            consistency: v(self.consistency),
        }
    }
}

fn mlp(g: &mut ComputeGraph, x: NodeId, p: &[NodeId]) -> Result<NodeId> {
    let a = g.matmul(x, p[0])?;
    let a = g.add_bias(a, p[1])?;
    let h = g.tanh(a);
    let o = g.matmul(h, p[2])?;
    Ok(g.add_bias(o, p[3])?)
}

/// Builds the loss graph for parameters in [`PARAM_NAMES`] order.
///
/// `windows` holds normalized snapshots as `[B, λ+1, d_in]`. Reconstruction is
/// scored on both ends of every window; the forward rollout starts at the first
/// snapshot and the backward rollout at the last.
pub fn loss_graph(params: &[Tensor], windows: &Tensor, horizon: usize, w: &LossWeights) -> Result<LossGraph> {
    if params.len() != PARAM_NAMES.len() {
        return contract(format!("expected {} parameters", PARAM_NAMES.len()));
    }
    let [b, len, d] = windows.dims()[..] else {
        return contract(format!("windows must be [B, λ+1, d], got {:?}", windows.dims()));
    };
    if len < horizon + 1 {
        return contract(format!(
            "window of {len} snapshots is shorter than horizon + 1 = {}",
            horizon + 1
        ));
    }
    let kappa = params[OP_C].dims()[0];
    let mut g = ComputeGraph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let snap = |s: usize| {
        let mut t = Tensor::zeros(&[b, d]);
        for i in 0..b {
            t.outer_mut(i)
                .copy_from_slice(&windows.data()[(i * len + s) * d..][..d]);
        }
        t
    };
    let xs: Vec<NodeId> = (0..=horizon).map(|s| g.input(snap(s))).collect();
    let enc = &ids[ENC_W1..=ENC_B2];
    let dec = &ids[DEC_W1..=DEC_B2];

    let z_first = mlp(&mut g, xs[0], enc)?;
    let z_last = mlp(&mut g, xs[horizon], enc)?;
    let r_first = mlp(&mut g, z_first, dec)?;
    let r_last = mlp(&mut g, z_last, dec)?;
    let id_first = g.mse(r_first, xs[0])?;
    let id_last = g.mse(r_last, xs[horizon])?;
    let identity = g.weighted_sum(&[(id_first, 0.5), (id_last, 0.5)])?;

    let ct = g.transpose(ids[OP_C])?;
    let dt = g.transpose(ids[OP_D])?;
    let step_w = 1.0 / horizon as f64;
    let mut fwd_terms = Vec::with_capacity(horizon);
    let mut bwd_terms = Vec::with_capacity(horizon);
    let (mut zf, mut zb) = (z_first, z_last);
    for s in 1..=horizon {
        zf = g.matmul(zf, ct)?;
        let xf = mlp(&mut g, zf, dec)?;
        fwd_terms.push((g.mse(xf, xs[s])?, step_w));
        zb = g.matmul(zb, dt)?;
        let xb = mlp(&mut g, zb, dec)?;
        bwd_terms.push((g.mse(xb, xs[horizon - s])?, step_w));
    }
    let forward = g.weighted_sum(&fwd_terms)?;
    let backward = g.weighted_sum(&bwd_terms)?;

    let dc = g.matmul(ids[OP_D], ids[OP_C])?;
    let eye = g.input(Tensor::eye(kappa));
    let dev = g.sub(dc, eye)?;
    let dev_ms = g.mean_square(dev);
    // ‖DC − I‖²_F / κ = κ · mean((DC − I)²)
    let consistency = g.scale(dev_ms, kappa as f64);

    let total = g.weighted_sum(&[
        (identity, w.identity),
        (forward, w.forward),
        (backward, w.backward),
        (consistency, w.consistency),
    ])?;
    Ok(LossGraph {
        graph: g,
        params: ids,
        total,
        identity,
        forward,
        backward,
        consistency,
    })
}

/// Stacks windows starting at each index of `starts` into `[B, λ+1, d]`.
fn gather_windows(rows: &Tensor, starts: &[usize], horizon: usize) -> Result<Tensor> {
    let d = rows.dims()[1];
    let len = horizon + 1;
    let mut out = Vec::with_capacity(starts.len() * len * d);
    for &s in starts {
        out.extend_from_slice(&rows.data()[s * d..(s + len) * d]);
    }
    Ok(Tensor::new(&[starts.len(), len, d], out)?)
}

/// Mean loss terms of `model` over windows of raw snapshots `[B, λ+1, ...]`.
pub fn kae_loss(model: &KoopmanModel, windows: &Tensor) -> Result<KaeLoss> {
    if windows.ndim() < 2 {
        return contract("windows must be at least [B, λ+1]");
    }
    let (b, len) = (windows.dims()[0], windows.dims()[1]);
    let horizon = model.config.horizon;
    if len < horizon + 1 {
        return contract(format!(
            "window of {len} snapshots is shorter than horizon + 1 = {}",
            horizon + 1
        ));
    }
    let norm = model
        .norm
        .normalize(windows)?
        .reshape(&[b, len, model.input_dim()])?;
    Ok(loss_graph(&model.params, &norm, horizon, &model.config.weights)?.values())
}

fn dataset_loss(params: &[Tensor], rows: &Tensor, cfg: &KaeTrainConfig) -> Result<KaeLoss> {
    let n_windows = rows.dims()[0] - cfg.horizon;
    let starts: Vec<usize> = (0..n_windows).collect();
    let mut acc = KaeLoss::default();
    for chunk in starts.chunks(cfg.batch_size) {
        let batch = gather_windows(rows, chunk, cfg.horizon)?;
        let v = loss_graph(params, &batch, cfg.horizon, &cfg.weights)?.values();
        let f = chunk.len() as f64 / n_windows as f64;
        acc.total += f * v.total;
        acc.identity += f * v.identity;
        acc.forward += f * v.forward;
        acc.backward += f * v.backward;
        acc.consistency += f * v.consistency;
    }
    Ok(acc)
}

/// Trains on a history sequence; only the snapshots inside `sequence` are read.
pub fn train_kae(sequence: &FlowFieldSequence, config: &KaeTrainConfig) -> Result<KoopmanModel> {
    train_kae_snapshots(sequence.tensor(), config)
}

/// Trains on time-ordered snapshots `[n, ...]` (any per-snapshot shape).
pub fn train_kae_snapshots(snapshots: &Tensor, config: &KaeTrainConfig) -> Result<KoopmanModel> {
    if snapshots.ndim() < 2 {
        return contract("snapshots must be [n, ...]");
    }
    let n = snapshots.dims()[0];
    config.validate(n)?;
    let norm = FieldNormalizer::fit(snapshots)?;
    let rows = norm.normalize(snapshots)?;
    let mut model = KoopmanModel::init(&snapshots.dims()[1..], norm, config)?;
    if config.operator_init == OperatorInit::LeastSquares {
        let z = model.encode_rows(&rows)?;
        if let (Some(c), Some(d)) = (fit_transition(&z, 0, 1)?, fit_transition(&z, 1, 0)?) {
            model.set_operators(c, d)?;
        }
    }

    let initial = dataset_loss(&model.params, &rows, config)?;
    if !initial.total.is_finite() {
        return Err(SurrogateError::Diverged("initial loss is not finite".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4B41_4500);
    let n_windows = n - config.horizon;
    let decay = lr_decay(config.final_lr_fraction, config.epochs);
    for epoch in 0..config.epochs {
        adam.set_learning_rate(config.learning_rate * decay.powi(epoch as i32));
        let horizon = horizon_at(config, epoch);
        let order = permutation(&mut rng, n_windows);
        for chunk in order.chunks(config.batch_size) {
            let batch = gather_windows(&rows, chunk, horizon)?;
            let lg = loss_graph(&model.params, &batch, horizon, &config.weights)?;
            let loss = lg.graph.value(lg.total).data()[0];
            if !loss.is_finite() {
                return Err(SurrogateError::Diverged(format!(
                    "loss became {loss} in epoch {epoch}"
                )));
            }
            let mut grads = lg.graph.backward(lg.total)?;
            let g: Vec<Tensor> = lg
                .params
                .iter()
                .map(|&id| grads.take(id).expect("every parameter receives a gradient"))
                .collect();
            adam.step(&mut model.params, &g)
                .map_err(SurrogateError::from_core)?;
        }
    }
    let last = dataset_loss(&model.params, &rows, config)?;
    if !last.total.is_finite() {
        return Err(SurrogateError::Diverged("final loss is not finite".into()));
    }
    model.report = Some(KaeTrainReport {
        initial,
        last,
        steps: adam.step_count(),
    });
    Ok(model)
}

/// Operator `M` minimizing `Σ‖z_{t+to} − M·z_{t+from}‖² + ρ‖M‖²` over consecutive
/// latent rows, with `ρ` a small multiple of the mean squared latent entry.
/// Returns `None` when the latents carry no signal (e.g. constant snapshots).
fn fit_transition(z: &Tensor, from: usize, to: usize) -> Result<Option<Tensor>> {
    let (n, k) = (z.dims()[0], z.dims()[1]);
    let src = Tensor::new(&[n - 1, k], z.data()[from * k..(from + n - 1) * k].to_vec())?;
    let dst = Tensor::new(&[n - 1, k], z.data()[to * k..(to + n - 1) * k].to_vec())?;
    let st = src.transpose()?;
    let mut gram = matmul(&st, &src)?;
    let energy = gram.data().iter().step_by(k + 1).sum::<f64>() / k as f64;
    if !(energy > 1e-20 * (n - 1) as f64) {
        return Ok(None);
    }
    let ridge = 1e-8 * energy;
    for i in 0..k {
        gram.data_mut()[i * k + i] += ridge;
    }
    let l = pistm_core::linalg::cholesky(&gram)?;
    // Solves (SᵀS)·Mᵀ = SᵀT for the row-convention operator transpose.
    let mt = pistm_core::linalg::cholesky_solve(&l, &matmul(&st, &dst)?)?;
    Ok(Some(mt.transpose()?))
}

/// Training horizon in `epoch` under the linear ramp.
fn horizon_at(config: &KaeTrainConfig, epoch: usize) -> usize {
    let ramp = config.horizon_ramp_epochs;
    if ramp == 0 || epoch >= ramp {
        return config.horizon;
    }
    1 + (epoch * config.horizon) / ramp
}

/// Per-epoch multiplicative factor that reaches `fraction` after `epochs − 1` epochs.
pub(crate) fn lr_decay(fraction: f64, epochs: usize) -> f64 {
    if epochs > 1 {
        fraction.powf(1.0 / (epochs - 1) as f64)
    } else {
        1.0
    }
}

/// Forecast of the `k + 1` snapshots following `last_history_field`:
/// entry `s` is `decode(Cˢ⁺¹·encode(x_{T−1}))`, stamped `t_start + s`.
pub fn forecast(model: &KoopmanModel, last_history_field: &Tensor, k: usize, t_start: i64) -> Result<FlowFieldSequence> {
    let fields = forecast_fields(model, last_history_field, k)?;
    let dims = &model.field_dims;
    if dims.len() != 2 {
        return contract(format!(
            "forecast sequences need 2-D snapshots, model has {:?}",
            dims
        ));
    }
    let fields = fields.reshape(&[k + 1, dims[0], dims[1]])?;
    Ok(FlowFieldSequence::new(fields, t_start, FieldSource::Koopman)?)
}

/// Raw forecast as `[k + 1, d_in]`, usable for non-image state vectors.
pub fn forecast_fields(model: &KoopmanModel, last_history_field: &Tensor, k: usize) -> Result<Tensor> {
    let mut z = model.encode(last_history_field)?;
    let mut latents = Vec::with_capacity((k + 1) * model.latent_dim);
    for _ in 0..=k {
        z = model.evolve_forward(&z, 1)?;
        latents.extend_from_slice(z.data());
    }
    let zs = Tensor::new(&[k + 1, model.latent_dim], latents)?;
    Ok(model.norm.denormalize(&model.decode_rows(&zs)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kappa: usize) -> KoopmanModel {
        let cfg = KaeTrainConfig {
            latent_dim: kappa,
            hidden: 5,
            horizon: 2,
            ..KaeTrainConfig::default()
        };
        let data = Tensor::from_fn(&[4, 2, 3], |i| (i as f64 * 0.3).cos());
        KoopmanModel::init(&[2, 3], FieldNormalizer::fit(&data).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn evolve_zero_steps_is_identity() {
        let m = tiny(3);
        let z = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(m.evolve_forward(&z, 0).unwrap(), z);
        assert_eq!(m.evolve_backward(&z, 0).unwrap(), z);
    }

    #[test]
    fn evolve_scalar_power() {
        let mut m = tiny(3);
        m.set_operators(Tensor::eye(3).scale(2.0), Tensor::eye(3)).unwrap();
        let z = Tensor::new(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.evolve_forward(&z, 3).unwrap().data(), &[8.0, 0.0, 0.0]);
    }

    #[test]
    fn evolve_is_associative() {
        let m = tiny(3);
        let z = Tensor::new(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let ab = m.evolve_forward(&z, 5).unwrap();
        let a_b = m.evolve_forward(&m.evolve_forward(&z, 2).unwrap(), 3).unwrap();
        assert_eq!(ab, a_b);
    }

    #[test]
    fn consistency_term_hand_values() {
        let mut m = tiny(4);
        let windows = Tensor::from_fn(&[1, 3, 2, 3], |i| i as f64 * 0.1);
        m.set_operators(Tensor::eye(4), Tensor::eye(4)).unwrap();
        assert_eq!(kae_loss(&m, &windows).unwrap().consistency, 0.0);
        m.set_operators(Tensor::zeros(&[4, 4]), Tensor::eye(4)).unwrap();
        assert!((kae_loss(&m, &windows).unwrap().consistency - 1.0).abs() < 1e-15);
        assert!((m.consistency_error() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn short_window_is_rejected() {
        let m = tiny(3);
        let windows = Tensor::zeros(&[2, 2, 2, 3]);
        assert!(matches!(kae_loss(&m, &windows), Err(SurrogateError::Contract(_))));
    }

    #[test]
    fn encode_rejects_wrong_size() {
        let m = tiny(3);
        assert!(m.encode(&Tensor::zeros(&[7])).is_err());
        assert_eq!(m.encode(&Tensor::zeros(&[2, 3])).unwrap().dims(), &[3]);
    }

    #[test]
    fn horizon_must_fit_history() {
        let cfg = KaeTrainConfig {
            horizon: 8,
            ..KaeTrainConfig::default()
        };
        assert!(cfg.validate(8).is_err());
        assert!(cfg.validate(9).is_ok());
    }

    #[test]
    fn horizon_ramp_reaches_full_horizon() {
        let cfg = KaeTrainConfig {
            horizon: 8,
            horizon_ramp_epochs: 16,
            ..KaeTrainConfig::default()
        };
        assert_eq!(horizon_at(&cfg, 0), 1);
        assert_eq!(horizon_at(&cfg, 2), 2);
        assert_eq!(horizon_at(&cfg, 15), 8);
        assert_eq!(horizon_at(&cfg, 16), 8);
        assert!((0..40).all(|e| horizon_at(&cfg, e) <= horizon_at(&cfg, e + 1)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(3);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = KoopmanModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }
}
