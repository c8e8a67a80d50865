//! Convolutional autoencoder reduced-order model.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use pistm_core::conv::{conv_output_extent, conv_transpose_output_extent};
use pistm_core::io::{load_checkpoint, save_checkpoint};
use pistm_core::{Adam, AdamConfig, ComputeGraph, CoreError, FlowFieldSequence, NodeId, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, SurrogateError};
use crate::init::{glorot, permutation};
use crate::koopman::lr_decay;
use crate::norm::FieldNormalizer;

pub const CHECKPOINT_KIND: &str = "conv_rom";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RomConfig {
    pub code_dim: usize,
    /// Output channels of the successive encoder convolutions.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for RomConfig {
    fn default() -> Self {
        Self {
            code_dim: 10,
            channels: vec![8, 16, 32, 64],
            kernel: 4,
            stride: 2,
            padding: 1,
            epochs: 300,
            batch_size: 16,
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Spatial extents after each encoder layer, starting with the input grid.
pub fn shape_plan(height: usize, width: usize, cfg: &RomConfig) -> Result<Vec<(usize, usize)>> {
    if cfg.channels.is_empty() || cfg.code_dim == 0 {
        return contract("the ROM needs at least one convolution and a positive code size");
    }
    let mut plan = vec![(height, width)];
    for _ in &cfg.channels {
        let (h, w) = *plan.last().unwrap();
        let next = (
            conv_output_extent(h, cfg.kernel, cfg.stride, cfg.padding)?,
            conv_output_extent(w, cfg.kernel, cfg.stride, cfg.padding)?,
        );
        plan.push(next);
    }
    let mut back = *plan.last().unwrap();
    for &(h, w) in plan.iter().rev().skip(1) {
        back = (
            conv_transpose_output_extent(back.0, cfg.kernel, cfg.stride, cfg.padding)?,
            conv_transpose_output_extent(back.1, cfg.kernel, cfg.stride, cfg.padding)?,
        );
        if back != (h, w) {
            return contract(format!(
                "decoder does not mirror the encoder: {back:?} vs {:?}",
                (h, w)
            ));
        }
    }
    let (h, w) = *plan.last().unwrap();
    if cfg.code_dim >= height * width || cfg.code_dim > h * w * cfg.channels.last().unwrap() {
        return contract(format!(
            "code size {} is not a reduction of a {height}×{width} field",
            cfg.code_dim
        ));
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvAutoencoder {
    height: usize,
    width: usize,
    config: RomConfig,
    plan: Vec<(usize, usize)>,
    names: Vec<String>,
    params: Vec<Tensor>,
    norm: FieldNormalizer,
    report: Option<RomTrainReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean relative reconstruction error over the training split.
    pub train_error: f64,
    /// Mean relative reconstruction error over the validation split (0 when empty).
    pub validation_error: f64,
    pub train_rows: usize,
    pub validation_rows: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    height: usize,
    width: usize,
    norm_scale: f64,
    config: RomConfig,
    report: Option<RomTrainReport>,
}

struct Graph {
    g: ComputeGraph,
    params: Vec<NodeId>,
}

impl ConvAutoencoder {
    pub fn init(height: usize, width: usize, norm: FieldNormalizer, config: &RomConfig) -> Result<Self> {
        let plan = shape_plan(height, width, config)?;
        if norm.dim() != height * width {
            return contract("normalizer does not match the grid");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.kernel;
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut c_in = 1;
        for (l, &c_out) in config.channels.iter().enumerate() {
            names.push(format!("enc_k{l}"));
            params.push(glorot(&mut rng, &[c_out, c_in, k, k], c_in * k * k, c_out * k * k));
            names.push(format!("enc_b{l}"));
            params.push(Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let (h, w) = *plan.last().unwrap();
        let flat = c_in * h * w;
        let code = config.code_dim;
        names.extend(["enc_dense_w", "enc_dense_b", "dec_dense_w", "dec_dense_b"].map(String::from));
        params.push(glorot(&mut rng, &[flat, code], flat, code));
        params.push(Tensor::zeros(&[code]));
        params.push(glorot(&mut rng, &[code, flat], code, flat));
        params.push(Tensor::zeros(&[flat]));
        let mut outs: Vec<usize> = config.channels.iter().rev().skip(1).copied().collect();
        outs.push(1);
        for (l, &c_out) in outs.iter().enumerate() {
            names.push(format!("dec_k{l}"));
            params.push(glorot(&mut rng, &[c_in, c_out, k, k], c_in * k * k, c_out * k * k));
            names.push(format!("dec_b{l}"));
            params.push(Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        Ok(Self {
            height,
            width,
            config: config.clone(),
            plan,
            names,
            params,
            norm,
            report: None,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.config.code_dim
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn config(&self) -> &RomConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn normalizer(&self) -> &FieldNormalizer {
        &self.norm
    }

    pub fn report(&self) -> Option<&RomTrainReport> {
        self.report.as_ref()
    }

    fn layers(&self) -> usize {
        self.config.channels.len()
    }

    fn build_encoder(&self, g: &mut ComputeGraph, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let n = g.value(x).dims()[0];
        let (s, pad) = (self.config.stride, self.config.padding);
        let mut a = g.reshape(x, &[n, 1, self.height, self.width])?;
        for l in 0..self.layers() {
            let c = g.conv2d(a, p[2 * l], s, pad)?;
            let c = g.add_channel_bias(c, p[2 * l + 1])?;
            a = g.tanh(c);
        }
        let flat = g.value(a).len() / n;
        let a = g.reshape(a, &[n, flat])?;
        let d = 2 * self.layers();
        let z = g.matmul(a, p[d])?;
        Ok(g.add_bias(z, p[d + 1])?)
    }

    fn build_decoder(&self, g: &mut ComputeGraph, p: &[NodeId], z: NodeId) -> Result<NodeId> {
        let n = g.value(z).dims()[0];
        let (s, pad) = (self.config.stride, self.config.padding);
        let d = 2 * self.layers();
        let a = g.matmul(z, p[d + 2])?;
        let a = g.add_bias(a, p[d + 3])?;
        let a = g.tanh(a);
        let (h, w) = *self.plan.last().unwrap();
        let mut a = g.reshape(a, &[n, *self.config.channels.last().unwrap(), h, w])?;
        let base = d + 4;
        for l in 0..self.layers() {
            let c = g.conv_transpose2d(a, p[base + 2 * l], s, pad)?;
            let c = g.add_channel_bias(c, p[base + 2 * l + 1])?;
            a = if l + 1 < self.layers() { g.tanh(c) } else { c };
        }
        Ok(g.reshape(a, &[n, self.height * self.width])?)
    }

    /// Reconstruction-loss graph over normalized rows `[n, H·W]`.
    fn loss_graph(&self, params: &[Tensor], rows: &Tensor) -> Result<(Graph, NodeId)> {
        let mut g = ComputeGraph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
        let x = g.input(rows.clone());
        let z = self.build_encoder(&mut g, &ids, x)?;
        let y = self.build_decoder(&mut g, &ids, z)?;
        let loss = g.mse(y, x)?;
        Ok((
            Graph { g, params: ids },
            loss,
        ))
    }

    /// Mean-square reconstruction loss on normalized rows with the given parameters.
    pub fn reconstruction_loss(&self, params: &[Tensor], rows: &Tensor) -> Result<f64> {
        let (gr, loss) = self.loss_graph(params, rows)?;
        Ok(gr.g.value(loss).data()[0])
    }

    /// Loss value and parameter gradients on normalized rows.
    pub fn loss_and_gradients(&self, params: &[Tensor], rows: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let (gr, loss) = self.loss_graph(params, rows)?;
        let mut grads = gr.g.backward(loss)?;
        let gs = gr
            .params
            .iter()
            .map(|&id| grads.take(id).expect("every parameter receives a gradient"))
            .collect();
        Ok((gr.g.value(loss).data()[0], gs))
    }

    fn inference_graph(&self) -> (ComputeGraph, Vec<NodeId>) {
        let mut g = ComputeGraph::new();
        let ids = self.params.iter().map(|t| g.input(t.clone())).collect();
        (g, ids)
    }

    /// Codes `[n, D_code]` of a batch of fields `[n, H, W]`.
    pub fn encode_batch(&self, fields: &Tensor) -> Result<Tensor> {
        let rows = self.norm.normalize(fields)?;
        let (mut g, ids) = self.inference_graph();
        let x = g.input(rows);
        let z = self.build_encoder(&mut g, &ids, x)?;
        Ok(g.value(z).clone())
    }

    /// Fields `[n, H, W]` of a batch of codes `[n, D_code]`.
    pub fn decode_batch(&self, codes: &Tensor) -> Result<Tensor> {
        if codes.ndim() != 2 || codes.dims()[1] != self.code_dim() {
            return Err(CoreError::Shape(format!(
                "codes {:?} are not [n, {}]",
                codes.dims(),
                self.code_dim()
            ))
            .into());
        }
        let (mut g, ids) = self.inference_graph();
        let z = g.input(codes.clone());
        let y = self.build_decoder(&mut g, &ids, z)?;
        let n = codes.dims()[0];
        Ok(self
            .norm
            .denormalize(g.value(y))?
            .reshape(&[n, self.height, self.width])?)
    }

    fn check_field(&self, field: &Tensor) -> Result<()> {
        if field.dims() != [self.height, self.width] {
            return Err(CoreError::Shape(format!(
                "field {:?} does not match the {}×{} grid",
                field.dims(),
                self.height,
                self.width
            ))
            .into());
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = Meta {
            height: self.height,
            width: self.width,
            norm_scale: self.norm.scale(),
            config: self.config.clone(),
            report: self.report.clone(),
        };
        let mean = Tensor::new(&[self.norm.dim()], self.norm.mean().to_vec())?;
        let mut named: Vec<(&str, &Tensor)> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter())
            .collect();
        named.push(("norm_mean", &mean));
        let meta = serde_json::to_value(meta).map_err(|e| SurrogateError::Format(e.to_string()))?;
        save_checkpoint(dir, CHECKPOINT_KIND, meta, &named)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let mut ck = load_checkpoint(dir, CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.manifest.meta.clone())
            .map_err(|e| SurrogateError::Format(e.to_string()))?;
        let norm = FieldNormalizer::from_parts(ck.take("norm_mean")?.into_data(), meta.norm_scale)?;
        let mut model = Self::init(meta.height, meta.width, norm, &meta.config)?;
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = ck.take(name)?;
            if t.dims() != slot.dims() {
                return Err(SurrogateError::Format(format!(
                    "`{name}` has dims {:?}, configuration implies {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        model.report = meta.report;
        Ok(model)
    }
}

/// Latent code of one `H×W` field.
pub fn rom_encode(model: &ConvAutoencoder, field: &Tensor) -> Result<Tensor> {
    model.check_field(field)?;
    let z = model.encode_batch(field)?;
    Ok(z.reshape(&[model.code_dim()])?)
}

/// `H×W` field of one latent code.
pub fn rom_decode(model: &ConvAutoencoder, z: &Tensor) -> Result<Tensor> {
    if z.len() != model.code_dim() {
        return Err(CoreError::Shape(format!(
            "code has {} entries, model expects {}",
            z.len(),
            model.code_dim()
        ))
        .into());
    }
    let x = model.decode_batch(&z.clone().reshape(&[1, model.code_dim()])?)?;
    Ok(x.reshape(&[model.height, model.width])?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RomSample {
    pub re: f64,
    pub t: i64,
    pub field: Tensor,
}

/// Forecast fields keyed by `(Re, t)`, with a seeded train/validation split.
#[derive(Clone, Debug)]
pub struct RomDataset {
    samples: Vec<RomSample>,
    train: Vec<usize>,
    validation: Vec<usize>,
}

impl RomDataset {
    pub fn new(samples: Vec<RomSample>, validation_fraction: f64, seed: u64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| SurrogateError::Contract("empty ROM dataset".into()))?;
        let dims = first.field.dims().to_vec();
        if dims.len() != 2 {
            return contract("ROM samples must be 2-D fields");
        }
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.field.dims() != dims.as_slice() {
                return contract("ROM samples have inconsistent grids");
            }
            if !seen.insert((s.re.to_bits(), s.t)) {
                return contract(format!("duplicate sample for Re = {}, t = {}", s.re, s.t));
            }
        }
        if !(0.0..1.0).contains(&validation_fraction) {
            return contract("validation fraction must lie in [0, 1)");
        }
        let n = samples.len();
        let mut n_val = (validation_fraction * n as f64).round() as usize;
        if validation_fraction > 0.0 && n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x524F_4D00);
        let order = permutation(&mut rng, n);
        let mut validation = order[..n_val].to_vec();
        let mut train = order[n_val..].to_vec();
        validation.sort_unstable();
        train.sort_unstable();
        Ok(Self {
            samples,
            train,
            validation,
        })
    }

    /// One sample per forecast snapshot of every `(Re, sequence)` pair.
    pub fn from_forecasts(forecasts: &[(f64, FlowFieldSequence)], validation_fraction: f64, seed: u64) -> Result<Self> {
        let mut samples = Vec::new();
        for (re, seq) in forecasts {
            for i in 0..seq.len() {
                samples.push(RomSample {
                    re: *re,
                    t: seq.t_start() + i as i64,
                    field: seq.frame(i),
                });
            }
        }
        Self::new(samples, validation_fraction, seed)
    }

    pub fn samples(&self) -> &[RomSample] {
        &self.samples
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn validation_indices(&self) -> &[usize] {
        &self.validation
    }

    pub fn conditions(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.re.to_bits())
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn stack(&self, idx: &[usize]) -> Result<Tensor> {
        let fields: Vec<Tensor> = idx.iter().map(|&i| self.samples[i].field.clone()).collect();
        Ok(Tensor::stack(&fields)?)
    }
}

/// Mean over rows of `‖decode(encode(x)) − x‖ / ‖x‖`.
pub fn mean_relative_error(model: &ConvAutoencoder, fields: &Tensor) -> Result<f64> {
    let n = fields.dims()[0];
    if n == 0 {
        return Ok(0.0);
    }
    let rec = model.decode_batch(&model.encode_batch(fields)?)?;
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (rec.outer(i), fields.outer(i));
        let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        let den: f64 = b.iter().map(|q| q * q).sum();
        acc += if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    }
    Ok(acc / n as f64)
}

pub fn train_rom(dataset: &RomDataset, config: &RomConfig) -> Result<ConvAutoencoder> {
    if dataset.conditions() < 2 {
        return contract("the ROM needs forecasts from at least two conditions");
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) || !(config.final_lr_fraction > 0.0) {
        return contract("batch size and learning rate schedule must be positive");
    }
    let train_fields = dataset.stack(&dataset.train)?;
    let (h, w) = (train_fields.dims()[1], train_fields.dims()[2]);
    let norm = FieldNormalizer::fit(&train_fields)?;
    let rows = norm.normalize(&train_fields)?;
    let mut model = ConvAutoencoder::init(h, w, norm, config)?;
    let n = rows.dims()[0];
    let d = h * w;

    let initial_loss = model.reconstruction_loss(&model.params, &rows)?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5452_4149);
    let decay = lr_decay(config.final_lr_fraction, config.epochs);
    for epoch in 0..config.epochs {
        adam.set_learning_rate(config.learning_rate * decay.powi(epoch as i32));
        let order = permutation(&mut rng, n);
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                batch.extend_from_slice(rows.outer(i));
            }
            let batch = Tensor::new(&[chunk.len(), d], batch)?;
            let (loss, grads) = model.loss_and_gradients(&model.params, &batch)?;
            if !loss.is_finite() {
                return Err(SurrogateError::Diverged(format!(
                    "ROM loss became {loss} in epoch {epoch}"
                )));
            }
            adam.step(&mut model.params, &grads)
                .map_err(SurrogateError::from_core)?;
        }
    }
    let final_loss = model.reconstruction_loss(&model.params, &rows)?;
    if !final_loss.is_finite() {
        return Err(SurrogateError::Diverged("final ROM loss is not finite".into()));
    }
    let train_error = mean_relative_error(&model, &train_fields)?;
    let validation_error = if dataset.validation.is_empty() {
        0.0
    } else {
        mean_relative_error(&model, &dataset.stack(&dataset.validation)?)?
    };
    model.report = Some(RomTrainReport {
        initial_loss,
        final_loss,
        train_error,
        validation_error,
        train_rows: dataset.train.len(),
        validation_rows: dataset.validation.len(),
    });
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub re: f64,
    pub t: i64,
    pub z: Vec<f64>,
}

/// Latent trajectories of all training conditions, the GP training set.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    pub code_dim: usize,
    pub rows: Vec<LatentRow>,
}

pub fn extract_latent_table(model: &ConvAutoencoder, forecasts: &[(f64, FlowFieldSequence)]) -> Result<LatentTable> {
    let per_condition: Vec<Vec<LatentRow>> = forecasts
        .par_iter()
        .map(|(re, seq)| -> Result<Vec<LatentRow>> {
            let codes = model.encode_batch(seq.tensor())?;
            Ok((0..seq.len())
                .map(|i| LatentRow {
                    re: *re,
                    t: seq.t_start() + i as i64,
                    z: codes.outer(i).to_vec(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(LatentTable {
        code_dim: model.code_dim(),
        rows: per_condition.into_iter().flatten().collect(),
    })
}

impl LatentTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re,t");
        for i in 0..self.code_dim {
            let _ = write!(s, ",z{i}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:.16e},{}", r.re, r.t);
            for v in &r.z {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| SurrogateError::Format(format!("latent table: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .split(',')
            .collect();
        if header.len() < 3 || header[0] != "re" || header[1] != "t" {
            return Err(bad("header must start with `re,t,z0`".into()));
        }
        let code_dim = header.len() - 2;
        for (i, h) in header[2..].iter().enumerate() {
            if *h != format!("z{i}") {
                return Err(bad(format!("unexpected column `{h}`")));
            }
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != code_dim + 2 {
                return Err(bad(format!("row {} has {} columns", ln + 2, cells.len())));
            }
            let num = |c: &str| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", ln + 2)))
            };
            rows.push(LatentRow {
                re: num(cells[0])?,
                t: cells[1]
                    .trim()
                    .parse()
                    .map_err(|e| bad(format!("row {}: {e}", ln + 2)))?,
                z: cells[2..].iter().map(|c| num(c)).collect::<Result<_>>()?,
            });
        }
        Ok(Self { code_dim, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(p) = path.as_ref().parent() {
            std::fs::create_dir_all(p)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_plan_halves_supported_grids() {
        let cfg = RomConfig::default();
        for n in [32, 48, 64, 80] {
            let plan = shape_plan(n, n, &cfg).unwrap();
            assert_eq!(plan.last().unwrap(), &(n / 16, n / 16));
        }
        assert!(shape_plan(60, 60, &cfg).is_err());
    }

    #[test]
    fn encode_decode_shapes() {
        let data = Tensor::from_fn(&[2, 32, 32], |i| (i as f64 * 0.01).sin() + 1.0);
        let norm = FieldNormalizer::fit(&data).unwrap();
        let m = ConvAutoencoder::init(32, 32, norm, &RomConfig::default()).unwrap();
        let x = data.outer(0).to_vec();
        let x = Tensor::new(&[32, 32], x).unwrap();
        let z = rom_encode(&m, &x).unwrap();
        assert_eq!(z.dims(), &[10]);
        assert!(z.is_finite());
        assert_eq!(rom_encode(&m, &x).unwrap(), z);
        assert_eq!(rom_decode(&m, &z).unwrap().dims(), &[32, 32]);
        assert!(rom_encode(&m, &Tensor::zeros(&[16, 64])).is_err());
        assert!(rom_decode(&m, &Tensor::zeros(&[9])).is_err());
    }

    #[test]
    fn dataset_rejects_duplicates_and_splits() {
        let f = Tensor::zeros(&[2, 2]);
        let s = |re, t| RomSample { re, t, field: f.clone() };
        assert!(RomDataset::new(vec![s(1.0, 0), s(1.0, 0)], 0.1, 0).is_err());
        let ds = RomDataset::new((0..20).map(|i| s(i as f64, 0)).collect(), 0.1, 3).unwrap();
        assert_eq!(ds.validation_indices().len(), 2);
        assert_eq!(ds.train_indices().len(), 18);
        let again = RomDataset::new((0..20).map(|i| s(i as f64, 0)).collect(), 0.1, 3).unwrap();
        assert_eq!(ds.validation_indices(), again.validation_indices());
    }

    #[test]
    fn latent_csv_round_trip_is_exact() {
        let table = LatentTable {
            code_dim: 2,
            rows: vec![
                LatentRow { re: 123.456789, t: 0, z: vec![1.0 / 3.0, -2e-300] },
                LatentRow { re: 77.0, t: 9, z: vec![std::f64::consts::PI, 0.1 + 0.2] },
            ],
        };
        let csv = table.to_csv();
        assert!(csv.starts_with("re,t,z0,z1\n"));
        assert_eq!(LatentTable::from_csv(&csv).unwrap(), table);
    }
}
