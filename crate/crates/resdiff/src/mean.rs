//! Deterministic backbone estimating the conditional mean of the target
//! window given history, plus its pretraining stage.

use serde::{Deserialize, Serialize};

use crate::data::windows::{assemble_batch, window_starts, WindowBatch};
use crate::data::SpatioTemporalSeries;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Embedding, Linear, NodeId, ParamSet, ResidualBlock, Tape};
use crate::numerics::{RngStream, Tensor};
use crate::training::{shuffled_indices, EarlyStopping, EpochRecord, TrainConfig};

/// View [B, L, V, C] as per-unit rows [B·V, L·C] (b-major, v-minor).
pub fn unit_rows(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (b, l, v, c) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0; b * v * l * c];
    let src = x.data();
    for bi in 0..b {
        for li in 0..l {
            for vi in 0..v {
                let src_off = ((bi * l + li) * v + vi) * c;
                let dst_off = ((bi * v + vi) * l + li) * c;
                out[dst_off..dst_off + c].copy_from_slice(&src[src_off..src_off + c]);
            }
        }
    }
    Tensor::from_vec(&[b * v, l * c], out).expect("row view shape")
}

/// Inverse of `unit_rows`: [B·V, L·C] back to [B, L, V, C].
pub fn rows_to_batch(x: &Tensor, b: usize, l: usize, v: usize, c: usize) -> Tensor {
    let mut out = vec![0.0; b * l * v * c];
    let src = x.data();
    for bi in 0..b {
        for vi in 0..v {
            for li in 0..l {
                let src_off = ((bi * v + vi) * l + li) * c;
                let dst_off = ((bi * l + li) * v + vi) * c;
                out[dst_off..dst_off + c].copy_from_slice(&src[src_off..src_off + c]);
            }
        }
    }
    Tensor::from_vec(&[b, l, v, c], out).expect("batch view shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModelConfig {
    pub m: usize,
    pub p: usize,
    pub v: usize,
    pub c: usize,
    /// Width d of each embedding/projection; the trunk runs at 4d.
    pub hidden: usize,
    pub blocks: usize,
    pub steps_per_day: usize,
}

impl MeanModelConfig {
    pub fn new(m: usize, p: usize, v: usize, c: usize, steps_per_day: usize) -> MeanModelConfig {
        MeanModelConfig { m, p, v, c, hidden: 64, blocks: 4, steps_per_day }
    }
}

/// STID-style MLP: per-unit series projection concatenated with
/// time-of-day, day-of-week, and node embeddings, a residual-block trunk,
/// and a linear head emitting the P·C target values per unit.
#[derive(Debug, Clone)]
pub struct MeanModel {
    pub cfg: MeanModelConfig,
    pub params: ParamSet,
    proj: Linear,
    tod: Embedding,
    dow: Embedding,
    node: Embedding,
    trunk: Vec<ResidualBlock>,
    head: Linear,
}

impl MeanModel {
    pub fn new(cfg: MeanModelConfig, seed: u64) -> MeanModel {
        let mut rng = RngStream::new(seed, 0x4d45414e); // "MEAN"
        let mut ps = ParamSet::new();
        let d = cfg.hidden;
        let proj = Linear::new(&mut ps, "proj", cfg.m * cfg.c, d, &mut rng);
        let tod = Embedding::new(&mut ps, "tod", cfg.steps_per_day, d, &mut rng);
        let dow = Embedding::new(&mut ps, "dow", 7, d, &mut rng);
        let node = Embedding::new(&mut ps, "node", cfg.v, d, &mut rng);
        let trunk = (0..cfg.blocks)
            .map(|i| ResidualBlock::new(&mut ps, &format!("trunk{i}"), 4 * d, &mut rng))
            .collect();
        let head = Linear::new(&mut ps, "head", 4 * d, cfg.p * cfg.c, &mut rng);
        MeanModel { cfg, params: ps, proj, tod, dow, node, trunk, head }
    }

    /// Overwrite parameter values from a loaded set (matched by order/name).
    pub fn load_params(&mut self, loaded: &ParamSet) -> Result<()> {
        if loaded.len() != self.params.len() {
            return Err(Error::Config("parameter count mismatch on load".into()));
        }
        let values: Vec<(String, Tensor)> =
            loaded.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (p, (name, value)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::Config(format!("parameter mismatch on load: {}", p.name)));
            }
            p.value = value;
        }
        Ok(())
    }

    /// Covariate indices per row: the slot of the last history step.
    fn row_covariates(&self, batch: &WindowBatch) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let b = batch.batch_size();
        let v = self.cfg.v;
        let m = self.cfg.m;
        let mut tod = Vec::with_capacity(b * v);
        let mut dow = Vec::with_capacity(b * v);
        let mut node = Vec::with_capacity(b * v);
        for bi in 0..b {
            let t = batch.tod_index[bi][m - 1];
            let d = batch.dow_index[bi][m - 1];
            if t >= self.cfg.steps_per_day || d >= 7 {
                return Err(Error::InvalidArgument(format!(
                    "covariate index out of range (tod {t}, dow {d})"
                )));
            }
            for vi in 0..v {
                tod.push(t);
                dow.push(d);
                node.push(vi);
            }
        }
        Ok((tod, dow, node))
    }

    /// Forward on the tape; output [B·V, P·C].
    pub fn forward(&self, tape: &mut Tape, batch: &WindowBatch) -> Result<NodeId> {
        let ps = &self.params;
        let x = tape.input(unit_rows(&batch.x_co));
        let h = self.proj.apply(tape, ps, x)?;
        let (tod_idx, dow_idx, node_idx) = self.row_covariates(batch)?;
        let te = self.tod.apply(tape, ps, tod_idx)?;
        let de = self.dow.apply(tape, ps, dow_idx)?;
        let ne = self.node.apply(tape, ps, node_idx)?;
        let mut h = tape.concat_cols(&[h, te, de, ne])?;
        for block in &self.trunk {
            h = block.apply(tape, ps, h)?;
        }
        self.head.apply(tape, ps, h)
    }

    /// Point prediction [B × P × V × C] on standardized inputs.
    pub fn predict_mean(&self, batch: &WindowBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        let rows = tape.value(out);
        rows.check_finite("mean prediction")?;
        Ok(rows_to_batch(rows, batch.batch_size(), self.cfg.p, self.cfg.v, self.cfg.c))
    }

    /// r_ta = x_ta − predicted mean, elementwise on the standardized scale.
    pub fn residual_targets(&self, batch: &WindowBatch) -> Result<Tensor> {
        let mean = self.predict_mean(batch)?;
        if mean.shape() != batch.x_ta.shape() {
            return Err(Error::InvalidArgument("residual shape mismatch".into()));
        }
        let data: Vec<f64> =
            batch.x_ta.data().iter().zip(mean.data()).map(|(x, m)| x - m).collect();
        Tensor::from_vec(mean.shape(), data)
    }
}

fn batch_loss(model: &MeanModel, batch: &WindowBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, batch)?;
    let loss = tape.mean_sq_diff(out, unit_rows(&batch.x_ta))?;
    Ok(tape.value(loss).data()[0])
}

/// Mean L2 loss over all stride-1 windows of a standardized series.
pub fn eval_mean_loss(
    model: &MeanModel,
    series: &SpatioTemporalSeries,
    batch_size: usize,
) -> Result<f64> {
    let set = window_starts(series, model.cfg.m, model.cfg.p, 1)?;
    let n = set.starts.len();
    let mut total = 0.0;
    let mut rows = 0usize;
    for chunk in (0..n).collect::<Vec<_>>().chunks(batch_size) {
        let batch = assemble_batch(series, &set, chunk);
        total += batch_loss(model, &batch)? * chunk.len() as f64;
        rows += chunk.len();
    }
    Ok(total / rows as f64)
}

/// Stage-1 pretraining with early stopping. Both series must already be
/// standardized with the training statistics. Returns the history; the
/// model ends at its best-validation-epoch weights.
pub fn train_mean(
    model: &mut MeanModel,
    train: &SpatioTemporalSeries,
    val: &SpatioTemporalSeries,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    let set = window_starts(train, model.cfg.m, model.cfg.p, 1)?;
    let n_windows = set.starts.len();
    let mut adam = AdamState::new(&model.params, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<ParamSet> = None;
    let mut history = Vec::new();
    let root = RngStream::new(seed, 0x545231); // stage-1 training stream

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mut order_rng = root.substream(epoch as u64);
        let order = shuffled_indices(n_windows, &mut order_rng);
        let mut train_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = assemble_batch(train, &set, chunk);
            model.params.zero_grad();
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch)?;
            let loss = tape.mean_sq_diff(out, unit_rows(&batch.x_ta))?;
            let loss_val = tape.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}"
                )));
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params, lr);
            train_loss += loss_val * chunk.len() as f64;
        }
        train_loss /= n_windows as f64;
        let val_loss = eval_mean_loss(model, val, cfg.batch_size)?;
        history.push(EpochRecord { epoch, train_loss, val_loss, lr });
        if stopper.observe(epoch, val_loss) {
            best = Some(model.params.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }
    if let Some(best) = best {
        model.params = best;
    }
    Ok(history)
}
