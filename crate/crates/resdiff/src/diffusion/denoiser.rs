//! ε-prediction network: a lightweight STID-style MLP conditioned on the
//! history window, the fluctuation tensor Q, the diffusion step, and
//! calendar/node embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_encoding, Embedding, Linear, NodeId, ParamSet, ResidualBlock, Tape};
use crate::numerics::{RngStream, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub m: usize,
    pub p: usize,
    pub v: usize,
    pub c: usize,
    /// Token width; every embedding and the trunk run at this dim.
    pub dim: usize,
    pub blocks: usize,
    pub steps_per_day: usize,
}

impl DenoiserConfig {
    pub fn new(m: usize, p: usize, v: usize, c: usize, steps_per_day: usize) -> DenoiserConfig {
        DenoiserConfig { m, p, v, c, dim: 128, blocks: 8, steps_per_day }
    }
}

/// Batched forward-only noise prediction; implemented by [`Denoiser`] and
/// by test doubles with analytically known outputs.
pub trait NoisePredictor {
    /// Row layout is per-unit: `x_co_rows` [B·V × M·C], `r_rows` and
    /// `q_rows` [B·V × P·C]. `steps`, `tod`, `dow` carry one entry per
    /// window (length B). Returns ε̂ rows [B·V × P·C].
    fn predict_noise(
        &self,
        x_co_rows: &Tensor,
        r_rows: &Tensor,
        q_rows: &Tensor,
        steps: &[usize],
        tod: &[usize],
        dow: &[usize],
    ) -> Result<Tensor>;
}

/// Per unit, [x_co, r_n, Q] concatenated along time project to a token;
/// sinusoidal step encoding through a 2-layer MLP plus time-of-day,
/// day-of-week, and node embeddings are summed into it; a residual-block
/// trunk and a linear head emit ε̂ for the P·C target values.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub params: ParamSet,
    in_proj: Linear,
    step_l1: Linear,
    step_l2: Linear,
    tod: Embedding,
    dow: Embedding,
    node: Embedding,
    trunk: Vec<ResidualBlock>,
    head: Linear,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Denoiser {
        let mut rng = RngStream::new(seed, 0x44454e4f); // "DENO"
        let mut ps = ParamSet::new();
        let d = cfg.dim;
        let in_proj = Linear::new(&mut ps, "in_proj", (cfg.m + 2 * cfg.p) * cfg.c, d, &mut rng);
        let step_l1 = Linear::new(&mut ps, "step_l1", d, d, &mut rng);
        let step_l2 = Linear::new(&mut ps, "step_l2", d, d, &mut rng);
        let tod = Embedding::new(&mut ps, "tod", cfg.steps_per_day, d, &mut rng);
        let dow = Embedding::new(&mut ps, "dow", 7, d, &mut rng);
        let node = Embedding::new(&mut ps, "node", cfg.v, d, &mut rng);
        let trunk = (0..cfg.blocks)
            .map(|i| ResidualBlock::new(&mut ps, &format!("trunk{i}"), d, &mut rng))
            .collect();
        let head = Linear::new(&mut ps, "head", d, cfg.p * cfg.c, &mut rng);
        Denoiser { cfg, params: ps, in_proj, step_l1, step_l2, tod, dow, node, trunk, head }
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

    fn check_rows(
        &self,
        x_co_rows: &Tensor,
        r_rows: &Tensor,
        q_rows: &Tensor,
        steps: &[usize],
        tod: &[usize],
        dow: &[usize],
    ) -> Result<usize> {
        let b = steps.len();
        let rows = b * self.cfg.v;
        if tod.len() != b || dow.len() != b {
            return Err(Error::InvalidArgument("steps/tod/dow length mismatch".into()));
        }
        if x_co_rows.shape() != [rows, self.cfg.m * self.cfg.c] {
            return Err(Error::InvalidArgument(format!(
                "context rows {:?}, expected [{rows}, {}]",
                x_co_rows.shape(),
                self.cfg.m * self.cfg.c
            )));
        }
        let pc = self.cfg.p * self.cfg.c;
        if r_rows.shape() != [rows, pc] || q_rows.shape() != [rows, pc] {
            return Err(Error::InvalidArgument("residual/Q row shape mismatch".into()));
        }
        Ok(b)
    }

    /// Forward on the tape; output ε̂ rows [B·V × P·C].
    pub fn forward(
        &self,
        tape: &mut Tape,
        x_co_rows: &Tensor,
        r_rows: &Tensor,
        q_rows: &Tensor,
        steps: &[usize],
        tod: &[usize],
        dow: &[usize],
    ) -> Result<NodeId> {
        let b = self.check_rows(x_co_rows, r_rows, q_rows, steps, tod, dow)?;
        let v = self.cfg.v;
        let d = self.cfg.dim;
        let ps = &self.params;

        let xc = tape.input(x_co_rows.clone());
        let rr = tape.input(r_rows.clone());
        let qq = tape.input(q_rows.clone());
        let cat = tape.concat_cols(&[xc, rr, qq])?;
        let token = self.in_proj.apply(tape, ps, cat)?;

        // Step conditioning: one sinusoidal code per window, repeated per
        // unit, through a 2-layer MLP.
        let mut enc = Vec::with_capacity(b * v * d);
        for &n in steps {
            let code = sinusoidal_encoding(n, d)?;
            for _ in 0..v {
                enc.extend_from_slice(&code);
            }
        }
        let enc = tape.input(Tensor::from_vec(&[b * v, d], enc)?);
        let h = self.step_l1.apply(tape, ps, enc)?;
        let h = tape.relu(h);
        let step_emb = self.step_l2.apply(tape, ps, h)?;

        let mut tod_idx = Vec::with_capacity(b * v);
        let mut dow_idx = Vec::with_capacity(b * v);
        let mut node_idx = Vec::with_capacity(b * v);
        for bi in 0..b {
            if tod[bi] >= self.cfg.steps_per_day || dow[bi] >= 7 {
                return Err(Error::InvalidArgument(format!(
                    "covariate index out of range (tod {}, dow {})",
                    tod[bi], dow[bi]
                )));
            }
            for vi in 0..v {
                tod_idx.push(tod[bi]);
                dow_idx.push(dow[bi]);
                node_idx.push(vi);
            }
        }
        let te = self.tod.apply(tape, ps, tod_idx)?;
        let de = self.dow.apply(tape, ps, dow_idx)?;
        let ne = self.node.apply(tape, ps, node_idx)?;

        let mut h = tape.add(token, step_emb)?;
        h = tape.add(h, te)?;
        h = tape.add(h, de)?;
        h = tape.add(h, ne)?;
        for block in &self.trunk {
            h = block.apply(tape, ps, h)?;
        }
        self.head.apply(tape, ps, h)
    }
}

/// Dot product with four independent accumulators; the reassociation lets
/// the compiler vectorize, so results can differ from [`Tape::linear`] in
/// the last few ulps.
fn dot(x: &[f64], w: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut xc = x.chunks_exact(4);
    let mut wc = w.chunks_exact(4);
    for (xs, ws) in (&mut xc).zip(&mut wc) {
        for j in 0..4 {
            acc[j] += xs[j] * ws[j];
        }
    }
    let mut tail = 0.0;
    for (&xv, &wv) in xc.remainder().iter().zip(wc.remainder()) {
        tail += xv * wv;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// y = x·Wᵀ + b without a tape; forward-only inference path.
fn dense(x: &[f64], rows: usize, in_dim: usize, out_dim: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * out_dim];
    for i in 0..rows {
        let xrow = &x[i * in_dim..(i + 1) * in_dim];
        let orow = &mut out[i * out_dim..(i + 1) * out_dim];
        orow.copy_from_slice(b);
        for (o, wrow) in orow.iter_mut().zip(w.chunks_exact(in_dim)) {
            *o += dot(xrow, wrow);
        }
    }
    out
}

impl NoisePredictor for Denoiser {
    /// Forward-only pass that skips the autodiff tape; same arithmetic in
    /// the same order as [`Denoiser::forward`], with the step MLP run once
    /// per window instead of once per unit row.
    fn predict_noise(
        &self,
        x_co_rows: &Tensor,
        r_rows: &Tensor,
        q_rows: &Tensor,
        steps: &[usize],
        tod: &[usize],
        dow: &[usize],
    ) -> Result<Tensor> {
        let b = self.check_rows(x_co_rows, r_rows, q_rows, steps, tod, dow)?;
        let v = self.cfg.v;
        let d = self.cfg.dim;
        let rows = b * v;
        let mc = self.cfg.m * self.cfg.c;
        let pc = self.cfg.p * self.cfg.c;
        let ps = &self.params;
        let wd = |l: &Linear| ps.get(l.w).value.data();
        let bd = |l: &Linear| ps.get(l.b).value.data();

        // Token projection over [x_co, r, Q]; the dot product walks the
        // three segments in concatenation order.
        let (xd, rd, qd) = (x_co_rows.data(), r_rows.data(), q_rows.data());
        let (w_in, b_in) = (wd(&self.in_proj), bd(&self.in_proj));
        let mut h = vec![0.0; rows * d];
        for i in 0..rows {
            let xrow = &xd[i * mc..(i + 1) * mc];
            let rrow = &rd[i * pc..(i + 1) * pc];
            let qrow = &qd[i * pc..(i + 1) * pc];
            let orow = &mut h[i * d..(i + 1) * d];
            orow.copy_from_slice(b_in);
            for (o, wrow) in orow.iter_mut().zip(w_in.chunks_exact(mc + 2 * pc)) {
                *o += dot(xrow, &wrow[..mc])
                    + dot(rrow, &wrow[mc..mc + pc])
                    + dot(qrow, &wrow[mc + pc..]);
            }
        }

        // Step conditioning and embedding sums, one window at a time.
        let tod_t = ps.get(self.tod.table).value.data();
        let dow_t = ps.get(self.dow.table).value.data();
        let node_t = ps.get(self.node.table).value.data();
        for (bi, &n) in steps.iter().enumerate() {
            if tod[bi] >= self.cfg.steps_per_day || dow[bi] >= 7 {
                return Err(Error::InvalidArgument(format!(
                    "covariate index out of range (tod {}, dow {})",
                    tod[bi], dow[bi]
                )));
            }
            let code = sinusoidal_encoding(n, d)?;
            let mut s = dense(&code, 1, d, d, wd(&self.step_l1), bd(&self.step_l1));
            for v in s.iter_mut() {
                *v = if *v > 0.0 { *v } else { 0.0 };
            }
            let s = dense(&s, 1, d, d, wd(&self.step_l2), bd(&self.step_l2));
            let te = &tod_t[tod[bi] * d..(tod[bi] + 1) * d];
            let de = &dow_t[dow[bi] * d..(dow[bi] + 1) * d];
            for vi in 0..v {
                let ne = &node_t[vi * d..(vi + 1) * d];
                let row = &mut h[(bi * v + vi) * d..(bi * v + vi + 1) * d];
                for j in 0..d {
                    row[j] = ((row[j] + s[j]) + te[j] + de[j]) + ne[j];
                }
            }
        }

        for block in &self.trunk {
            let mut t = dense(&h, rows, d, d, wd(&block.l1), bd(&block.l1));
            for v in t.iter_mut() {
                *v = if *v > 0.0 { *v } else { 0.0 };
            }
            let t = dense(&t, rows, d, d, wd(&block.l2), bd(&block.l2));
            for (hv, tv) in h.iter_mut().zip(&t) {
                *hv += tv;
            }
        }

        let out = dense(&h, rows, d, pc, wd(&self.head), bd(&self.head));
        let out = Tensor::from_vec(&[rows, pc], out)?;
        out.check_finite("denoiser output")?;
        Ok(out)
    }
}
