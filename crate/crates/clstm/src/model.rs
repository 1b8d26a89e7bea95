//! End-to-end models: embedding lookup, stacked coupled-LSTM encoder with
//! pooling and a fully connected layer, the two task heads, and the NBOW and
//! parallel-LSTM baselines. All trainable tensors live in a `ParamRegistry`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{lstm_core, lstm_core_backward, CellState, LcParams, LstmParams, TcParams};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, FdReport};
use crate::grid::{
    stacked_backward, stacked_forward, BlockGrads, BlockParams, Direction, GridTensor, StackCache,
};
use crate::pooling::{dynamic_pool, pool_backward, PoolResult, PoolSpec};
use crate::registry::{GradStore, ParamId, ParamRegistry};
use crate::tensor::{axpy, matvec, matvec_t, Tensor};

pub const UNK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lc,
    Tc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Clstm,
    Nbow,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionMode {
    Single,
    Four,
}

impl DirectionMode {
    pub fn directions(self) -> &'static [Direction] {
        match self {
            DirectionMode::Single => &Direction::ALL[..1],
            DirectionMode::Four => &Direction::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "classes")]
pub enum Head {
    Ranking,
    Classification(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub cell_kind: CellKind,
    pub blocks: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub pool_p: usize,
    pub pool_q: usize,
    pub fc_width: usize,
    pub head: Head,
    pub directions: DirectionMode,
    pub vocab_size: usize,
    /// Parallel-LSTM baseline only: encode both sentences with one LSTM.
    pub shared_encoders: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.hidden == 0 || self.embed_dim == 0 || self.fc_width == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if let Head::Classification(c) = self.head {
            if c < 2 {
                return Err(Error::Config("classification needs >= 2 classes".into()));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab must hold the reserved ids".into()));
        }
        PoolSpec::new(self.pool_p, self.pool_q)?;
        Ok(())
    }

    pub fn pool(&self) -> PoolSpec {
        PoolSpec {
            p: self.pool_p,
            q: self.pool_q,
        }
    }

    /// Input width of block `b` for one internal LSTM / the TC cell.
    fn block_in_dim(&self, b: usize) -> usize {
        let d = self.hidden;
        let depth = if b == 0 {
            match self.cell_kind {
                CellKind::Lc => self.embed_dim,
                CellKind::Tc => 2 * self.embed_dim,
            }
        } else {
            d
        };
        depth + 2 * d
    }

    fn fc_in(&self) -> usize {
        match self.arch {
            Arch::Clstm => self.pool_p * self.pool_q * self.hidden,
            Arch::Nbow => 2 * self.embed_dim,
            Arch::Parallel => 2 * self.hidden,
        }
    }

    fn head_classes(&self) -> usize {
        match self.head {
            Head::Ranking => 1,
            Head::Classification(c) => c,
        }
    }
}

#[derive(Debug, Clone)]
struct ModelIds {
    emb: ParamId,
    blocks: Vec<(ParamId, ParamId)>,
    enc: Vec<(ParamId, ParamId)>,
    fc_w: ParamId,
    fc_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub registry: ParamRegistry,
    ids: ModelIds,
}

fn uniform_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-0.1..0.1);
    }
    t
}

impl Model {
    /// Fresh model: non-embedding parameters uniform in [-0.1, 0.1],
    /// embeddings uniform in [-1, 1] (pre-trained-vector scale).
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        // embeddings use a wider range than the ±0.1 of the other
        // parameters: their components stand in for pre-trained vectors,
        // whose scale is an order of magnitude larger, and the grid output
        // barely depends on the inputs if they start near zero
        let mut emb_init = Tensor::zeros(&[cfg.vocab_size, cfg.embed_dim]);
        for v in emb_init.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let emb = reg.register("embeddings", emb_init, true)?;
        let mut blocks = Vec::new();
        let mut enc = Vec::new();
        match cfg.arch {
            Arch::Clstm => {
                for b in 0..cfg.blocks {
                    let in_dim = cfg.block_in_dim(b);
                    let rows = match cfg.cell_kind {
                        CellKind::Lc => 4 * cfg.hidden,
                        CellKind::Tc => 5 * cfg.hidden,
                    };
                    let w = reg.register(
                        &format!("block{b}.w"),
                        uniform_tensor(&[rows, in_dim], &mut rng),
                        false,
                    )?;
                    let bb = reg.register(
                        &format!("block{b}.b"),
                        uniform_tensor(&[rows], &mut rng),
                        false,
                    )?;
                    blocks.push((w, bb));
                }
            }
            Arch::Nbow => {}
            Arch::Parallel => {
                let n_enc = if cfg.shared_encoders { 1 } else { 2 };
                for e in 0..n_enc {
                    let w = reg.register(
                        &format!("enc{e}.w"),
                        uniform_tensor(&[4 * cfg.hidden, cfg.embed_dim + cfg.hidden], &mut rng),
                        false,
                    )?;
                    let b = reg.register(
                        &format!("enc{e}.b"),
                        uniform_tensor(&[4 * cfg.hidden], &mut rng),
                        false,
                    )?;
                    enc.push((w, b));
                }
            }
        }
        let fc_w = reg.register(
            "fc.w",
            uniform_tensor(&[cfg.fc_width, cfg.fc_in()], &mut rng),
            false,
        )?;
        let fc_b = reg.register("fc.b", uniform_tensor(&[cfg.fc_width], &mut rng), false)?;
        let head_w = reg.register(
            "head.w",
            uniform_tensor(&[cfg.head_classes(), cfg.fc_width], &mut rng),
            false,
        )?;
        let head_b = reg.register(
            "head.b",
            uniform_tensor(&[cfg.head_classes()], &mut rng),
            false,
        )?;
        Ok(Model {
            cfg,
            registry: reg,
            ids: ModelIds {
                emb,
                blocks,
                enc,
                fc_w,
                fc_b,
                head_w,
                head_b,
            },
        })
    }

    /// Rebuilds a model around an existing registry (same layout as `new`).
    pub fn from_parts(cfg: ModelConfig, registry: ParamRegistry) -> Result<Model> {
        cfg.validate()?;
        let need = |name: &str| -> Result<ParamId> {
            registry
                .lookup(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let mut blocks = Vec::new();
        if cfg.arch == Arch::Clstm {
            for b in 0..cfg.blocks {
                blocks.push((need(&format!("block{b}.w"))?, need(&format!("block{b}.b"))?));
            }
        }
        let mut enc = Vec::new();
        if cfg.arch == Arch::Parallel {
            let n_enc = if cfg.shared_encoders { 1 } else { 2 };
            for e in 0..n_enc {
                enc.push((need(&format!("enc{e}.w"))?, need(&format!("enc{e}.b"))?));
            }
        }
        let ids = ModelIds {
            emb: need("embeddings")?,
            blocks,
            enc,
            fc_w: need("fc.w")?,
            fc_b: need("fc.b")?,
            head_w: need("head.w")?,
            head_b: need("head.b")?,
        };
        Ok(Model {
            cfg,
            registry,
            ids,
        })
    }

    pub fn embedding_id(&self) -> ParamId {
        self.ids.emb
    }

    /// Row lookup; out-of-vocabulary ids map to the reserved UNK row.
    pub fn embed(&self, tokens: &[u32]) -> Tensor {
        let e = self.registry.get(self.ids.emb);
        let w = self.cfg.embed_dim;
        let v = self.cfg.vocab_size;
        let mut out = Tensor::zeros(&[tokens.len(), w]);
        for (i, &t) in tokens.iter().enumerate() {
            let row = if (t as usize) < v { t as usize } else { UNK_ID as usize };
            out.row_mut(i).copy_from_slice(e.row(row));
        }
        out
    }

    fn block_params(&self) -> Vec<BlockParams> {
        self.ids
            .blocks
            .iter()
            .map(|&(w, b)| {
                let w = self.registry.get(w).clone();
                let b = self.registry.get(b).clone();
                match self.cfg.cell_kind {
                    CellKind::Lc => BlockParams::Lc(LcParams::shared(LstmParams { w, b })),
                    CellKind::Tc => BlockParams::Tc(TcParams { w, b }),
                }
            })
            .collect()
    }

    fn encoder_params(&self, which: usize) -> LstmParams {
        let idx = if self.cfg.shared_encoders { 0 } else { which };
        let (w, b) = self.ids.enc[idx];
        LstmParams {
            w: self.registry.get(w).clone(),
            b: self.registry.get(b).clone(),
        }
    }

    pub fn forward(&self, x: &[u32], y: &[u32]) -> Result<HeadOutput> {
        Ok(self.forward_cached(x, y)?.0)
    }

    pub fn forward_cached(&self, x: &[u32], y: &[u32]) -> Result<(HeadOutput, ForwardCache)> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        let x_emb = self.embed(x);
        let y_emb = self.embed(y);
        let (v, body) = match self.cfg.arch {
            Arch::Clstm => {
                let blocks = self.block_params();
                let (grid, cache) = stacked_forward(
                    &blocks,
                    &x_emb,
                    &y_emb,
                    self.cfg.directions.directions(),
                )?;
                let pool = dynamic_pool(&grid, self.cfg.pool())?;
                let v = pool.values.data().to_vec();
                (v, BodyCache::Clstm { blocks, cache, pool })
            }
            Arch::Nbow => {
                let mut v = vec![0.0; 2 * self.cfg.embed_dim];
                for i in 0..x_emb.shape()[0] {
                    axpy(&mut v[..self.cfg.embed_dim], 1.0, x_emb.row(i));
                }
                for j in 0..y_emb.shape()[0] {
                    axpy(&mut v[self.cfg.embed_dim..], 1.0, y_emb.row(j));
                }
                (v, BodyCache::Nbow)
            }
            Arch::Parallel => {
                let (hx, cx) = self.run_encoder(0, &x_emb)?;
                let (hy, cy) = self.run_encoder(1, &y_emb)?;
                let mut v = hx.clone();
                v.extend_from_slice(&hy);
                (v, BodyCache::Parallel { cx, cy })
            }
        };

        let vt = Tensor::from_vec(v.clone());
        let fc_pre = crate::tensor::add(
            &matvec(self.registry.get(self.ids.fc_w), &vt)?,
            self.registry.get(self.ids.fc_b),
        )?;
        let fc_out = crate::tensor::tanh(&fc_pre);
        let logits = crate::tensor::add(
            &matvec(self.registry.get(self.ids.head_w), &fc_out)?,
            self.registry.get(self.ids.head_b),
        )?;
        let output = match self.cfg.head {
            Head::Ranking => HeadOutput::Score(logits.data()[0]),
            Head::Classification(_) => HeadOutput::Probs(softmax(logits.data())),
        };
        Ok((
            output,
            ForwardCache {
                x: x.to_vec(),
                y: y.to_vec(),
                x_emb,
                y_emb,
                body,
                v,
                fc_out,
            },
        ))
    }

    fn run_encoder(
        &self,
        which: usize,
        emb: &Tensor,
    ) -> Result<(Vec<f64>, Vec<crate::cells::LstmCache>)> {
        let p = self.encoder_params(which);
        let d = self.cfg.hidden;
        let mut state = CellState::zeros(d);
        let mut caches = Vec::with_capacity(emb.shape()[0]);
        for t in 0..emb.shape()[0] {
            let mut z = emb.row(t).to_vec();
            z.extend_from_slice(&state.h);
            let (next, cache) = lstm_core(&z, &state.c, &p)?;
            caches.push(cache);
            state = next;
        }
        Ok((state.h, caches))
    }

    /// Gradient of the loss with respect to every registered parameter,
    /// given the gradient at the head (score or pre-softmax logits).
    pub fn backward(&self, cache: &ForwardCache, d_head: &OutputGrad, grads: &mut GradStore) {
        let d_logits = match d_head {
            OutputGrad::Score(s) => vec![*s],
            OutputGrad::Logits(l) => l.clone(),
        };
        let dl = Tensor::from_vec(d_logits);
        // head
        let head_w = self.registry.get(self.ids.head_w);
        outer_acc(grads.get_mut(self.ids.head_w), &dl, &cache.fc_out);
        axpy(grads.get_mut(self.ids.head_b).data_mut(), 1.0, dl.data());
        let d_fc_out = matvec_t(head_w, &dl).expect("head shapes");
        // fully connected
        let mut d_fc_pre = d_fc_out;
        for (g, &o) in d_fc_pre.data_mut().iter_mut().zip(cache.fc_out.data()) {
            *g *= 1.0 - o * o;
        }
        let vt = Tensor::from_vec(cache.v.clone());
        outer_acc(grads.get_mut(self.ids.fc_w), &d_fc_pre, &vt);
        axpy(grads.get_mut(self.ids.fc_b).data_mut(), 1.0, d_fc_pre.data());
        let dv = matvec_t(self.registry.get(self.ids.fc_w), &d_fc_pre).expect("fc shapes");

        match &cache.body {
            BodyCache::Clstm {
                blocks,
                cache: stack,
                pool,
            } => {
                let d = self.cfg.hidden;
                let d_final = pool_backward(pool, &dv, d);
                let mut bgrads: Vec<BlockGrads> =
                    blocks.iter().map(BlockGrads::zeros_like).collect();
                let (dx, dy) = stacked_backward(
                    blocks,
                    &cache.x_emb,
                    &cache.y_emb,
                    stack,
                    &d_final,
                    &mut bgrads,
                );
                for (b, g) in bgrads.into_iter().enumerate() {
                    let (wid, bid) = self.ids.blocks[b];
                    match g {
                        BlockGrads::Tc { dw, db } | BlockGrads::Lc { dw1: dw, db1: db, .. } => {
                            axpy(grads.get_mut(wid).data_mut(), 1.0, dw.data());
                            axpy(grads.get_mut(bid).data_mut(), 1.0, db.data());
                        }
                    }
                }
                self.embed_backward(&cache.x, &dx, grads);
                self.embed_backward(&cache.y, &dy, grads);
            }
            BodyCache::Nbow => {
                let w = self.cfg.embed_dim;
                let mut dx = Tensor::zeros(cache.x_emb.shape());
                let mut dy = Tensor::zeros(cache.y_emb.shape());
                for i in 0..dx.shape()[0] {
                    axpy(dx.row_mut(i), 1.0, &dv.data()[..w]);
                }
                for j in 0..dy.shape()[0] {
                    axpy(dy.row_mut(j), 1.0, &dv.data()[w..]);
                }
                self.embed_backward(&cache.x, &dx, grads);
                self.embed_backward(&cache.y, &dy, grads);
            }
            BodyCache::Parallel { cx, cy } => {
                let d = self.cfg.hidden;
                let dx = self.encoder_backward(0, cx, &dv.data()[..d], grads);
                let dy = self.encoder_backward(1, cy, &dv.data()[d..], grads);
                self.embed_backward(&cache.x, &dx, grads);
                self.embed_backward(&cache.y, &dy, grads);
            }
        }
    }

    fn encoder_backward(
        &self,
        which: usize,
        caches: &[crate::cells::LstmCache],
        dh_final: &[f64],
        grads: &mut GradStore,
    ) -> Tensor {
        let p = self.encoder_params(which);
        let idx = if self.cfg.shared_encoders { 0 } else { which };
        let (wid, bid) = self.ids.enc[idx];
        let d = self.cfg.hidden;
        let w = self.cfg.embed_dim;
        let steps = caches.len();
        let mut demb = Tensor::zeros(&[steps, w]);
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; d];
        for t in (0..steps).rev() {
            let (gw, gb) = grads.get2_mut(wid, bid);
            let (dz, dc_prev) =
                lstm_core_backward(&caches[t], &p, &dh, &dc, gw.data_mut(), gb.data_mut());
            demb.row_mut(t).copy_from_slice(&dz[..w]);
            dh = dz[w..].to_vec();
            dc = dc_prev;
        }
        demb
    }

    fn embed_backward(&self, tokens: &[u32], demb: &Tensor, grads: &mut GradStore) {
        let e = grads.get_mut(self.ids.emb);
        let v = self.cfg.vocab_size;
        for (i, &t) in tokens.iter().enumerate() {
            let row = if (t as usize) < v { t as usize } else { UNK_ID as usize };
            axpy(e.row_mut(row), 1.0, demb.row(i));
        }
    }

    /// The final aggregated grid, for activation inspection.
    pub fn final_grid(&self, x: &[u32], y: &[u32]) -> Result<GridTensor> {
        if self.cfg.arch != Arch::Clstm {
            return Err(Error::Config("activation grids exist only for the coupled model".into()));
        }
        let x_emb = self.embed(x);
        let y_emb = self.embed(y);
        let blocks = self.block_params();
        let (grid, _) =
            stacked_forward(&blocks, &x_emb, &y_emb, self.cfg.directions.directions())?;
        Ok(grid)
    }
}

/// Human-readable parameter counts for one configuration.
pub fn count_report(cfg: &ModelConfig) -> Result<String> {
    let model = Model::new(cfg.clone(), 0)?;
    let with = model.registry.count_params(true);
    let without = model.registry.count_params(false);
    Ok(format!(
        "  total parameters: {with}\n  excluding embeddings: {without}\n"
    ))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn outer_acc(acc: &mut Tensor, rows: &Tensor, cols: &Tensor) {
    let (r, c) = (rows.len(), cols.len());
    debug_assert_eq!(acc.shape(), &[r, c]);
    let data = acc.data_mut();
    for i in 0..r {
        let gi = rows.data()[i];
        for j in 0..c {
            data[i * c + j] += gi * cols.data()[j];
        }
    }
}

#[derive(Debug, Clone)]
pub enum HeadOutput {
    Score(f64),
    Probs(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum OutputGrad {
    /// d loss / d score.
    Score(f64),
    /// d loss / d pre-softmax logits.
    Logits(Vec<f64>),
}

pub enum BodyCache {
    Clstm {
        blocks: Vec<BlockParams>,
        cache: StackCache,
        pool: PoolResult,
    },
    Nbow,
    Parallel {
        cx: Vec<crate::cells::LstmCache>,
        cy: Vec<crate::cells::LstmCache>,
    },
}

pub struct ForwardCache {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub x_emb: Tensor,
    pub y_emb: Tensor,
    pub body: BodyCache,
    pub v: Vec<f64>,
    pub fc_out: Tensor,
}

/// Loss used by the gradient-check harness: cross-entropy against class 0
/// for classification, the raw score for ranking.
pub fn gradcheck_loss(model: &Model, x: &[u32], y: &[u32]) -> Result<(f64, OutputGrad)> {
    let (out, _) = model.forward_cached(x, y)?;
    match out {
        HeadOutput::Score(s) => Ok((s, OutputGrad::Score(1.0))),
        HeadOutput::Probs(p) => {
            let loss = -p[0].max(1e-300).ln();
            let mut dl = p.clone();
            dl[0] -= 1.0;
            Ok((loss, OutputGrad::Logits(dl)))
        }
    }
}

/// Finite-difference check of the full model backward pass.
pub fn model_gradcheck(
    cfg: &ModelConfig,
    seed: u64,
    x: &[u32],
    y: &[u32],
    epsilon: f64,
    tolerance: f64,
) -> Result<FdReport> {
    let model = Model::new(cfg.clone(), seed)?;
    let mut grads = GradStore::zeros_like(&model.registry);
    let (_, cache) = model.forward_cached(x, y)?;
    let (_, d_head) = gradcheck_loss(&model, x, y)?;
    model.backward(&cache, &d_head, &mut grads);

    let cfg2 = cfg.clone();
    let mut reg = model.registry.clone();
    finite_diff_check(
        move |r| {
            let m = Model::from_parts(cfg2.clone(), r.clone())?;
            Ok(gradcheck_loss(&m, x, y)?.0)
        },
        &mut reg,
        &grads,
        epsilon,
        tolerance,
    )
}
