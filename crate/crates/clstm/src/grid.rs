//! Grid scans: a coupled cell swept over the (i, j) positions of a sentence
//! pair in one of four directions, the sum aggregation of the directional
//! outputs, and stacking of blocks (four scans + one aggregation per block).

use crate::cells::{
    lc_step_cached, lstm_core_backward, tc_core, tc_core_backward, CellState, LcCache, LcParams,
    LcState, TcCache, TcParams,
};
use crate::error::{Error, Result};
use crate::tensor::{axpy, Tensor};

/// The n×m×d interaction tensor produced by a scan or a block.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    values: Tensor,
}

impl GridTensor {
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        GridTensor {
            n,
            m,
            d,
            values: Tensor::zeros(&[n, m, d]),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.m + j) * self.d;
        &self.values.data()[base..base + self.d]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let base = (i * self.m + j) * self.d;
        &mut self.values.data_mut()[base..base + self.d]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }

    pub fn same_shape(&self, other: &GridTensor) -> bool {
        self.n == other.n && self.m == other.m && self.d == other.d
    }
}

/// Scan direction, identified by where each position's two predecessors sit.
/// The first arrow is the row axis (sentence X), the second the column axis
/// (sentence Y); `Forward` means the predecessor is at index − 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// predecessors (i−1, j) and (i, j−1)
    ForwardForward,
    /// predecessors (i−1, j) and (i, j+1)
    ForwardBackward,
    /// predecessors (i+1, j) and (i, j+1)
    BackwardBackward,
    /// predecessors (i+1, j) and (i, j−1)
    BackwardForward,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::ForwardForward,
        Direction::ForwardBackward,
        Direction::BackwardBackward,
        Direction::BackwardForward,
    ];

    /// True when the row predecessor is at i−1.
    pub fn row_forward(self) -> bool {
        matches!(self, Direction::ForwardForward | Direction::ForwardBackward)
    }

    /// True when the column predecessor is at j−1.
    pub fn col_forward(self) -> bool {
        matches!(self, Direction::ForwardForward | Direction::BackwardForward)
    }

    fn row_order(self, n: usize) -> Vec<usize> {
        if self.row_forward() {
            (0..n).collect()
        } else {
            (0..n).rev().collect()
        }
    }

    fn col_order(self, m: usize) -> Vec<usize> {
        if self.col_forward() {
            (0..m).collect()
        } else {
            (0..m).rev().collect()
        }
    }

    fn row_pred(self, i: usize, n: usize) -> Option<usize> {
        if self.row_forward() {
            i.checked_sub(1)
        } else {
            (i + 1 < n).then_some(i + 1)
        }
    }

    fn col_pred(self, j: usize, m: usize) -> Option<usize> {
        if self.col_forward() {
            j.checked_sub(1)
        } else {
            (j + 1 < m).then_some(j + 1)
        }
    }
}

/// Parameters of one block's cell, shared across all four directions.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    Lc(LcParams),
    Tc(TcParams),
}

impl BlockParams {
    pub fn units(&self) -> usize {
        match self {
            BlockParams::Lc(p) => p.units(),
            BlockParams::Tc(p) => p.units(),
        }
    }
}

/// Per-position depth input of a block: word embeddings for the first block,
/// the previous block's aggregated grid for the rest.
#[derive(Debug, Clone, Copy)]
pub enum BlockInput<'a> {
    /// `x` is `[n, w]`, `y` is `[m, w]` — one embedding row per token.
    Pair { x: &'a Tensor, y: &'a Tensor },
    /// The fused output of the block below, used in place of both inputs.
    Fused(&'a GridTensor),
}

impl<'a> BlockInput<'a> {
    fn dims(&self) -> Result<(usize, usize)> {
        match self {
            BlockInput::Pair { x, y } => {
                let (n, m) = (x.shape()[0], y.shape()[0]);
                if n == 0 || m == 0 {
                    return Err(Error::Input("empty sentence in grid scan".into()));
                }
                Ok((n, m))
            }
            BlockInput::Fused(g) => {
                if g.n == 0 || g.m == 0 {
                    return Err(Error::Input("empty sentence in grid scan".into()));
                }
                Ok((g.n, g.m))
            }
        }
    }
}

/// Gradient accumulators mirroring a `BlockInput`.
pub enum InputGrads<'a> {
    Pair {
        dx: &'a mut Tensor,
        dy: &'a mut Tensor,
    },
    Fused(&'a mut GridTensor),
}

/// Gradient buffers for one block's cell parameters. With shared loosely
/// coupled parameters both internal LSTMs accumulate into the same buffers.
#[derive(Debug, Clone)]
pub enum BlockGrads {
    Lc {
        dw1: Tensor,
        db1: Tensor,
        dw2: Option<(Tensor, Tensor)>,
    },
    Tc {
        dw: Tensor,
        db: Tensor,
    },
}

impl BlockGrads {
    pub fn zeros_like(p: &BlockParams) -> Self {
        match p {
            BlockParams::Lc(p) => BlockGrads::Lc {
                dw1: Tensor::zeros(p.lstm1.w.shape()),
                db1: Tensor::zeros(p.lstm1.b.shape()),
                dw2: p
                    .lstm2
                    .as_ref()
                    .map(|l| (Tensor::zeros(l.w.shape()), Tensor::zeros(l.b.shape()))),
            },
            BlockParams::Tc(p) => BlockGrads::Tc {
                dw: Tensor::zeros(p.w.shape()),
                db: Tensor::zeros(p.b.shape()),
            },
        }
    }
}

enum CellCaches {
    Lc(Vec<Option<LcCache>>),
    Tc(Vec<Option<TcCache>>),
}

/// Forward activations of one directional scan, kept for the backward pass.
pub struct ScanCache {
    direction: Direction,
    n: usize,
    m: usize,
    cells: CellCaches,
}

fn check_widths(params: &BlockParams, input: &BlockInput) -> Result<()> {
    let d = params.units();
    // upper blocks consume the fused grid once, standing in for both inputs
    let (wx, wy, depth_total) = match input {
        BlockInput::Pair { x, y } => {
            let (a, b) = (x.shape()[1], y.shape()[1]);
            (a, b, a + b)
        }
        BlockInput::Fused(g) => (g.d, g.d, g.d),
    };
    match params {
        BlockParams::Tc(p) => {
            let expected = depth_total + 2 * d;
            if p.in_dim() != expected {
                return Err(Error::dimension("tc scan input", &[p.in_dim()], &[expected]));
            }
        }
        BlockParams::Lc(p) => {
            if p.lstm1.in_dim() != wx + 2 * d {
                return Err(Error::dimension(
                    "lc scan first input",
                    &[p.lstm1.in_dim()],
                    &[wx + 2 * d],
                ));
            }
            if p.second().in_dim() != wy + 2 * d {
                return Err(Error::dimension(
                    "lc scan second input",
                    &[p.second().in_dim()],
                    &[wy + 2 * d],
                ));
            }
        }
    }
    Ok(())
}

/// Sweeps the grid in the given direction and returns the exposed hidden
/// vector at every position. Out-of-range predecessors are zero states.
pub fn scan(params: &BlockParams, direction: Direction, input: &BlockInput) -> Result<GridTensor> {
    Ok(scan_cached(params, direction, input)?.0)
}

pub fn scan_cached(
    params: &BlockParams,
    direction: Direction,
    input: &BlockInput,
) -> Result<(GridTensor, ScanCache)> {
    let (n, m) = input.dims()?;
    check_widths(params, input)?;
    let d = params.units();
    let mut out = GridTensor::zeros(n, m, d);

    match params {
        BlockParams::Tc(p) => {
            let mut states: Vec<Option<CellState>> = vec![None; n * m];
            let mut caches: Vec<Option<TcCache>> = std::iter::repeat_with(|| None)
                .take(n * m)
                .collect();
            let zero = CellState::zeros(d);
            for &i in &direction.row_order(n) {
                for &j in &direction.col_order(m) {
                    let left = direction
                        .row_pred(i, n)
                        .map(|ip| states[ip * m + j].as_ref().unwrap())
                        .unwrap_or(&zero);
                    let down = direction
                        .col_pred(j, m)
                        .map(|jp| states[i * m + jp].as_ref().unwrap())
                        .unwrap_or(&zero);
                    let mut z = Vec::with_capacity(p.in_dim());
                    match input {
                        BlockInput::Pair { x, y } => {
                            z.extend_from_slice(x.row(i));
                            z.extend_from_slice(y.row(j));
                        }
                        BlockInput::Fused(g) => {
                            z.extend_from_slice(g.at(i, j));
                        }
                    }
                    z.extend_from_slice(&down.h);
                    z.extend_from_slice(&left.h);
                    let (state, cache) = tc_core(&z, &down.c, &left.c, p)?;
                    out.at_mut(i, j).copy_from_slice(&state.h);
                    states[i * m + j] = Some(state);
                    caches[i * m + j] = Some(cache);
                }
            }
            Ok((
                out,
                ScanCache {
                    direction,
                    n,
                    m,
                    cells: CellCaches::Tc(caches),
                },
            ))
        }
        BlockParams::Lc(p) => {
            let mut states: Vec<Option<LcState>> = vec![None; n * m];
            let mut caches: Vec<Option<LcCache>> = std::iter::repeat_with(|| None)
                .take(n * m)
                .collect();
            let zero = LcState::zeros(d);
            for &i in &direction.row_order(n) {
                for &j in &direction.col_order(m) {
                    let left = direction
                        .row_pred(i, n)
                        .map(|ip| states[ip * m + j].as_ref().unwrap())
                        .unwrap_or(&zero);
                    let down = direction
                        .col_pred(j, m)
                        .map(|jp| states[i * m + jp].as_ref().unwrap())
                        .unwrap_or(&zero);
                    let (xin, yin): (&[f64], &[f64]) = match input {
                        BlockInput::Pair { x, y } => (x.row(i), y.row(j)),
                        BlockInput::Fused(g) => (g.at(i, j), g.at(i, j)),
                    };
                    let (state, cache) = lc_step_cached(left, down, xin, yin, p)?;
                    // exposed vector: sum of the two hidden states
                    {
                        let slot = out.at_mut(i, j);
                        for k in 0..d {
                            slot[k] = state.first.h[k] + state.second.h[k];
                        }
                    }
                    states[i * m + j] = Some(state);
                    caches[i * m + j] = Some(cache);
                }
            }
            Ok((
                out,
                ScanCache {
                    direction,
                    n,
                    m,
                    cells: CellCaches::Lc(caches),
                },
            ))
        }
    }
}

/// Backward of one directional scan. `d_exposed` holds the gradient with
/// respect to the scan's output at every position; parameter gradients
/// accumulate into `grads`, depth-input gradients into `input_grads`.
pub fn scan_backward(
    params: &BlockParams,
    cache: &ScanCache,
    d_exposed: &GridTensor,
    grads: &mut BlockGrads,
    input_grads: &mut InputGrads,
) {
    let (n, m) = (cache.n, cache.m);
    let d = params.units();
    let direction = cache.direction;
    // reverse scan order: successors are processed before their predecessors
    let rows = direction.row_order(n);
    let cols = direction.col_order(m);

    match (params, &cache.cells, &mut *grads) {
        (BlockParams::Tc(p), CellCaches::Tc(caches), BlockGrads::Tc { dw, db }) => {
            let mut dh = vec![vec![0.0; d]; n * m];
            let mut dc = vec![vec![0.0; d]; n * m];
            for &i in rows.iter().rev() {
                for &j in cols.iter().rev() {
                    let pos = i * m + j;
                    axpy(&mut dh[pos], 1.0, d_exposed.at(i, j));
                    let cell = caches[pos].as_ref().unwrap();
                    let (dz, dc_down, dc_left) = tc_core_backward(
                        cell,
                        p,
                        &dh[pos],
                        &dc[pos],
                        dw.data_mut(),
                        db.data_mut(),
                    );
                    let in_dim = p.in_dim();
                    let depth = in_dim - 2 * d;
                    let (dh_down, dh_left) = (&dz[depth..depth + d], &dz[depth + d..in_dim]);
                    if let Some(jp) = direction.col_pred(j, m) {
                        axpy(&mut dh[i * m + jp], 1.0, dh_down);
                        axpy(&mut dc[i * m + jp], 1.0, &dc_down);
                    }
                    if let Some(ip) = direction.row_pred(i, n) {
                        axpy(&mut dh[ip * m + j], 1.0, dh_left);
                        axpy(&mut dc[ip * m + j], 1.0, &dc_left);
                    }
                    match input_grads {
                        InputGrads::Pair { dx, dy } => {
                            let wx = dx.shape()[1];
                            let wy = dy.shape()[1];
                            axpy(dx.row_mut(i), 1.0, &dz[0..wx]);
                            axpy(dy.row_mut(j), 1.0, &dz[wx..wx + wy]);
                        }
                        InputGrads::Fused(dg) => {
                            axpy(dg.at_mut(i, j), 1.0, &dz[0..d]);
                        }
                    }
                }
            }
        }
        (BlockParams::Lc(p), CellCaches::Lc(caches), BlockGrads::Lc { dw1, db1, dw2 }) => {
            let mut dh1 = vec![vec![0.0; d]; n * m];
            let mut dc1 = vec![vec![0.0; d]; n * m];
            let mut dh2 = vec![vec![0.0; d]; n * m];
            let mut dc2 = vec![vec![0.0; d]; n * m];
            for &i in rows.iter().rev() {
                for &j in cols.iter().rev() {
                    let pos = i * m + j;
                    // exposed = h1 + h2
                    axpy(&mut dh1[pos], 1.0, d_exposed.at(i, j));
                    axpy(&mut dh2[pos], 1.0, d_exposed.at(i, j));
                    let cell = caches[pos].as_ref().unwrap();

                    let (dz1, dc_prev1) = lstm_core_backward(
                        &cell.first,
                        &p.lstm1,
                        &dh1[pos],
                        &dc1[pos],
                        dw1.data_mut(),
                        db1.data_mut(),
                    );
                    let w1 = p.lstm1.in_dim() - 2 * d;
                    if let Some(ip) = direction.row_pred(i, n) {
                        axpy(&mut dh1[ip * m + j], 1.0, &dz1[w1..w1 + d]);
                        axpy(&mut dh2[ip * m + j], 1.0, &dz1[w1 + d..w1 + 2 * d]);
                        axpy(&mut dc1[ip * m + j], 1.0, &dc_prev1);
                    }

                    let (dw2b, db2b) = match dw2 {
                        Some((w, b)) => (w, b),
                        None => (&mut *dw1, &mut *db1),
                    };
                    let (dz2, dc_prev2) = lstm_core_backward(
                        &cell.second,
                        p.second(),
                        &dh2[pos],
                        &dc2[pos],
                        dw2b.data_mut(),
                        db2b.data_mut(),
                    );
                    let w2 = p.second().in_dim() - 2 * d;
                    if let Some(jp) = direction.col_pred(j, m) {
                        axpy(&mut dh1[i * m + jp], 1.0, &dz2[w2..w2 + d]);
                        axpy(&mut dh2[i * m + jp], 1.0, &dz2[w2 + d..w2 + 2 * d]);
                        axpy(&mut dc2[i * m + jp], 1.0, &dc_prev2);
                    }

                    match input_grads {
                        InputGrads::Pair { dx, dy } => {
                            axpy(dx.row_mut(i), 1.0, &dz1[0..w1]);
                            axpy(dy.row_mut(j), 1.0, &dz2[0..w2]);
                        }
                        InputGrads::Fused(dg) => {
                            axpy(dg.at_mut(i, j), 1.0, &dz1[0..d]);
                            axpy(dg.at_mut(i, j), 1.0, &dz2[0..d]);
                        }
                    }
                }
            }
        }
        _ => unreachable!("cache kind does not match params"),
    }
}

/// Elementwise sum of directional grids.
pub fn aggregate(grids: &[GridTensor]) -> Result<GridTensor> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Input("aggregate of zero grids".into()))?;
    let mut out = first.clone();
    for g in &grids[1..] {
        if !g.same_shape(first) {
            return Err(Error::dimension(
                "aggregate",
                &[first.n, first.m, first.d],
                &[g.n, g.m, g.d],
            ));
        }
        axpy(out.values.data_mut(), 1.0, g.values.data());
    }
    Ok(out)
}

/// One block: directional scans plus sum aggregation.
pub struct BlockCache {
    pub scans: Vec<ScanCache>,
}

pub fn block_forward(
    params: &BlockParams,
    input: &BlockInput,
    directions: &[Direction],
) -> Result<(GridTensor, BlockCache)> {
    let mut grids = Vec::with_capacity(directions.len());
    let mut scans = Vec::with_capacity(directions.len());
    for &dir in directions {
        let (g, c) = scan_cached(params, dir, input)?;
        grids.push(g);
        scans.push(c);
    }
    Ok((aggregate(&grids)?, BlockCache { scans }))
}

pub fn block_backward(
    params: &BlockParams,
    cache: &BlockCache,
    d_out: &GridTensor,
    grads: &mut BlockGrads,
    input_grads: &mut InputGrads,
) {
    // the aggregation sum passes the output gradient to every direction
    for scan in &cache.scans {
        scan_backward(params, scan, d_out, grads, input_grads);
    }
}

pub struct StackCache {
    pub blocks: Vec<BlockCache>,
    /// Aggregated output of each block; entry b is the input of block b+1.
    pub outputs: Vec<GridTensor>,
}

/// Runs all blocks: the first consumes the embedding pair, each later block
/// consumes the previous block's aggregated grid as its sole depth input.
pub fn stacked_forward(
    blocks: &[BlockParams],
    x: &Tensor,
    y: &Tensor,
    directions: &[Direction],
) -> Result<(GridTensor, StackCache)> {
    if blocks.is_empty() {
        return Err(Error::Config("at least one block required".into()));
    }
    let mut caches = Vec::with_capacity(blocks.len());
    let mut outputs: Vec<GridTensor> = Vec::with_capacity(blocks.len());
    for (b, params) in blocks.iter().enumerate() {
        let input = if b == 0 {
            BlockInput::Pair { x, y }
        } else {
            BlockInput::Fused(&outputs[b - 1])
        };
        let (out, cache) = block_forward(params, &input, directions)?;
        caches.push(cache);
        outputs.push(out);
    }
    Ok((
        outputs.last().unwrap().clone(),
        StackCache {
            blocks: caches,
            outputs,
        },
    ))
}

/// Backward through the stack; fills `grads` (one buffer per block) and
/// returns the gradients with respect to the embedding rows of X and Y.
pub fn stacked_backward(
    blocks: &[BlockParams],
    x: &Tensor,
    y: &Tensor,
    cache: &StackCache,
    d_final: &GridTensor,
    grads: &mut [BlockGrads],
) -> (Tensor, Tensor) {
    assert_eq!(blocks.len(), grads.len());
    let mut dx = Tensor::zeros(x.shape());
    let mut dy = Tensor::zeros(y.shape());
    let mut d_out = d_final.clone();
    for b in (0..blocks.len()).rev() {
        if b == 0 {
            let mut ig = InputGrads::Pair {
                dx: &mut dx,
                dy: &mut dy,
            };
            block_backward(&blocks[b], &cache.blocks[b], &d_out, &mut grads[b], &mut ig);
        } else {
            let below = &cache.outputs[b - 1];
            let mut dg = GridTensor::zeros(below.n, below.m, below.d);
            {
                let mut ig = InputGrads::Fused(&mut dg);
                block_backward(&blocks[b], &cache.blocks[b], &d_out, &mut grads[b], &mut ig);
            }
            d_out = dg;
        }
    }
    (dx, dy)
}
