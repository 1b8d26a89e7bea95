//! The three recurrent cells: a standard LSTM, the loosely coupled pair of
//! LSTMs, and the tightly coupled two-dimensional cell with two forget gates.
//! Each cell is a pure function from (predecessor states, inputs, params) to
//! a new state, with an analytic backward pass over cached activations.
//!
//! Weight matrices stack the gate rows in the order (candidate, output,
//! input, forget) — the tightly coupled cell appends a second forget block.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Tensor};

/// Hidden and memory vectors at one grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(d: usize) -> Self {
        CellState {
            h: vec![0.0; d],
            c: vec![0.0; d],
        }
    }

    pub fn units(&self) -> usize {
        self.h.len()
    }
}

/// Parameters of one standard LSTM: `w` is `[4d, in_dim]`, `b` is `[4d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn zeros(d: usize, in_dim: usize) -> Self {
        LstmParams {
            w: Tensor::zeros(&[4 * d, in_dim]),
            b: Tensor::zeros(&[4 * d]),
        }
    }

    pub fn random(d: usize, in_dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d, in_dim);
        for v in p.w.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in p.b.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        p
    }

    pub fn units(&self) -> usize {
        self.b.len() / 4
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Parameters of the tightly coupled cell: `w` is `[5d, in_dim]`, `b` is
/// `[5d]`, with gate blocks (candidate, output, input, forget-1, forget-2).
#[derive(Debug, Clone, PartialEq)]
pub struct TcParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl TcParams {
    pub fn zeros(d: usize, in_dim: usize) -> Self {
        TcParams {
            w: Tensor::zeros(&[5 * d, in_dim]),
            b: Tensor::zeros(&[5 * d]),
        }
    }

    pub fn random(d: usize, in_dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d, in_dim);
        for v in p.w.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in p.b.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        p
    }

    pub fn units(&self) -> usize {
        self.b.len() / 5
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Parameters of the loosely coupled pair. `lstm2 == None` means the two
/// internal LSTMs share `lstm1` and their gradients are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct LcParams {
    pub lstm1: LstmParams,
    pub lstm2: Option<LstmParams>,
}

impl LcParams {
    pub fn shared(lstm: LstmParams) -> Self {
        LcParams {
            lstm1: lstm,
            lstm2: None,
        }
    }

    pub fn is_shared(&self) -> bool {
        self.lstm2.is_none()
    }

    pub fn second(&self) -> &LstmParams {
        self.lstm2.as_ref().unwrap_or(&self.lstm1)
    }

    pub fn units(&self) -> usize {
        self.lstm1.units()
    }
}

/// State pair of the loosely coupled cell at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct LcState {
    pub first: CellState,
    pub second: CellState,
}

impl LcState {
    pub fn zeros(d: usize) -> Self {
        LcState {
            first: CellState::zeros(d),
            second: CellState::zeros(d),
        }
    }
}

fn affine(w: &Tensor, b: &Tensor, z: &[f64]) -> Vec<f64> {
    let rows = w.shape()[0];
    let cols = w.shape()[1];
    let wd = w.data();
    let mut pre = b.data().to_vec();
    for r in 0..rows {
        let row = &wd[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, &zv) in row.iter().zip(z) {
            acc += a * zv;
        }
        pre[r] += acc;
    }
    pre
}

fn check_in_dim(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dimension(context, &[expected], &[got]));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Standard LSTM
// ---------------------------------------------------------------------------

/// Activations cached by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub z: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub cbar: Vec<f64>,
    pub o: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM update on the concatenated input `z = [x; h_prev]` (the caller
/// assembles `z`; this keeps the same core usable for the coupled variants
/// where the "hidden" part is a concatenation of two states).
pub fn lstm_core(z: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(CellState, LstmCache)> {
    check_in_dim("lstm_core input", p.in_dim(), z.len())?;
    check_in_dim("lstm_core memory", p.units(), c_prev.len())?;
    let d = p.units();
    let pre = affine(&p.w, &p.b, z);
    let cbar: Vec<f64> = pre[0..d].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = pre[d..2 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let i: Vec<f64> = pre[2 * d..3 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let f: Vec<f64> = pre[3 * d..4 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let mut c = vec![0.0; d];
    let mut tanh_c = vec![0.0; d];
    let mut h = vec![0.0; d];
    for k in 0..d {
        c[k] = cbar[k] * i[k] + c_prev[k] * f[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    Ok((
        CellState { h, c: c.clone() },
        LstmCache {
            z: z.to_vec(),
            c_prev: c_prev.to_vec(),
            cbar,
            o,
            i,
            f,
            c,
            tanh_c,
        },
    ))
}

/// Backward of `lstm_core`. `dh`/`dc_in` are the gradients flowing into this
/// position's hidden and memory outputs. Accumulates into `dw`/`db` (flat,
/// same layout as the params) and returns `(dz, dc_prev)`.
pub fn lstm_core_backward(
    cache: &LstmCache,
    p: &LstmParams,
    dh: &[f64],
    dc_in: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = p.units();
    let in_dim = p.in_dim();
    let mut dpre = vec![0.0; 4 * d];
    let mut dc_prev = vec![0.0; d];
    for k in 0..d {
        let dc = dc_in[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        let d_o = dh[k] * cache.tanh_c[k];
        let d_cbar = dc * cache.i[k];
        let d_i = dc * cache.cbar[k];
        let d_f = dc * cache.c_prev[k];
        dc_prev[k] = dc * cache.f[k];
        dpre[k] = d_cbar * (1.0 - cache.cbar[k] * cache.cbar[k]);
        dpre[d + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
        dpre[2 * d + k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
        dpre[3 * d + k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
    }
    let mut dz = vec![0.0; in_dim];
    let wd = p.w.data();
    for r in 0..4 * d {
        let g = dpre[r];
        db[r] += g;
        let row = &wd[r * in_dim..(r + 1) * in_dim];
        let drow = &mut dw[r * in_dim..(r + 1) * in_dim];
        for k in 0..in_dim {
            drow[k] += g * cache.z[k];
            dz[k] += row[k] * g;
        }
    }
    (dz, dc_prev)
}

/// Standard LSTM step on input `x` and the previous state.
pub fn lstm_step(prev: &CellState, x: &[f64], p: &LstmParams) -> Result<CellState> {
    let mut z = Vec::with_capacity(x.len() + prev.h.len());
    z.extend_from_slice(x);
    z.extend_from_slice(&prev.h);
    Ok(lstm_core(&z, &prev.c, p)?.0)
}

// ---------------------------------------------------------------------------
// Tightly coupled cell
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TcCache {
    pub z: Vec<f64>,
    pub c_down: Vec<f64>,
    pub c_left: Vec<f64>,
    pub cbar: Vec<f64>,
    pub o: Vec<f64>,
    pub i: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Tightly coupled update on `z = [x; y; h_down; h_left]` where `down` is
/// position (i, j-1) and `left` is (i-1, j). The memory combines both
/// predecessors through the two forget gates.
pub fn tc_core(
    z: &[f64],
    c_down: &[f64],
    c_left: &[f64],
    p: &TcParams,
) -> Result<(CellState, TcCache)> {
    check_in_dim("tc_core input", p.in_dim(), z.len())?;
    check_in_dim("tc_core memory", p.units(), c_down.len())?;
    check_in_dim("tc_core memory", p.units(), c_left.len())?;
    let d = p.units();
    let pre = affine(&p.w, &p.b, z);
    let cbar: Vec<f64> = pre[0..d].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = pre[d..2 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let i: Vec<f64> = pre[2 * d..3 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let f1: Vec<f64> = pre[3 * d..4 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let f2: Vec<f64> = pre[4 * d..5 * d].iter().map(|&v| sigmoid_scalar(v)).collect();
    let mut c = vec![0.0; d];
    let mut tanh_c = vec![0.0; d];
    let mut h = vec![0.0; d];
    for k in 0..d {
        c[k] = cbar[k] * i[k] + c_down[k] * f1[k] + c_left[k] * f2[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    Ok((
        CellState { h, c: c.clone() },
        TcCache {
            z: z.to_vec(),
            c_down: c_down.to_vec(),
            c_left: c_left.to_vec(),
            cbar,
            o,
            i,
            f1,
            f2,
            c,
            tanh_c,
        },
    ))
}

/// Backward of `tc_core`; returns `(dz, dc_down, dc_left)`.
pub fn tc_core_backward(
    cache: &TcCache,
    p: &TcParams,
    dh: &[f64],
    dc_in: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = p.units();
    let in_dim = p.in_dim();
    let mut dpre = vec![0.0; 5 * d];
    let mut dc_down = vec![0.0; d];
    let mut dc_left = vec![0.0; d];
    for k in 0..d {
        let dc = dc_in[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        let d_o = dh[k] * cache.tanh_c[k];
        let d_cbar = dc * cache.i[k];
        let d_i = dc * cache.cbar[k];
        let d_f1 = dc * cache.c_down[k];
        let d_f2 = dc * cache.c_left[k];
        dc_down[k] = dc * cache.f1[k];
        dc_left[k] = dc * cache.f2[k];
        dpre[k] = d_cbar * (1.0 - cache.cbar[k] * cache.cbar[k]);
        dpre[d + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
        dpre[2 * d + k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
        dpre[3 * d + k] = d_f1 * cache.f1[k] * (1.0 - cache.f1[k]);
        dpre[4 * d + k] = d_f2 * cache.f2[k] * (1.0 - cache.f2[k]);
    }
    let mut dz = vec![0.0; in_dim];
    let wd = p.w.data();
    for r in 0..5 * d {
        let g = dpre[r];
        db[r] += g;
        let row = &wd[r * in_dim..(r + 1) * in_dim];
        let drow = &mut dw[r * in_dim..(r + 1) * in_dim];
        for k in 0..in_dim {
            drow[k] += g * cache.z[k];
            dz[k] += row[k] * g;
        }
    }
    (dz, dc_down, dc_left)
}

/// Tightly coupled step. `left` is the state at (i-1, j), `down` at (i, j-1);
/// grid boundaries pass the zero state.
pub fn tc_step(
    left: &CellState,
    down: &CellState,
    x: &[f64],
    y: &[f64],
    p: &TcParams,
) -> Result<CellState> {
    let mut z = Vec::with_capacity(x.len() + y.len() + down.h.len() + left.h.len());
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    z.extend_from_slice(&down.h);
    z.extend_from_slice(&left.h);
    Ok(tc_core(&z, &down.c, &left.c, p)?.0)
}

// ---------------------------------------------------------------------------
// Loosely coupled cell
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LcCache {
    pub first: LstmCache,
    pub second: LstmCache,
}

/// Loosely coupled step. The first LSTM reads `x` plus both hidden states of
/// the `left` predecessor (i-1, j) and the first memory; the second LSTM
/// reads `y` plus both hidden states of the `down` predecessor (i, j-1) and
/// the second memory.
pub fn lc_step(
    left: &LcState,
    down: &LcState,
    x: &[f64],
    y: &[f64],
    p: &LcParams,
) -> Result<LcState> {
    Ok(lc_step_cached(left, down, x, y, p)?.0)
}

pub fn lc_step_cached(
    left: &LcState,
    down: &LcState,
    x: &[f64],
    y: &[f64],
    p: &LcParams,
) -> Result<(LcState, LcCache)> {
    let d = p.units();
    let mut z1 = Vec::with_capacity(x.len() + 2 * d);
    z1.extend_from_slice(x);
    z1.extend_from_slice(&left.first.h);
    z1.extend_from_slice(&left.second.h);
    let (first, cache1) = lstm_core(&z1, &left.first.c, &p.lstm1)?;

    let mut z2 = Vec::with_capacity(y.len() + 2 * d);
    z2.extend_from_slice(y);
    z2.extend_from_slice(&down.first.h);
    z2.extend_from_slice(&down.second.h);
    let (second, cache2) = lstm_core(&z2, &down.second.c, p.second())?;

    Ok((
        LcState { first, second },
        LcCache {
            first: cache1,
            second: cache2,
        },
    ))
}
