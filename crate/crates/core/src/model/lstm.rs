//! Layer-normalized LSTM cell:
//!
//! ```text
//! a  = LN(W_x·x; g_x) + LN(W_h·h; g_h) + b        (gates i, f, g, o)
//! c' = σ(f)⊙c + σ(i)⊙tanh(g)
//! h' = σ(o)⊙tanh(LN(c'; g_c, b_c))
//! ```

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, matvec};
use crate::tensor::{Real, Tape, Var};

/// Borrowed weights of one layer, for the eager path.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    pub hidden: usize,
    pub input: usize,
    /// `[4H × input]`
    pub w_x: &'a [T],
    /// `[4H × H]`
    pub w_h: &'a [T],
    pub b: &'a [T],
    pub ln_x_gain: &'a [T],
    pub ln_h_gain: &'a [T],
    pub ln_c_gain: &'a [T],
    pub ln_c_bias: &'a [T],
}

/// Hidden and cell vectors of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LayerState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LayerState {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// One eager step of the cell.
pub fn lstm_cell<T: Real>(x: &[T], state: &LayerState<T>, w: &LstmWeights<'_, T>) -> Result<LayerState<T>> {
    let h = w.hidden;
    if x.len() != w.input {
        return Err(Error::shape("lstm_cell", &[x.len()], &[4 * h, w.input]));
    }
    if state.h.len() != h || state.c.len() != h {
        return Err(Error::shape("lstm_cell", &[state.h.len(), state.c.len()], &[h, h]));
    }
    let (ax, _) = kernels::layer_norm(&matvec(w.w_x, 4 * h, w.input, x), w.ln_x_gain, None);
    let (ah, _) = kernels::layer_norm(&matvec(w.w_h, 4 * h, h, &state.h), w.ln_h_gain, None);
    let a: Vec<T> = ax.iter().zip(&ah).zip(w.b).map(|((&p, &q), &b)| (p + q) + b).collect();
    let mut c = Vec::with_capacity(h);
    for j in 0..h {
        let i_gate = kernels::sigmoid(a[j]);
        let f_gate = kernels::sigmoid(a[h + j]);
        let g_gate = a[2 * h + j].tanh();
        c.push(f_gate * state.c[j] + i_gate * g_gate);
    }
    let (cn, _) = kernels::layer_norm(&c, w.ln_c_gain, Some(w.ln_c_bias));
    let hv = (0..h).map(|j| kernels::sigmoid(a[3 * h + j]) * cn[j].tanh()).collect();
    Ok(LayerState { h: hv, c })
}

/// Tape handles for one layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub hidden: usize,
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
    pub ln_x_gain: Var,
    pub ln_h_gain: Var,
    pub ln_c_gain: Var,
    pub ln_c_bias: Var,
}

/// The same cell recorded on a tape; returns `(h', c')`.
pub fn lstm_cell_tape<T: Real>(tape: &mut Tape<T>, x: Var, h: Var, c: Var, w: &LstmVars) -> Result<(Var, Var)> {
    let hd = w.hidden;
    let px = tape.matmul(w.w_x, x)?;
    let nx = tape.layer_norm(px, w.ln_x_gain, None)?;
    let ph = tape.matmul(w.w_h, h)?;
    let nh = tape.layer_norm(ph, w.ln_h_gain, None)?;
    let s = tape.add(nx, nh)?;
    let a = tape.add(s, w.b)?;
    let ai = tape.slice(a, 0, hd)?;
    let af = tape.slice(a, hd, hd)?;
    let ag = tape.slice(a, 2 * hd, hd)?;
    let ao = tape.slice(a, 3 * hd, hd)?;
    let i_gate = tape.sigmoid(ai);
    let f_gate = tape.sigmoid(af);
    let g_gate = tape.tanh(ag);
    let o_gate = tape.sigmoid(ao);
    let keep = tape.mul(f_gate, c)?;
    let write = tape.mul(i_gate, g_gate)?;
    let c_new = tape.add(keep, write)?;
    let cn = tape.layer_norm(c_new, w.ln_c_gain, Some(w.ln_c_bias))?;
    let ct = tape.tanh(cn);
    let h_new = tape.mul(o_gate, ct)?;
    Ok((h_new, c_new))
}
