use rand::Rng;

use super::{ParamId, ParamStore, Real, Tape, TensorError, Var};

/// Weights of one LSTM: a fused `[4h, input + h]` gate matrix (gate order
/// input, forget, cell, output) and a `[4h]` bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn register<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(
            &format!("{prefix}.weight"),
            vec![4 * hidden_size, input_size + hidden_size],
            rng,
        );
        let bias = store.add_zeros(&format!("{prefix}.bias"), vec![4 * hidden_size]);
        LstmParams {
            weight,
            bias,
            input_size,
            hidden_size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<S: Real>(tape: &mut Tape<'_, S>, hidden_size: usize) -> Self {
        LstmState {
            h: tape.constant(vec![S::zero(); hidden_size]),
            c: tape.constant(vec![S::zero(); hidden_size]),
        }
    }
}

/// One LSTM step.
pub fn lstm_cell<S: Real>(
    tape: &mut Tape<'_, S>,
    x: Var,
    state: LstmState,
    params: &LstmParams,
) -> Result<LstmState, TensorError> {
    let w = tape.param(params.weight);
    let b = tape.param(params.bias);
    let xh = tape.concat(&[x, state.h])?;
    let pre = tape.matmul(w, xh)?;
    let pre = tape.add(pre, b)?;
    let gates = tape.split(pre, 4)?;
    if tape.shape(state.c) != tape.shape(gates[0]) {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_cell",
            left: tape.shape(state.c).to_vec(),
            right: tape.shape(gates[0]).to_vec(),
        });
    }
    let i = tape.sigmoid(gates[0])?;
    let f = tape.sigmoid(gates[1])?;
    let g = tape.tanh(gates[2])?;
    let o = tape.sigmoid(gates[3])?;
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}
