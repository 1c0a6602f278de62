use rand_chacha::ChaCha20Rng;

use super::store::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumResult;

/// Which recurrent cell a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Option<CellKind> {
        match s {
            "gru" => Some(CellKind::Gru),
            "lstm" => Some(CellKind::Lstm),
            _ => None,
        }
    }
}

/// Recurrent state of one cell as tape nodes: hidden vector always, memory
/// cell only for LSTM.
#[derive(Debug, Clone, Copy)]
pub struct RecurrentState {
    pub h: Var,
    pub c: Option<Var>,
}

/// LSTM cell with combined bias and learned initial state.
///
/// Gate layout in the stacked `4h` pre-activation is input, forget,
/// candidate, output. With all-zero parameters and inputs both outputs are
/// all zeros (candidate tanh(0) = 0 kills the update).
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_ih: ParamId, // [4h, input]
    w_hh: ParamId, // [4h, h]
    b: ParamId,    // [4h]
    h0: ParamId,   // [h]
    c0: ParamId,   // [h]
    input: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> NumResult<Self> {
        Ok(LstmCell {
            w_ih: store.add_matrix(&format!("{prefix}.w_ih"), 4 * hidden, input, rng)?,
            w_hh: store.add_matrix(&format!("{prefix}.w_hh"), 4 * hidden, hidden, rng)?,
            b: store.add_zero_vector(&format!("{prefix}.b"), 4 * hidden)?,
            h0: store.add_zero_vector(&format!("{prefix}.h0"), hidden)?,
            c0: store.add_zero_vector(&format!("{prefix}.c0"), hidden)?,
            input,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// Learned initial state.
    pub fn initial_state(&self, tape: &mut Tape) -> RecurrentState {
        let h = tape.param(self.h0);
        let c = tape.param(self.c0);
        RecurrentState { h, c: Some(c) }
    }

    /// One step. `state.c` must be present (LSTM state carries a memory
    /// cell); `x` must have length `input`.
    pub fn step(&self, tape: &mut Tape, state: &RecurrentState, x: Var) -> NumResult<RecurrentState> {
        let h = self.hidden;
        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let b = tape.param(self.b);
        let c_prev = state.c.expect("LSTM state requires a memory cell");

        let gi = tape.affine(w_ih, x, b)?;
        let gh = tape.matvec(w_hh, state.h)?;
        let gates = tape.add(gi, gh)?;

        let i_pre = tape.slice(gates, 0, h)?;
        let f_pre = tape.slice(gates, h, h)?;
        let g_pre = tape.slice(gates, 2 * h, h)?;
        let o_pre = tape.slice(gates, 3 * h, h)?;

        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);

        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        let h_new = tape.mul(o, c_act)?;
        Ok(RecurrentState {
            h: h_new,
            c: Some(c),
        })
    }
}

/// GRU cell with separate input-side and hidden-side biases (the reset gate
/// multiplies the hidden-side candidate contribution including its bias) and
/// a learned initial state.
///
/// Gate layout in the stacked `3h` pre-activation is reset, update,
/// candidate. With all-zero parameters and inputs, the update gate sits at
/// 0.5 and the candidate at 0, so one step halves the previous hidden state.
#[derive(Debug, Clone)]
pub struct GruCell {
    w_ih: ParamId, // [3h, input]
    w_hh: ParamId, // [3h, h]
    b_ih: ParamId, // [3h]
    b_hh: ParamId, // [3h]
    h0: ParamId,   // [h]
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> NumResult<Self> {
        Ok(GruCell {
            w_ih: store.add_matrix(&format!("{prefix}.w_ih"), 3 * hidden, input, rng)?,
            w_hh: store.add_matrix(&format!("{prefix}.w_hh"), 3 * hidden, hidden, rng)?,
            b_ih: store.add_zero_vector(&format!("{prefix}.b_ih"), 3 * hidden)?,
            b_hh: store.add_zero_vector(&format!("{prefix}.b_hh"), 3 * hidden)?,
            h0: store.add_zero_vector(&format!("{prefix}.h0"), hidden)?,
            input,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn initial_state(&self, tape: &mut Tape) -> RecurrentState {
        let h = tape.param(self.h0);
        RecurrentState { h, c: None }
    }

    pub fn step(&self, tape: &mut Tape, state: &RecurrentState, x: Var) -> NumResult<RecurrentState> {
        let h = self.hidden;
        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let b_ih = tape.param(self.b_ih);
        let b_hh = tape.param(self.b_hh);

        let gi = tape.affine(w_ih, x, b_ih)?;
        let gh = tape.affine(w_hh, state.h, b_hh)?;

        let r_pre = {
            let a = tape.slice(gi, 0, h)?;
            let b = tape.slice(gh, 0, h)?;
            tape.add(a, b)?
        };
        let z_pre = {
            let a = tape.slice(gi, h, h)?;
            let b = tape.slice(gh, h, h)?;
            tape.add(a, b)?
        };
        let r = tape.sigmoid(r_pre);
        let z = tape.sigmoid(z_pre);

        let n_pre = {
            let a = tape.slice(gi, 2 * h, h)?;
            let b = tape.slice(gh, 2 * h, h)?;
            let gated = tape.mul(r, b)?;
            tape.add(a, gated)?
        };
        let n = tape.tanh(n_pre);

        // h' = (1 - z) * n + z * h_prev
        let ones = tape.input(Tensor::vector(vec![1.0; h]));
        let neg_z = tape.scale(z, -1.0);
        let one_minus_z = tape.add(ones, neg_z)?;
        let fresh = tape.mul(one_minus_z, n)?;
        let kept = tape.mul(z, state.h)?;
        let h_new = tape.add(fresh, kept)?;
        Ok(RecurrentState { h: h_new, c: None })
    }
}

/// A GRU or LSTM cell behind one interface, so sequence models can switch
/// cell type by configuration.
#[derive(Debug, Clone)]
pub enum RecurrentCell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl RecurrentCell {
    pub fn new(
        kind: CellKind,
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> NumResult<Self> {
        Ok(match kind {
            CellKind::Gru => RecurrentCell::Gru(GruCell::new(store, rng, prefix, input, hidden)?),
            CellKind::Lstm => {
                RecurrentCell::Lstm(LstmCell::new(store, rng, prefix, input, hidden)?)
            }
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            RecurrentCell::Gru(_) => CellKind::Gru,
            RecurrentCell::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.hidden(),
            RecurrentCell::Lstm(c) => c.hidden(),
        }
    }

    pub fn input(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.input(),
            RecurrentCell::Lstm(c) => c.input(),
        }
    }

    pub fn initial_state(&self, tape: &mut Tape) -> RecurrentState {
        match self {
            RecurrentCell::Gru(c) => c.initial_state(tape),
            RecurrentCell::Lstm(c) => c.initial_state(tape),
        }
    }

    pub fn step(&self, tape: &mut Tape, state: &RecurrentState, x: Var) -> NumResult<RecurrentState> {
        match self {
            RecurrentCell::Gru(c) => c.step(tape, state, x),
            RecurrentCell::Lstm(c) => c.step(tape, state, x),
        }
    }
}
