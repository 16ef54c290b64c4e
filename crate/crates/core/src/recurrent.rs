//! LSTM cells, layer stacking and directional sequence execution.
//!
//! Gate equations per time step, with `x` the layer input and `h`, `c` the
//! previous hidden and cell state:
//!
//! ```text
//! i = σ(W_xi x + W_hi h + b_i)
//! f = σ(W_xf x + W_hf h + b_f)
//! o = σ(W_xo x + W_ho h + b_o)
//! g = tanh(W_xc x + W_hc h + b_c)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Gate order used for every per-gate array below.
pub const GATES: [&str; 4] = ["i", "f", "o", "c"];
const FORGET: usize = 1;

/// Weight initialisation: Glorot-uniform weights, zero biases except the forget gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub forget_bias: f64,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self { forget_bias: 1.0 }
    }
}

pub(crate) fn glorot<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

/// Parameters of one LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `W_x{i,f,o,c}`, each `hidden × input`.
    pub w_x: [ParamId; 4],
    /// `W_h{i,f,o,c}`, each `hidden × hidden`.
    pub w_h: [ParamId; 4],
    /// `b_{i,f,o,c}`, each of extent `hidden`.
    pub b: [ParamId; 4],
}

impl LstmCellParams {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        init: &InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::contract("LSTM sizes must be positive"));
        }
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            w_x.push(store.add(
                format!("{prefix}.w_x{gate}"),
                glorot(rng, hidden_size, input_size),
            )?);
            w_h.push(store.add(
                format!("{prefix}.w_h{gate}"),
                glorot(rng, hidden_size, hidden_size),
            )?);
        }
        for (g, gate) in GATES.iter().enumerate() {
            let fill = if g == FORGET { init.forget_bias } else { 0.0 };
            b.push(store.add(
                format!("{prefix}.b_{gate}"),
                Tensor::full(&[hidden_size], T::from_f64(fill)),
            )?);
        }
        Ok(Self {
            input_size,
            hidden_size,
            w_x: w_x.try_into().unwrap(),
            w_h: w_h.try_into().unwrap(),
            b: b.try_into().unwrap(),
        })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w_x.iter().chain(&self.w_h).chain(&self.b).copied()
    }
}

/// Hidden and cell state of one layer, as tape variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerState {
    pub h: Var,
    pub c: Var,
}

/// Per-layer states of a stack, bottom layer first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

impl LstmState {
    pub fn zeros<T: Real>(tape: &mut Tape<T>, sizes: &[usize]) -> Result<Self> {
        let layers = sizes
            .iter()
            .map(|&p| {
                Ok(LayerState {
                    h: tape.constant(Tensor::zeros(&[p]))?,
                    c: tape.constant(Tensor::zeros(&[p]))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Every intermediate of one cell step.
#[derive(Debug, Clone, Copy)]
pub struct CellTrace {
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub modulation: Var,
    pub state: LayerState,
}

fn expect_shape<T: Real>(tape: &Tape<T>, v: Var, extent: usize, op: &'static str) -> Result<()> {
    if tape.shape(v) != [extent] {
        return Err(Error::dim(op, tape.shape(v), &[extent]));
    }
    Ok(())
}

/// One LSTM step, returning the gates alongside the new state.
pub fn cell_step_traced<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &LstmCellParams,
    x: Var,
    prev: &LayerState,
) -> Result<CellTrace> {
    expect_shape(tape, x, params.input_size, "cell_step")?;
    expect_shape(tape, prev.h, params.hidden_size, "cell_step")?;
    expect_shape(tape, prev.c, params.hidden_size, "cell_step")?;

    let mut pre = [x; 4];
    for g in 0..4 {
        let wx = tape.param(store, params.w_x[g]);
        let wh = tape.param(store, params.w_h[g]);
        let b = tape.param(store, params.b[g]);
        let from_x = tape.matmul(wx, x)?;
        let from_h = tape.matmul(wh, prev.h)?;
        let sum = tape.add(from_x, from_h)?;
        pre[g] = tape.add(sum, b)?;
    }
    let input_gate = tape.sigmoid(pre[0])?;
    let forget_gate = tape.sigmoid(pre[1])?;
    let output_gate = tape.sigmoid(pre[2])?;
    let modulation = tape.tanh(pre[3])?;

    let keep = tape.hadamard(forget_gate, prev.c)?;
    let write = tape.hadamard(input_gate, modulation)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c)?;
    let h = tape.hadamard(output_gate, squashed)?;
    Ok(CellTrace {
        input_gate,
        forget_gate,
        output_gate,
        modulation,
        state: LayerState { h, c },
    })
}

pub fn cell_step<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &LstmCellParams,
    x: Var,
    prev: &LayerState,
) -> Result<LayerState> {
    cell_step_traced(tape, store, params, x, prev).map(|t| t.state)
}

/// Layers where the input of layer `l > 0` is the hidden state of layer `l - 1`.
#[derive(Debug, Clone)]
pub struct StackedLstm {
    pub layers: Vec<LstmCellParams>,
}

impl StackedLstm {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        depth: usize,
        init: &InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::contract("stack depth must be at least 1"));
        }
        let layers = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { input_size } else { hidden_size };
                LstmCellParams::register(store, &format!("{prefix}.l{l}"), d_in, hidden_size, init, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    pub fn zero_state<T: Real>(&self, tape: &mut Tape<T>) -> Result<LstmState> {
        let sizes: Vec<usize> = self.layers.iter().map(|l| l.hidden_size).collect();
        LstmState::zeros(tape, &sizes)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| l.param_ids())
    }
}

/// Applies every layer of `stack` once, returning the top hidden state.
pub fn stacked_step<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    stack: &StackedLstm,
    x: Var,
    prev: &LstmState,
) -> Result<(Var, LstmState)> {
    if prev.depth() != stack.depth() {
        return Err(Error::contract(format!(
            "state has {} layers, stack has {}",
            prev.depth(),
            stack.depth()
        )));
    }
    let mut input = x;
    let mut layers = Vec::with_capacity(stack.depth());
    for (params, state) in stack.layers.iter().zip(&prev.layers) {
        let next = cell_step(tape, store, params, input, state)?;
        input = next.h;
        layers.push(next);
    }
    Ok((input, LstmState { layers }))
}

/// A recurrent step function that [`run_sequence`] can drive.
pub trait SequenceStep<T: Real> {
    fn step(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        prev: &LstmState,
    ) -> Result<(Var, LstmState)>;
}

impl<T: Real> SequenceStep<T> for StackedLstm {
    fn step(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        prev: &LstmState,
    ) -> Result<(Var, LstmState)> {
        stacked_step(tape, store, self, x, prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Order {
    #[default]
    Forward,
    Reversed,
}

impl Order {
    /// Input positions in consumption order.
    pub fn indices(self, n: usize) -> Vec<usize> {
        match self {
            Order::Forward => (0..n).collect(),
            Order::Reversed => (0..n).rev().collect(),
        }
    }
}

/// Runs `step` over `inputs` in the given order from `init`.
///
/// `outputs[k]` is the top hidden state after the k-th consumed input, and the
/// returned state follows the last consumed input.
pub fn run_sequence<T: Real, S: SequenceStep<T> + ?Sized>(
    step: &S,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    inputs: &[Var],
    init: LstmState,
    order: Order,
) -> Result<(Vec<Var>, LstmState)> {
    if inputs.is_empty() {
        return Err(Error::contract("run_sequence needs at least one input"));
    }
    let mut state = init;
    let mut outputs = Vec::with_capacity(inputs.len());
    for idx in order.indices(inputs.len()) {
        let (out, next) = step.step(tape, store, inputs[idx], &state)?;
        outputs.push(out);
        state = next;
    }
    Ok((outputs, state))
}

/// Maps a stack state of one hidden size onto another, layer by layer.
#[derive(Debug, Clone)]
pub enum StateProjection {
    Identity,
    /// Per layer, `(P_h, P_c)`, each `to × from`.
    Linear(Vec<(ParamId, ParamId)>),
}

impl StateProjection {
    /// Identity (no parameters) when the sizes agree, otherwise learned matrices.
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        from: usize,
        to: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if from == to {
            return Ok(StateProjection::Identity);
        }
        let layers = (0..depth)
            .map(|l| {
                Ok((
                    store.add(format!("{prefix}.l{l}.p_h"), glorot(rng, to, from))?,
                    store.add(format!("{prefix}.l{l}.p_c"), glorot(rng, to, from))?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(StateProjection::Linear(layers))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            StateProjection::Identity => Vec::new(),
            StateProjection::Linear(layers) => layers.iter().flat_map(|&(h, c)| [h, c]).collect(),
        }
    }
}

/// `h' = P_h h`, `c' = P_c c` per layer; passthrough for [`StateProjection::Identity`].
pub fn project_state<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    proj: &StateProjection,
    src: &LstmState,
) -> Result<LstmState> {
    match proj {
        StateProjection::Identity => Ok(src.clone()),
        StateProjection::Linear(layers) => {
            if layers.len() != src.depth() {
                return Err(Error::contract(format!(
                    "projection has {} layers, state has {}",
                    layers.len(),
                    src.depth()
                )));
            }
            let projected = layers
                .iter()
                .zip(&src.layers)
                .map(|(&(ph, pc), s)| {
                    let ph = tape.param(store, ph);
                    let pc = tape.param(store, pc);
                    Ok(LayerState {
                        h: tape.matmul(ph, s.h)?,
                        c: tape.matmul(pc, s.c)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(LstmState { layers: projected })
        }
    }
}
