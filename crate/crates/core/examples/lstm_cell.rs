//! Steps one LSTM cell over a short random sequence and prints the states.

use attentive_lstm::autodiff::{ParamStore, Tape};
use attentive_lstm::recurrent::{cell_step, InitScheme, LayerState, LstmCellParams};
use attentive_lstm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> attentive_lstm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let cell = LstmCellParams::register(&mut store, "cell", 3, 4, &InitScheme::default(), &mut rng)?;

    let mut tape = Tape::new();
    let mut state = LayerState {
        h: tape.constant(Tensor::zeros(&[4]))?,
        c: tape.constant(Tensor::zeros(&[4]))?,
    };
    for t in 0..5 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = tape.constant(Tensor::vector(x))?;
        state = cell_step(&mut tape, &store, &cell, x, &state)?;
        println!("t={t} h={:.4?} c={:.4?}", tape.value(state.h).data(), tape.value(state.c).data());
    }
    Ok(())
}
