//! Builds a small expression on the tape and compares its gradient with a
//! central difference.

use attentive_lstm::autodiff::{ParamStore, Tape};
use attentive_lstm::Tensor;

fn loss(store: &ParamStore<f64>) -> attentive_lstm::Result<(Tape<f64>, attentive_lstm::autodiff::Var)> {
    let mut tape = Tape::new();
    let w = tape.param(store, store.id("w").unwrap());
    let x = tape.constant(Tensor::vector(vec![0.5, -1.0, 2.0]))?;
    let wx = tape.matmul(w, x)?;
    let h = tape.tanh(wx)?;
    let y = tape.sum(h)?;
    Ok((tape, y))
}

fn main() -> attentive_lstm::Result<()> {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.0, -0.5])?)?;

    let (tape, y) = loss(&store)?;
    println!("y = {:.6} ({} tape nodes)", tape.value(y).item(), tape.len());
    tape.backward(y, &mut store)?;

    let eps = 1e-6;
    for i in 0..6 {
        let base = store.value(w).data()[i];
        store.get_mut(w).value.data_mut()[i] = base + eps;
        let plus = loss(&store).map(|(t, y)| t.value(y).item())?;
        store.get_mut(w).value.data_mut()[i] = base - eps;
        let minus = loss(&store).map(|(t, y)| t.value(y).item())?;
        store.get_mut(w).value.data_mut()[i] = base;
        println!(
            "dy/dw[{i}] analytic {:+.8} numeric {:+.8}",
            store.get(w).grad.data()[i],
            (plus - minus) / (2.0 * eps)
        );
    }
    Ok(())
}
