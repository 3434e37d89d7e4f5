//! Runs each variant over the same short input sequence and shows how the
//! reduced gates behave: LSTM3 gates are constant, LSTM5 embeds exactly into
//! a full LSTM.

use slstm::numkit::ActivationKind;
use slstm::{forward_sequence, step, CellParams, CellState, Variant};

fn main() -> slstm::Result<()> {
    let (input, hidden) = (4, 3);
    let xs: Vec<Vec<f64>> = (0..5)
        .map(|t| {
            (0..input)
                .map(|j| ((t * input + j) as f64 * 0.37).sin())
                .collect()
        })
        .collect();

    for v in Variant::ALL {
        let p = CellParams::init(v, input, hidden, 42)?;
        let (last, caches) =
            forward_sequence(&p, ActivationKind::Tanh, &xs, &CellState::zeros(hidden))?;
        println!("{:<6} h_T = {:?}", v.name(), last.h);
        println!("       input gate at t=0: {:?}", caches[0].i);
    }

    // LSTM3 gates depend only on the bias
    let p = CellParams::init(Variant::Lstm3, input, hidden, 1)?;
    let (_, a) = step(&p, ActivationKind::Tanh, &xs[0], &CellState::zeros(hidden))?;
    let (_, b) = step(&p, ActivationKind::Tanh, &xs[4], &CellState::zeros(hidden))?;
    println!(
        "LSTM3 gates equal across inputs: {}",
        a.i == b.i && a.f == b.f && a.o == b.o
    );

    let small = CellParams::init(Variant::Lstm5, input, hidden, 3)?;
    let full = small.embed_in_full_lstm();
    let (hs, _) = forward_sequence(&small, ActivationKind::Tanh, &xs, &CellState::zeros(hidden))?;
    let (hf, _) = forward_sequence(&full, ActivationKind::Tanh, &xs, &CellState::zeros(hidden))?;
    let gap =
        hs.h.iter()
            .zip(hf.h.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
    println!("LSTM5 vs embedded LSTM, max |Δh| = {gap:e}");
    Ok(())
}
