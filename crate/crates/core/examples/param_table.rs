//! Prints parameter counts for every variant, for MNIST rows by default or for
//! dimensions given as `INPUT HIDDEN OUTPUT`.

use slstm::{param_count, Variant};

fn main() {
    let dims: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("dimensions must be integers"))
        .collect();
    let (input, hidden, output) = match dims.as_slice() {
        [] => (28, 100, 10),
        [i, h, o] => (*i, *h, *o),
        _ => panic!("usage: param_table [INPUT HIDDEN OUTPUT]"),
    };
    let full = param_count(Variant::Lstm, input, hidden, output);
    println!("{:<6} {:>9} {:>7}", "cell", "params", "of LSTM");
    for v in Variant::ALL {
        let n = param_count(v, input, hidden, output);
        println!(
            "{:<6} {:>9} {:>6.1}%",
            v.name(),
            n,
            100.0 * n as f64 / full as f64
        );
    }
}
