//! Times one training epoch per variant on a small MNIST subset.

use slstm::cli::{bench_on, load_datasets};
use slstm::TrainConfig;

fn main() -> slstm::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/mnist".into());
    let (train, _) = load_datasets(dir.as_ref(), 1_000, 0, 0)?;
    let report = bench_on(&train, &TrainConfig::default(), 3, &mut std::io::stdout())?;
    let order: Vec<_> = report.ordering().iter().map(|v| v.name()).collect();
    println!("{}", order.join(" < "));
    Ok(())
}
