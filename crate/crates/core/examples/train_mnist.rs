//! Trains one variant on row-sequential MNIST.
//!
//! ```text
//! cargo run --release --example train_mnist -- DATA_DIR [VARIANT] [EPOCHS]
//! ```

use slstm::cli::load_datasets;
use slstm::mnist::NUM_CLASSES;
use slstm::{TrainConfig, Trainer, Variant};

fn main() -> slstm::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let variant: Variant = args.next().as_deref().unwrap_or("lstm3").parse()?;
    let epochs = args.next().map_or(5, |s| s.parse().expect("epochs"));

    let (train, test) = load_datasets(dir.as_ref(), 10_000, 2_000, 0)?;
    let config = TrainConfig {
        variant,
        epochs,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, train.width(), NUM_CLASSES)?;
    let log = trainer.fit(&train, &test, |r| {
        println!(
            "epoch {:>2}  train acc {:.4}  test acc {:.4}  {:.1}s",
            r.epoch, r.train_acc, r.test_acc, r.seconds
        );
    })?;
    if let Some((epoch, acc)) = log.best_test_accuracy() {
        println!("best test accuracy {acc:.4} at epoch {epoch}");
    }
    print!("{}", log.to_csv(true));
    Ok(())
}
