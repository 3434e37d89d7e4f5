//! Central-difference check of the analytic gradients over every variant and
//! activation.

use slstm::cli::run_grad_check;
use slstm::gradcheck::SweepConfig;

fn main() -> slstm::Result<()> {
    let instances = std::env::args()
        .nth(1)
        .map_or(20, |s| s.parse().expect("instances"));
    let cfg = SweepConfig {
        instances,
        ..SweepConfig::default()
    };
    let (ok, _) = run_grad_check(&cfg, &mut std::io::stdout())?;
    std::process::exit(if ok { 0 } else { 4 });
}
