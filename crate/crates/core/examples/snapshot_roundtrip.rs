//! Saves an initialized cell to disk, reads it back and compares bit patterns.

use slstm::params::ParamSet;
use slstm::snapshot::{load_cell, save_cell};
use slstm::{CellParams, Variant};

fn main() -> slstm::Result<()> {
    let dir = std::env::temp_dir();
    for v in Variant::ALL {
        let cell = CellParams::init(v, 28, 100, 7)?;
        let path = dir.join(format!("slstm_{}.bin", v.name().to_lowercase()));
        save_cell(&cell, &path)?;
        let back = load_cell(&path)?;
        let same = cell
            .flatten()
            .iter()
            .zip(back.flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let bytes = std::fs::metadata(&path)?.len();
        println!("{:<6} {:>7} bytes  identical: {same}", v.name(), bytes);
        std::fs::remove_file(&path)?;
    }
    Ok(())
}
