//! Writes the built-in scenario presets as TOML files, so the checked-in
//! copies under `scenarios/` can be regenerated when the presets change:
//!
//! ```sh
//! cargo run -p vsl-core --example export_scenarios -- scenarios
//! ```

use std::path::PathBuf;

use vsl_core::scenario::{corridor_34, desk_train, full_scale};

fn main() -> vsl_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios".into()));
    std::fs::create_dir_all(&dir)?;
    for sc in [desk_train(), corridor_34(), full_scale()] {
        let path = dir.join(format!("{}.toml", sc.name));
        sc.save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
