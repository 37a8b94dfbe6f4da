//! Writes the bundled synthetic market CSVs.
//!
//! cargo run -p crashwatch --example make_fixture -- fixtures/synthetic

use std::path::PathBuf;

use crashwatch::synthetic::{fixture_market, FixtureSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/synthetic".into()));
    std::fs::create_dir_all(&dir)?;
    for series in fixture_market(&FixtureSpec::default()) {
        let path = dir.join(format!("{}.csv", series.instrument_id));
        series.write_csv(std::fs::File::create(&path)?)?;
        println!("{} ({} bars)", path.display(), series.len());
    }
    Ok(())
}
