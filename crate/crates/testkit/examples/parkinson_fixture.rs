//! Writes the raw files of the Parkinson fixture.
//!
//! ```text
//! cargo run -p cohort-testkit --example parkinson_fixture -- fixtures/parkinson
//! ```

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures/parkinson".into());
    cohort_testkit::parkinson::write(std::path::Path::new(&dir))?;
    println!("wrote {dir}");
    Ok(())
}
