//! Writes the synthetic fixture corpus: `cargo run -p proed-cli --example make_fixture -- DIR`.

use anyhow::Context;

fn main() -> anyhow::Result<()> {
    let dir = std::env::args().nth(1).context("usage: make_fixture DIR")?;
    let s = proed_cli::fixture::write_fixture(std::path::Path::new(&dir))?;
    println!("{} images written under {}", s.image_files, s.root.display());
    for (m, n, k) in &s.months {
        println!("{m}\t{k}/{n} red");
    }
    Ok(())
}
