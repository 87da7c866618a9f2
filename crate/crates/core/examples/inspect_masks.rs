//! Turn-level attention masks: the causal global mask and local windows of
//! several history lengths.
//!
//! `cargo run --example inspect_masks -- [turns]`

use dst_core::fusion::{build_mask, MaskKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let turns: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(5);
    println!("global, {turns} turns:\n{}", build_mask(turns, MaskKind::Global)?);
    for n in 1..=2 {
        let mask = build_mask(turns, MaskKind::Local(n))?;
        println!("local n={n}:\n{mask}");
        let open: Vec<usize> = (0..turns)
            .map(|i| (0..turns).filter(|&j| mask.is_open(i, j)).count())
            .collect();
        println!("open entries per row: {open:?}\n");
    }
    Ok(())
}
