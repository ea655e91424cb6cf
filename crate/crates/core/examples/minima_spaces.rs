//! Stationarity systems of the toy network before and after superposition:
//! ranks, nullities, containment and the loss at constructed points.
//!
//! `cargo run --example minima_spaces -- 8 4` picks t and N.

use nsfold::minima::{compare_minima_spaces, null_space, build_ns_system};

fn main() -> nsfold::error::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (t, n) = match args[..] {
        [t, n, ..] => (t, n),
        _ => (4, 2),
    };
    let beta: Vec<f64> = (0..n).map(|r| 0.5 + 0.3 * r as f64).collect();
    let cmp = compare_minima_spaces(t, n, &beta)?;
    println!("{cmp}");
    let basis = null_space(&build_ns_system(t, n, &beta)?);
    println!("null-space basis after NS has {} vectors of length {}", basis.len(), 11 * t);
    Ok(())
}
