//! Writes a tiny dataset as IDX files, parses it back, and shows the PGM
//! encoding of a 3x2 plane byte by byte.

use nsfold::data::{load_mnist, write_mnist, Dataset};
use nsfold::features::pgm_bytes;

fn main() -> nsfold::error::Result<()> {
    let images: Vec<f64> = (0..2 * 9).map(|v| (v * 15) as f64 / 255.0).collect();
    let ds = Dataset::new("tiny", images, vec![3, 7], (1, 3, 3))?;
    let dir = std::env::temp_dir();
    let (ip, lp) = (dir.join("nsfold-tiny-images-idx3"), dir.join("nsfold-tiny-labels-idx1"));
    write_mnist(&ds, &ip, &lp)?;
    let raw = std::fs::read(&ip).map_err(|e| nsfold::error::Error::Io { path: Some(ip.clone()), source: e })?;
    println!("IDX image header: {:02x?}", &raw[..16]);
    let back = load_mnist(&ip, &lp)?;
    println!("round trip identical: {}", back.images == ds.images && back.labels == ds.labels);

    let pgm = pgm_bytes(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0])?;
    println!("PGM: {:?}", String::from_utf8_lossy(&pgm[..11]));
    println!("pixels: {:?}", &pgm[11..]);
    Ok(())
}
