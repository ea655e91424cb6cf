//! Cross-correlation in both padding modes, then 2x2 max pooling with the
//! argmax it records for the backward pass.

use nsfold::tensor::{conv2d, conv2d_multi, max_pool2d, max_pool2d_backward, ConvMode, Tensor};

fn show(label: &str, t: &Tensor) {
    println!("{label} {:?}", t.shape());
    let w = *t.shape().last().unwrap();
    for row in t.data().chunks(w) {
        println!("  {row:?}");
    }
}

fn main() -> nsfold::error::Result<()> {
    let image = Tensor::new(vec![4, 4], (1..=16).map(f64::from).collect())?;
    let kernel = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    show("input", &image);
    show("valid", &conv2d(&image, &kernel, ConvMode::Valid)?);
    show("same", &conv2d(&image, &kernel, ConvMode::Same)?);

    // two output maps from a two-channel input
    let stack = Tensor::new(vec![2, 4, 4], (0..32).map(|v| (v % 7) as f64).collect())?;
    let kernels = Tensor::filled(&[2, 2, 3, 3], 0.1);
    let maps = conv2d_multi(&stack, &kernels, ConvMode::Same)?;
    println!("multi-channel output {:?}", maps.shape());

    let pooled = max_pool2d(&image.clone().reshape(&[1, 4, 4])?)?;
    show("pooled", &pooled.output.clone().reshape(&[2, 2])?);
    println!("argmax {:?}", pooled.argmax);
    let grad = max_pool2d_backward(&Tensor::filled(&[1, 2, 2], 1.0), &pooled.argmax, &[1, 4, 4])?;
    show("pool gradient", &grad.reshape(&[4, 4])?);
    Ok(())
}
