//! The N-fold superposition layer on a hand-sized stack: forward,
//! backward and the parameter cost of fixed vs trainable coefficients.

use nsfold::nsfold::{ns_backward, ns_forward, ns_param_count, NsLayer, NsMode};
use nsfold::tensor::Tensor;

fn main() -> nsfold::error::Result<()> {
    // four 1x1 maps, two folds, beta = [1, 2]
    let fms = Tensor::new(vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0])?;
    let mut layer = NsLayer::new(4, 2, vec![1.0, 2.0], NsMode::Trainable)?;
    let out = ns_forward(&fms, &mut layer)?;
    println!("superposed and replicated: {:?}", out.data());

    let upstream = Tensor::row(&[1.0, 0.0, 0.0, 1.0])?;
    let grads = ns_backward(&upstream, &mut layer)?;
    println!("grad wrt maps: {:?}", grads.fms.data());
    println!("grad wrt beta: {:?}", grads.beta.unwrap_or_default());

    for mode in [NsMode::Fixed, NsMode::Trainable] {
        let l = NsLayer::uniform(64, 4, 0.25, mode)?;
        println!("{mode:?} 4-fold over 64 maps adds {} parameters", ns_param_count(&l));
    }
    Ok(())
}
