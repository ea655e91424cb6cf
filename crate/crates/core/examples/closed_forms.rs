//! Closed-form weight and kernel gradients of the linear toy network against
//! backprop and finite differences, and the locality of a weight change.

use nsfold::gradcheck::verify_closed_forms;

fn main() -> nsfold::error::Result<()> {
    let report = verify_closed_forms(3, &[(2, 2), (4, 2), (4, 4), (8, 4)])?;
    println!("{report}");
    println!("all passed: {}", report.passed());
    Ok(())
}
