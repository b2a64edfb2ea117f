//! Tour of the tensor engine: building graphs, running backward, and
//! checking a gradient against central finite differences.
//!
//!     cargo run --example autodiff_basics

use rafa::gradcheck::gradient_check;
use rafa::tensor::Tensor;

fn main() -> rafa::Result<()> {
    // A scalar chain: loss = sum((x * x) + x).
    let x = Tensor::param(vec![3], vec![1.0, -2.0, 0.5])?;
    let loss = x.mul(&x)?.add(&x)?.sum();
    loss.backward()?;
    println!("x        = {:?}", x.to_vec());
    println!("d loss/dx = {:?} (expected 2x + 1)", x.grad_vec().unwrap());

    // Fan-out shares one node, so gradients accumulate: y = x + x.
    let x = Tensor::param(vec![1], vec![3.0])?;
    let y = x.add(&x)?;
    y.backward()?;
    println!("fan-out grad = {:?} (expected [2])", x.grad_vec().unwrap());

    // Matrix product with a softmax head, checked against the
    // finite-difference oracle.
    let w = Tensor::param(vec![2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6])?;
    let input = Tensor::new(vec![1, 2], vec![0.8, -1.1])?;
    let f = || {
        let logits = input.matmul(&w)?;
        Ok(logits.softmax_last().pick(0)?.ln_clamped(1e-12).scale(-1.0))
    };
    let report = gradient_check(f, &[("w".to_string(), w.clone())], 1e-6)?;
    println!(
        "gradient check on a softmax classifier: max rel err {:.3e}",
        report.max_rel_err()
    );
    Ok(())
}
