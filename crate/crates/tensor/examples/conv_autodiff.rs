//! A tiny conv -> relu -> pool -> softmax graph: forward values, analytic
//! gradients from the tape, and a central-difference check of the same graph.
//!
//! cargo run -p pemp-tensor --example conv_autodiff

use pemp_tensor::gradcheck::{check_gradients, worst_rel_err};
use pemp_tensor::{ConvSpec, Tape, Tensor};

fn main() -> pemp_tensor::Result<()> {
    let image = Tensor::from_fn(&[1, 4, 4], |i| (1.3 * i as f64).sin());
    let kernel = Tensor::from_fn(&[2, 1, 3, 3], |i| (0.7 * i as f64 + 0.3).cos() / 2.0);
    let bias = Tensor::new(&[2], vec![0.1, -0.2])?;

    let tape = Tape::new();
    let (x, k, b) = (
        tape.constant(image.clone()),
        tape.param(kernel.clone()),
        tape.param(bias.clone()),
    );
    let y = x.conv2d(k, Some(b), ConvSpec::same(3, 1))?.relu()?.max_pool2()?;
    let probs = y.softmax(0)?;
    let loss = probs.slice(0, 0, 1)?.sum()?;
    println!("pooled features {:?}", y.value().data());
    println!("loss {:.6}", loss.value().item());
    let grads = tape.backward(loss)?;
    println!("d loss / d bias {:?}", grads.get(b).expect("bias is a param").data());

    let reports = check_gradients(&[kernel, bias], 1e-6, |tape, vars| {
        let x = tape.constant(image.clone());
        let y = x
            .conv2d(vars[0], Some(vars[1]), ConvSpec::same(3, 1))?
            .relu()?
            .max_pool2()?;
        y.softmax(0)?.slice(0, 0, 1)?.sum()
    })?;
    println!(
        "worst relative error against central differences: {:.2e}",
        worst_rel_err(&reports)
    );
    Ok(())
}
