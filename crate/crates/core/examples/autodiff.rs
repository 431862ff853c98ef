//! Reverse-mode gradients and Adam on a small least-squares fit.
//!
//! `cargo run --example autodiff`

use fiat::numcore::{AdamConfig, GradTape, OptimizerState, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // y = x · [2, -3] + 0.5, eight samples.
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 4.0, (i % 3) as f64 - 1.0]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] - 3.0 * x[1] + 0.5).collect();
    let x = Tensor::from_rows(&xs)?;
    let y = Tensor::new(vec![8, 1], ys)?;

    let mut w = Tensor::zeros(&[2, 1]);
    let mut b = Tensor::zeros(&[1]);
    let mut opt = OptimizerState::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, [&w, &b]);

    for step in 0..=400 {
        let mut tape = GradTape::new();
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let (wv, bv) = (tape.param(0, &w, true), tape.param(1, &b, true));
        let pred = tape.matmul(xv, wv)?;
        let pred = tape.add_row(pred, bv)?;
        let neg = tape.scale(yv, -1.0)?;
        let err = tape.add(pred, neg)?;
        let sq = tape.mul(err, err)?;
        let total = tape.sum(sq)?;
        let loss = tape.scale(total, 1.0 / 8.0)?;
        let grads = tape.backward(loss)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.6}", tape.value(loss)?.item()?);
        }
        let (gw, gb) = (grads.get(0).unwrap().clone(), grads.get(1).unwrap().clone());
        opt.step(&mut [&mut w, &mut b], &[&gw, &gb])?;
    }
    println!("w = {:?}, b = {:?}", w.data(), b.data());
    Ok(())
}
