//! Finite-difference check of the convolution backward pass, plus the
//! adjoint identity ⟨conv(x), y⟩ = ⟨x, conv_transpose(y)⟩.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthaug::nn::{conv2d, conv2d_backward, conv2d_transpose, Tensor4};

fn main() -> synthaug::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |shape: [usize; 4]| {
        let n = shape.iter().product();
        Tensor4::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let (stride, pad) = (2, 2);
    let x = rand([2, 3, 9, 9])?;
    let w = rand([4, 3, 5, 5])?;
    let y = conv2d(&x, &w, None, stride, pad)?;
    let r = rand(y.shape())?;
    let grads = conv2d_backward(&x, &w, stride, pad, &r)?;

    let loss = |x: &Tensor4| conv2d(x, &w, None, stride, pad).map(|y| y.dot(&r));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in (0..x.len()).step_by(17) {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        let numeric = (loss(&up)? - loss(&down)?) / (2.0 * h);
        let analytic = grads.dx.data()[i];
        worst = worst.max((numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-12));
    }
    println!("conv2d dx: worst relative error {worst:.2e}");

    // conv(9x9, k5, s2, p2) gives 5x5; transposing back needs output padding 0
    let back = conv2d_transpose(&r, &w, None, stride, pad, 0)?;
    println!("adjoint: ⟨Ax, y⟩ = {:.12}, ⟨x, Aᵀy⟩ = {:.12}", y.dot(&r), x.dot(&back));
    Ok(())
}
