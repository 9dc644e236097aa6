//! Central finite-difference checks of every differentiable op on random
//! small shapes, plus the conv / transposed-conv adjoint identity. Each
//! check panics on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthaug::nn::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SHAPES: u64 = 20;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randv(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Values at least `gap` away from zero, for ops with a kink at 0.
fn away_from_zero(r: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = r.random_range(gap..1.0);
            if r.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn tensor(shape: [usize; 4], data: Vec<f64>) -> Tensor4 {
    Tensor4::new(shape, data).unwrap()
}

/// ‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12) between analytic `a` and the central
/// difference of `f` at `x`.
fn rel_error(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut xp = x.to_vec();
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        xp[i] = x[i] + H;
        let up = f(&xp);
        xp[i] = x[i] - H;
        let down = f(&xp);
        xp[i] = x[i];
        let num = (up - down) / (2.0 * H);
        diff += (analytic[i] - num).powi(2);
        na += analytic[i].powi(2);
        nn += num.powi(2);
    }
    diff.sqrt() / (na.sqrt() + nn.sqrt()).max(1e-12)
}

fn assert_close(what: &str, seed: u64, err: f64) {
    assert!(err < TOL, "{what} (shape seed {seed}): relative error {err:.3e}");
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv2d_gradients() {
    for s in 0..SHAPES {
        let mut r = rng(s);
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..=k / 2);
        let side = r.random_range(k.max(2)..8);
        let xs = [n, c, side, side];
        let ws = [o, c, k, k];
        let x = randv(&mut r, xs.iter().product());
        let w = randv(&mut r, ws.iter().product());
        let b = randv(&mut r, o);
        let y = conv2d(&tensor(xs, x.clone()), &tensor(ws, w.clone()), Some(&b), stride, pad).unwrap();
        let rw = randv(&mut r, y.len());
        let g = conv2d_backward(&tensor(xs, x.clone()), &tensor(ws, w.clone()), stride, pad, &tensor(y.shape(), rw.clone())).unwrap();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| {
            dot(conv2d(&tensor(xs, x.to_vec()), &tensor(ws, w.to_vec()), Some(b), stride, pad).unwrap().data(), &rw)
        };
        assert_close("conv2d dx", s, rel_error(|v| loss(v, &w, &b), &x, g.dx.data()));
        assert_close("conv2d dw", s, rel_error(|v| loss(&x, v, &b), &w, g.dw.data()));
        assert_close("conv2d db", s, rel_error(|v| loss(&x, &w, v), &b, &g.db));
    }
}

pub fn conv_transpose_gradients() {
    let mut checked = 0;
    for s in 0..10 * SHAPES {
        if checked == SHAPES {
            break;
        }
        let mut r = rng(100 + s);
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let k = [2, 3, 4, 5][r.random_range(0..4)];
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..k / 2 + 1).min(k - 1);
        let op = if stride > 1 { r.random_range(0..stride) } else { 0 };
        let side = r.random_range(2..6);
        if (side - 1) * stride + k + op <= 2 * pad {
            continue;
        }
        let xs = [n, c, side, side];
        let ws = [c, o, k, k];
        let x = randv(&mut r, xs.iter().product());
        let w = randv(&mut r, ws.iter().product());
        let b = randv(&mut r, o);
        let fwd = |x: &[f64], w: &[f64], b: &[f64]| {
            conv2d_transpose(&tensor(xs, x.to_vec()), &tensor(ws, w.to_vec()), Some(b), stride, pad, op).unwrap()
        };
        let y = fwd(&x, &w, &b);
        let rw = randv(&mut r, y.len());
        let g = conv2d_transpose_backward(&tensor(xs, x.clone()), &tensor(ws, w.clone()), stride, pad, op, &tensor(y.shape(), rw.clone()))
            .unwrap();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(fwd(x, w, b).data(), &rw);
        assert_close("conv_t dx", s, rel_error(|v| loss(v, &w, &b), &x, g.dx.data()));
        assert_close("conv_t dw", s, rel_error(|v| loss(&x, v, &b), &w, g.dw.data()));
        assert_close("conv_t db", s, rel_error(|v| loss(&x, &w, v), &b, &g.db));
        checked += 1;
    }
    assert_eq!(checked, SHAPES);
}

pub fn conv_and_transpose_are_adjoint() {
    let mut checked = 0;
    for s in 0..10 * SHAPES {
        if checked == SHAPES {
            break;
        }
        let mut r = rng(200 + s);
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..5));
        let k = r.random_range(1..6);
        let stride = r.random_range(1..4);
        let pad = r.random_range(0..k);
        let side = r.random_range(k.max(stride)..12);
        let Some(out) = conv_output_size(side + 2 * pad, k, stride, 0).filter(|&v| v > 0) else {
            continue;
        };
        let op = side + 2 * pad - k - (out - 1) * stride;
        if op >= stride {
            continue;
        }
        let w = tensor([o, c, k, k], randv(&mut r, o * c * k * k));
        let x = tensor([n, c, side, side], randv(&mut r, n * c * side * side));
        let y = tensor([n, o, out, out], randv(&mut r, n * o * out * out));
        let ax = conv2d(&x, &w, None, stride, pad).unwrap();
        let aty = conv2d_transpose(&y, &w, None, stride, pad, op).unwrap();
        assert_eq!(aty.shape(), x.shape());
        let (lhs, rhs) = (ax.dot(&y), x.dot(&aty));
        assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + lhs.abs()), "seed {s}: {lhs} vs {rhs}");
        checked += 1;
    }
    assert_eq!(checked, SHAPES);
}

pub fn dense_gradients() {
    for s in 0..SHAPES {
        let mut r = rng(300 + s);
        let (m, k, n) = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..6));
        let x = randv(&mut r, m * k);
        let w = randv(&mut r, k * n);
        let b = randv(&mut r, n);
        let rw = randv(&mut r, m * n);
        let mx = |v: &[f64]| Matrix::new(m, k, v.to_vec()).unwrap();
        let mw = |v: &[f64]| Matrix::new(k, n, v.to_vec()).unwrap();
        let g = dense_backward(&mx(&x), &mw(&w), &Matrix::new(m, n, rw.clone()).unwrap()).unwrap();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(dense(&mx(x), &mw(w), Some(b)).unwrap().data(), &rw);
        assert_close("dense dx", s, rel_error(|v| loss(v, &w, &b), &x, g.dx.data()));
        assert_close("dense dw", s, rel_error(|v| loss(&x, v, &b), &w, g.dw.data()));
        assert_close("dense db", s, rel_error(|v| loss(&x, &w, v), &b, &g.db));
    }
}

pub fn batchnorm_gradients() {
    for s in 0..SHAPES {
        let mut r = rng(400 + s);
        let shape = [r.random_range(2..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
        let ch = shape[1];
        let x = randv(&mut r, shape.iter().product());
        let gamma: Vec<f64> = (0..ch).map(|_| r.random_range(0.5..1.5)).collect();
        let beta = randv(&mut r, ch);
        let (rm, rv) = (vec![0.0; ch], vec![1.0; ch]);
        let fwd = |x: &[f64], g: &[f64], b: &[f64]| batchnorm2d(&tensor(shape, x.to_vec()), g, b, Mode::Train, (&rm, &rv)).unwrap();
        let (y, cache, _) = fwd(&x, &gamma, &beta);
        let rw = randv(&mut r, y.len());
        let g = batchnorm2d_backward(&cache, &gamma, &tensor(shape, rw.clone())).unwrap();
        let loss = |x: &[f64], g: &[f64], b: &[f64]| dot(fwd(x, g, b).0.data(), &rw);
        assert_close("bn dx", s, rel_error(|v| loss(v, &gamma, &beta), &x, g.dx.data()));
        assert_close("bn dgamma", s, rel_error(|v| loss(&x, v, &beta), &gamma, &g.dgamma));
        assert_close("bn dbeta", s, rel_error(|v| loss(&x, &gamma, v), &beta, &g.dbeta));
    }
}

pub fn maxpool_gradients() {
    for s in 0..SHAPES {
        let mut r = rng(500 + s);
        let shape = [r.random_range(1..3), r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
        let len: usize = shape.iter().product();
        // distinct values spaced well beyond the step size
        let mut x: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
        use rand::seq::SliceRandom;
        x.shuffle(&mut r);
        let (y, arg) = maxpool2d(&tensor(shape, x.clone())).unwrap();
        let rw = randv(&mut r, y.len());
        let dx = maxpool2d_backward(shape, &arg, &tensor(y.shape(), rw.clone())).unwrap();
        let loss = |v: &[f64]| dot(maxpool2d(&tensor(shape, v.to_vec())).unwrap().0.data(), &rw);
        assert_close("maxpool", s, rel_error(loss, &x, dx.data()));
    }
}

pub fn activation_gradients() {
    let acts = [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid];
    for s in 0..SHAPES {
        let mut r = rng(600 + s);
        let n = r.random_range(1..40);
        let x = away_from_zero(&mut r, n, 1e-3);
        let rw = randv(&mut r, n);
        for act in acts {
            let y = act.forward(&x);
            let dx = act.backward(&x, &y, &rw);
            let loss = |v: &[f64]| dot(&act.forward(v), &rw);
            assert_close(&format!("{act:?}"), s, rel_error(loss, &x, &dx));
        }
    }
}

pub fn loss_gradients() {
    for s in 0..SHAPES {
        let mut r = rng(700 + s);
        let (rows, cols) = (r.random_range(1..6), r.random_range(2..5));
        let logits = randv(&mut r, rows * cols).iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let labels: Vec<usize> = (0..rows).map(|_| r.random_range(0..cols)).collect();
        let m = |v: &[f64]| Matrix::new(rows, cols, v.to_vec()).unwrap();
        let (_, g) = softmax_crossentropy(&m(&logits), &labels).unwrap();
        let ce = |v: &[f64]| softmax_crossentropy(&m(v), &labels).unwrap().0;
        assert_close("softmax ce", s, rel_error(ce, &logits, g.data()));

        let n = r.random_range(1..10);
        let z: Vec<f64> = randv(&mut r, n).iter().map(|v| 4.0 * v).collect();
        let t: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let (_, gz) = bce_with_logits(&z, &t).unwrap();
        assert_close("bce logits", s, rel_error(|v| bce_with_logits(v, &t).unwrap().0, &z, &gz));

        let p: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
        let (_, gp) = bce(&p, &t).unwrap();
        assert_close("bce", s, rel_error(|v| bce(v, &t).unwrap().0, &p, &gp));
    }
}

pub fn dropout_gradients() {
    for s in 0..SHAPES {
        let mut r = rng(800 + s);
        let n = r.random_range(1..50);
        let rate = r.random_range(0.0..0.9);
        let x = randv(&mut r, n);
        let rw = randv(&mut r, n);
        let (_, mask) = dropout(&x, rate, Mode::Train, s).unwrap();
        let dx = dropout_backward(mask.as_deref(), &rw);
        let loss = |v: &[f64]| dot(&dropout(v, rate, Mode::Train, s).unwrap().0, &rw);
        assert_close("dropout", s, rel_error(loss, &x, &dx));
    }
}

/// Every check with its name.
pub const ALL: [(&str, fn()); 9] = [
    ("conv2d_gradients", conv2d_gradients),
    ("conv_transpose_gradients", conv_transpose_gradients),
    ("conv_and_transpose_are_adjoint", conv_and_transpose_are_adjoint),
    ("dense_gradients", dense_gradients),
    ("batchnorm_gradients", batchnorm_gradients),
    ("maxpool_gradients", maxpool_gradients),
    ("activation_gradients", activation_gradients),
    ("loss_gradients", loss_gradients),
    ("dropout_gradients", dropout_gradients),
];
