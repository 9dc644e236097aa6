mod common;

use common::gradcheck;

#[test]
fn conv2d_gradients() {
    gradcheck::conv2d_gradients();
}

#[test]
fn conv_transpose_gradients() {
    gradcheck::conv_transpose_gradients();
}

#[test]
fn conv_and_transpose_are_adjoint() {
    gradcheck::conv_and_transpose_are_adjoint();
}

#[test]
fn dense_gradients() {
    gradcheck::dense_gradients();
}

#[test]
fn batchnorm_gradients() {
    gradcheck::batchnorm_gradients();
}

#[test]
fn maxpool_gradients() {
    gradcheck::maxpool_gradients();
}

#[test]
fn activation_gradients() {
    gradcheck::activation_gradients();
}

#[test]
fn loss_gradients() {
    gradcheck::loss_gradients();
}

#[test]
fn dropout_gradients() {
    gradcheck::dropout_gradients();
}
