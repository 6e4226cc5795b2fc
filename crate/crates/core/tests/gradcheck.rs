mod common;
#[path = "suites/gradients.rs"]
mod gradients;

#[test]
fn conv2d_gradients() {
    gradients::conv2d_gradients();
}

#[test]
fn depthwise_gradients() {
    gradients::depthwise_gradients();
}

#[test]
fn pointwise_gradients() {
    gradients::pointwise_gradients();
}

#[test]
fn group_norm_gradients() {
    gradients::group_norm_gradients();
}

#[test]
fn relu_gradients() {
    gradients::relu_gradients();
}

#[test]
fn avg_pool_gradients() {
    gradients::avg_pool_gradients();
}

#[test]
fn linear_gradients() {
    gradients::linear_gradients();
}

#[test]
fn elementwise_gradients() {
    gradients::elementwise_gradients();
}

#[test]
fn cross_entropy_gradients() {
    gradients::cross_entropy_gradients();
}

#[test]
fn soft_target_kl_gradients() {
    gradients::soft_target_kl_gradients();
}

#[test]
fn residual_block_gradients() {
    gradients::residual_block_gradients();
}

#[test]
fn ode_block_gradients() {
    gradients::ode_block_gradients();
}

#[test]
fn ds_block_gradients() {
    gradients::ds_block_gradients();
}
