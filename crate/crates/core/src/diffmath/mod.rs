//! Dense numerical core: parameter storage, batched layers, reverse-mode
//! gradients, Adam and finite-difference gradient checking.

mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, GradSample, ABS_THRESHOLD};
pub use matrix::Matrix;
pub use optim::{clip_grad_norm, Adam};
pub use params::{ParamId, ParamStore};
pub use tape::{log_softmax_in_place, student_t_kernel, NodeId, Tape, LOG_FLOOR};

pub(crate) use matrix::{affine_forward, relu_forward};

/// Elementwise `max(0, x)` on a plain vector.
pub fn relu(input: &[f64]) -> alloc::vec::Vec<f64> {
    input.iter().map(|v| v.max(0.0)).collect()
}

/// Log-probabilities of a vector of logits. Fails on non-finite logits.
pub fn softmax_logprobs(logits: &[f64]) -> crate::Result<alloc::vec::Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::Numeric("softmax logits"));
    }
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

/// `W x + b` for a `[out, in]` weight stored row-major.
pub fn affine_apply(weight: &[f64], bias: &[f64], input: &[f64]) -> crate::Result<alloc::vec::Vec<f64>> {
    let out_dim = bias.len();
    if out_dim == 0 || weight.len() != out_dim * input.len() {
        return Err(crate::Error::Dimension {
            context: "affine weight columns",
            expected: input.len(),
            actual: if out_dim == 0 { 0 } else { weight.len() / out_dim },
        });
    }
    let x = Matrix::row_vector(input.to_vec());
    Ok(affine_forward(&x, weight, bias, out_dim).into_vec())
}
