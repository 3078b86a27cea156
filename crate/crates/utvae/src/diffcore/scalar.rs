//! Numerically stable scalar math used by tensors, distributions, and the
//! data generator. Every branch exists to avoid overflow in `exp`, not to
//! change the value.

/// Logistic function 1/(1+e^-x), safe for any finite `x`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x), safe for any finite `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Exponential linear unit: x for x > 0, e^x - 1 otherwise.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Derivative of [`elu`]: 1 for x > 0, e^x otherwise (continuous at 0).
pub fn elu_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}
