use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::param::{ParamStore, Parameter};
use crate::real::Real;
use crate::tensor::Tensor;

/// Update rule applied by [`optimizer_step`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Method {
    pub const fn adam() -> Self {
        Method::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn validate(&self) -> Result<()> {
        if let Method::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(param_err!("adam betas must lie in [0, 1), got ({beta1}, {beta2})"));
            }
            if !(eps > 0.0) {
                return Err(param_err!("adam eps must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for Method {
    fn default() -> Self {
        Method::adam()
    }
}

/// Applies one update to `param` using the explicit gradient `grad`.
pub fn update<T: Real>(param: &mut Parameter<T>, grad: &Tensor<T>, method: Method, lr: f64) -> Result<()> {
    param.value.check_same_shape(grad)?;
    if !(lr >= 0.0) {
        return Err(param_err!("learning rate must be non-negative, got {lr}"));
    }
    method.validate()?;
    param.step += 1;
    match method {
        Method::Sgd => {
            let lr = T::from_f64(lr);
            for (w, &g) in param.value.data_mut().iter_mut().zip(grad.data()) {
                *w -= lr * g;
            }
        }
        Method::Adam { beta1, beta2, eps } => {
            let t = param.step as i32;
            let bc1 = 1.0 - libm::pow(beta1, t as f64);
            let bc2 = 1.0 - libm::pow(beta2, t as f64);
            let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
            let one = T::one();
            let m = param.m.data_mut();
            let v = param.v.data_mut();
            let w = param.value.data_mut();
            for i in 0..w.len() {
                let g = grad.data()[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i].as_f64() / bc1;
                let v_hat = v[i].as_f64() / bc2;
                w[i] -= T::from_f64(lr * m_hat / (libm::sqrt(v_hat) + eps));
            }
        }
    }
    Ok(())
}

/// Updates every parameter from its accumulated `grad`.
pub fn optimizer_step<T: Real>(params: &mut ParamStore<T>, method: Method, lr: f64) -> Result<()> {
    for p in params.iter_mut() {
        let grad = core::mem::replace(&mut p.grad, Tensor::zeros(p.value.shape()));
        let res = update(p, &grad, method, lr);
        p.grad = grad;
        res?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn sgd_formula() {
        let mut p = Parameter::new("w", Tensor::scalar(1.0f64));
        update(&mut p, &Tensor::scalar(0.5), Method::Sgd, 0.1).unwrap();
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Parameter::new("w", Tensor::full(Shape::vector(3), 0.3f32));
        let before = p.value.clone();
        update(&mut p, &Tensor::zeros(Shape::vector(3)), Method::adam(), 1e-3).unwrap();
        assert_eq!(p.value, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let lr = 1e-2;
        let mut p = Parameter::new("w", Tensor::from_vec(Shape::vector(2), vec![1.0f64, 1.0]).unwrap());
        let g = Tensor::from_vec(Shape::vector(2), vec![0.37, -4.0]).unwrap();
        update(&mut p, &g, Method::adam(), lr).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        assert!((p.value.data()[0] - (1.0 - lr)).abs() < 1e-8);
        assert!((p.value.data()[1] - (1.0 + lr)).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_and_bad_hyperparameters() {
        let mut p = Parameter::new("w", Tensor::zeros(Shape::vector(2)));
        assert!(update(&mut p, &Tensor::<f32>::zeros(Shape::vector(3)), Method::Sgd, 0.1).is_err());
        assert!(update(&mut p, &Tensor::zeros(Shape::vector(2)), Method::Sgd, -0.1).is_err());
        let bad = Method::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 };
        assert!(update(&mut p, &Tensor::zeros(Shape::vector(2)), bad, 0.1).is_err());
    }
}
