use crate::numcore::{Matrix, Real};

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(shapes: &[Matrix<T>], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || shapes.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bias1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let bias2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let lr_t = T::lit(lr);
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let eps = T::lit(self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                if self.weight_decay != 0.0 {
                    *pv *= decay;
                }
                *pv -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Matrix<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| x.to_f64() * x.to_f64())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_parameters_untouched() {
        let mut params = vec![Matrix::<f32>::from_rows(&[[0.3, -1.2]])];
        let before = params.clone();
        let mut opt = AdamW::new(&params, 0.9, 0.999, 1e-8, 1e-4);
        opt.step(&mut params, &[Matrix::from_rows(&[[1.0, 2.0]])], 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Matrix::<f64>::from_rows(&[[1.0, 1.0]])];
        let mut opt = AdamW::new(&params, 0.9, 0.999, 1e-12, 0.0);
        opt.step(&mut params, &[Matrix::from_rows(&[[0.5, -3.0]])], 0.01);
        assert!((params[0].get(0, 0) - 0.99).abs() < 1e-9);
        assert!((params[0].get(0, 1) - 1.01).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Matrix::<f64>::from_rows(&[[3.0, 4.0]])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].get(0, 0) - 0.6).abs() < 1e-12);
    }
}
