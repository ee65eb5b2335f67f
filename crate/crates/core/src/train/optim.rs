use crate::numerics::{ParamSet, Tensor};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || -> Vec<Tensor> {
            params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `θ ← θ − lr·wd·θ`, then the bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((theta, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *w -= lr * weight_decay * *w;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(vec![theta])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(0.7);
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &[Tensor::zeros(&[1])], 1e-3, 0.0);
        assert_eq!(p.by_name("w").unwrap().data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &[Tensor::from_vec(vec![3.5])], 1e-3, 0.0);
        let w = p.by_name("w").unwrap().data()[0];
        assert!((w + 1e-3).abs() < 1e-9, "{w}");
    }

    #[test]
    fn decay_only() {
        let mut p = single(1.0);
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &[Tensor::zeros(&[1])], 1e-4, 1e-6);
        let w = p.by_name("w").unwrap().data()[0];
        assert!((1.0 - w - 1e-10).abs() < 1e-15, "{w}");
    }
}
