use super::matrix::Matrix;

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must keep the same order and shapes
    /// across calls.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *pj -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// SGD with heavy-ball momentum: `v ← μ v + g`, `p ← p − lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len());
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let v = self.velocity[i].data_mut();
            for ((pj, gj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(v) {
                *vj = self.momentum * *vj + gj;
                *pj -= self.lr * *vj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = Matrix::row_vector(&[3.0, -2.0]);
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let g = x.scale(2.0);
            opt.step(&mut [&mut x], &[g]);
        }
        assert!(x.frobenius_norm() < 1e-2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = Matrix::row_vector(&[1.0]);
        let mut opt = Adam::new(0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut [&mut x], &[Matrix::row_vector(&[5.0])]);
        assert!((x.item() - 0.99).abs() < 1e-9);
    }

    #[test]
    fn momentum_accumulates() {
        let mut x = Matrix::row_vector(&[0.0]);
        let mut opt = Sgd::new(0.1, 0.9);
        let g = Matrix::row_vector(&[1.0]);
        opt.step(&mut [&mut x], &[g.clone()]);
        opt.step(&mut [&mut x], &[g]);
        assert!((x.item() + 0.29).abs() < 1e-12);
    }
}
