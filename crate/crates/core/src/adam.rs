//! Adam over waypoint arrays, used for the guidance perturbation.

use crate::geom::Vec2;

/// Bias-corrected Adam state (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec2>,
    v: Vec<Vec2>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![Vec2::ZERO; len],
            v: vec![Vec2::ZERO; len],
        }
    }

    /// One descent step: params -= lr · m̂ / (√v̂ + ε), per coordinate.
    pub fn step(&mut self, params: &mut [Vec2], grads: &[Vec2], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.m[i].scale(self.beta1) + g.scale(1.0 - self.beta1);
            self.v[i] = Vec2::new(
                self.beta2 * self.v[i].x + (1.0 - self.beta2) * g.x * g.x,
                self.beta2 * self.v[i].y + (1.0 - self.beta2) * g.y * g.y,
            );
            let m_hat = self.m[i].scale(1.0 / bc1);
            let v_hat = self.v[i].scale(1.0 / bc2);
            params[i] = Vec2::new(
                params[i].x - lr * m_hat.x / (v_hat.x.sqrt() + self.eps),
                params[i].y - lr * m_hat.y / (v_hat.y.sqrt() + self.eps),
            );
        }
    }
}
