use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step: i32,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let lr = self.lr;
        let targets = params.named_tensors_mut();
        let g = grads.named_tensors();
        let m = self.m.named_tensors_mut();
        let v = self.v.named_tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in targets.into_iter().zip(g).zip(m).zip(v) {
            for (((p, g), m), v) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        let cfg = ModelConfig {
            hidden: 4,
            heads: 1,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 4,
            max_len: 4,
            appearance_dim: 2,
            ..ModelConfig::default()
        };
        ModelParams::new(&cfg, 20, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.saliency_bias.data[0] = 3.0;
        g.output.data[0] = -0.5;
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &g);
        let d_bias = p.saliency_bias.data[0] - before.saliency_bias.data[0];
        assert!((d_bias + 0.01).abs() < 1e-9);
        assert!((p.output.data[0] - before.output.data[0] - 0.01).abs() < 1e-9);
        // zero gradient entries stay put
        assert_eq!(p.saliency_weight, before.saliency_weight);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.output.fill(1.0);
        let mut adam = Adam::new(&p, 0.0);
        for _ in 0..3 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }
}
