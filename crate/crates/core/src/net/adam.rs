//! Adaptive moment estimation.

use super::{ModelParams, NetConfig};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8);
/// bias-corrected moments, one state pair per parameter tensor.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(config: &NetConfig, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);

        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for ((pc, gc), (mc, vc)) in params
            .convs
            .iter_mut()
            .zip(&grads.convs)
            .zip(self.m.convs.iter_mut().zip(self.v.convs.iter_mut()))
        {
            for (((p, &g), m), v) in pc
                .kernel
                .iter_mut()
                .zip(gc.kernel.iter())
                .zip(mc.kernel.iter_mut())
                .zip(vc.kernel.iter_mut())
            {
                update(p, g, m, v);
            }
            for (((p, &g), m), v) in pc
                .bias
                .iter_mut()
                .zip(gc.bias.iter())
                .zip(mc.bias.iter_mut())
                .zip(vc.bias.iter_mut())
            {
                update(p, g, m, v);
            }
        }
        for (((p, &g), m), v) in params
            .attention
            .kernel
            .iter_mut()
            .zip(grads.attention.kernel.iter())
            .zip(self.m.attention.kernel.iter_mut())
            .zip(self.v.attention.kernel.iter_mut())
        {
            update(p, g, m, v);
        }
        for (((p, &g), m), v) in params
            .attention
            .bias
            .iter_mut()
            .zip(grads.attention.bias.iter())
            .zip(self.m.attention.bias.iter_mut())
            .zip(self.v.attention.bias.iter_mut())
        {
            update(p, g, m, v);
        }
        for ((pd, gd), (md, vd)) in params
            .dense
            .iter_mut()
            .zip(&grads.dense)
            .zip(self.m.dense.iter_mut().zip(self.v.dense.iter_mut()))
        {
            for (((p, &g), m), v) in pd
                .weight
                .iter_mut()
                .zip(gd.weight.iter())
                .zip(md.weight.iter_mut())
                .zip(vd.weight.iter_mut())
            {
                update(p, g, m, v);
            }
            for (((p, &g), m), v) in pd
                .bias
                .iter_mut()
                .zip(gd.bias.iter())
                .zip(md.bias.iter_mut())
                .zip(vd.bias.iter_mut())
            {
                update(p, g, m, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the very first update is lr * sign(g).
        let config = NetConfig {
            n_conv: 1,
            filters: 2,
            kernel_widths: vec![3],
            pool_width: 2,
            attention_kernel_width: 3,
            dense_sizes: vec![2],
            dropout_keep: vec![1.0],
            n_classes: 2,
            input_shape: (1, 4, 1),
        };
        let mut params = ModelParams::zeros(&config);
        let mut grads = ModelParams::zeros(&config);
        grads.convs[0].bias[0] = 0.5;
        grads.convs[0].bias[1] = -2.0;
        let mut opt = Adam::new(&config, 1e-3);
        opt.step(&mut params, &grads);
        assert!((params.convs[0].bias[0] + 1e-3).abs() < 1e-9);
        assert!((params.convs[0].bias[1] - 1e-3).abs() < 1e-9);
        // Zero-gradient entries stay put.
        assert_eq!(params.dense[0].weight.iter().copied().sum::<f64>(), 0.0);
    }
}
