use alloc::vec;
use alloc::vec::Vec;

use libm::{pow, sqrt};

use crate::appearance::{Dense, OptimizerKind};

/// First-order optimizer over a fixed list of dense layers.
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    l2: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, l2: f64, layers: &[&Dense]) -> Self {
        let sizes: Vec<usize> = layers.iter().map(|l| l.num_params()).collect();
        Self {
            kind,
            lr,
            l2,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. A layer with `lr_scale[i] == 0.0` is left
    /// untouched, bit for bit.
    pub fn step(&mut self, layers: &mut [&mut Dense], grads: &[Dense], lr_scale: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - pow(BETA1, f64::from(self.step));
        let bc2 = 1.0 - pow(BETA2, f64::from(self.step));
        for (li, layer) in layers.iter_mut().enumerate() {
            let scale = lr_scale[li];
            if scale == 0.0 {
                continue;
            }
            let lr = self.lr * scale;
            let n_w = layer.weights.as_slice().len();
            let g = &grads[li];
            let (m, v) = (&mut self.m[li], &mut self.v[li]);
            let mut update = |idx: usize, p: &mut f64, mut gi: f64, decay: bool| {
                if decay {
                    gi += self.l2 * *p;
                }
                match self.kind {
                    OptimizerKind::Sgd => *p -= lr * gi,
                    OptimizerKind::Adam => {
                        m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * gi;
                        v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * gi * gi;
                        let mh = m[idx] / bc1;
                        let vh = v[idx] / bc2;
                        *p -= lr * mh / (sqrt(vh) + EPS);
                    }
                }
            };
            for (i, (p, &gi)) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
                .enumerate()
            {
                update(i, p, gi, true);
            }
            for (i, (p, &gi)) in layer.bias.iter_mut().zip(&g.bias).enumerate() {
                update(n_w + i, p, gi, false);
            }
        }
    }
}
