use crate::error::{CodecError, Result};
use crate::nn::Module;
use crate::tensor::{Grads, Tensor};

/// Adam with bias correction. Moment buffers follow the module's parameter
/// visiting order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step(&mut self, module: &mut dyn Module<f32>, grads: &Grads<f32>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_mut("", &mut |_, t: &mut Tensor<f32>| {
            if ms.len() <= idx {
                ms.push(vec![0.0; t.numel()]);
                vs.push(vec![0.0; t.numel()]);
            }
            if let Some(g) = grads.get(t) {
                let (m, v) = (&mut ms[idx], &mut vs[idx]);
                t.update(|w| {
                    for i in 0..w.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        w[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                });
            }
            idx += 1;
        });
    }

    /// Named arrays for checkpointing.
    pub fn state_arrays(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = vec![(format!("{prefix}.step"), vec![2], split_u64(self.step))];
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("{prefix}.m.{i}"), vec![m.len()], m.clone()));
            out.push((format!("{prefix}.v.{i}"), vec![v.len()], v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, arrays: &std::collections::BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        let step = arrays
            .get(&format!("{prefix}.step"))
            .ok_or_else(|| CodecError::Checkpoint(format!("missing optimizer state {prefix}")))?;
        self.step = join_u64(&step.1)?;
        self.m.clear();
        self.v.clear();
        for i in 0.. {
            let (Some(m), Some(v)) = (arrays.get(&format!("{prefix}.m.{i}")), arrays.get(&format!("{prefix}.v.{i}"))) else {
                break;
            };
            self.m.push(m.1.clone());
            self.v.push(v.1.clone());
        }
        Ok(())
    }
}

// Counters are stored losslessly as two 32-bit halves reinterpreted as f32.
fn split_u64(v: u64) -> Vec<f32> {
    vec![f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)]
}

fn join_u64(v: &[f32]) -> Result<u64> {
    if v.len() != 2 {
        return Err(CodecError::Checkpoint("bad optimizer step record".into()));
    }
    Ok(v[0].to_bits() as u64 | ((v[1].to_bits() as u64) << 32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, Conv1d};
    use crate::tensor::ConvSpec;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut c: Conv1d<f32> = Conv1d::new(1, 1, 2, ConvSpec::valid(1), false, Init::FanIn(1.0), &mut rng);
        let before = c.weight.to_vec();
        let x = Tensor::new(vec![1.0, -2.0, 3.0], &[1, 1, 3]);
        let loss = c.forward(&x).mean();
        let g = loss.backward();
        let grad = g.get(&c.weight).unwrap().to_vec();
        let mut opt = Adam::new(0.01, 0.8, 0.99);
        opt.step(&mut c, &g);
        for i in 0..2 {
            let moved = before[i] - c.weight.data()[i];
            assert!((moved - 0.01 * grad[i].signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn state_round_trip() {
        let mut opt = Adam::new(1e-3, 0.8, 0.99);
        opt.step = (1u64 << 40) + 7;
        opt.m = vec![vec![1.0, 2.0]];
        opt.v = vec![vec![3.0, 4.0]];
        let arrays = opt
            .state_arrays("g")
            .into_iter()
            .map(|(n, s, d)| (n, (s, d)))
            .collect();
        let mut back = Adam::new(1e-3, 0.8, 0.99);
        back.load_state("g", &arrays).unwrap();
        assert_eq!((back.step, back.m, back.v), (opt.step, opt.m, opt.v));
    }
}
