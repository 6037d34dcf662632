use super::config::TrainConfig;
use super::Scalar;

/// Linear warm-up from 0 to `peak` over the first ceil(fraction·total) steps,
/// then linear decay that reaches peak/(total − warmup) on the last step.
pub fn lr_at(step: usize, total: usize, warmup_fraction: f64, peak: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warm = ((warmup_fraction * total as f64).ceil() as usize).min(total - 1);
    if step < warm {
        peak * step as f64 / warm as f64
    } else {
        peak * (total - step.min(total)) as f64 / (total - warm) as f64
    }
}

/// Adam with decoupled weight decay over a fixed list of flat tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: &TrainConfig, sizes: &[usize]) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &[&[T]], lr: f64) {
        self.t += 1;
        let c = |x: f64| T::from_f64(x).expect("finite");
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(self.t));
        let bc2 = c(1.0 - self.beta2.powi(self.t));
        let (lr_t, decay, eps) = (c(lr), c(1.0 - lr * self.weight_decay), c(self.eps));
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] = p[i] * decay - lr_t * mh / (vh.sqrt() + eps);
            }
        }
    }
}
