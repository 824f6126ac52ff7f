use super::{sigmoid, ClassifierOutput, ClassifierParams};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Negated λ-mixed log-likelihood over the masked attributes:
/// `-[(1-λ) Σ (y ln p + (1-y) ln(1-p)) + λ Σ y ln p']`.
pub fn loss(output: &ClassifierOutput, labels: &[u8], mask: &[bool], lambda: f64) -> f64 {
    let mut ll = 0.0;
    for w in 0..labels.len() {
        if !mask[w] {
            continue;
        }
        let p = clamp_prob(output.p[w]);
        let pp = clamp_prob(output.p_prime[w]);
        let y = labels[w] as f64;
        ll += (1.0 - lambda) * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        ll += lambda * y * pp.ln();
    }
    -ll
}

/// Gradient buffers, shaped like [`ClassifierParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub tau: Vec<f64>,
    pub tau_prime: Vec<f64>,
}

impl Gradients {
    pub fn zeros(dim: usize, k: usize) -> Self {
        Gradients {
            w1: vec![0.0; dim * k],
            b1: vec![0.0; k],
            w2: vec![0.0; dim * k],
            b2: vec![0.0; k],
            tau: vec![0.0; k],
            tau_prime: vec![0.0; k],
        }
    }

    pub(crate) fn slices(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.tau, &self.tau_prime]
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.tau,
            &mut self.tau_prime,
        ]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.slices_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Adds one item's loss gradient into `grads` and returns the item's loss.
///
/// The sigmoid cross-entropy derivative is taken analytically (`p - y`), so
/// it is exact wherever the probability clamp is inactive.
pub(crate) fn accumulate_item(
    params: &ClassifierParams,
    x: &[f64],
    labels: &[u8],
    mask: &[bool],
    lambda: f64,
    grads: &mut Gradients,
) -> f64 {
    let k = params.num_attributes;
    let (z1, z2) = params.pre_activations(x);
    let mut dz1 = vec![0.0; k];
    let mut dz2 = vec![0.0; k];
    let mut item_loss = 0.0;
    for w in 0..k {
        if !mask[w] {
            continue;
        }
        let y = labels[w] as f64;
        let psi = z1[w].max(0.0);
        let psi_p = z2[w].max(0.0);
        let f = psi + psi_p;
        let (tau, tau_p) = (params.tau[w], params.tau_prime[w]);
        let p = sigmoid(f / tau);
        let pp = sigmoid(psi_p / tau_p);
        let (pc, ppc) = (clamp_prob(p), clamp_prob(pp));
        item_loss -= (1.0 - lambda) * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln()) + lambda * y * ppc.ln();

        // d(-ll)/d(f/tau) = (1-λ)(p - y); d(-ll)/d(psi'/tau') = λ y (p' - 1)
        let g_u = (1.0 - lambda) * (p - y);
        let g_v = lambda * y * (pp - 1.0);
        let g_f = g_u / tau;
        grads.tau[w] -= g_u * f / (tau * tau);
        grads.tau_prime[w] -= g_v * psi_p / (tau_p * tau_p);
        let g_psi_p = g_f + g_v / tau_p;
        if z1[w] > 0.0 {
            dz1[w] = g_f;
        }
        if z2[w] > 0.0 {
            dz2[w] = g_psi_p;
        }
    }
    for w in 0..k {
        grads.b1[w] += dz1[w];
        grads.b2[w] += dz2[w];
    }
    for (d, &xd) in x.iter().enumerate() {
        if xd == 0.0 {
            continue;
        }
        let row1 = &mut grads.w1[d * k..(d + 1) * k];
        for w in 0..k {
            row1[w] += xd * dz1[w];
        }
        let row2 = &mut grads.w2[d * k..(d + 1) * k];
        for w in 0..k {
            row2[w] += xd * dz2[w];
        }
    }
    item_loss
}
