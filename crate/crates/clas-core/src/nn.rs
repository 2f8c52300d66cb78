//! MLPs with ReLU hidden activations, diagonal-Gaussian heads, and Adam.
//!
//! Layer counts follow the network roles used throughout the crate: actors,
//! critics, and priors carry two hidden layers; encoders and decoders carry
//! three. Hidden widths are configuration.

use rand::Rng;

use crate::dist::{DiagGaussian, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Network roles; each pins its hidden-layer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetRole {
    Actor,
    Critic,
    Prior,
    Encoder,
    Decoder,
}

impl NetRole {
    pub fn hidden_layers(self) -> usize {
        match self {
            NetRole::Actor | NetRole::Critic | NetRole::Prior => 2,
            NetRole::Encoder | NetRole::Decoder => 3,
        }
    }
}

/// Feed-forward network: ReLU hidden layers, identity output.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Tensor>, // [in_i, out_i]
    biases: Vec<Tensor>,  // [1, out_i]
}

/// Graph handles for one leased copy of an [`Mlp`]'s parameters.
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl Mlp {
    /// Build with the hidden-layer count implied by `role`.
    pub fn for_role<R: Rng>(
        role: NetRole,
        input_dim: usize,
        hidden_width: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = vec![hidden_width; role.hidden_layers()];
        Self::new(input_dim, &hidden, output_dim, rng)
    }

    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Self {
        assert!(input_dim > 0 && output_dim > 0);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(output_dim);

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Tensor::rand_uniform(fan_in, fan_out, -bound, bound, rng));
            biases.push(Tensor::rand_uniform(1, fan_out, -bound, bound, rng));
        }
        Self {
            sizes,
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, i: usize) -> &Tensor {
        &self.weights[i]
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.weights[i]
    }

    pub fn bias(&self, i: usize) -> &Tensor {
        &self.biases[i]
    }

    pub fn bias_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.biases[i]
    }

    /// All parameters in a fixed traversal order (w0, b0, w1, b1, ...).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for i in 0..self.weights.len() {
            out.push(&self.weights[i]);
            out.push(&self.biases[i]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Named parameters under `prefix` for checkpoints (`prefix.w0`, `prefix.b0`, ...).
    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for i in 0..self.weights.len() {
            out.push((format!("{prefix}.w{i}"), self.weights[i].clone()));
            out.push((format!("{prefix}.b{i}"), self.biases[i].clone()));
        }
        out
    }

    pub fn load_named_params(
        &mut self,
        prefix: &str,
        lookup: &mut impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<()> {
        for i in 0..self.weights.len() {
            let wk = format!("{prefix}.w{i}");
            let bk = format!("{prefix}.b{i}");
            let w = lookup(&wk).ok_or_else(|| Error::Checkpoint(format!("missing key {wk}")))?;
            let b = lookup(&bk).ok_or_else(|| Error::Checkpoint(format!("missing key {bk}")))?;
            if w.shape() != self.weights[i].shape() || b.shape() != self.biases[i].shape() {
                return Err(Error::Checkpoint(format!("shape mismatch at {wk}")));
            }
            self.weights[i] = w;
            self.biases[i] = b;
        }
        Ok(())
    }

    /// Lease parameters into a graph for a differentiable forward pass.
    pub fn lease(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| g.param(w)).collect(),
            biases: self.biases.iter().map(|b| g.param(b)).collect(),
        }
    }

    /// Lease parameters as constants (frozen copy, no gradient tracking).
    pub fn lease_frozen(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| g.constant(w.clone())).collect(),
            biases: self.biases.iter().map(|b| g.constant(b.clone())).collect(),
        }
    }

    /// Differentiable forward pass over a leased parameter set.
    pub fn forward(&self, g: &mut Graph, vars: &MlpVars, input: Var) -> Var {
        assert_eq!(
            g.value(input).cols(),
            self.input_dim(),
            "mlp input dim mismatch: got {}, want {}",
            g.value(input).cols(),
            self.input_dim()
        );
        let mut h = input;
        let last = self.weights.len() - 1;
        for i in 0..self.weights.len() {
            let z = g.matmul(h, vars.weights[i]);
            let zb = g.add_bias(z, vars.biases[i]);
            h = if i < last { g.relu(zb) } else { zb };
        }
        h
    }

    /// Graph-free forward pass for a batch matrix. Used on execution paths
    /// where no gradients are needed.
    pub fn forward_plain(&self, input: &Tensor) -> Tensor {
        assert_eq!(input.cols(), self.input_dim(), "mlp input dim mismatch");
        let mut h = input.clone();
        let last = self.weights.len() - 1;
        for i in 0..self.weights.len() {
            let mut z = h.matmul(&self.weights[i]);
            let n = z.cols();
            let b = self.biases[i].data();
            for r in 0..z.rows() {
                let row = &mut z.data_mut()[r * n..(r + 1) * n];
                for j in 0..n {
                    row[j] += b[j];
                    if i < last && row[j] < 0.0 {
                        row[j] = 0.0;
                    }
                }
            }
            h = z;
        }
        h
    }

    /// Graph-free forward for a single input row.
    pub fn forward1(&self, input: &[f64]) -> Vec<f64> {
        let t = Tensor::row(input);
        self.forward_plain(&t).data().to_vec()
    }
}

/// MLP trunk with a diagonal-Gaussian head: the final layer emits
/// `[mean, log_std]`, with log-std clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone)]
pub struct GaussianMlp {
    net: Mlp,
    out_dim: usize,
}

/// Graph handles for a Gaussian head forward pass.
pub struct GaussianVars {
    pub mlp: MlpVars,
}

impl GaussianMlp {
    pub fn for_role<R: Rng>(
        role: NetRole,
        input_dim: usize,
        hidden_width: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        assert!(out_dim > 0, "gaussian head needs at least one dimension");
        Self {
            net: Mlp::for_role(role, input_dim, hidden_width, 2 * out_dim, rng),
            out_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn lease(&self, g: &mut Graph) -> GaussianVars {
        GaussianVars {
            mlp: self.net.lease(g),
        }
    }

    pub fn lease_frozen(&self, g: &mut Graph) -> GaussianVars {
        GaussianVars {
            mlp: self.net.lease_frozen(g),
        }
    }

    /// Differentiable forward: returns `(mean, log_std)` nodes.
    pub fn forward(&self, g: &mut Graph, vars: &GaussianVars, input: Var) -> (Var, Var) {
        let out = self.net.forward(g, &vars.mlp, input);
        let mean = g.slice_cols(out, 0, self.out_dim);
        let raw = g.slice_cols(out, self.out_dim, 2 * self.out_dim);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        (mean, log_std)
    }

    /// Graph-free forward for a single input row.
    pub fn dist1(&self, input: &[f64]) -> DiagGaussian {
        let out = self.net.forward1(input);
        let (mean, raw) = out.split_at(self.out_dim);
        DiagGaussian::new(mean.to_vec(), raw.to_vec())
    }

    /// Graph-free batch forward returning `(means, log_stds)` matrices.
    pub fn dist_plain(&self, input: &Tensor) -> (Tensor, Tensor) {
        let out = self.net.forward_plain(input);
        let m = out.rows();
        let k = self.out_dim;
        let mut mean = Tensor::zeros(m, k);
        let mut log_std = Tensor::zeros(m, k);
        for i in 0..m {
            let row = out.row_slice(i);
            mean.data_mut()[i * k..(i + 1) * k].copy_from_slice(&row[..k]);
            for j in 0..k {
                log_std.data_mut()[i * k + j] = row[k + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
        (mean, log_std)
    }
}

/// Adam optimizer state over a fixed parameter traversal order.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction. All gradients are checked for
    /// finiteness before any state is touched, so a failed call leaves both
    /// parameters and moments unchanged and the caller may skip the batch.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "param count changed under optimizer");
        assert_eq!(params.len(), grads.len());
        for (p, g) in params.iter().zip(grads) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            if !g.all_finite() {
                return Err(Error::Optimizer("non-finite gradient".into()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Extract gradients for a leased parameter set, zeros where none flowed.
pub fn grads_for(vars: &MlpVars, grads: &Gradients, g: &Graph) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(2 * vars.weights.len());
    for i in 0..vars.weights.len() {
        out.push(grads.get(vars.weights[i], g));
        out.push(grads.get(vars.biases[i], g));
    }
    out
}

/// FNV-1a hash over the raw bits of all parameter tensors, for cheap
/// "parameters unchanged" assertions.
pub fn param_hash<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for t in params {
        for &x in t.data() {
            for byte in x.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_net_outputs_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(3, &[4], 2, &mut rng);
        for w in mlp.weights.iter_mut() {
            *w = Tensor::zeros(w.rows(), w.cols());
        }
        mlp.biases[0] = Tensor::row(&[0.0, 0.0, 0.0, 0.0]);
        mlp.biases[1] = Tensor::row(&[0.7, -1.3]);
        for input in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0], [9.9, 9.9, 9.9]] {
            assert_eq!(mlp.forward1(&input), vec![0.7, -1.3]);
        }
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(3, &[], 3, &mut rng);
        let mut w = Tensor::zeros(3, 3);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        mlp.weights[0] = w;
        mlp.biases[0] = Tensor::row(&[0.0, 0.0, 0.0]);
        let input = [0.4, -1.7, 2.2];
        assert_eq!(mlp.forward1(&input), input.to_vec());
    }

    /// Standalone forward oracle: plain nested loops, no shared code with the
    /// Mlp forward implementations.
    fn oracle_forward(mlp: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        for i in 0..mlp.num_layers() {
            let w = mlp.weight(i);
            let b = mlp.bias(i);
            let mut out = vec![0.0; w.cols()];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = b.data()[j];
                for (p, &hp) in h.iter().enumerate() {
                    acc += hp * w.at(p, j);
                }
                *o = acc;
            }
            if i + 1 < mlp.num_layers() {
                for o in out.iter_mut() {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            h = out;
        }
        h
    }

    #[test]
    fn fixed_seed_forward_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mlp = Mlp::new(5, &[8, 8], 3, &mut rng);
        let input = [0.1, -0.4, 0.9, 0.0, -1.2];
        let expected = oracle_forward(&mlp, &input);
        let got = mlp.forward1(&input);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }

        // Graph path must agree with the plain path exactly.
        let mut g = Graph::new();
        let vars = mlp.lease(&mut g);
        let x = g.constant(Tensor::row(&input));
        let y = mlp.forward(&mut g, &vars, x);
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(4, &[16, 16], 2, &mut rng);
        let input = [0.3, 0.1, -0.8, 0.5];
        assert_eq!(mlp.forward1(&input), mlp.forward1(&input));
    }

    #[test]
    fn role_layer_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (role, n) in [
            (NetRole::Actor, 2),
            (NetRole::Critic, 2),
            (NetRole::Prior, 2),
            (NetRole::Encoder, 3),
            (NetRole::Decoder, 3),
        ] {
            let mlp = Mlp::for_role(role, 4, 8, 2, &mut rng);
            assert_eq!(mlp.hidden_layer_count(), n);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::row(&[1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut opt = AdamState::new(&[&p], 1e-3);
        let g = Tensor::zeros(1, 3);
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // Hand computation: t=1, m_hat = g, v_hat = g^2,
        // delta = lr * g / (|g| + eps) ~= lr * sign(g).
        let lr = 3e-4;
        for &gval in &[0.5, -2.0, 17.0, -1e-3] {
            let mut p = Tensor::scalar(1.0);
            let mut opt = AdamState::new(&[&p], lr);
            opt.step(&mut [&mut p], &[Tensor::scalar(gval)]).unwrap();
            let delta = 1.0 - p.scalar_value();
            let expected = lr * gval / (gval.abs() + 1e-8);
            assert!(
                (delta - expected).abs() < 1e-12,
                "g={gval}: delta {delta} vs {expected}"
            );
            assert!((delta.abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_two_identical_steps_match_hand_trace() {
        // Hand trace with g = 2, lr = 0.1, default betas:
        // t=1: m=0.2, v=0.004, m_hat=2, v_hat=4, step = 0.1*2/(2+eps)
        // t=2: m = 0.9*0.2 + 0.1*2 = 0.38; v = 0.999*0.004 + 0.001*4 = 0.007996
        //      m_hat = 0.38/0.19 = 2; v_hat = 0.007996/0.001999 = 4.0 (exactly, g constant)
        //      step = 0.1*2/(2+eps)
        let g = 2.0;
        let lr = 0.1;
        let mut p = Tensor::scalar(0.0);
        let mut opt = AdamState::new(&[&p], lr);
        opt.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
        let after1 = p.scalar_value();
        opt.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
        let after2 = p.scalar_value();

        let eps = 1e-8;
        let step1 = lr * 2.0 / (2.0 + eps);
        let m2: f64 = 0.9 * 0.2 + 0.1 * g;
        let v2: f64 = 0.999 * 0.004 + 0.001 * g * g;
        let m_hat2 = m2 / (1.0 - 0.9f64.powi(2));
        let v_hat2 = v2 / (1.0 - 0.999f64.powi(2));
        let step2 = lr * m_hat2 / (v_hat2.sqrt() + eps);
        assert!((after1 - (-step1)).abs() < 1e-12, "{after1}");
        assert!((after2 - (-step1 - step2)).abs() < 1e-12, "{after2}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients_without_state_change() {
        let mut p = Tensor::row(&[1.0, 2.0]);
        let before = p.clone();
        let mut opt = AdamState::new(&[&p], 1e-3);
        let g = Tensor::row(&[f64::NAN, 1.0]);
        assert!(opt.step(&mut [&mut p], &[g]).is_err());
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 0);

        // A good step still works afterwards.
        opt.step(&mut [&mut p], &[Tensor::row(&[1.0, 1.0])]).unwrap();
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn param_hash_changes_with_params() {
        let a = Tensor::row(&[1.0, 2.0]);
        let b = Tensor::row(&[1.0, 2.0000001]);
        assert_eq!(param_hash([&a]), param_hash([&a.clone()]));
        assert_ne!(param_hash([&a]), param_hash([&b]));
    }
}
