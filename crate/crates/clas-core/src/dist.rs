//! Diagonal Gaussians and their tanh-squashed transform.
//!
//! Two parallel implementations live here: plain (`Vec<f64>`) versions for
//! execution paths and oracles, and graph versions that participate in
//! backpropagation. Tests pin the two against each other.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{standard_normal, Tensor};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Stabilizer inside ln(1 - a^2 + eps) for the tanh change of variables.
pub const TANH_EPS: f64 = 1e-6;
/// tanh saturates to exactly +/-1.0 in f64 for |x| >~ 19; squashed actions
/// are clamped just inside the boundary to keep the open interval strict.
pub const ACTION_BOUND: f64 = 1.0 - 1e-12;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Mean/log-std pair; log-std is clamped to `[LOG_STD_MIN, LOG_STD_MAX]`
/// at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "mean/log_std length mismatch");
        let log_std = log_std
            .into_iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Self { mean, log_std }
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| m + ls.exp() * standard_normal(rng))
            .collect()
    }

    /// Sum over dimensions of component log densities.
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "log_prob dim mismatch");
        let mut acc = 0.0;
        for ((&xi, &mi), &lsi) in x.iter().zip(&self.mean).zip(&self.log_std) {
            let z = (xi - mi) / lsi.exp();
            acc += -0.5 * LN_2PI - lsi - 0.5 * z * z;
        }
        acc
    }

    /// Closed-form KL(self || other) for diagonal Gaussians; non-negative.
    pub fn kl(&self, other: &DiagGaussian) -> f64 {
        assert_eq!(self.dim(), other.dim(), "kl dim mismatch");
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let (mq, lq) = (self.mean[i], self.log_std[i]);
            let (mp, lp) = (other.mean[i], other.log_std[i]);
            let vq = (2.0 * lq).exp();
            let vp = (2.0 * lp).exp();
            acc += lp - lq + (vq + (mq - mp) * (mq - mp)) / (2.0 * vp) - 0.5;
        }
        acc.max(0.0)
    }

    /// Concatenate independent blocks into one Gaussian.
    pub fn concat(blocks: &[DiagGaussian]) -> DiagGaussian {
        let mut mean = Vec::new();
        let mut log_std = Vec::new();
        for b in blocks {
            mean.extend_from_slice(&b.mean);
            log_std.extend_from_slice(&b.log_std);
        }
        DiagGaussian { mean, log_std }
    }
}

/// Tanh-transformed diagonal Gaussian; samples lie strictly in (-1, 1).
#[derive(Debug, Clone)]
pub struct TanhGaussian {
    pub base: DiagGaussian,
}

impl TanhGaussian {
    pub fn new(base: DiagGaussian) -> Self {
        Self { base }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `action = tanh(mu + sigma * noise)` with its log density. The log
    /// density adds the change-of-variables term `-sum ln(1 - a^2 + eps)`.
    pub fn sample_with_noise(&self, noise: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(noise.len(), self.dim(), "noise dim mismatch");
        let pre: Vec<f64> = self
            .base
            .mean()
            .iter()
            .zip(self.base.log_std())
            .zip(noise)
            .map(|((&m, &ls), &n)| m + ls.exp() * n)
            .collect();
        let action: Vec<f64> = pre
            .iter()
            .map(|&p| p.tanh().clamp(-ACTION_BOUND, ACTION_BOUND))
            .collect();
        let mut log_prob = self.base.log_prob(&pre);
        for &a in &action {
            log_prob -= (1.0 - a * a + TANH_EPS).ln();
        }
        (action, log_prob)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let noise: Vec<f64> = (0..self.dim()).map(|_| standard_normal(rng)).collect();
        self.sample_with_noise(&noise)
    }

    /// Log density of an action already in (-1, 1).
    pub fn log_prob(&self, action: &[f64]) -> f64 {
        let pre: Vec<f64> = action.iter().map(|&a| atanh_clipped(a)).collect();
        let mut lp = self.base.log_prob(&pre);
        for &a in action {
            lp -= (1.0 - a * a + TANH_EPS).ln();
        }
        lp
    }

    pub fn mean_action(&self) -> Vec<f64> {
        self.base
            .mean()
            .iter()
            .map(|&m| m.tanh().clamp(-ACTION_BOUND, ACTION_BOUND))
            .collect()
    }
}

fn atanh_clipped(a: f64) -> f64 {
    let c = a.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    0.5 * ((1.0 + c) / (1.0 - c)).ln()
}

// ---------------------------------------------------------------------------
// Graph-side building blocks. Inputs are `[batch, dim]` nodes; outputs are
// `[batch, 1]` per-row scalars unless noted.
// ---------------------------------------------------------------------------

/// Row-wise Gaussian log density: `[batch, 1]`.
pub fn gaussian_log_prob_graph(g: &mut Graph, mean: Var, log_std: Var, x: Var) -> Var {
    let k = g.value(mean).cols();
    let diff = g.sub(x, mean);
    let neg_ls = g.neg(log_std);
    let inv_std = g.exp(neg_ls);
    let z = g.mul(diff, inv_std);
    let z2 = g.square(z);
    let z2_sum = g.sum_cols(z2);
    let ls_sum = g.sum_cols(log_std);
    let mut lp = g.scale(z2_sum, -0.5);
    lp = g.sub(lp, ls_sum);
    g.add_scalar(lp, -0.5 * LN_2PI * k as f64)
}

/// Row-wise closed-form KL between diagonal Gaussians: `[batch, 1]`.
pub fn kl_diag_graph(
    g: &mut Graph,
    mean_q: Var,
    log_std_q: Var,
    mean_p: Var,
    log_std_p: Var,
) -> Var {
    let k = g.value(mean_q).cols();
    // lp - lq + (exp(2 lq) + (mq - mp)^2) * exp(-2 lp) / 2 - 1/2 per dim
    let ls_diff = g.sub(log_std_p, log_std_q);
    let two_lq = g.scale(log_std_q, 2.0);
    let vq = g.exp(two_lq);
    let mdiff = g.sub(mean_q, mean_p);
    let mdiff2 = g.square(mdiff);
    let num = g.add(vq, mdiff2);
    let neg_two_lp = g.scale(log_std_p, -2.0);
    let inv_vp = g.exp(neg_two_lp);
    let frac = g.mul(num, inv_vp);
    let half_frac = g.scale(frac, 0.5);
    let per_dim = g.add(ls_diff, half_frac);
    let summed = g.sum_cols(per_dim);
    g.add_scalar(summed, -0.5 * k as f64)
}

/// Reparameterized tanh-Gaussian sample with row-wise log density.
/// `noise` is a constant `[batch, dim]` node of standard-normal draws.
/// Returns `(action, log_prob)` where `action` is `[batch, dim]` in (-1, 1)
/// and `log_prob` is `[batch, 1]`.
pub fn tanh_gaussian_sample_graph(
    g: &mut Graph,
    mean: Var,
    log_std: Var,
    noise: Var,
) -> (Var, Var) {
    let std = g.exp(log_std);
    let scaled = g.mul(std, noise);
    let pre = g.add(mean, scaled);
    let squashed = g.tanh(pre);
    let action = g.clamp(squashed, -ACTION_BOUND, ACTION_BOUND);

    let base_lp = gaussian_log_prob_graph(g, mean, log_std, pre);
    let a2 = g.square(action);
    let neg_a2 = g.neg(a2);
    let one_minus = g.add_scalar(neg_a2, 1.0 + TANH_EPS);
    let ln_term = g.ln(one_minus);
    let corr = g.sum_cols(ln_term);
    let lp = g.sub(base_lp, corr);
    (action, lp)
}

/// Scalar KL between two plain Gaussians (convenience for tests/oracles).
pub fn kl_diag_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> f64 {
    q.kl(p)
}

/// Build constant standard-normal noise `[rows, cols]` from an RNG.
pub fn noise_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(rows, cols, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_log_prob_at_zero() {
        for k in [1usize, 3, 7] {
            let d = DiagGaussian::standard(k);
            let lp = d.log_prob(&vec![0.0; k]);
            let expected = -(k as f64 / 2.0) * LN_2PI;
            assert!((lp - expected).abs() < 1e-12, "k={k}: {lp} vs {expected}");
        }
    }

    #[test]
    fn unit_gaussian_log_prob_at_one() {
        let d = DiagGaussian::standard(1);
        let lp = d.log_prob(&[1.0]);
        let expected = -0.5 * LN_2PI - 0.5;
        assert!((lp - expected).abs() < 1e-12);
    }

    /// Quadrature oracle: normalize exp(log_prob) numerically and check the
    /// density value, independently of the closed form.
    #[test]
    fn log_prob_matches_quadrature_normalized_density() {
        let d = DiagGaussian::new(vec![0.4], vec![-0.3]);
        // Unnormalized shape from the implementation's own exponent:
        // f(x) = exp(log_prob(x)); integral over R should be 1.
        let (lo, hi) = (-10.0, 10.0);
        let n = 200_001;
        let h = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            integral += w * d.log_prob(&[x]).exp();
        }
        integral *= h / 3.0;
        assert!((integral - 1.0).abs() < 1e-9, "integral {integral}");

        // And the density at a probe point agrees with shape/integral.
        let probe = 0.9;
        let density = d.log_prob(&[probe]).exp();
        let normalized = density / integral;
        assert!((density - normalized).abs() < 1e-9);
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let d = DiagGaussian::new(vec![0.3, -1.0], vec![0.2, -0.5]);
        assert_eq!(d.kl(&d), 0.0);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let q = DiagGaussian::new(vec![1.0], vec![0.0]);
        let p = DiagGaussian::new(vec![0.0], vec![0.0]);
        assert!((q.kl(&p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let dim = 3;
            let q = DiagGaussian::new(
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..dim).map(|_| rng.gen_range(-1.0..0.5)).collect(),
            );
            let p = DiagGaussian::new(
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..dim).map(|_| rng.gen_range(-1.0..0.5)).collect(),
            );
            let n = 100_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let v = q.sample(&mut rng);
                let diff = q.log_prob(&v) - p.log_prob(&v);
                sum += diff;
                sumsq += diff * diff;
            }
            let mc = sum / n as f64;
            let var = (sumsq / n as f64 - mc * mc).max(0.0);
            let se = (var / n as f64).sqrt();
            let exact = q.kl(&p);
            assert!(
                (mc - exact).abs() < 3.0 * se + 1e-9,
                "mc {mc} exact {exact} se {se}"
            );
        }
    }

    proptest::proptest! {
        #[test]
        fn kl_is_non_negative(
            mq in proptest::collection::vec(-3.0f64..3.0, 1..5),
            lq in proptest::collection::vec(-2.0f64..1.0, 1..5),
            mp in proptest::collection::vec(-3.0f64..3.0, 1..5),
            lp in proptest::collection::vec(-2.0f64..1.0, 1..5),
        ) {
            let dim = mq.len().min(lq.len()).min(mp.len()).min(lp.len());
            let q = DiagGaussian::new(mq[..dim].to_vec(), lq[..dim].to_vec());
            let p = DiagGaussian::new(mp[..dim].to_vec(), lp[..dim].to_vec());
            proptest::prop_assert!(q.kl(&p) >= 0.0);
        }

        #[test]
        fn tanh_samples_stay_in_open_interval(
            m in proptest::collection::vec(-5.0f64..5.0, 1..6),
            ls in proptest::collection::vec(-3.0f64..2.0, 1..6),
            seed in 0u64..1000,
        ) {
            let dim = m.len().min(ls.len());
            let d = TanhGaussian::new(DiagGaussian::new(m[..dim].to_vec(), ls[..dim].to_vec()));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, _) = d.sample(&mut rng);
            for &ai in &a {
                proptest::prop_assert!(ai > -1.0 && ai < 1.0);
            }
        }
    }

    #[test]
    fn tanh_zero_noise_zero_mean() {
        let d = TanhGaussian::new(DiagGaussian::new(vec![0.0, 0.0], vec![0.0, 0.0]));
        let (a, lp) = d.sample_with_noise(&[0.0, 0.0]);
        assert_eq!(a, vec![0.0, 0.0]);
        // Correction term ln(1 - 0 + eps) ~ eps, so lp ~ base log prob at 0.
        let base = d.base.log_prob(&[0.0, 0.0]);
        assert!((lp - base).abs() < 3e-6, "lp {lp} base {base}");
    }

    /// Quadrature oracle for the squashed density: integrate the implemented
    /// density over (-1, 1) via the substitution a = tanh(x), which keeps the
    /// integrand well-conditioned near the boundary.
    pub(crate) fn tanh_density_integral(d: &TanhGaussian) -> f64 {
        assert_eq!(d.dim(), 1);
        let m = d.base.mean()[0];
        let s = d.base.log_std()[0].exp();
        let (lo, hi) = (m - 9.0 * s, m + 9.0 * s);
        let n = 40_001;
        let h = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let a = x.tanh();
            let jac = 1.0 - a * a; // da/dx
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            integral += w * d.log_prob(&[a]).exp() * jac;
        }
        integral * h / 3.0
    }

    #[test]
    fn tanh_density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..8 {
            let m = rng.gen_range(-1.5..1.5);
            let ls = rng.gen_range(-1.2..0.4);
            let d = TanhGaussian::new(DiagGaussian::new(vec![m], vec![ls]));
            let integral = tanh_density_integral(&d);
            assert!(
                (integral - 1.0).abs() < 1e-3,
                "m={m} ls={ls}: integral {integral}"
            );
        }
    }

    #[test]
    fn graph_log_prob_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let batch = 4;
        let dim = 3;
        let mean = Tensor::rand_uniform(batch, dim, -1.0, 1.0, &mut rng);
        let log_std = Tensor::rand_uniform(batch, dim, -1.0, 0.5, &mut rng);
        let x = Tensor::rand_uniform(batch, dim, -2.0, 2.0, &mut rng);

        let mut g = Graph::new();
        let (m, ls, xv) = (
            g.constant(mean.clone()),
            g.constant(log_std.clone()),
            g.constant(x.clone()),
        );
        let lp = gaussian_log_prob_graph(&mut g, m, ls, xv);
        for i in 0..batch {
            let d = DiagGaussian::new(mean.row_slice(i).to_vec(), log_std.row_slice(i).to_vec());
            let expected = d.log_prob(x.row_slice(i));
            let got = g.value(lp).data()[i];
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_kl_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let batch = 5;
        let dim = 4;
        let mq = Tensor::rand_uniform(batch, dim, -1.0, 1.0, &mut rng);
        let lq = Tensor::rand_uniform(batch, dim, -1.5, 0.5, &mut rng);
        let mp = Tensor::rand_uniform(batch, dim, -1.0, 1.0, &mut rng);
        let lp = Tensor::rand_uniform(batch, dim, -1.5, 0.5, &mut rng);

        let mut g = Graph::new();
        let vars = (
            g.constant(mq.clone()),
            g.constant(lq.clone()),
            g.constant(mp.clone()),
            g.constant(lp.clone()),
        );
        let kl = kl_diag_graph(&mut g, vars.0, vars.1, vars.2, vars.3);
        for i in 0..batch {
            let q = DiagGaussian::new(mq.row_slice(i).to_vec(), lq.row_slice(i).to_vec());
            let p = DiagGaussian::new(mp.row_slice(i).to_vec(), lp.row_slice(i).to_vec());
            let expected = q.kl(&p);
            let got = g.value(kl).data()[i];
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn graph_tanh_sample_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let batch = 3;
        let dim = 2;
        let mean = Tensor::rand_uniform(batch, dim, -1.0, 1.0, &mut rng);
        let log_std = Tensor::rand_uniform(batch, dim, -1.0, 0.3, &mut rng);
        let noise = Tensor::randn(batch, dim, &mut rng);

        let mut g = Graph::new();
        let (m, ls, nz) = (
            g.constant(mean.clone()),
            g.constant(log_std.clone()),
            g.constant(noise.clone()),
        );
        let (a, lp) = tanh_gaussian_sample_graph(&mut g, m, ls, nz);
        for i in 0..batch {
            let d = TanhGaussian::new(DiagGaussian::new(
                mean.row_slice(i).to_vec(),
                log_std.row_slice(i).to_vec(),
            ));
            let (ea, elp) = d.sample_with_noise(noise.row_slice(i));
            for (x, y) in g.value(a).row_slice(i).iter().zip(&ea) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((g.value(lp).data()[i] - elp).abs() < 1e-10);
        }
    }
}
