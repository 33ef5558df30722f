use std::f64::consts::{LN_2, PI};

use rand::Rng;

use super::{check_dim, Bound, Linear, LinearVars, Mlp, MlpVars, NetError, ParamGroup};
use crate::diff::{Tape, Tensor, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Squashed-Gaussian policy: a relu trunk followed by separate mean and
/// log-std output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub state_dim: usize,
    pub action_dim: usize,
    pub trunk: Mlp,
    pub mean: Linear,
    pub log_std: Linear,
}

#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub trunk: MlpVars,
    pub mean: LinearVars,
    pub log_std: LinearVars,
}

/// Output of a reparameterized policy draw.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    /// `tanh(u)`, shape `[B, action]`.
    pub action: Var,
    /// Log-density of `action`, shape `[B]`.
    pub log_prob: Var,
    /// Pre-squash sample `u = mean + std * xi`.
    pub pre_squash: Var,
    /// `tanh(mean)`, the deterministic mode action.
    pub mode: Var,
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        let feat = *sizes.last().expect("non-empty");
        Self {
            state_dim,
            action_dim,
            trunk: Mlp::new(&sizes, rng),
            mean: Linear::new(feat, action_dim, rng),
            log_std: Linear::new(feat, action_dim, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> PolicyVars {
        PolicyVars {
            trunk: self.trunk.bind(tape, trainable),
            mean: self.mean.bind(tape, trainable),
            log_std: self.log_std.bind(tape, trainable),
        }
    }

    /// Reparameterized draw `tanh(mean(s) + std(s) * xi)` with its log-density.
    pub fn sample(&self, tape: &mut Tape, vars: &PolicyVars, state: Var, xi: &Tensor) -> Result<PolicySample, NetError> {
        check_dim("policy state", self.state_dim, tape.value(state).last_dim())?;
        check_dim("policy noise", self.action_dim, xi.last_dim())?;
        vars.sample(tape, state, xi)
    }
}

impl PolicyVars {
    pub fn from_vars(v: &[Var]) -> Self {
        let n = v.len();
        Self {
            trunk: MlpVars::from_vars(&v[..n - 4]),
            mean: LinearVars { w: v[n - 4], b: v[n - 3] },
            log_std: LinearVars { w: v[n - 2], b: v[n - 1] },
        }
    }

    /// Mean and clamped log-std of the pre-squash Gaussian.
    pub fn distribution(&self, tape: &mut Tape, state: Var) -> Result<(Var, Var), NetError> {
        let f = self.trunk.features(tape, state)?;
        let mean = self.mean.forward(tape, f)?;
        let raw = self.log_std.forward(tape, f)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }

    pub fn sample(&self, tape: &mut Tape, state: Var, xi: &Tensor) -> Result<PolicySample, NetError> {
        let (mean, log_std) = self.distribution(tape, state)?;
        let std = tape.exp(log_std);
        if !tape.value(std).all_finite() {
            return Err(NetError::NonFiniteStd);
        }
        let xi_var = tape.constant(xi.clone());
        let noise = tape.mul(std, xi_var)?;
        let u = tape.add(mean, noise)?;
        let action = tape.tanh(u);
        let mode = tape.tanh(mean);

        // Gaussian density of u evaluated through xi = (u - mean) / std
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let gauss_const = tape.constant(xi.map(|x| -0.5 * x * x - half_log_2pi));
        let neg_log_std = tape.neg(log_std);
        let gauss = tape.add(neg_log_std, gauss_const)?;
        let gauss = tape.sum_last(gauss)?;

        // log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
        let m2u = tape.scale(u, -2.0);
        let sp = tape.softplus(m2u);
        let t = tape.add(u, sp)?;
        let t = tape.neg(t);
        let t = tape.offset(t, LN_2);
        let t = tape.scale(t, 2.0);
        let correction = tape.sum_last(t)?;
        let log_prob = tape.sub(gauss, correction)?;
        Ok(PolicySample {
            action,
            log_prob,
            pre_squash: u,
            mode,
        })
    }

    /// Deterministic action `tanh(mean(s))`.
    pub fn mode(&self, tape: &mut Tape, state: Var) -> Result<Var, NetError> {
        let (mean, _) = self.distribution(tape, state)?;
        Ok(tape.tanh(mean))
    }
}

impl ParamGroup for PolicyParams {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.trunk.params();
        v.extend([&self.mean.w, &self.mean.b, &self.log_std.w, &self.log_std.b]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.trunk.params_mut();
        v.extend([&mut self.mean.w, &mut self.mean.b, &mut self.log_std.w, &mut self.log_std.b]);
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.trunk.param_names().into_iter().map(|n| format!("trunk.{n}")).collect();
        v.extend(["mean.w", "mean.b", "log_std.w", "log_std.b"].map(String::from));
        v
    }
}

impl Bound for PolicyVars {
    fn vars(&self) -> Vec<Var> {
        let mut v = self.trunk.vars();
        v.extend([self.mean.w, self.mean.b, self.log_std.w, self.log_std.b]);
        v
    }
}

/// Twin Q heads mapping `state ++ action` to a scalar, with target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
}

#[derive(Debug, Clone)]
pub struct QVars {
    pub net: MlpVars,
}

impl QParams {
    /// Targets start equal to the online heads.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let online = [Mlp::new(&sizes, rng), Mlp::new(&sizes, rng)];
        Self {
            target: online.clone(),
            online,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.online[0].input_dim()
    }
}

impl QVars {
    pub fn bind(net: &Mlp, tape: &mut Tape, trainable: bool) -> Self {
        Self {
            net: net.bind(tape, trainable),
        }
    }

    /// `Q(s, a)` for a batch, shape `[B]`.
    pub fn value(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var, NetError> {
        let x = tape.concat_last(&[state, action])?;
        let q = self.net.forward(tape, x)?;
        let rows = tape.value(q).rows();
        Ok(tape.reshape(q, &[rows])?)
    }
}

/// Residual next-state predictor `s + delta(s ++ a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub state_dim: usize,
    pub action_dim: usize,
    pub delta: Mlp,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub delta: MlpVars,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        Self {
            state_dim,
            action_dim,
            delta: Mlp::new(&sizes, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            delta: self.delta.bind(tape, trainable),
        }
    }

    pub fn predict(&self, tape: &mut Tape, vars: &ModelVars, state: Var, action: Var) -> Result<Var, NetError> {
        check_dim("model state", self.state_dim, tape.value(state).last_dim())?;
        check_dim("model action", self.action_dim, tape.value(action).last_dim())?;
        vars.predict(tape, state, action)
    }
}

impl ModelVars {
    pub fn predict(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var, NetError> {
        let x = tape.concat_last(&[state, action])?;
        let d = self.delta.forward(tape, x)?;
        Ok(tape.add(state, d)?)
    }
}

impl ParamGroup for ModelParams {
    fn params(&self) -> Vec<&Tensor> {
        self.delta.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.delta.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.delta.param_names()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{central_difference, grad_check, DiffError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unwrap_diff(e: NetError) -> DiffError {
        match e {
            NetError::Diff(d) => d,
            other => panic!("{other}"),
        }
    }

    /// Policy whose mean and log-std are the given constants for every state.
    fn constant_policy(mean: f64, log_std: f64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyParams::new(2, 1, &[4], &mut rng);
        p.mean = Linear::zeros(4, 1);
        p.mean.b.data_mut()[0] = mean;
        p.log_std = Linear::zeros(4, 1);
        p.log_std.b.data_mut()[0] = log_std;
        p
    }

    fn sample_1d(p: &PolicyParams, xi: f64) -> (f64, f64) {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let s = tape.constant(Tensor::matrix(1, 2, vec![0.3, -0.1]).unwrap());
        let out = p.sample(&mut tape, &vars, s, &Tensor::matrix(1, 1, vec![xi]).unwrap()).unwrap();
        (tape.value(out.action).item(), tape.value(out.log_prob).item())
    }

    #[test]
    fn standard_normal_mode() {
        let p = constant_policy(0.0, 0.0);
        let (a, lp) = sample_1d(&p, 0.0);
        assert_eq!(a, 0.0);
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn density_integrates_to_one() {
        // change of variables: p(a) = N(atanh a; mu, sigma) / (1 - a^2)
        let mu = 0.5;
        let sigma: f64 = 0.8;
        let p = constant_policy(mu, sigma.ln());
        // integrate over u with a = tanh(u), da = (1 - a^2) du
        let n = 40_000;
        let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let u = lo + i as f64 * h;
            let xi = (u - mu) / sigma;
            let (a, lp) = sample_1d(&p, xi);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * lp.exp() * (1.0 - a * a) * h;
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn log_prob_gradient_wrt_mean_and_log_std() {
        let xi = Tensor::matrix(3, 2, vec![0.3, -1.2, 0.8, 0.1, -0.5, 2.0]).unwrap();
        let f = |t: &mut Tape, v: &[Var]| {
            let noise = t.constant(xi.clone());
            let std = t.exp(v[1]);
            let n = t.mul(std, noise)?;
            let u = t.add(v[0], n)?;
            // same formula as PolicyVars::sample, driven by raw mean/log-std
            let half = 0.5 * (2.0 * PI).ln();
            let c = t.constant(xi.map(|x| -0.5 * x * x - half));
            let nl = t.neg(v[1]);
            let g = t.add(nl, c)?;
            let g = t.sum_last(g)?;
            let m2u = t.scale(u, -2.0);
            let sp = t.softplus(m2u);
            let k = t.add(u, sp)?;
            let k = t.neg(k);
            let k = t.offset(k, LN_2);
            let k = t.scale(k, 2.0);
            let corr = t.sum_last(k)?;
            let lp = t.sub(g, corr)?;
            Ok(t.sum(lp))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let log_std = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        assert!(grad_check::<_, DiffError>(f, &[mean, log_std], 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn log_prob_is_at_least_gaussian_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PolicyParams::new(3, 2, &[8], &mut rng);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let s = tape.constant(Tensor::uniform(&[16, 3], 2.0, &mut rng));
        let xi = Tensor::uniform(&[16, 2], 2.0, &mut rng);
        let out = p.sample(&mut tape, &vars, s, &xi).unwrap();
        let (_, log_std) = vars.distribution(&mut tape, s).unwrap();
        let ls = tape.value(log_std).clone();
        let lp = tape.value(out.log_prob);
        for (i, &l) in lp.data().iter().enumerate() {
            let gauss: f64 = (0..2)
                .map(|j| -0.5 * xi.row(i)[j].powi(2) - ls.row(i)[j] - 0.5 * (2.0 * PI).ln())
                .sum();
            assert!(l >= gauss - 1e-12);
            for &a in tape.value(out.action).row(i) {
                assert!(a.abs() < 1.0);
            }
        }
    }

    #[test]
    fn zero_output_q_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut q = QParams::new(4, 2, &[8, 8], &mut rng);
        q.online[0].zero_output_layer();
        let mut tape = Tape::new();
        let v = QVars::bind(&q.online[0], &mut tape, false);
        let s = tape.constant(Tensor::uniform(&[5, 4], 2.0, &mut rng));
        let a = tape.constant(Tensor::uniform(&[5, 2], 1.0, &mut rng));
        let out = v.value(&mut tape, s, a).unwrap();
        assert_eq!(tape.value(out), &Tensor::zeros(&[5]));
    }

    #[test]
    fn twin_heads_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut q = QParams::new(4, 2, &[8], &mut rng);
        let s = Tensor::uniform(&[3, 4], 2.0, &mut rng);
        let a = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let eval = |net: &Mlp| {
            let mut tape = Tape::new();
            let v = QVars::bind(net, &mut tape, false);
            let sv = tape.constant(s.clone());
            let av = tape.constant(a.clone());
            let out = v.value(&mut tape, sv, av).unwrap();
            tape.value(out).clone()
        };
        let q1 = eval(&q.online[0]);
        let q2 = eval(&q.online[1]);
        assert_ne!(q1, q2);
        q.online[0].layers[0].w.data_mut()[0] += 0.5;
        let q2_after = eval(&q.online[1]);
        assert!(q2.data().iter().zip(q2_after.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(eval(&q.online[0]), q1);
    }

    #[test]
    fn q_gradient_wrt_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = QParams::new(3, 2, &[6, 6], &mut rng);
        let s = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let net = q.online[0].clone();
        let f = |t: &mut Tape, v: &[Var]| {
            let qv = QVars::bind(&net, t, false);
            let sv = t.constant(s.clone());
            let out = qv.value(t, sv, v[0]).map_err(unwrap_diff)?;
            Ok(t.sum(out))
        };
        let a = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        assert!(grad_check::<_, DiffError>(f, &[a], 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn zero_delta_model_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = ModelParams::new(5, 2, &[8], &mut rng);
        m.delta.zero_output_layer();
        let mut tape = Tape::new();
        let v = m.bind(&mut tape, false);
        let s = Tensor::uniform(&[3, 5], 1.0, &mut rng);
        let sv = tape.constant(s.clone());
        let a = tape.constant(Tensor::uniform(&[3, 2], 1.0, &mut rng));
        let out = m.predict(&mut tape, &v, sv, a).unwrap();
        assert_eq!(tape.value(out), &s);
        assert_eq!(tape.value(out).shape(), &[3, 5]);
    }

    #[test]
    fn model_norm_gradient_wrt_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = ModelParams::new(3, 1, &[5], &mut rng);
        let s = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let a = Tensor::uniform(&[4, 1], 1.0, &mut rng);
        let f = |t: &mut Tape, v: &[Var]| {
            let mv = ModelVars {
                delta: MlpVars::from_vars(v),
            };
            let sv = t.constant(s.clone());
            let av = t.constant(a.clone());
            let out = mv.predict(t, sv, av).map_err(unwrap_diff)?;
            let n = t.norm_last(out)?;
            Ok(t.sum(n))
        };
        let params: Vec<Tensor> = m.params().into_iter().cloned().collect();
        assert!(grad_check::<_, DiffError>(f, &params, 1e-5).unwrap() < 1e-5);
        // the oracle itself is usable directly as well
        assert_eq!(central_difference::<_, DiffError>(&f, &params, 1e-5).unwrap().len(), params.len());
    }
}
