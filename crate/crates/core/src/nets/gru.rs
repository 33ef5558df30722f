use rand::Rng;

use super::{check_dim, Bound, NetError, ParamGroup};
use crate::diff::{Tape, Tensor, Var};

/// GRU cell encoding `(observation, previous action, previous state)` into
/// the next hidden state.
///
/// Input weights are `[input_dim, hidden]`, recurrent weights
/// `[hidden, hidden]`, where `input_dim = obs_dim + action_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden_dim: usize,
    pub w_update: Tensor,
    pub w_reset: Tensor,
    pub w_cand: Tensor,
    pub u_update: Tensor,
    pub u_reset: Tensor,
    pub u_cand: Tensor,
    pub b_update: Tensor,
    pub b_reset: Tensor,
    pub b_cand: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_cand: Var,
    pub u_update: Var,
    pub u_reset: Var,
    pub u_cand: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_cand: Var,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let input = obs_dim + action_dim;
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let mut w = || Tensor::uniform(&[input, hidden_dim], k, rng);
        let (w_update, w_reset, w_cand) = (w(), w(), w());
        let mut u = || Tensor::uniform(&[hidden_dim, hidden_dim], k, rng);
        let (u_update, u_reset, u_cand) = (u(), u(), u());
        let mut b = || Tensor::uniform(&[hidden_dim], k, rng);
        let (b_update, b_reset, b_cand) = (b(), b(), b());
        Self {
            obs_dim,
            action_dim,
            hidden_dim,
            w_update,
            w_reset,
            w_cand,
            u_update,
            u_reset,
            u_cand,
            b_update,
            b_reset,
            b_cand,
        }
    }

    pub fn zeros(obs_dim: usize, action_dim: usize, hidden_dim: usize) -> Self {
        let input = obs_dim + action_dim;
        let w = || Tensor::zeros(&[input, hidden_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        Self {
            obs_dim,
            action_dim,
            hidden_dim,
            w_update: w(),
            w_reset: w(),
            w_cand: w(),
            u_update: u(),
            u_reset: u(),
            u_cand: u(),
            b_update: b(),
            b_reset: b(),
            b_cand: b(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GruVars {
        let vars: Vec<Var> = self.params().into_iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
        GruVars::from_vars(&vars)
    }

    /// One step on a batch: `obs [B, obs]`, `prev_action [B, act]`,
    /// `h [B, hidden]`.
    pub fn step(&self, tape: &mut Tape, vars: &GruVars, obs: Var, prev_action: Var, h: Var) -> Result<Var, NetError> {
        check_dim("gru observation", self.obs_dim, tape.value(obs).last_dim())?;
        check_dim("gru previous action", self.action_dim, tape.value(prev_action).last_dim())?;
        check_dim("gru hidden state", self.hidden_dim, tape.value(h).last_dim())?;
        vars.step(tape, obs, prev_action, h)
    }
}

impl GruVars {
    pub fn from_vars(v: &[Var]) -> Self {
        Self {
            w_update: v[0],
            w_reset: v[1],
            w_cand: v[2],
            u_update: v[3],
            u_reset: v[4],
            u_cand: v[5],
            b_update: v[6],
            b_reset: v[7],
            b_cand: v[8],
        }
    }

    /// `z = sigmoid(Wz x + Uz h + bz)`, `r = sigmoid(Wr x + Ur h + br)`,
    /// `n = tanh(Wn x + r * (Un h) + bn)`, `h' = (1 - z) * n + z * h`.
    pub fn step(&self, tape: &mut Tape, obs: Var, prev_action: Var, h: Var) -> Result<Var, NetError> {
        let x = tape.concat_last(&[obs, prev_action])?;

        let xz = tape.matmul(x, self.w_update)?;
        let hz = tape.matmul(h, self.u_update)?;
        let z = tape.add(xz, hz)?;
        let z = tape.add_row(z, self.b_update)?;
        let z = tape.sigmoid(z);

        let xr = tape.matmul(x, self.w_reset)?;
        let hr = tape.matmul(h, self.u_reset)?;
        let r = tape.add(xr, hr)?;
        let r = tape.add_row(r, self.b_reset)?;
        let r = tape.sigmoid(r);

        let xn = tape.matmul(x, self.w_cand)?;
        let hn = tape.matmul(h, self.u_cand)?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.add_row(n, self.b_cand)?;
        let n = tape.tanh(n);

        // h' = n + z * (h - n)
        let diff = tape.sub(h, n)?;
        let keep = tape.mul(z, diff)?;
        Ok(tape.add(n, keep)?)
    }
}

impl ParamGroup for GruParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.w_update,
            &self.w_reset,
            &self.w_cand,
            &self.u_update,
            &self.u_reset,
            &self.u_cand,
            &self.b_update,
            &self.b_reset,
            &self.b_cand,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_update,
            &mut self.w_reset,
            &mut self.w_cand,
            &mut self.u_update,
            &mut self.u_reset,
            &mut self.u_cand,
            &mut self.b_update,
            &mut self.b_reset,
            &mut self.b_cand,
        ]
    }

    fn param_names(&self) -> Vec<String> {
        ["w_update", "w_reset", "w_cand", "u_update", "u_reset", "u_cand", "b_update", "b_reset", "b_cand"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

impl Bound for GruVars {
    fn vars(&self) -> Vec<Var> {
        vec![
            self.w_update,
            self.w_reset,
            self.w_cand,
            self.u_update,
            self.u_reset,
            self.u_cand,
            self.b_update,
            self.b_reset,
            self.b_cand,
        ]
    }
}
