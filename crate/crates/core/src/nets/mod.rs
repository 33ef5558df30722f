//! Function approximators built on the differentiation tape: the GRU state
//! encoder, feed-forward trunks, and the policy, twin-Q and model heads.
//!
//! Every parameter record owns plain [`Tensor`]s. To run a forward pass the
//! record is first *bound* onto a [`Tape`], producing a struct of [`Var`]
//! handles whose [`Bound::vars`] order matches [`ParamGroup::params`].

mod gru;
mod heads;
mod mlp;

pub use gru::{GruParams, GruVars};
pub use heads::{ModelParams, ModelVars, PolicyParams, PolicySample, PolicyVars, QParams, QVars, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{Linear, LinearVars, Mlp, MlpVars};

use thiserror::Error;

use crate::diff::{DiffError, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("policy produced a non-finite standard deviation")]
    NonFiniteStd,
}

/// A named collection of parameter tensors.
pub trait ParamGroup {
    /// Parameter tensors in a fixed order.
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Names matching [`ParamGroup::params`] order.
    fn param_names(&self) -> Vec<String>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Parameters bound onto a tape.
pub trait Bound {
    fn vars(&self) -> Vec<Var>;
}

/// `target <- rho * target + (1 - rho) * online`, elementwise.
pub fn polyak_update<P: ParamGroup>(target: &mut P, online: &P, rho: f64) {
    for (t, o) in target.params_mut().into_iter().zip(online.params()) {
        for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = rho * *x + (1.0 - rho) * y;
        }
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), NetError> {
    if expected != got {
        return Err(NetError::Dim { what, expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polyak_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let online = Mlp::new(&[3, 4, 1], &mut rng);
        let mut target = Mlp::new(&[3, 4, 1], &mut rng);
        let before = target.clone();
        polyak_update(&mut target, &online, 1.0);
        assert_eq!(target, before);
        polyak_update(&mut target, &online, 0.0);
        assert_eq!(target, online);
    }

    #[test]
    fn polyak_affine_value() {
        let mut t = Linear::zeros(1, 1);
        t.w.data_mut()[0] = 1.0;
        let o = Linear::zeros(1, 1);
        let mut tm = Mlp::from_layers(vec![t]);
        polyak_update(&mut tm, &Mlp::from_layers(vec![o]), 0.995);
        assert!((tm.layers[0].w.item() - 0.995).abs() < 1e-15);
    }
}
