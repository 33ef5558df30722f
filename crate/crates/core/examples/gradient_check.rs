//! Compare tape gradients of an unrolled GRU against central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmc::diff::{grad_check, Tensor};
use rmc::nets::{GruParams, GruVars, NetError, ParamGroup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (obs_dim, act_dim, hidden, steps) = (3, 1, 5, 8);
    let gru = GruParams::new(obs_dim, act_dim, hidden, &mut rng);
    let obs: Vec<Tensor> = (0..steps).map(|_| Tensor::uniform(&[1, obs_dim], 1.0, &mut rng)).collect();
    let acts: Vec<Tensor> = (0..steps).map(|_| Tensor::uniform(&[1, act_dim], 1.0, &mut rng)).collect();
    let params: Vec<Tensor> = gru.params().into_iter().cloned().collect();

    let err = grad_check(
        |tape, vars| -> Result<_, NetError> {
            let g = GruVars::from_vars(vars);
            let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
            for (o, a) in obs.iter().zip(&acts) {
                let o = tape.constant(o.clone());
                let a = tape.constant(a.clone());
                h = g.step(tape, o, a, h)?;
            }
            let sq = tape.square(h);
            Ok(tape.sum(sq))
        },
        &params,
        1e-5,
    )?;
    println!("{} parameters, max relative error {err:.2e}", gru.num_params());
    Ok(())
}
