use super::{DiffError, Tape, Tensor, Var};

/// Central-difference gradient of a scalar function of `params`.
pub fn central_difference<F, E>(f: &F, params: &[Tensor], eps: f64) -> Result<Vec<Tensor>, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<DiffError>,
{
    let eval = |ps: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Tensor::zeros(params[i].shape());
        for j in 0..params[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let hi = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let lo = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (hi - lo) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every parameter
/// element, using central differences with step `eps`.
pub fn grad_check<F, E>(f: F, params: &[Tensor], eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<DiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let analytic = tape.backward(loss)?.collect(&vars);
    let numeric = central_difference(&f, params, eps)?;
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let f = |t: &mut Tape, v: &[Var]| {
            let c = t.constant(Tensor::vector(vec![3.0, 1.0, -2.0]));
            let y = t.mul(v[0], c)?;
            Ok(t.sum(y))
        };
        assert!(grad_check::<_, DiffError>(f, &[w], 1e-5).unwrap() < 1e-10);
    }
}
