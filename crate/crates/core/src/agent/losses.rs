//! Loss terms and reward shaping on the differentiation tape.

use super::config::ModelLoss;
use super::AgentError;
use crate::diff::{DiffError, Tape, Tensor, Var};

/// `beta0 * max(0, 1 - t / horizon)`.
pub fn beta_schedule(t: usize, beta0: f64, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    beta0 * (1.0 - t as f64 / horizon as f64).max(0.0)
}

/// Prediction-error curiosity: `beta * |predicted - actual| + r_ext`.
pub fn compute_total_reward(r_ext: f64, s_actual: &[f64], s_predicted: &[f64], beta: f64) -> f64 {
    beta * intrinsic_reward(s_actual, s_predicted) + r_ext
}

pub fn intrinsic_reward(s_actual: &[f64], s_predicted: &[f64]) -> f64 {
    s_actual
        .iter()
        .zip(s_predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum::<f64>()
        .sqrt()
}

/// Mean of `x` over entries where `mask` is 1.
pub fn masked_mean(tape: &mut Tape, x: Var, mask: &Tensor) -> Result<Var, DiffError> {
    let count = mask.sum();
    let m = tape.constant(mask.clone());
    let xm = tape.mul(x, m)?;
    let s = tape.sum(xm);
    Ok(tape.scale(s, 1.0 / count.max(1.0)))
}

fn leading(t: &Tensor) -> usize {
    t.shape().first().copied().unwrap_or(1)
}

fn check_rows(what: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AgentError> {
    if leading(a) != leading(b) {
        return Err(AgentError::Misaligned {
            what,
            left: leading(a),
            right: leading(b),
        });
    }
    Ok(())
}

/// Mean residual size between predicted and (stop-gradient) target states.
/// Returns the loss and the per-row residual sizes.
pub fn compute_model_loss(
    tape: &mut Tape,
    predicted: Var,
    target: Var,
    mask: &Tensor,
    kind: ModelLoss,
) -> Result<(Var, Var), AgentError> {
    check_rows("model target", tape.value(predicted), tape.value(target))?;
    check_rows("model mask", tape.value(predicted), mask)?;
    let target = tape.stop_gradient(target);
    let residual = tape.sub(predicted, target)?;
    let per_row = match kind {
        ModelLoss::L2Norm => tape.norm_last(residual)?,
        ModelLoss::L1 => {
            // |x| = relu(x) + relu(-x)
            let pos = tape.relu(residual);
            let n = tape.neg(residual);
            let neg = tape.relu(n);
            let abs = tape.add(pos, neg)?;
            tape.sum_last(abs)?
        }
    };
    let loss = masked_mean(tape, per_row, mask)?;
    Ok((loss, per_row))
}

/// Soft Bellman target `r + (1 - d) * gamma * (min_q' - alpha * log_pi')`,
/// wrapped in a gradient barrier.
pub fn q_target(
    tape: &mut Tape,
    rewards: &Tensor,
    dones: &Tensor,
    gamma: f64,
    alpha: f64,
    min_target_q: Var,
    next_log_prob: Var,
) -> Result<Var, AgentError> {
    check_rows("q target rewards", tape.value(min_target_q), rewards)?;
    check_rows("q target dones", tape.value(min_target_q), dones)?;
    let ent = tape.scale(next_log_prob, alpha);
    let soft = tape.sub(min_target_q, ent)?;
    let cont = tape.constant(dones.map(|d| gamma * (1.0 - d)));
    let boot = tape.mul(soft, cont)?;
    let r = tape.constant(rewards.clone());
    let y = tape.add(r, boot)?;
    Ok(tape.stop_gradient(y))
}

/// Masked mean squared error between `q` and the (constant) target `y`.
pub fn compute_q_loss(tape: &mut Tape, q: Var, y: Var, mask: &Tensor) -> Result<Var, AgentError> {
    check_rows("q loss", tape.value(q), tape.value(y))?;
    let y = tape.stop_gradient(y);
    let d = tape.sub(q, y)?;
    let sq = tape.square(d);
    Ok(masked_mean(tape, sq, mask)?)
}

/// `mean(alpha * log_pi - q)`: the negated entropy-regularized objective.
pub fn compute_policy_loss(tape: &mut Tape, q: Var, log_prob: Var, alpha: f64, mask: &Tensor) -> Result<Var, AgentError> {
    check_rows("policy loss", tape.value(q), tape.value(log_prob))?;
    let ent = tape.scale(log_prob, alpha);
    let d = tape.sub(ent, q)?;
    Ok(masked_mean(tape, d, mask)?)
}

/// `mean(-alpha * log_pi - alpha * target_entropy)` with `alpha =
/// exp(log_alpha)`; only `log_alpha` can receive gradient.
pub fn compute_temperature_loss(
    tape: &mut Tape,
    log_alpha: Var,
    log_probs: &Tensor,
    target_entropy: f64,
    mask: &Tensor,
) -> Result<Var, AgentError> {
    let alpha = tape.exp(log_alpha);
    let k = tape.constant(log_probs.map(|lp| -(lp + target_entropy)));
    let per = tape.mul_scalar(k, alpha)?;
    Ok(masked_mean(tape, per, mask)?)
}
