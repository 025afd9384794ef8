//! Central finite differences against the tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{rng_for, CheckResult, VerifyError};
use crate::losses::{compute_weights, consistency_loss, spc_loss, spc_loss_with_mixture, supervised_ce, total_loss, GroundTruthMask, MixtureStats};
use crate::model::{SegNetTiny, Transform};
use crate::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
pub const QUADRATIC_TOL: f64 = 1e-10;
const SIDE: usize = 6;

/// Deliberate corruption used to prove the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate every tape gradient before comparison.
    FlipGradientSign,
}

type Objective<'a> = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, VerifyError> + 'a;

fn value_at(inputs: &[Tensor], f: &Objective<'_>) -> Result<f64, VerifyError> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    Ok(f(&tape, &vars)?.item())
}

/// `|g_tape - g_fd| / max(|g_tape|, |g_fd|)` over all inputs, in the
/// Euclidean norm.
fn fd_error(inputs: &[Tensor], f: &Objective<'_>, fault: Option<Fault>) -> Result<f64, VerifyError> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.get_or_zeros(v).into_data()).collect();
    if fault == Some(Fault::FlipGradientSign) {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = value_at(&work, f)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let down = value_at(&work, f)?;
            work[i].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    Ok(if scale == 0.0 { 0.0 } else { norm(&diff) / scale })
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).expect("shape")
}

fn random_mask(rng: &mut ChaCha8Rng, classes: usize) -> GroundTruthMask {
    let labels = (0..SIDE * SIDE).map(|_| rng.random_range(0..classes as u8)).collect();
    GroundTruthMask::from_labels(classes, SIDE, SIDE, labels).expect("valid labels")
}

fn mixture_of(values: &[Tensor]) -> Result<MixtureStats, VerifyError> {
    let refs: Vec<&Tensor> = values.iter().collect();
    // a moderate pace so some pixels are down-weighted
    Ok(compute_weights(&refs, 0.3, 0.01)?.1)
}

fn quadratic(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<CheckResult, VerifyError> {
    // central differences are exact here up to rounding, which scales with |f| / h
    let x = normal_tensor(rng, &[3, 4], 0.1);
    let c = normal_tensor(rng, &[3, 4], 1.0);
    let f: &Objective<'_> = &|tape, v| Ok(v[0].mul(tape.constant(c.clone()))?.square().sum());
    Ok(CheckResult::new("grad_quadratic", 1, fd_error(&[x], f, fault)?, QUADRATIC_TOL))
}

fn supervised(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<CheckResult, VerifyError> {
    let classes = 3;
    let z = normal_tensor(rng, &[classes, SIDE, SIDE], 1.5);
    let y = random_mask(rng, classes);
    let f: &Objective<'_> = &|_, v| Ok(supervised_ce(v[0].softmax_channels()?, &y)?);
    Ok(CheckResult::new("grad_supervised_ce", 1, fd_error(&[z], f, fault)?, FD_TOL))
}

/// Weights and mixture proportions are held at their values for the
/// unperturbed input, matching how training treats them.
fn self_paced(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<CheckResult, VerifyError> {
    let classes = 3;
    let logits: Vec<Tensor> = (0..2).map(|_| normal_tensor(rng, &[classes, SIDE, SIDE], 1.5)).collect();
    let probs: Vec<Tensor> = logits.iter().map(crate::tensor::softmax_channels_value).collect();
    let mixture = mixture_of(&probs)?;
    let f: &Objective<'_> = &|_, v| {
        let p = v.iter().map(|z| z.softmax_channels()).collect::<Result<Vec<_>, _>>()?;
        Ok(spc_loss_with_mixture(&p, &mixture, 0.3)?)
    };
    Ok(CheckResult::new("grad_spc_loss", 1, fd_error(&logits, f, fault)?, FD_TOL))
}

fn consistency(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<CheckResult, VerifyError> {
    let classes = 2;
    let teacher = crate::tensor::softmax_channels_value(&normal_tensor(rng, &[classes, SIDE, SIDE], 1.0));
    let z = normal_tensor(rng, &[classes, SIDE, SIDE], 1.0);
    let tau = Transform::rotation(1);
    let f: &Objective<'_> = &|_, v| Ok(consistency_loss(&teacher, v[0].softmax_channels()?, tau)?);
    Ok(CheckResult::new("grad_consistency_loss", 1, fd_error(&[z], f, fault)?, FD_TOL))
}

/// Supervised, co-training and consistency terms over two networks on a
/// 6x6 image, differentiated with respect to every network parameter.
fn composite(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<CheckResult, VerifyError> {
    let classes = 2;
    let nets: Vec<SegNetTiny> = (0..2).map(|_| SegNetTiny::init(classes, rng)).collect();
    let teachers: Vec<SegNetTiny> = (0..2).map(|_| SegNetTiny::init(classes, rng)).collect();
    let x_l = normal_tensor(rng, &[1, SIDE, SIDE], 1.0);
    let x_u = normal_tensor(rng, &[1, SIDE, SIDE], 1.0);
    let y = random_mask(rng, classes);
    let taus = [Transform::rotation(1), Transform::rotation(3)];
    let teacher_preds = teachers
        .iter()
        .map(|t| t.forward(&x_u).map(|p| p.into_tensor()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(crate::losses::LossError::from)?;
    let initial = nets
        .iter()
        .map(|n| n.forward(&x_u).map(|p| p.into_tensor()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(crate::losses::LossError::from)?;
    let mixture = mixture_of(&initial)?;
    let inputs: Vec<Tensor> = nets.iter().flat_map(|n| n.params().to_vec()).collect();
    let per_net = nets[0].params().len();

    let f: &Objective<'_> = &|tape, v| {
        let bound: Vec<crate::model::BoundNet<'_>> = v
            .chunks(per_net)
            .map(|ps| crate::model::BoundNet { params: ps.to_vec() })
            .collect();
        let k = bound.len() as f64;
        let mut sup = tape.constant(Tensor::scalar(0.0));
        let mut reg = tape.constant(Tensor::scalar(0.0));
        let mut unlabeled = Vec::new();
        for ((net, &tau), teacher) in bound.iter().zip(&taus).zip(&teacher_preds) {
            let p = net.forward(tape.constant(tau.apply(&x_l).map_err(crate::losses::LossError::from)?))?;
            sup = sup.add(supervised_ce(p, &y.transformed(tau)?)?)?;
            unlabeled.push(net.forward(tape.constant(x_u.clone()))?);
            let s = net.forward(tape.constant(tau.apply(&x_u).map_err(crate::losses::LossError::from)?))?;
            reg = reg.add(consistency_loss(teacher, s, tau)?)?;
        }
        let spc = spc_loss_with_mixture(&unlabeled, &mixture, 0.3)?;
        Ok(total_loss(sup.mul_scalar(1.0 / k), spc, reg.mul_scalar(1.0 / k), 0.5, 4.0)?)
    };
    Ok(CheckResult::new("grad_composite", 1, fd_error(&inputs, f, fault)?, FD_TOL))
}

/// The self-paced weights are computed from detached values: changing the
/// pace moves the loss value, yet the tape gradient is exactly that of the
/// loss with the mixture frozen.
fn detachment(rng: &mut ChaCha8Rng) -> Result<CheckResult, VerifyError> {
    let classes = 3;
    let probs: Vec<Tensor> = (0..2)
        .map(|_| crate::tensor::softmax_channels_value(&normal_tensor(rng, &[classes, SIDE, SIDE], 2.0)))
        .collect();
    let grads_of = |with_weights: bool, gamma: f64| -> Result<(f64, Vec<f64>), VerifyError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = probs.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = if with_weights {
            spc_loss(&vars, gamma, 0.3, 0.01)?.loss
        } else {
            spc_loss_with_mixture(&vars, &mixture_of(&probs)?, 0.3)?
        };
        let g = tape.backward(loss)?;
        Ok((loss.item(), vars.iter().flat_map(|&v| g.get_or_zeros(v).into_data()).collect()))
    };
    let (v_live, g_live) = grads_of(true, 0.3)?;
    let (v_frozen, g_frozen) = grads_of(false, 0.3)?;
    let (v_other, _) = grads_of(true, 3.0)?;
    let mut err = g_live
        .iter()
        .zip(&g_frozen)
        .map(|(a, b)| (a - b).abs())
        .fold((v_live - v_frozen).abs(), f64::max);
    if v_other == v_live {
        err = f64::INFINITY;
    }
    Ok(CheckResult::new("grad_weight_detachment", 1, err, 0.0))
}

/// All gradient checks as separate entries.
pub fn gradient_checks(seed: u64, fault: Option<Fault>) -> Result<Vec<CheckResult>, VerifyError> {
    let mut rng = rng_for(seed, 8);
    Ok(vec![
        quadratic(&mut rng, fault)?,
        supervised(&mut rng, fault)?,
        self_paced(&mut rng, fault)?,
        consistency(&mut rng, fault)?,
        composite(&mut rng, fault)?,
        detachment(&mut rng)?,
    ])
}

/// One entry summarizing [`gradient_checks`].
pub fn check_gradients(seed: u64) -> Result<CheckResult, VerifyError> {
    let all = gradient_checks(seed, None)?;
    Ok(CheckResult {
        name: "gradients".into(),
        cases: all.len(),
        max_error: all.iter().filter(|c| c.tolerance > 0.0).map(|c| c.max_error).fold(0.0, f64::max),
        tolerance: FD_TOL,
        pass: all.iter().all(|c| c.pass),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gradient_checks_pass() {
        for c in gradient_checks(11, None).unwrap() {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn flipped_sign_is_caught() {
        let checks = gradient_checks(11, Some(Fault::FlipGradientSign)).unwrap();
        assert!(checks.iter().filter(|c| c.name != "grad_weight_detachment").all(|c| !c.pass));
    }
}
