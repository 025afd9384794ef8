//! Loss terms for co-training: supervised cross-entropy, the self-paced
//! weighted JSD objective with its entropy regularizer, the teacher/student
//! consistency loss, and the closed-form self-paced weights.
//!
//! All divergences use the natural logarithm. Self-paced weights, mixture
//! proportions and confidences are computed from detached values and enter
//! the graph as constants.

use thiserror::Error;

use crate::model::{ModelError, Transform};
use crate::tensor::{Tape, Tensor, TensorError, Var, PROB_FLOOR};

/// Default floor for self-paced weights.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Per-pixel tolerance on channel sums of a [`ProbMap`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Transform(#[from] ModelError),
    #[error("{what}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        what: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("pixel {pixel} is not one-hot")]
    NotOneHot { pixel: usize },
    #[error("pixel {pixel}: channel values do not form a distribution (sum {sum})")]
    NotDistribution { pixel: usize, sum: f64 },
    #[error("learning pace must be positive, got {0}")]
    InvalidPace(f64),
    #[error("mixture weights must be positive and sum to 1, got {0:?}")]
    InvalidMixture(Vec<f64>),
    #[error("co-training needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Per-pixel class distribution of one image, shape `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    values: Tensor,
}

impl ProbMap {
    /// Validates the simplex constraint at every pixel.
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(TensorError::Rank {
                op: "ProbMap",
                expected: 3,
                shape: values.shape().to_vec(),
            }
            .into());
        }
        let (c, plane) = (values.shape()[0], values.shape()[1] * values.shape()[2]);
        let d = values.data();
        for i in 0..plane {
            let mut sum = 0.0;
            for ch in 0..c {
                let v = d[ch * plane + i];
                if !(0.0..=1.0 + SIMPLEX_TOL).contains(&v) {
                    return Err(LossError::NotDistribution { pixel: i, sum: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(LossError::NotDistribution { pixel: i, sum });
            }
        }
        Ok(ProbMap { values })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    pub fn classes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    /// Class distribution at flat pixel index `i`.
    pub fn pixel(&self, i: usize) -> Vec<f64> {
        let plane = self.pixels();
        (0..self.classes())
            .map(|c| self.values.data()[c * plane + i])
            .collect()
    }

    /// Most probable class per pixel; ties go to the lowest class index.
    pub fn argmax(&self) -> Vec<u8> {
        let plane = self.pixels();
        let d = self.values.data();
        (0..plane)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.classes() {
                    if d[c * plane + i] > d[best * plane + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Ground-truth segmentation stored as class indices, exposed one-hot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    classes: usize,
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl GroundTruthMask {
    pub fn from_labels(classes: usize, height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(LossError::ShapeMismatch {
                what: "mask labels",
                left: vec![labels.len()],
                right: vec![height, width],
            });
        }
        if let Some(pixel) = labels.iter().position(|&l| l as usize >= classes) {
            return Err(LossError::NotOneHot { pixel });
        }
        Ok(GroundTruthMask {
            classes,
            height,
            width,
            labels,
        })
    }

    /// Accepts a `[C, H, W]` tensor with exactly one 1 per pixel.
    pub fn from_one_hot(y: &Tensor) -> Result<Self> {
        if y.shape().len() != 3 {
            return Err(TensorError::Rank {
                op: "GroundTruthMask",
                expected: 3,
                shape: y.shape().to_vec(),
            }
            .into());
        }
        let (c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2]);
        let plane = h * w;
        let mut labels = Vec::with_capacity(plane);
        for i in 0..plane {
            let mut hot = None;
            for ch in 0..c {
                match y.data()[ch * plane + i] {
                    v if v == 1.0 && hot.is_none() => hot = Some(ch),
                    0.0 => {}
                    _ => return Err(LossError::NotOneHot { pixel: i }),
                }
            }
            labels.push(hot.ok_or(LossError::NotOneHot { pixel: i })? as u8);
        }
        Ok(GroundTruthMask {
            classes: c,
            height: h,
            width: w,
            labels,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn one_hot(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; self.classes * plane];
        for (i, &l) in self.labels.iter().enumerate() {
            data[l as usize * plane + i] = 1.0;
        }
        Tensor::new(vec![self.classes, self.height, self.width], data).expect("consistent shape")
    }

    /// Number of pixels labeled with a class other than 0.
    pub fn foreground(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn transformed(&self, t: Transform) -> Result<Self> {
        let labels = t.apply_labels(&self.labels, self.height, self.width)?;
        let (height, width) = if t.swaps_axes() {
            (self.width, self.height)
        } else {
            (self.height, self.width)
        };
        Ok(GroundTruthMask {
            classes: self.classes,
            height,
            width,
            labels,
        })
    }
}

/// Self-paced weights `w[k]` (one `[H, W]` map per view) and their floor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub w: Vec<Tensor>,
    pub epsilon_floor: f64,
}

/// Mixture proportions `pi[k] = w[k] / rho` and total confidence `rho = sum_k w[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureStats {
    pub pi: Vec<Tensor>,
    pub rho: Tensor,
}

impl MixtureStats {
    pub fn from_weights(weights: &WeightMap) -> Self {
        let n = weights.w[0].len();
        let shape = weights.w[0].shape().to_vec();
        let mut rho = vec![0.0; n];
        for w in &weights.w {
            for (r, x) in rho.iter_mut().zip(w.data()) {
                *r += x;
            }
        }
        let pi = weights
            .w
            .iter()
            .map(|w| {
                let data = w.data().iter().zip(&rho).map(|(x, r)| x / r).collect();
                Tensor::new(shape.clone(), data).expect("same shape")
            })
            .collect();
        MixtureStats {
            pi,
            rho: Tensor::new(shape, rho).expect("same shape"),
        }
    }
}

/// Value of the self-paced loss together with the weights it used.
#[derive(Debug)]
pub struct SpcOutput<'t> {
    pub loss: Var<'t>,
    pub weights: WeightMap,
    pub mixture: MixtureStats,
}

fn xlogx(p: f64) -> f64 {
    p * p.max(PROB_FLOOR).ln()
}

/// `sum_j p_j ln(p_j / q_j)` with both sides floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(LossError::ShapeMismatch {
            what: "kl_divergence",
            left: vec![p.len()],
            right: vec![q.len()],
        });
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&pj, &qj)| pj * (pj.max(PROB_FLOOR).ln() - qj.max(PROB_FLOOR).ln()))
        .sum())
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlogx(x)).sum::<f64>()
}

/// Closed-form minimizer of the quadratic self-paced objective, with the
/// zero branch replaced by `epsilon_floor`.
pub fn self_paced_weight(kl_value: f64, gamma: f64, epsilon_floor: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(LossError::InvalidPace(gamma));
    }
    Ok((1.0 - kl_value / gamma).max(epsilon_floor))
}

fn check_mixture(pi: &[f64]) -> Result<()> {
    let sum: f64 = pi.iter().sum();
    if pi.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(LossError::InvalidMixture(pi.to_vec()));
    }
    Ok(())
}

/// `H(sum_k pi_k p^k) - (1 - alpha) sum_k pi_k H(p^k)` for plain distributions.
pub fn jsd_alpha(probs: &[&[f64]], pi: &[f64], alpha: f64) -> Result<f64> {
    if probs.len() != pi.len() {
        return Err(LossError::ShapeMismatch {
            what: "jsd_alpha views",
            left: vec![probs.len()],
            right: vec![pi.len()],
        });
    }
    check_mixture(pi)?;
    let c = probs[0].len();
    if let Some(p) = probs.iter().find(|p| p.len() != c) {
        return Err(LossError::ShapeMismatch {
            what: "jsd_alpha classes",
            left: vec![c],
            right: vec![p.len()],
        });
    }
    let mix: Vec<f64> = (0..c)
        .map(|j| probs.iter().zip(pi).map(|(p, w)| w * p[j]).sum())
        .collect();
    let mean_entropy: f64 = probs.iter().zip(pi).map(|(p, w)| w * entropy(p)).sum();
    Ok(entropy(&mix) - (1.0 - alpha) * mean_entropy)
}

/// Per-pixel entropy of a `[C, H, W]` node, returned as `[H, W]`.
fn entropy_map<'t>(p: Var<'t>) -> Result<Var<'t>> {
    let logp = p.clamp(PROB_FLOOR, f64::INFINITY).log()?;
    Ok(p.mul(logp)?.sum_channels()?.neg())
}

/// Repeats an `[H, W]` map across `c` channels.
fn expand_channels(map: &Tensor, c: usize) -> Tensor {
    let mut shape = vec![c];
    shape.extend_from_slice(map.shape());
    let mut data = Vec::with_capacity(c * map.len());
    for _ in 0..c {
        data.extend_from_slice(map.data());
    }
    Tensor::new(shape, data).expect("consistent shape")
}

fn check_views(probs: &[Var<'_>]) -> Result<Vec<usize>> {
    if probs.len() < 2 {
        return Err(LossError::TooFewViews(probs.len()));
    }
    let shape = probs[0].shape();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "spc_loss",
            expected: 3,
            shape,
        }
        .into());
    }
    for p in &probs[1..] {
        if p.shape() != shape {
            return Err(LossError::ShapeMismatch {
                what: "view predictions",
                left: shape,
                right: p.shape(),
            });
        }
    }
    Ok(shape)
}

/// Per-pixel generalized JSD with entropy regularization. `probs` are
/// `[C, H, W]` maps, `pi` holds one constant `[H, W]` proportion map per view.
pub fn jsd_alpha_map<'t>(probs: &[Var<'t>], pi: &[Tensor], alpha: f64) -> Result<Var<'t>> {
    let shape = check_views(probs)?;
    if pi.len() != probs.len() {
        return Err(LossError::ShapeMismatch {
            what: "mixture views",
            left: vec![pi.len()],
            right: vec![probs.len()],
        });
    }
    let tape: &'t Tape = probs[0].tape();
    let c = shape[0];
    let mut mix: Option<Var<'t>> = None;
    let mut mean_entropy: Option<Var<'t>> = None;
    for (p, pk) in probs.iter().zip(pi) {
        if pk.shape() != &shape[1..] {
            return Err(LossError::ShapeMismatch {
                what: "mixture map",
                left: pk.shape().to_vec(),
                right: shape[1..].to_vec(),
            });
        }
        let term = p.mul(tape.constant(expand_channels(pk, c)))?;
        mix = Some(match mix {
            None => term,
            Some(m) => m.add(term)?,
        });
        let h = entropy_map(*p)?.mul(tape.constant(pk.clone()))?;
        mean_entropy = Some(match mean_entropy {
            None => h,
            Some(m) => m.add(h)?,
        });
    }
    let h_mix = entropy_map(mix.expect("K >= 2"))?;
    Ok(h_mix.sub(mean_entropy.expect("K >= 2").mul_scalar(1.0 - alpha))?)
}

/// Self-paced weights from detached predictions: one fixed-point step from
/// the uniform mixture.
pub fn compute_weights(values: &[&Tensor], gamma: f64, epsilon_floor: f64) -> Result<(WeightMap, MixtureStats)> {
    if values.len() < 2 {
        return Err(LossError::TooFewViews(values.len()));
    }
    if !(gamma > 0.0) {
        return Err(LossError::InvalidPace(gamma));
    }
    let shape = values[0].shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let k = values.len() as f64;
    let mut weights = vec![vec![0.0; plane]; values.len()];
    let mut p = vec![0.0; c];
    let mut m = vec![0.0; c];
    for i in 0..plane {
        m.fill(0.0);
        for v in values {
            for (ch, mj) in m.iter_mut().enumerate() {
                *mj += v.data()[ch * plane + i];
            }
        }
        for mj in m.iter_mut() {
            *mj /= k;
        }
        for (view, v) in values.iter().enumerate() {
            for (ch, pj) in p.iter_mut().enumerate() {
                *pj = v.data()[ch * plane + i];
            }
            let kl = kl_divergence(&p, &m)?;
            weights[view][i] = self_paced_weight(kl, gamma, epsilon_floor)?;
        }
    }
    let weights = WeightMap {
        w: weights
            .into_iter()
            .map(|d| Tensor::new(vec![h, w], d).expect("plane"))
            .collect(),
        epsilon_floor,
    };
    let mixture = MixtureStats::from_weights(&weights);
    Ok((weights, mixture))
}

/// Mean over pixels of `rho * JSD^alpha_pi` for fixed mixture statistics.
pub fn spc_loss_with_mixture<'t>(probs: &[Var<'t>], mixture: &MixtureStats, alpha: f64) -> Result<Var<'t>> {
    let jsd = jsd_alpha_map(probs, &mixture.pi, alpha)?;
    let tape = probs[0].tape();
    Ok(jsd.mul(tape.constant(mixture.rho.clone()))?.mean())
}

/// Self-paced co-training loss for one unlabeled image seen by `K` views.
pub fn spc_loss<'t>(probs: &[Var<'t>], gamma: f64, alpha: f64, epsilon_floor: f64) -> Result<SpcOutput<'t>> {
    check_views(probs)?;
    let values: Vec<Tensor> = probs.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor> = values.iter().collect();
    let (weights, mixture) = compute_weights(&refs, gamma, epsilon_floor)?;
    let loss = spc_loss_with_mixture(probs, &mixture, alpha)?;
    Ok(SpcOutput {
        loss,
        weights,
        mixture,
    })
}

/// `-sum_ij y_ij ln p_ij / |pixels|`.
pub fn supervised_ce<'t>(p: Var<'t>, y: &GroundTruthMask) -> Result<Var<'t>> {
    let shape = p.shape();
    let expect = [y.classes(), y.height(), y.width()];
    if shape != expect {
        return Err(LossError::ShapeMismatch {
            what: "supervised_ce",
            left: shape,
            right: expect.to_vec(),
        });
    }
    let pixels = (y.height() * y.width()) as f64;
    let logp = p.clamp(PROB_FLOOR, f64::INFINITY).log()?;
    let yt = p.tape().constant(y.one_hot());
    Ok(logp.mul(yt)?.sum().mul_scalar(-1.0 / pixels))
}

/// Mean squared difference between `tau(teacher)` and the student's
/// prediction on `tau(x)`. The teacher side is a constant.
pub fn consistency_loss<'t>(teacher_pred: &Tensor, student_pred: Var<'t>, tau: Transform) -> Result<Var<'t>> {
    let target = tau.apply(teacher_pred)?;
    if target.shape() != student_pred.shape().as_slice() {
        return Err(LossError::ShapeMismatch {
            what: "consistency_loss",
            left: target.shape().to_vec(),
            right: student_pred.shape(),
        });
    }
    let t = student_pred.tape().constant(target);
    Ok(student_pred.sub(t)?.square().mean())
}

/// `sup + lambda1 * spc + lambda2 * reg`.
pub fn total_loss<'t>(sup: Var<'t>, spc: Var<'t>, reg: Var<'t>, lambda1: f64, lambda2: f64) -> Result<Var<'t>> {
    let total = sup.add(spc.mul_scalar(lambda1))?.add(reg.mul_scalar(lambda2))?;
    if !total.item().is_finite() {
        return Err(LossError::NonFinite("total_loss"));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn pixel_map<'t>(tape: &'t Tape, dist: &[f64]) -> Var<'t> {
        tape.leaf(Tensor::new(vec![dist.len(), 1, 1], dist.to_vec()).unwrap())
    }

    #[test]
    fn ce_values() {
        let tape = Tape::new();
        let y = GroundTruthMask::from_labels(2, 1, 2, vec![0, 1]).unwrap();
        let perfect = tape.constant(y.one_hot());
        assert_eq!(supervised_ce(perfect, &y).unwrap().item(), 0.0);

        let uniform = tape.constant(Tensor::full(&[2, 1, 2], 0.5));
        assert!((supervised_ce(uniform, &y).unwrap().item() - LN2).abs() < 1e-12);

        let y0 = GroundTruthMask::from_labels(2, 1, 1, vec![0]).unwrap();
        let p = pixel_map(&tape, &[0.75, 0.25]);
        assert!((supervised_ce(p, &y0).unwrap().item() - 0.287682).abs() < 1e-6);
    }

    #[test]
    fn ce_rejects_mismatch_and_non_one_hot() {
        let tape = Tape::new();
        let y = GroundTruthMask::from_labels(2, 2, 2, vec![0; 4]).unwrap();
        let p = tape.constant(Tensor::full(&[2, 1, 1], 0.5));
        assert!(matches!(supervised_ce(p, &y), Err(LossError::ShapeMismatch { .. })));

        let bad = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(GroundTruthMask::from_one_hot(&bad), Err(LossError::NotOneHot { pixel: 0 }));
        let none = Tensor::new(vec![2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert!(GroundTruthMask::from_one_hot(&none).is_err());
        let fine = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(GroundTruthMask::from_one_hot(&fine).unwrap().labels(), &[1]);
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - LN2).abs() < 1e-12);
        assert!((kl_divergence(&[0.75, 0.25], &[0.5, 0.5]).unwrap() - 0.130812).abs() < 1e-6);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.9, 0.1]) - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn weight_values() {
        assert_eq!(self_paced_weight(0.0, 0.3, 0.01).unwrap(), 1.0);
        assert_eq!(self_paced_weight(0.5, 0.3, 0.01).unwrap(), 0.01);
        assert_eq!(self_paced_weight(0.3, 0.3, 0.01).unwrap(), 0.01);
        assert_eq!(self_paced_weight(1.0, 2.0, 0.01).unwrap(), 0.5);
        assert_eq!(self_paced_weight(1.0, 0.0, 0.01), Err(LossError::InvalidPace(0.0)));
        assert!(self_paced_weight(1.0, -1.0, 0.01).is_err());
    }

    #[test]
    fn jsd_alpha_values() {
        let p = [0.2, 0.8];
        assert!(jsd_alpha(&[&p, &p], &[0.5, 0.5], 0.0).unwrap().abs() < 1e-15);
        let v = jsd_alpha(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.5, 0.5], 0.0).unwrap();
        assert!((v - LN2).abs() < 1e-12);
        let u = jsd_alpha(&[&[0.5, 0.5], &[0.5, 0.5]], &[0.5, 0.5], 1.0).unwrap();
        assert!((u - LN2).abs() < 1e-12);
        assert!(jsd_alpha(&[&p, &p], &[0.7, 0.7], 0.0).is_err());
        assert!(jsd_alpha(&[&p, &p], &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn jsd_map_matches_plain_version() {
        let tape = Tape::new();
        let a = [0.1, 0.6, 0.3];
        let b = [0.5, 0.25, 0.25];
        let pa = pixel_map(&tape, &a);
        let pb = pixel_map(&tape, &b);
        let pi = [Tensor::full(&[1, 1], 0.3), Tensor::full(&[1, 1], 0.7)];
        for alpha in [0.0, 0.1, 0.5, 1.0] {
            let map = jsd_alpha_map(&[pa, pb], &pi, alpha).unwrap().item();
            let plain = jsd_alpha(&[&a, &b], &[0.3, 0.7], alpha).unwrap();
            assert!((map - plain).abs() < 1e-14, "alpha {alpha}");
        }
    }

    #[test]
    fn spc_identical_confident_views() {
        let tape = Tape::new();
        let p = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let views = [tape.leaf(p.clone()), tape.leaf(p)];
        let out = spc_loss(&views, 0.2, 0.0, 0.01).unwrap();
        assert_eq!(out.loss.item(), 0.0);
        for w in &out.weights.w {
            assert!(w.data().iter().all(|&x| x == 1.0));
        }
        assert!(out.mixture.rho.data().iter().all(|&r| r == 2.0));
    }

    #[test]
    fn spc_matches_weighted_kl_to_pseudo_label() {
        let tape = Tape::new();
        let p1 = [0.9, 0.1];
        let p2 = [0.6, 0.4];
        let gamma = (2.0f64 / 0.01).ln();
        let views = [pixel_map(&tape, &p1), pixel_map(&tape, &p2)];
        let out = spc_loss(&views, gamma, 0.0, 0.01).unwrap();

        // straight-line weighted KL to the weighted-average pseudo-label
        let m = [(p1[0] + p2[0]) / 2.0, (p1[1] + p2[1]) / 2.0];
        let w1 = (1.0 - kl_divergence(&p1, &m).unwrap() / gamma).max(0.01);
        let w2 = (1.0 - kl_divergence(&p2, &m).unwrap() / gamma).max(0.01);
        let rho = w1 + w2;
        let y = [(w1 * p1[0] + w2 * p2[0]) / rho, (w1 * p1[1] + w2 * p2[1]) / rho];
        let mut oracle = 0.0;
        for (w, p) in [(w1, p1), (w2, p2)] {
            for j in 0..2 {
                oracle += w * p[j] * (p[j] / y[j]).ln();
            }
        }
        assert!((out.loss.item() - oracle).abs() < 1e-9, "{} vs {oracle}", out.loss.item());
    }

    #[test]
    fn spc_floor_saturation() {
        let tape = Tape::new();
        let p1 = [0.9, 0.1];
        let p2 = [0.2, 0.8];
        let views = [pixel_map(&tape, &p1), pixel_map(&tape, &p2)];
        let eps = 0.01;
        let out = spc_loss(&views, 1e-9, 0.0, eps).unwrap();
        for w in &out.weights.w {
            assert_eq!(w.data(), &[eps]);
        }
        assert!((out.mixture.rho.data()[0] - 2.0 * eps).abs() < 1e-15);
        let expect = 2.0 * eps * jsd_alpha(&[&p1, &p2], &[0.5, 0.5], 0.0).unwrap();
        assert!((out.loss.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn spc_needs_two_views() {
        let tape = Tape::new();
        let v = pixel_map(&tape, &[0.5, 0.5]);
        assert_eq!(spc_loss(&[v], 1.0, 0.0, 0.01).unwrap_err(), LossError::TooFewViews(1));
        let w = tape.leaf(Tensor::full(&[2, 1, 2], 0.5));
        assert!(matches!(spc_loss(&[v, w], 1.0, 0.0, 0.01), Err(LossError::ShapeMismatch { .. })));
    }

    #[test]
    fn consistency_values() {
        let tape = Tape::new();
        let teacher = Tensor::new(vec![2, 2, 2], vec![0.1, 0.2, 0.3, 0.4, 0.9, 0.8, 0.7, 0.6]).unwrap();
        let rot = Transform::rotation(1);
        let student = tape.leaf(rot.apply(&teacher).unwrap());
        assert_eq!(consistency_loss(&teacher, student, rot).unwrap().item(), 0.0);

        let same = tape.leaf(teacher.clone());
        assert_eq!(consistency_loss(&teacher, same, Transform::identity()).unwrap().item(), 0.0);

        let shifted = tape.leaf(teacher.map(|x| x + 0.25));
        let v = consistency_loss(&teacher, shifted, Transform::identity()).unwrap().item();
        assert!((v - 0.0625).abs() < 1e-15);

        let wrong = tape.leaf(Tensor::zeros(&[2, 1, 2]));
        assert!(consistency_loss(&teacher, wrong, Transform::identity()).is_err());
    }

    #[test]
    fn consistency_gradient_only_reaches_student() {
        let tape = Tape::new();
        let teacher = Tensor::full(&[2, 1, 1], 0.5);
        let student = tape.leaf(Tensor::new(vec![2, 1, 1], vec![0.7, 0.3]).unwrap());
        let loss = consistency_loss(&teacher, student, Transform::identity()).unwrap();
        let g = tape.backward(loss).unwrap();
        let gs = g.get(student).unwrap().data();
        assert!((gs[0] - 0.2).abs() < 1e-15 && (gs[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn total_loss_values() {
        let tape = Tape::new();
        let s = |v| tape.constant(Tensor::scalar(v));
        assert_eq!(total_loss(s(1.0), s(2.0), s(3.0), 0.5, 4.0).unwrap().item(), 14.0);
        assert_eq!(total_loss(s(0.7), s(2.0), s(3.0), 0.0, 0.0).unwrap().item(), 0.7);
        assert_eq!(total_loss(s(0.0), s(0.0), s(0.0), 0.5, 4.0).unwrap().item(), 0.0);
    }

    #[test]
    fn mixture_stats_from_weights() {
        let w = WeightMap {
            w: vec![Tensor::full(&[1, 1], 0.25), Tensor::full(&[1, 1], 0.75)],
            epsilon_floor: 0.01,
        };
        let m = MixtureStats::from_weights(&w);
        assert_eq!(m.rho.data(), &[1.0]);
        assert_eq!(m.pi[0].data(), &[0.25]);
        assert_eq!(m.pi[1].data(), &[0.75]);
    }

    #[test]
    fn probmap_validation() {
        assert!(ProbMap::new(Tensor::full(&[2, 2, 2], 0.5)).is_ok());
        assert!(matches!(
            ProbMap::new(Tensor::full(&[2, 2, 2], 0.6)),
            Err(LossError::NotDistribution { .. })
        ));
        let p = ProbMap::new(Tensor::new(vec![2, 1, 2], vec![0.7, 0.2, 0.3, 0.8]).unwrap()).unwrap();
        assert_eq!(p.argmax(), vec![0, 1]);
        assert_eq!(p.pixel(1), vec![0.2, 0.8]);
    }
}
