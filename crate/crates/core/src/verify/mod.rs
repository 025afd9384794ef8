//! Numerical certification: brute-force oracles for the closed-form weight,
//! the weighted-KL / JSD identity, pseudo-label optimality, the pace bound,
//! entropy-coefficient monotonicity, EMA decay and finite-difference
//! gradient checks.

mod grad;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use grad::{check_gradients, gradient_checks, Fault, FD_STEP, FD_TOL, QUADRATIC_TOL};

use crate::losses::{compute_weights, jsd_alpha, kl_divergence, self_paced_weight, spc_loss_with_mixture, LossError, MixtureStats};
use crate::schedules::{ema_update, pace_ceiling};
use crate::tensor::{Tape, Tensor, TensorError};

/// Slack for exact (`<=`) comparisons between floating-point objectives.
pub const EXACT_SLACK: f64 = 1e-12;
/// Tolerance for identities evaluated two different ways.
pub const IDENTITY_TOL: f64 = 1e-9;
pub const THEOREM1_PROBES: usize = 10_000;
pub const ALPHA_GRID: [f64; 4] = [0.0, 0.1, 0.5, 1.0];

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("cases must be at least 1")]
    NoCases,
    #[error("need at least 100 probes, got {0}")]
    TooFewProbes(usize),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            cases,
            max_error,
            tolerance,
            pass: max_error <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "cases", "max_error", "tolerance", "pass"]).expect("memory");
        for c in &self.checks {
            w.write_record([
                c.name.clone(),
                c.cases.to_string(),
                c.max_error.to_string(),
                c.tolerance.to_string(),
                c.pass.to_string(),
            ])
            .expect("memory");
        }
        String::from_utf8(w.into_inner().expect("memory")).expect("ascii")
    }

    pub fn save(&self, path: &Path) -> Result<(), VerifyError> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| VerifyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A strictly positive distribution from Gaussian logits of scale `spread`.
pub(crate) fn random_distribution(rng: &mut impl Rng, c: usize, spread: f64) -> Vec<f64> {
    let z: Vec<f64> = (0..c).map(|_| spread * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Uniform on the simplex.
fn random_simplex(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..c).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `K` views, `C` classes, random predictions and self-paced weights.
struct Case {
    probs: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Case {
    fn random(rng: &mut impl Rng, views: usize, classes: usize, epsilon_floor: f64) -> Self {
        let probs = (0..views)
            .map(|_| {
                let spread = [0.3, 1.0, 3.0, 8.0][rng.random_range(0..4)];
                random_distribution(rng, classes, spread)
            })
            .collect();
        let weights = (0..views).map(|_| rng.random_range(epsilon_floor..=1.0)).collect();
        Case { probs, weights }
    }

    fn rho(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn pi(&self) -> Vec<f64> {
        let rho = self.rho();
        self.weights.iter().map(|w| w / rho).collect()
    }

    fn mixture(&self) -> Vec<f64> {
        let pi = self.pi();
        (0..self.probs[0].len())
            .map(|j| self.probs.iter().zip(&pi).map(|(p, w)| w * p[j]).sum())
            .collect()
    }

    fn weighted_kl(&self, target: &[f64]) -> Result<f64, LossError> {
        let mut total = 0.0;
        for (p, w) in self.probs.iter().zip(&self.weights) {
            total += w * kl_divergence(p, target)?;
        }
        Ok(total)
    }

    fn prob_refs(&self) -> Vec<&[f64]> {
        self.probs.iter().map(|p| p.as_slice()).collect()
    }
}

/// `w * kl + gamma * (w^2 / 2 - w)`.
pub fn self_paced_objective(w: f64, kl: f64, gamma: f64) -> f64 {
    w * kl + gamma * (0.5 * w * w - w)
}

/// Minimizer under the linear regularizer `-gamma * w`: all or nothing.
pub fn linear_regularizer_weight(kl: f64, gamma: f64) -> f64 {
    if kl <= gamma {
        1.0
    } else {
        0.0
    }
}

fn check_cases(cases: usize) -> Result<(), VerifyError> {
    if cases == 0 {
        return Err(VerifyError::NoCases);
    }
    Ok(())
}

fn theorem1_case(rng: &mut impl Rng, i: usize) -> (f64, f64) {
    let gamma = 8.0 - rng.random_range(0.0..7.99);
    let kl = match i {
        0 => 0.0,
        1 => gamma,
        _ => rng.random_range(0.0..=10.0),
    };
    (gamma, kl)
}

/// The closed-form weight dominates random probes of `[0, 1]` and, when
/// interior, solves `gamma * w + kl - gamma = 0`.
pub fn check_theorem1(seed: u64, cases: usize) -> Result<CheckResult, VerifyError> {
    check_cases(cases)?;
    let mut rng = rng_for(seed, 1);
    let (mut worst_probe, mut worst_stationary) = (0.0f64, 0.0f64);
    for i in 0..cases {
        let (gamma, kl) = theorem1_case(&mut rng, i);
        let w = self_paced_weight(kl, gamma, 0.0)?;
        let best = self_paced_objective(w, kl, gamma);
        for _ in 0..THEOREM1_PROBES {
            let probe = rng.random::<f64>();
            worst_probe = worst_probe.max(best - self_paced_objective(probe, kl, gamma));
        }
        if w > 0.0 {
            worst_stationary = worst_stationary.max((gamma * w + kl - gamma).abs());
        }
    }
    let mut r = CheckResult::new("theorem1_optimal_weight", cases, worst_stationary.max(worst_probe), IDENTITY_TOL);
    r.pass = worst_probe <= EXACT_SLACK && worst_stationary <= IDENTITY_TOL;
    Ok(r)
}

/// Contrast oracle: the linear regularizer yields the hard 0/1 rule, which
/// dominates random probes of its own objective.
pub fn check_linear_regularizer(seed: u64, cases: usize) -> Result<CheckResult, VerifyError> {
    check_cases(cases)?;
    let mut rng = rng_for(seed, 2);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let (gamma, kl) = theorem1_case(&mut rng, i);
        let w = linear_regularizer_weight(kl, gamma);
        let best = w * kl - gamma * w;
        for _ in 0..1000 {
            let probe = rng.random::<f64>();
            worst = worst.max(best - (probe * kl - gamma * probe));
        }
    }
    Ok(CheckResult::new("linear_regularizer_contrast", cases, worst, EXACT_SLACK))
}

fn views_and_classes(rng: &mut impl Rng) -> (usize, usize) {
    ([2, 3, 5][rng.random_range(0..3)], [2, 4][rng.random_range(0..2)])
}

/// Evaluates `rho * JSD_pi` through the tape on a single-pixel map.
fn tape_spc_value(case: &Case, alpha: f64) -> Result<f64, VerifyError> {
    let tape = Tape::new();
    let c = case.probs[0].len();
    let probs: Vec<_> = case
        .probs
        .iter()
        .map(|p| tape.constant(Tensor::new(vec![c, 1, 1], p.clone()).expect("shape")))
        .collect();
    let mixture = MixtureStats {
        pi: case.pi().into_iter().map(|v| Tensor::new(vec![1, 1], vec![v]).expect("shape")).collect(),
        rho: Tensor::new(vec![1, 1], vec![case.rho()]).expect("shape"),
    };
    Ok(spc_loss_with_mixture(&probs, &mixture, alpha)?.item())
}

/// `sum_k w_k KL(p^k || y*) == rho * JSD_pi` with `y* = sum_k pi_k p^k`,
/// checked against both the plain and the tape implementation.
pub fn check_theorem2(seed: u64, cases: usize) -> Result<CheckResult, VerifyError> {
    check_cases(cases)?;
    let mut rng = rng_for(seed, 3);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (k, c) = views_and_classes(&mut rng);
        let case = Case::random(&mut rng, k, c, 0.01);
        let lhs = case.weighted_kl(&case.mixture())?;
        let rhs = case.rho() * jsd_alpha(&case.prob_refs(), &case.pi(), 0.0)?;
        let via_tape = tape_spc_value(&case, 0.0)?;
        worst = worst.max((lhs - rhs).abs()).max((lhs - via_tape).abs());
    }
    Ok(CheckResult::new("theorem2_jsd_identity", cases, worst, IDENTITY_TOL))
}

/// The weighted mixture is never beaten as a target of the weighted KL sum.
pub fn check_pseudo_label_optimality(seed: u64, cases: usize, probes: usize) -> Result<CheckResult, VerifyError> {
    check_cases(cases)?;
    if probes < 100 {
        return Err(VerifyError::TooFewProbes(probes));
    }
    let mut rng = rng_for(seed, 4);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (k, c) = views_and_classes(&mut rng);
        let case = Case::random(&mut rng, k, c, 0.01);
        let best = case.weighted_kl(&case.mixture())?;
        for i in 0..probes {
            let probe = if i < c {
                // one-hot corners of the simplex
                (0..c).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
            } else if i % 2 == 0 {
                random_simplex(&mut rng, c)
            } else {
                // near the optimum
                let m = case.mixture();
                let noise = random_simplex(&mut rng, c);
                let t = rng.random::<f64>() * 0.05;
                m.iter().zip(&noise).map(|(a, b)| (1.0 - t) * a + t * b).collect()
            };
            worst = worst.max(best - case.weighted_kl(&probe)?);
        }
    }
    Ok(CheckResult::new("pseudo_label_optimality", cases, worst, EXACT_SLACK))
}

/// `KL(p^k || sum pi p) <= -ln pi_k`, and at the pace ceiling no self-paced
/// weight sits on the floor.
pub fn check_pace_bound(seed: u64, cases: usize) -> Result<CheckResult, VerifyError> {
    check_cases(cases)?;
    let mut rng = rng_for(seed, 5);
    let eps = crate::losses::DEFAULT_EPSILON;
    let mut worst = f64::NEG_INFINITY;
    let mut floor_hits = 0usize;
    for _ in 0..cases {
        let (k, c) = views_and_classes(&mut rng);
        let case = Case::random(&mut rng, k, c, eps);
        let mix = case.mixture();
        for (p, pi) in case.probs.iter().zip(case.pi()) {
            worst = worst.max(kl_divergence(p, &mix)? + pi.ln());
        }
        // a 4x4 map of random pixels, some of them one-hot-like
        let plane = 16;
        let maps: Vec<Tensor> = (0..k)
            .map(|_| {
                let mut data = vec![0.0; c * plane];
                for i in 0..plane {
                    let spread = [0.5, 3.0, 40.0][rng.random_range(0..3)];
                    for (j, v) in random_distribution(&mut rng, c, spread).into_iter().enumerate() {
                        data[j * plane + i] = v;
                    }
                }
                Tensor::new(vec![c, 4, 4], data).expect("shape")
            })
            .collect();
        let refs: Vec<&Tensor> = maps.iter().collect();
        let (weights, _) = compute_weights(&refs, pace_ceiling(k, eps), eps)?;
        floor_hits += weights.w.iter().flat_map(|w| w.data()).filter(|&&w| w <= eps).count();
    }
    let mut r = CheckResult::new("pace_bound", cases, worst.max(0.0), EXACT_SLACK);
    r.pass = worst <= EXACT_SLACK && floor_hits == 0;
    if floor_hits > 0 {
        r.max_error = f64::INFINITY;
    }
    Ok(r)
}

/// `JSD^alpha` is nonnegative and nondecreasing over the alpha grid.
pub fn check_alpha_monotone(seed: u64, cases: usize) -> Result<CheckResult, VerifyError> {
    check_cases(cases)?;
    let mut rng = rng_for(seed, 6);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (k, c) = views_and_classes(&mut rng);
        let case = Case::random(&mut rng, k, c, 0.01);
        let (probs, pi) = (case.prob_refs(), case.pi());
        let mut prev = 0.0;
        for (i, &alpha) in ALPHA_GRID.iter().enumerate() {
            let v = jsd_alpha(&probs, &pi, alpha)?;
            let tape_v = tape_spc_value(&case, alpha)? / case.rho();
            worst = worst.max(-v).max(-tape_v);
            if i > 0 {
                worst = worst.max(prev - v);
            }
            prev = v;
        }
    }
    Ok(CheckResult::new("alpha_monotone", cases, worst, EXACT_SLACK))
}

/// Both halves of [`check_pace_bound`] and [`check_alpha_monotone`] as one entry.
pub fn check_bound_and_alpha(seed: u64, cases: usize) -> Result<CheckResult, VerifyError> {
    let a = check_pace_bound(seed, cases)?;
    let b = check_alpha_monotone(seed, cases)?;
    Ok(CheckResult {
        name: "bound_and_alpha".into(),
        cases,
        max_error: a.max_error.max(b.max_error),
        tolerance: EXACT_SLACK,
        pass: a.pass && b.pass,
    })
}

/// With a frozen student, the teacher-student distance shrinks by exactly
/// `beta` per update.
pub fn check_ema_decay(seed: u64, steps: usize, beta: f64) -> Result<CheckResult, VerifyError> {
    check_cases(steps)?;
    let mut rng = rng_for(seed, 7);
    let shapes = crate::model::SegNetTiny::param_shapes(2);
    let random = |rng: &mut ChaCha8Rng, s: &Vec<usize>| {
        let n = s.iter().product();
        Tensor::new(s.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
    };
    let student: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let mut teacher: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let dist = |t: &[Tensor]| -> f64 {
        t.iter()
            .zip(&student)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    let d0 = dist(&teacher);
    let mut prev = d0;
    let mut worst = 0.0f64;
    for step in 1..=steps {
        ema_update(&mut teacher, &student, beta).expect("matching shapes");
        let d = dist(&teacher);
        worst = worst.max((d / prev - beta).abs());
        worst = worst.max((d / d0 - beta.powi(step as i32)).abs() / beta.powi(step as i32));
        prev = d;
    }
    Ok(CheckResult::new("ema_decay", steps, worst, 1e-12))
}

/// Runs every check. `fault` corrupts the gradient checks on purpose.
pub fn run_all(seed: u64, cases: usize, fault: Option<Fault>) -> Result<VerifyReport, VerifyError> {
    check_cases(cases)?;
    type Job = Box<dyn Fn() -> Result<Vec<CheckResult>, VerifyError> + Send + Sync>;
    let one = |r: Result<CheckResult, VerifyError>| r.map(|c| vec![c]);
    let pseudo_cases = (cases / 5).max(1);
    let jobs: Vec<Job> = vec![
        Box::new(move || one(check_theorem1(seed, cases))),
        Box::new(move || one(check_linear_regularizer(seed, cases))),
        Box::new(move || one(check_theorem2(seed, cases))),
        Box::new(move || one(check_pseudo_label_optimality(seed, pseudo_cases, 1000))),
        Box::new(move || one(check_pace_bound(seed, cases))),
        Box::new(move || one(check_alpha_monotone(seed, cases))),
        Box::new(move || one(check_ema_decay(seed, 100, 0.99))),
        Box::new(move || gradient_checks(seed, fault)),
    ];
    let results: Vec<Result<Vec<CheckResult>, VerifyError>> = jobs.par_iter().map(|j| j()).collect();
    let mut report = VerifyReport::default();
    for r in results {
        report.checks.extend(r?);
    }
    Ok(report)
}
