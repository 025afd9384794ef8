//! The co-training loop: K student/teacher pairs, supervised, self-paced
//! co-training and consistency losses, schedules, Adam, EMA teachers.

mod ablation;
mod optim;
mod record;

use std::path::Path;
use std::sync::{Barrier, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use ablation::{run_ablation, AblationCell, AblationReport, CellConfig, OrderingCheck, MIN_FULL_GAIN, MIN_GAP};
pub use optim::{optimizer_step, Adam};
pub use record::{EpochRow, TrainRecord, HEADER};

use crate::data::{self, sample_batch, DataError, Dataset, SamplerState, TensorFile};
use crate::losses::{self, consistency_loss, spc_loss, supervised_ce, total_loss, LossError};
use crate::metrics::{dsc, hausdorff, BinaryMask, MetricError};
use crate::model::{ModelError, SegNetTiny, Transform, ViewEnsemble, PARAM_NAMES};
use crate::schedules::{ema_update, AlphaSchedule, LrSchedule, PaceSchedule, ScheduleError};
use crate::tensor::{Tape, Tensor, TensorError, Var, PROB_FLOOR};

/// Number of unlabeled images whose prediction entropy is tracked per epoch.
pub const ENTROPY_PROBE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub views: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon_floor: f64,
    pub gamma0: f64,
    /// Epochs for the pace to reach `ln(K / epsilon_floor)`.
    pub pace_epochs: usize,
    pub alpha_max: f64,
    pub alpha_ramp_epochs: usize,
    pub beta: f64,
    pub base_lr: f64,
    pub seed: u64,
    pub enable_spc: bool,
    pub enable_consistency: bool,
    /// Step the views on separate threads. Results are bit-identical either way.
    pub parallel_views: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            views: 2,
            epochs: 100,
            iters_per_epoch: 50,
            batch_labeled: 2,
            batch_unlabeled: 2,
            lambda1: 0.5,
            lambda2: 4.0,
            epsilon_floor: losses::DEFAULT_EPSILON,
            gamma0: 0.2,
            pace_epochs: 50,
            alpha_max: 1e-4,
            alpha_ramp_epochs: 50,
            beta: 0.99,
            base_lr: 1e-2,
            seed: 0,
            enable_spc: true,
            enable_consistency: true,
            parallel_views: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.views == 0 {
            return bad("views must be at least 1".into());
        }
        if self.enable_spc && self.views < 2 {
            return bad(format!("enable_spc needs views >= 2, got {}", self.views));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("alpha_max", self.alpha_max)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.alpha_max <= 1.0) {
            return bad(format!("alpha_max must be <= 1, got {}", self.alpha_max));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor < 1.0) {
            return bad(format!("epsilon_floor must lie in (0, 1), got {}", self.epsilon_floor));
        }
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return bad(format!("gamma0 must be positive, got {}", self.gamma0));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.iters_per_epoch == 0 && self.epochs > 0 {
            return bad("iters_per_epoch must be at least 1".into());
        }
        if self.batch_labeled == 0 {
            return bad("batch_labeled must be at least 1".into());
        }
        if (self.enable_spc || self.enable_consistency) && self.batch_unlabeled == 0 {
            return bad("batch_unlabeled must be at least 1 when an unlabeled loss is enabled".into());
        }
        Ok(())
    }

    fn uses_unlabeled(&self) -> bool {
        self.enable_spc || self.enable_consistency
    }
}

/// Mean losses of the last iteration that produced finite values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSnapshot {
    pub sup: f64,
    pub spc: f64,
    pub reg: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration} (last finite losses: {last_finite:?})")]
    NonFinite {
        epoch: usize,
        iteration: usize,
        last_finite: Option<LossSnapshot>,
    },
}

impl TrainError {
    fn is_non_finite(&self) -> bool {
        match self {
            TrainError::Tensor(e) | TrainError::Loss(LossError::Tensor(e)) | TrainError::Model(ModelError::Tensor(e)) => {
                matches!(e, TensorError::NonFinite { .. } | TensorError::NonPositiveLog { .. })
            }
            TrainError::Loss(LossError::NonFinite(_)) | TrainError::Model(ModelError::NonFinite) => true,
            TrainError::Loss(LossError::Transform(ModelError::NonFinite)) => true,
            _ => false,
        }
    }
}

/// Test-set metrics of soft-voted predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub dsc: f64,
    /// Mean over images with a defined distance.
    pub hd: Option<f64>,
    /// Images where either mask was empty.
    pub hd_undefined: usize,
    pub images: usize,
}

/// Soft-vote the ensemble on every test image and score the foreground
/// (any non-zero label) against the ground truth.
pub fn evaluate(ens: &ViewEnsemble, ds: &Dataset, use_teachers: bool) -> Result<Evaluation, TrainError> {
    if ds.split.test.is_empty() {
        return Err(DataError::EmptySplit { split: "test" }.into());
    }
    let (h, w) = ds.image_size();
    let mut dsc_sum = 0.0;
    let mut hd_sum = 0.0;
    let mut hd_count = 0;
    for &i in &ds.split.test {
        let pred = ens.predict(&ds.images[i], use_teachers)?;
        let s = BinaryMask::new(h, w, pred.argmax().iter().map(|&l| l != 0).collect())?;
        let g = BinaryMask::new(h, w, ds.masks[i].labels().iter().map(|&l| l != 0).collect())?;
        dsc_sum += dsc(&s, &g)?;
        if let Some(d) = hausdorff(&s, &g)? {
            hd_sum += d;
            hd_count += 1;
        }
    }
    let n = ds.split.test.len();
    Ok(Evaluation {
        dsc: dsc_sum / n as f64,
        hd: (hd_count > 0).then(|| hd_sum / hd_count as f64),
        hd_undefined: n - hd_count,
        images: n,
    })
}

/// Mean per-pixel entropy of the students' predictions, averaged over views.
pub fn mean_prediction_entropy(ens: &ViewEnsemble, images: &[&Tensor]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for net in &ens.students {
        for img in images {
            let p = net.forward(img)?;
            let plane = p.pixels();
            let data = p.tensor().data();
            for i in 0..plane {
                let mut h = 0.0;
                for c in 0..p.classes() {
                    let v = data[c * plane + i].max(PROB_FLOOR);
                    h -= v * v.ln();
                }
                total += h;
            }
            count += plane;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Augmentations of one iteration, drawn up front so view order cannot
/// influence them.
struct IterDraws {
    /// `[view][labeled sample]`
    labeled: Vec<Vec<Transform>>,
    /// `[view][unlabeled sample]`
    unlabeled: Vec<Vec<Transform>>,
}

struct ViewInput<'a> {
    student: &'a SegNetTiny,
    teacher: &'a SegNetTiny,
    labeled: &'a [Transform],
    unlabeled: &'a [Transform],
}

struct PhaseA<'t> {
    params: Vec<Var<'t>>,
    sup: Var<'t>,
    reg: Var<'t>,
    unlabeled: Vec<Var<'t>>,
}

struct ViewResult {
    grads: Vec<Tensor>,
    sup: f64,
    spc: f64,
    reg: f64,
}

struct Step<'a> {
    cfg: &'a TrainConfig,
    ds: &'a Dataset,
    labeled: &'a [usize],
    unlabeled: &'a [usize],
    gamma: f64,
    alpha: f64,
}

impl<'a> Step<'a> {
    fn mean(vars: Vec<Var<'_>>) -> Result<Var<'_>, TrainError> {
        let n = vars.len() as f64;
        let mut it = vars.into_iter();
        let mut acc = it.next().expect("non-empty batch");
        for v in it {
            acc = acc.add(v)?;
        }
        Ok(acc.mul_scalar(1.0 / n))
    }

    /// Everything that needs only this view's own parameters.
    fn phase_a<'t>(&self, tape: &'t Tape, input: &ViewInput<'_>) -> Result<PhaseA<'t>, TrainError> {
        let net = input.student.bind(tape, true);
        let mut sup_terms = Vec::with_capacity(self.labeled.len());
        for (&i, &tau) in self.labeled.iter().zip(input.labeled) {
            let x = tape.constant(tau.apply(&self.ds.images[i])?);
            let y = self.ds.masks[i].transformed(tau)?;
            sup_terms.push(supervised_ce(net.forward(x)?, &y)?);
        }
        let sup = Self::mean(sup_terms)?;

        let mut unlabeled = Vec::new();
        if self.cfg.enable_spc {
            for &i in self.unlabeled {
                unlabeled.push(net.forward(tape.constant(self.ds.images[i].clone()))?);
            }
        }

        let reg = if self.cfg.enable_consistency {
            let mut terms = Vec::with_capacity(self.unlabeled.len());
            for (&i, &tau) in self.unlabeled.iter().zip(input.unlabeled) {
                let teacher = input.teacher.forward(&self.ds.images[i])?;
                let student = net.forward(tape.constant(tau.apply(&self.ds.images[i])?))?;
                terms.push(consistency_loss(teacher.tensor(), student, tau)?);
            }
            Self::mean(terms)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        Ok(PhaseA {
            params: net.params,
            sup,
            reg,
            unlabeled,
        })
    }

    /// The co-training term for view `k` with the other views' predictions
    /// as constants, then backward.
    fn phase_b(&self, tape: &Tape, a: PhaseA<'_>, k: usize, shared: &[Vec<Tensor>]) -> Result<ViewResult, TrainError> {
        let views = self.cfg.views as f64;
        let spc = if self.cfg.enable_spc {
            let mut terms = Vec::with_capacity(a.unlabeled.len());
            for (u, &p) in a.unlabeled.iter().enumerate() {
                let probs: Vec<Var<'_>> = (0..self.cfg.views)
                    .map(|j| if j == k { p } else { tape.constant(shared[j][u].clone()) })
                    .collect();
                terms.push(spc_loss(&probs, self.gamma, self.alpha, self.cfg.epsilon_floor)?.loss);
            }
            Self::mean(terms)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        // The shared spc term reaches view k only through its own prediction,
        // so the full-loss gradient for view k is exactly this objective's.
        let objective = total_loss(
            a.sup.mul_scalar(1.0 / views),
            spc,
            a.reg.mul_scalar(1.0 / views),
            self.cfg.lambda1,
            self.cfg.lambda2,
        )?;
        let (sup, spc_v, reg) = (a.sup.item(), spc.item(), a.reg.item());
        if !(objective.item().is_finite()) {
            return Err(LossError::NonFinite("training objective").into());
        }
        let grads = tape.backward(objective)?;
        Ok(ViewResult {
            grads: a.params.iter().map(|&p| grads.get_or_zeros(p)).collect(),
            sup,
            spc: spc_v,
            reg,
        })
    }

    fn run_view_serial(&self, inputs: &[ViewInput<'_>]) -> Result<Vec<ViewResult>, TrainError> {
        let tapes: Vec<Tape> = inputs.iter().map(|_| Tape::new()).collect();
        let mut phases = Vec::with_capacity(inputs.len());
        for (tape, input) in tapes.iter().zip(inputs) {
            phases.push(self.phase_a(tape, input)?);
        }
        let shared: Vec<Vec<Tensor>> = phases.iter().map(|a| a.unlabeled.iter().map(|v| v.value()).collect()).collect();
        phases
            .into_iter()
            .zip(&tapes)
            .enumerate()
            .map(|(k, (a, tape))| self.phase_b(tape, a, k, &shared))
            .collect()
    }

    fn run_view_parallel(&self, inputs: &[ViewInput<'_>]) -> Result<Vec<ViewResult>, TrainError> {
        let k = inputs.len();
        let barrier = Barrier::new(k);
        let slots: Vec<Mutex<Option<Vec<Tensor>>>> = (0..k).map(|_| Mutex::new(None)).collect();
        let results: Vec<Option<Result<ViewResult, TrainError>>> = std::thread::scope(|s| {
            let handles: Vec<_> = inputs
                .iter()
                .enumerate()
                .map(|(view, input)| {
                    let (barrier, slots) = (&barrier, &slots);
                    s.spawn(move || {
                        let tape = Tape::new();
                        let a = self.phase_a(&tape, input);
                        if let Ok(a) = &a {
                            *slots[view].lock().expect("slot") = Some(a.unlabeled.iter().map(|v| v.value()).collect());
                        }
                        // every thread reaches the barrier, failed or not
                        barrier.wait();
                        let a = match a {
                            Ok(a) => a,
                            Err(e) => return Some(Err(e)),
                        };
                        let shared: Option<Vec<Vec<Tensor>>> = slots.iter().map(|m| m.lock().expect("slot").clone()).collect();
                        // a peer failed and reports its own error
                        let shared = shared?;
                        Some(self.phase_b(&tape, a, view, &shared))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("view thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(k);
        for r in results.into_iter().flatten() {
            out.push(r?);
        }
        Ok(out)
    }
}

/// Trains the ensemble on `ds` and records one row per epoch.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<(ViewEnsemble, TrainRecord), TrainError> {
    train_with(cfg, ds, |_, _| {})
}

/// As [`train`], calling `on_epoch` after each recorded epoch.
pub fn train_with(
    cfg: &TrainConfig,
    ds: &Dataset,
    mut on_epoch: impl FnMut(&ViewEnsemble, &EpochRow),
) -> Result<(ViewEnsemble, TrainRecord), TrainError> {
    cfg.validate()?;
    ds.validate()?;
    let mut ens = ViewEnsemble::init(cfg.seed, ds.classes(), cfg.views)?;
    let mut record = TrainRecord::default();
    if cfg.epochs == 0 {
        return Ok((ens, record));
    }

    let pace = PaceSchedule::new(cfg.gamma0, cfg.pace_epochs, cfg.views, cfg.epsilon_floor);
    let alpha_sched = AlphaSchedule {
        alpha_max: cfg.alpha_max,
        ramp_epochs: cfg.alpha_ramp_epochs,
    };
    let lr_sched = LrSchedule::new(cfg.base_lr, cfg.epochs);
    let mut optimizers: Vec<Adam> = (0..cfg.views).map(|_| Adam::default()).collect();
    let mut sampler = SamplerState::new(cfg.seed ^ 0x5a4d_504c_4552);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0061_7567_2074_6175);
    let n_unlabeled = if cfg.uses_unlabeled() { cfg.batch_unlabeled } else { 0 };
    let probe: Vec<&Tensor> = ds.split.unlabeled.iter().take(ENTROPY_PROBE).map(|&i| &ds.images[i]).collect();
    let mut last_finite = None;

    for epoch in 0..cfg.epochs {
        let gamma = pace.at(epoch);
        let alpha = alpha_sched.at(epoch);
        let lr = lr_sched.at(epoch)?;
        let (mut sup_sum, mut spc_sum, mut reg_sum) = (0.0, 0.0, 0.0);

        for iteration in 0..cfg.iters_per_epoch {
            let batch = sample_batch(ds, &mut sampler, cfg.batch_labeled, n_unlabeled)?;
            let draws = IterDraws {
                labeled: (0..cfg.views)
                    .map(|_| batch.labeled.iter().map(|_| Transform::random(&mut aug_rng)).collect())
                    .collect(),
                unlabeled: (0..cfg.views)
                    .map(|_| {
                        if cfg.enable_consistency {
                            batch.unlabeled.iter().map(|_| Transform::random(&mut aug_rng)).collect()
                        } else {
                            Vec::new()
                        }
                    })
                    .collect(),
            };
            let inputs: Vec<ViewInput<'_>> = (0..cfg.views)
                .map(|k| ViewInput {
                    student: &ens.students[k],
                    teacher: &ens.teachers[k],
                    labeled: &draws.labeled[k],
                    unlabeled: &draws.unlabeled[k],
                })
                .collect();
            let step = Step {
                cfg,
                ds,
                labeled: &batch.labeled,
                unlabeled: &batch.unlabeled,
                gamma,
                alpha,
            };
            let results = if cfg.parallel_views && cfg.views > 1 {
                step.run_view_parallel(&inputs)
            } else {
                step.run_view_serial(&inputs)
            };
            let results = results.map_err(|e| {
                if e.is_non_finite() {
                    TrainError::NonFinite {
                        epoch,
                        iteration,
                        last_finite,
                    }
                } else {
                    e
                }
            })?;

            let views = cfg.views as f64;
            let sup = results.iter().map(|r| r.sup).sum::<f64>() / views;
            let reg = results.iter().map(|r| r.reg).sum::<f64>() / views;
            // identical in every view
            let spc = results[0].spc;
            last_finite = Some(LossSnapshot { sup, spc, reg });
            sup_sum += sup;
            spc_sum += spc;
            reg_sum += reg;

            for ((student, opt), r) in ens.students.iter_mut().zip(&mut optimizers).zip(&results) {
                opt.step(student.params_mut(), &r.grads, lr);
            }
            for (teacher, student) in ens.teachers.iter_mut().zip(&ens.students) {
                ema_update(teacher.params_mut(), student.params(), cfg.beta)?;
            }
        }

        let iters = cfg.iters_per_epoch as f64;
        let eval = evaluate(&ens, ds, true).map_err(|e| {
            if e.is_non_finite() {
                TrainError::NonFinite {
                    epoch,
                    iteration: cfg.iters_per_epoch,
                    last_finite,
                }
            } else {
                e
            }
        })?;
        let row = EpochRow {
            epoch,
            gamma,
            alpha,
            lr,
            loss_sup: sup_sum / iters,
            loss_spc: spc_sum / iters,
            loss_reg: reg_sum / iters,
            unlabeled_entropy: mean_prediction_entropy(&ens, &probe)?,
            val_dsc: eval.dsc,
            val_hd: eval.hd,
        };
        on_epoch(&ens, &row);
        record.rows.push(row);
    }
    Ok((ens, record))
}

pub const MANIFEST: &str = "manifest.txt";

/// Writes every student and teacher parameter as its own tensor file plus a
/// manifest of `file name view role epoch` lines.
pub fn save_checkpoint(dir: &Path, ens: &ViewEnsemble, epoch: usize) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut manifest = String::from("# file name view role epoch\n");
    for (role, nets) in [("student", &ens.students), ("teacher", &ens.teachers)] {
        for (view, net) in nets.iter().enumerate() {
            for (name, p) in PARAM_NAMES.iter().zip(net.params()) {
                let file = format!("{role}{view}.{name}.spct");
                data::save_tensor(&dir.join(&file), &TensorFile::from_tensor(p))?;
                manifest.push_str(&format!("{file} {name} {view} {role} {epoch}\n"));
            }
        }
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|source| DataError::Io { path, source })
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the ensemble
/// and its epoch.
pub fn load_checkpoint(dir: &Path, classes: usize, seed: u64) -> Result<(ViewEnsemble, usize), TrainError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io { path, source })?;
    let mut students: Vec<Vec<Option<Tensor>>> = Vec::new();
    let mut teachers: Vec<Vec<Option<Tensor>>> = Vec::new();
    let mut epoch = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let malformed = || TrainError::Config(format!("malformed manifest line: {line}"));
        if f.len() != 5 {
            return Err(malformed());
        }
        let slot = PARAM_NAMES.iter().position(|n| *n == f[1]).ok_or_else(malformed)?;
        let view: usize = f[2].parse().map_err(|_| malformed())?;
        epoch = f[4].parse().map_err(|_| malformed())?;
        let nets = match f[3] {
            "student" => &mut students,
            "teacher" => &mut teachers,
            _ => return Err(malformed()),
        };
        if nets.len() <= view {
            nets.resize(view + 1, vec![None; PARAM_NAMES.len()]);
        }
        nets[view][slot] = Some(data::load_tensor(&dir.join(f[0]))?.to_tensor());
    }
    let build = |nets: Vec<Vec<Option<Tensor>>>| -> Result<Vec<SegNetTiny>, TrainError> {
        nets.into_iter()
            .map(|ps| {
                let ps: Option<Vec<Tensor>> = ps.into_iter().collect();
                let ps = ps.ok_or_else(|| TrainError::Config("checkpoint is missing a parameter".into()))?;
                Ok(SegNetTiny::from_params(classes, ps)?)
            })
            .collect()
    };
    let (students, teachers) = (build(students)?, build(teachers)?);
    if students.is_empty() || students.len() != teachers.len() {
        return Err(TrainError::Config("checkpoint needs one teacher per student".into()));
    }
    Ok((
        ViewEnsemble {
            students,
            teachers,
            seed,
        },
        epoch,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            iters_per_epoch: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_ensemble() {
        let ds = generate(1, 10, 16, 0.2).unwrap();
        let cfg = TrainConfig { epochs: 0, seed: 9, ..tiny_cfg() };
        let (ens, rec) = train(&cfg, &ds).unwrap();
        assert_eq!(ens, ViewEnsemble::init(9, 2, 2).unwrap());
        assert!(rec.rows.is_empty());
    }

    #[test]
    fn baseline_has_zero_unlabeled_losses() {
        let ds = generate(1, 10, 16, 0.2).unwrap();
        let cfg = TrainConfig {
            enable_spc: false,
            enable_consistency: false,
            ..tiny_cfg()
        };
        let (_, rec) = train(&cfg, &ds).unwrap();
        assert_eq!(rec.rows.len(), 3);
        for r in &rec.rows {
            assert_eq!((r.loss_spc, r.loss_reg), (0.0, 0.0));
            assert!(r.loss_sup > 0.0);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let ds = generate(2, 10, 16, 0.2).unwrap();
        let (a, ra) = train(&tiny_cfg(), &ds).unwrap();
        let cfg = TrainConfig {
            parallel_views: true,
            ..tiny_cfg()
        };
        let (b, rb) = train(&cfg, &ds).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { lambda1: -1.0, ..tiny_cfg() },
            TrainConfig { views: 1, ..tiny_cfg() },
            TrainConfig { beta: 1.0, ..tiny_cfg() },
            TrainConfig { base_lr: 0.0, ..tiny_cfg() },
            TrainConfig { epsilon_floor: 0.0, ..tiny_cfg() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(TrainError::Config(_))), "{cfg:?}");
        }
        TrainConfig {
            views: 1,
            enable_spc: false,
            ..tiny_cfg()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn huge_learning_rate_aborts_with_location() {
        let ds = generate(1, 10, 16, 0.2).unwrap();
        let cfg = TrainConfig {
            base_lr: 1e300,
            epochs: 20,
            ..tiny_cfg()
        };
        match train(&cfg, &ds) {
            Err(TrainError::NonFinite { last_finite, .. }) => assert!(last_finite.is_some()),
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ens = ViewEnsemble::init(3, 2, 3).unwrap();
        ens.teachers[1].params_mut()[0].data_mut()[0] = 0.125;
        save_checkpoint(dir.path(), &ens, 7).unwrap();
        let (back, epoch) = load_checkpoint(dir.path(), 2, 3).unwrap();
        assert_eq!(epoch, 7);
        // parameters pass through f32 on disk
        for (a, b) in back.teachers.iter().zip(&ens.teachers) {
            for (x, y) in a.params().iter().zip(b.params()) {
                for (u, v) in x.data().iter().zip(y.data()) {
                    assert_eq!(*u, *v as f32 as f64);
                }
            }
        }
        assert_eq!(back.teachers[1].params()[0].data()[0], 0.125);
    }
}
