//! The per-view segmentation network, the student/teacher view ensemble,
//! soft-vote aggregation, and exact quarter-turn rotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::losses::{LossError, ProbMap};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("rotation by {quarter_turns} quarter turns needs a square grid, got {height}x{width}")]
    NonSquare {
        quarter_turns: u8,
        height: usize,
        width: usize,
    },
    #[error("ensemble needs at least one view")]
    NoViews,
    #[error("soft vote over mismatched shapes {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("parameter {name}: expected shape {expected:?}, got {actual:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("network produced non-finite probabilities")]
    NonFinite,
}

/// Counter-clockwise rotation by a multiple of 90 degrees on the last two axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transform {
    quarter_turns: u8,
}

impl Transform {
    pub fn rotation(quarter_turns: u8) -> Self {
        Transform {
            quarter_turns: quarter_turns % 4,
        }
    }

    pub fn identity() -> Self {
        Self::rotation(0)
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self::rotation(rng.random_range(0..4u8))
    }

    pub fn quarter_turns(&self) -> u8 {
        self.quarter_turns
    }

    pub fn inverse(&self) -> Self {
        Self::rotation(4 - self.quarter_turns)
    }

    pub fn swaps_axes(&self) -> bool {
        self.quarter_turns % 2 == 1
    }

    fn check(&self, h: usize, w: usize) -> Result<(), ModelError> {
        if self.swaps_axes() && h != w {
            return Err(ModelError::NonSquare {
                quarter_turns: self.quarter_turns,
                height: h,
                width: w,
            });
        }
        Ok(())
    }

    /// Source index in the input plane for output pixel `(y, x)`.
    #[inline]
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> usize {
        match self.quarter_turns {
            0 => y * w + x,
            // output is w x h; out[y][x] = in[x][w-1-y]
            1 => x * w + (w - 1 - y),
            2 => (h - 1 - y) * w + (w - 1 - x),
            _ => (h - 1 - x) * w + y,
        }
    }

    fn rotate_planes<T: Copy>(&self, data: &[T], h: usize, w: usize) -> Vec<T> {
        let plane = h * w;
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(plane) {
            for y in 0..oh {
                for x in 0..ow {
                    out.push(chunk[self.source(y, x, h, w)]);
                }
            }
        }
        out
    }

    /// Rotates every `[.., H, W]` plane; leading axes are untouched.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let shape = x.shape();
        if shape.len() < 2 {
            return Err(TensorError::Rank {
                op: "apply_transform",
                expected: 2,
                shape: shape.to_vec(),
            }
            .into());
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        self.check(h, w)?;
        let data = self.rotate_planes(x.data(), h, w);
        let mut out_shape = shape.to_vec();
        if self.swaps_axes() {
            let n = out_shape.len();
            out_shape.swap(n - 2, n - 1);
        }
        Ok(Tensor::new(out_shape, data)?)
    }

    /// Rotates a single `H x W` plane of class labels.
    pub fn apply_labels(&self, labels: &[u8], h: usize, w: usize) -> Result<Vec<u8>, ModelError> {
        self.check(h, w)?;
        Ok(self.rotate_planes(labels, h, w))
    }
}

/// Free-function form of [`Transform::apply`].
pub fn apply_transform(t: Transform, x: &Tensor) -> Result<Tensor, ModelError> {
    t.apply(x)
}

pub const HIDDEN_CHANNELS: usize = 8;

/// Names of the parameters, in storage order.
pub const PARAM_NAMES: [&str; 6] = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight", "conv3.bias"];

/// conv3x3(1->8) + relu, conv3x3(8->8) + relu, conv1x1(8->C), softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNetTiny {
    classes: usize,
    params: Vec<Tensor>,
}

impl SegNetTiny {
    pub fn param_shapes(classes: usize) -> [Vec<usize>; 6] {
        let h = HIDDEN_CHANNELS;
        [
            vec![h, 1, 3, 3],
            vec![h],
            vec![h, h, 3, 3],
            vec![h],
            vec![classes, h, 1, 1],
            vec![classes],
        ]
    }

    /// Uniform He-style initialization in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, zero biases.
    pub fn init(classes: usize, rng: &mut impl Rng) -> Self {
        let params = Self::param_shapes(classes)
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("shape")
            })
            .collect();
        SegNetTiny { classes, params }
    }

    /// All-zero network; predicts the uniform distribution everywhere.
    pub fn zeros(classes: usize) -> Self {
        SegNetTiny {
            classes,
            params: Self::param_shapes(classes).iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn from_params(classes: usize, params: Vec<Tensor>) -> Result<Self, ModelError> {
        let shapes = Self::param_shapes(classes);
        if params.len() != shapes.len() {
            return Err(ModelError::ParamShape {
                name: "parameter count".into(),
                expected: vec![shapes.len()],
                actual: vec![params.len()],
            });
        }
        for ((p, s), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != s.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.into(),
                    expected: s.clone(),
                    actual: p.shape().to_vec(),
                });
            }
        }
        Ok(SegNetTiny { classes, params })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts the parameters on `tape`, as trainable leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundNet<'t> {
        let params = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        BoundNet { params }
    }

    /// Inference without gradients.
    pub fn forward(&self, image: &Tensor) -> Result<ProbMap, ModelError> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let x = tape.constant(image.clone());
        let p = bound.forward(x)?.value();
        if !p.is_finite() {
            return Err(ModelError::NonFinite);
        }
        ProbMap::new(p).map_err(|e| match e {
            LossError::Tensor(t) => ModelError::Tensor(t),
            _ => ModelError::NonFinite,
        })
    }
}

/// Network parameters living on a tape.
pub struct BoundNet<'t> {
    pub params: Vec<Var<'t>>,
}

impl<'t> BoundNet<'t> {
    /// `image`: `[1, H, W]` → class probabilities `[C, H, W]`.
    pub fn forward(&self, image: Var<'t>) -> Result<Var<'t>, TensorError> {
        let p = &self.params;
        let h1 = image.conv2d(p[0], p[1])?.relu();
        let h2 = h1.conv2d(p[2], p[3])?.relu();
        h2.conv2d(p[4], p[5])?.softmax_channels()
    }
}

/// `K` students and their EMA teachers.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEnsemble {
    pub students: Vec<SegNetTiny>,
    pub teachers: Vec<SegNetTiny>,
    pub seed: u64,
}

impl ViewEnsemble {
    /// View `k` is initialized from its own stream seeded with `seed + k`;
    /// teachers start as exact copies.
    pub fn init(seed: u64, classes: usize, views: usize) -> Result<Self, ModelError> {
        if views == 0 {
            return Err(ModelError::NoViews);
        }
        let students: Vec<SegNetTiny> = (0..views)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
                SegNetTiny::init(classes, &mut rng)
            })
            .collect();
        Ok(ViewEnsemble {
            teachers: students.clone(),
            students,
            seed,
        })
    }

    pub fn views(&self) -> usize {
        self.students.len()
    }

    pub fn classes(&self) -> usize {
        self.students[0].classes()
    }

    /// Soft-voted prediction of the teachers (or students).
    pub fn predict(&self, image: &Tensor, use_teachers: bool) -> Result<ProbMap, ModelError> {
        let nets = if use_teachers { &self.teachers } else { &self.students };
        let preds = nets.iter().map(|n| n.forward(image)).collect::<Result<Vec<_>, _>>()?;
        soft_vote(&preds)
    }
}

/// Element-wise mean of `K` probability maps.
pub fn soft_vote(preds: &[ProbMap]) -> Result<ProbMap, ModelError> {
    let first = preds.first().ok_or(ModelError::NoViews)?;
    let mut acc = first.tensor().data().to_vec();
    for p in &preds[1..] {
        if p.tensor().shape() != first.tensor().shape() {
            return Err(ModelError::ShapeMismatch {
                left: first.tensor().shape().to_vec(),
                right: p.tensor().shape().to_vec(),
            });
        }
        for (a, b) in acc.iter_mut().zip(p.tensor().data()) {
            *a += b;
        }
    }
    if preds.len() == 1 {
        return Ok(first.clone());
    }
    let k = preds.len() as f64;
    for a in acc.iter_mut() {
        *a /= k;
    }
    let t = Tensor::new(first.tensor().shape().to_vec(), acc)?;
    ProbMap::new(t).map_err(|_| ModelError::NonFinite)
}
