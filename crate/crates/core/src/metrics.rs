//! Dice similarity coefficient and Hausdorff distance on binary masks.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("mask has {actual} values, expected {expected}")]
    Length { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, MetricError> {
        if bits.len() != height * width {
            return Err(MetricError::Length {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(BinaryMask { height, width, bits })
    }

    /// Pixels whose label equals `class`.
    pub fn from_labels(height: usize, width: usize, labels: &[u8], class: u8) -> Result<Self, MetricError> {
        Self::new(height, width, labels.iter().map(|&l| l == class).collect())
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn points(&self) -> Vec<(i64, i64)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i / self.width) as i64, (i % self.width) as i64))
            .collect()
    }

    fn check_same(&self, other: &BinaryMask) -> Result<(), MetricError> {
        if self.shape() != other.shape() {
            return Err(MetricError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// `2 |S ∩ G| / (|S| + |G|)`; two empty masks score 1.
pub fn dsc(s: &BinaryMask, g: &BinaryMask) -> Result<f64, MetricError> {
    s.check_same(g)?;
    let inter = s.bits.iter().zip(&g.bits).filter(|(&a, &b)| a && b).count();
    let total = s.count() + g.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Largest nearest-neighbour distance from any point of `from` to `to`,
/// as a squared integer distance.
fn directed_sq(from: &[(i64, i64)], to: &BinaryMask, to_points: &[(i64, i64)]) -> i64 {
    let mut worst = 0;
    for &(y, x) in from {
        if to.get(y as usize, x as usize) {
            continue;
        }
        let mut best = i64::MAX;
        for &(ty, tx) in to_points {
            let d = (y - ty).pow(2) + (x - tx).pow(2);
            if d < best {
                best = d;
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Symmetric Hausdorff distance in pixels; `None` when either mask is empty.
pub fn hausdorff(s: &BinaryMask, g: &BinaryMask) -> Result<Option<f64>, MetricError> {
    s.check_same(g)?;
    let (sp, gp) = (s.points(), g.points());
    if sp.is_empty() || gp.is_empty() {
        return Ok(None);
    }
    let d = directed_sq(&sp, g, &gp).max(directed_sq(&gp, s, &sp));
    Ok(Some((d as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                m.set(y, x, true);
            }
        }
        m
    }

    #[test]
    fn dsc_values() {
        let a = square(8, 8, 1, 1, 3);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        let b = square(8, 8, 5, 5, 3);
        assert_eq!(dsc(&a, &b).unwrap(), 0.0);
        let e = BinaryMask::empty(8, 8);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(dsc(&a, &e).unwrap(), 0.0);
    }

    #[test]
    fn dsc_half_overlap() {
        // two 10x10 squares sharing 50 pixels
        let a = square(20, 20, 0, 0, 10);
        let mut b = BinaryMask::empty(20, 20);
        for y in 5..15 {
            for x in 0..10 {
                b.set(y, x, true);
            }
        }
        assert_eq!(dsc(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn hausdorff_values() {
        let a = square(8, 8, 2, 2, 3);
        assert_eq!(hausdorff(&a, &a).unwrap(), Some(0.0));

        let mut p = BinaryMask::empty(5, 5);
        p.set(0, 0, true);
        let mut q = BinaryMask::empty(5, 5);
        q.set(3, 4, true);
        assert_eq!(hausdorff(&p, &q).unwrap(), Some(5.0));

        let g = square(3, 3, 0, 0, 3);
        let s = square(3, 3, 1, 1, 1);
        assert_eq!(hausdorff(&s, &g).unwrap(), Some(2f64.sqrt()));
    }

    #[test]
    fn empty_and_mismatch() {
        let a = square(4, 4, 0, 0, 2);
        assert_eq!(hausdorff(&a, &BinaryMask::empty(4, 4)).unwrap(), None);
        assert!(dsc(&a, &BinaryMask::empty(4, 5)).is_err());
        assert!(hausdorff(&a, &BinaryMask::empty(5, 4)).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
    }
}
