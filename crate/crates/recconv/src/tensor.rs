//! Dense rank-4 activation/weight container. One canonical layout — row-major
//! `(n, c, h, w)` — keeps every operator's index arithmetic testable.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Spatial extent of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape2 {
    pub h: usize,
    pub w: usize,
}

impl Shape2 {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "spatial extent {h}x{w} has a zero dimension"
            )));
        }
        Ok(Self { h, w })
    }

    pub fn min_side(&self) -> usize {
        self.h.min(self.w)
    }
}

impl std::fmt::Display for Shape2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

/// Dense `(batch, channel, height, width)` tensor, generic over the scalar
/// but defaulting to `f64` everywhere in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f64> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Float> Tensor4<T> {
    /// All-zero tensor of the requested shape.
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::check_dims(n, c, h, w)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        })
    }

    /// Tensor filled with one value.
    pub fn full(n: usize, c: usize, h: usize, w: usize, value: T) -> Result<Self> {
        Self::check_dims(n, c, h, w)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        })
    }

    /// Wrap a flat row-major buffer. Length must be exactly `n*c*h*w`.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Self::check_dims(n, c, h, w)?;
        if data.len() != n * c * h * w {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match {n}x{c}x{h}x{w} = {}",
                data.len(),
                n * c * h * w
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Uniform values in [lo, hi) drawn from a SplitMix64 stream.
    pub fn random(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        lo: f64,
        hi: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        Self::check_dims(n, c, h, w)?;
        let data = (0..n * c * h * w)
            .map(|_| T::from(rng.uniform(lo, hi)).unwrap())
            .collect();
        Ok(Self { n, c, h, w, data })
    }

    fn check_dims(n: usize, c: usize, h: usize, w: usize) -> Result<()> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "tensor shape {n}x{c}x{h}x{w} has a zero dimension"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn spatial(&self) -> Shape2 {
        Shape2 {
            h: self.h,
            w: self.w,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.idx(n, c, y, x);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            let (n, c, h, w) = self.dims();
            let (on, oc, oh, ow) = other.dims();
            return Err(Error::ShapeMismatch(format!(
                "{what} requires equal shapes, got {n}x{c}x{h}x{w} vs {on}x{oc}x{oh}x{ow}"
            )));
        }
        Ok(())
    }

    /// Elementwise sum. Shapes must match exactly.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        })
    }

    /// In-place elementwise accumulation.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.require_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Stack channels: `self`'s channels first, then `other`'s. Batch and
    /// spatial extents must agree.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.h != other.h || self.w != other.w {
            let (n, c, h, w) = self.dims();
            let (on, oc, oh, ow) = other.dims();
            return Err(Error::ShapeMismatch(format!(
                "concat_channels requires equal batch/spatial dims, got {n}x{c}x{h}x{w} vs {on}x{oc}x{oh}x{ow}"
            )));
        }
        let c_out = self.c + other.c;
        let mut out = Self::zeros(self.n, c_out, self.h, self.w)?;
        for n in 0..self.n {
            for c in 0..self.c {
                for y in 0..self.h {
                    for x in 0..self.w {
                        out.set(n, c, y, x, self.get(n, c, y, x));
                    }
                }
            }
            for c in 0..other.c {
                for y in 0..self.h {
                    for x in 0..self.w {
                        out.set(n, self.c + c, y, x, other.get(n, c, y, x));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute entrywise difference; 0 iff values are identical.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.require_same_shape(other, "max_abs_diff")?;
        let mut best = T::zero();
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            let d = (a - b).abs();
            if d > best {
                best = d;
            }
        }
        Ok(best)
    }

    /// Apply a function to every entry.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_has_requested_shape_and_all_zero() {
        let t: Tensor4 = Tensor4::zeros(1, 1, 2, 2).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0]);

        let t: Tensor4 = Tensor4::zeros(2, 3, 4, 4).unwrap();
        assert_eq!(t.len(), 96);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            Tensor4::<f64>::zeros(1, 0, 1, 1),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn add_identity_and_symmetry() {
        let a = Tensor4::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = Tensor4::zeros(1, 1, 2, 2).unwrap();
        assert_eq!(a.add(&z).unwrap(), a);

        let b = Tensor4::from_vec(1, 1, 2, 2, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        let s = a.add(&b).unwrap();
        assert_eq!(s.data(), &[5.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn add_shape_mismatch() {
        let a: Tensor4 = Tensor4::zeros(1, 1, 2, 2).unwrap();
        let b: Tensor4 = Tensor4::zeros(1, 1, 2, 3).unwrap();
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn concat_channels_shapes_and_layout() {
        let mut rng = SplitMix64::new(1);
        let a: Tensor4 = Tensor4::random(1, 2, 4, 4, -1.0, 1.0, &mut rng).unwrap();
        let b: Tensor4 = Tensor4::random(1, 3, 4, 4, -1.0, 1.0, &mut rng).unwrap();
        let cat = a.concat_channels(&b).unwrap();
        assert_eq!(cat.dims(), (1, 5, 4, 4));
        // a's channels come first, bit-exactly
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(cat.get(0, c, y, x), a.get(0, c, y, x));
                }
            }
        }
        // appending a zero channel leaves the original values untouched
        let z = Tensor4::zeros(1, 1, 4, 4).unwrap();
        let az = a.concat_channels(&z).unwrap();
        assert_eq!(az.c(), 3);
        assert!((0..4).all(|y| (0..4).all(|x| az.get(0, 2, y, x) == 0.0)));
    }

    #[test]
    fn concat_channels_spatial_mismatch() {
        let a: Tensor4 = Tensor4::zeros(1, 1, 2, 2).unwrap();
        let b: Tensor4 = Tensor4::zeros(1, 1, 3, 3).unwrap();
        assert!(matches!(
            a.concat_channels(&b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn max_abs_diff_basics() {
        let a = Tensor4::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        let b = Tensor4::from_vec(1, 1, 1, 1, vec![1.5]).unwrap();
        assert_eq!(a.max_abs_diff(&a).unwrap(), 0.0);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 0.5);
        let c: Tensor4 = Tensor4::zeros(1, 1, 2, 1).unwrap();
        assert!(matches!(a.max_abs_diff(&c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn index_round_trip() {
        let mut t: Tensor4 = Tensor4::zeros(2, 3, 4, 5).unwrap();
        let mut v = 0.0;
        for n in 0..2 {
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        t.set(n, c, y, x, v);
                        assert_eq!(t.get(n, c, y, x), v);
                        v += 1.0;
                    }
                }
            }
        }
        // row-major layout: the walk above touched the buffer in order
        for (i, &d) in t.data().iter().enumerate() {
            assert_eq!(d, i as f64);
        }
    }

    #[test]
    fn works_with_f32_scalars() {
        let a: Tensor4<f32> = Tensor4::full(1, 1, 2, 2, 1.5).unwrap();
        let b: Tensor4<f32> = Tensor4::full(1, 1, 2, 2, 0.25).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[1.75f32; 4]);
    }
}
