//! Primitive differentiable operators: grouped/depthwise 2-D convolution,
//! resampling, transposed depthwise convolution, GELU and per-channel affine.
//! Every operator comes with an explicit vector-Jacobian product.
//!
//! Conventions, fixed once for the whole crate:
//! - convolution is cross-correlation (no kernel flip), zero padding of
//!   `k / 2` on each side, odd kernels only;
//! - each output element accumulates its taps in a fixed order
//!   (input channel within the group, then kernel row, then kernel column),
//!   so results are bit-reproducible;
//! - resampling uses the half-pixel convention
//!   `src = (i + 0.5) * in / out - 0.5` with clamped neighbours.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Shape2, Tensor4};

/// Grouped 2-D convolution weights plus geometry. Weight layout is
/// `(out_channels, in_channels / groups, k, k)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T = f64> {
    out_channels: usize,
    in_channels: usize,
    groups: usize,
    k: usize,
    stride: usize,
    padding: usize,
    weights: Vec<T>,
    bias: Option<Vec<T>>,
}

impl<T: Float> ConvKernel<T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        groups: usize,
        k: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || groups == 0 {
            return Err(Error::InvalidShape(
                "kernel channel/group counts must be at least 1".into(),
            ));
        }
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel side {k} must be odd and positive"
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidConfig(format!(
                "stride {stride} not supported, expected 1 or 2"
            )));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        let expected = out_channels * (in_channels / groups) * k * k;
        if weights.len() != expected {
            return Err(Error::InvalidShape(format!(
                "weight buffer has {} entries, expected {expected}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::InvalidShape(format!(
                    "bias has {} entries, expected {out_channels}",
                    b.len()
                )));
            }
        }
        Ok(Self {
            out_channels,
            in_channels,
            groups,
            k,
            stride,
            padding: k / 2,
            weights,
            bias,
        })
    }

    /// Depthwise kernel: groups = in_channels = out_channels.
    pub fn depthwise(
        channels: usize,
        k: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        Self::new(channels, channels, channels, k, stride, weights, bias)
    }

    /// 1x1 channel-mixing kernel, stride 1.
    pub fn pointwise(
        in_channels: usize,
        out_channels: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        Self::new(out_channels, in_channels, 1, 1, 1, weights, bias)
    }

    /// Every weight (and bias entry, when requested) drawn uniform(-b, b)
    /// with `b = 1 / sqrt(fan_in)`, weights first, then bias, in storage
    /// order. This is the documented initialisation stream.
    pub fn seeded(
        out_channels: usize,
        in_channels: usize,
        groups: usize,
        k: usize,
        stride: usize,
        with_bias: bool,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let fan_in = (in_channels / groups.max(1)) * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let count = out_channels * (in_channels / groups.max(1)) * k * k;
        let weights = (0..count)
            .map(|_| T::from((rng.next_f64() * 2.0 - 1.0) * bound).unwrap())
            .collect();
        let bias = with_bias.then(|| {
            (0..out_channels)
                .map(|_| T::from((rng.next_f64() * 2.0 - 1.0) * bound).unwrap())
                .collect()
        });
        Self::new(out_channels, in_channels, groups, k, stride, weights, bias)
    }

    /// Kernel with every weight equal to `value`, no bias.
    pub fn constant(
        out_channels: usize,
        in_channels: usize,
        groups: usize,
        k: usize,
        stride: usize,
        value: T,
    ) -> Result<Self> {
        let count = out_channels * (in_channels / groups.max(1)) * k * k;
        Self::new(
            out_channels,
            in_channels,
            groups,
            k,
            stride,
            vec![value; count],
            None,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [T]> {
        self.bias.as_deref_mut()
    }

    #[inline]
    pub fn w_idx(&self, oc: usize, icg: usize, ky: usize, kx: usize) -> usize {
        ((oc * (self.in_channels / self.groups) + icg) * self.k + ky) * self.k + kx
    }

    #[inline]
    pub fn weight(&self, oc: usize, icg: usize, ky: usize, kx: usize) -> T {
        self.weights[self.w_idx(oc, icg, ky, kx)]
    }

    /// Output spatial extent for an input extent:
    /// `(n + 2*padding - k) / stride + 1` per side.
    pub fn output_extent(&self, input: Shape2) -> Result<Shape2> {
        let side = |n: usize| -> Result<usize> {
            let span = n as isize + 2 * self.padding as isize - self.k as isize;
            if span < 0 {
                return Err(Error::InvalidGeometry(format!(
                    "input side {n} too small for kernel {} with padding {}",
                    self.k, self.padding
                )));
            }
            let out = span as usize / self.stride + 1;
            if out == 0 {
                return Err(Error::InvalidGeometry(format!(
                    "convolution over side {n} would produce an empty output"
                )));
            }
            Ok(out)
        };
        Shape2::new(side(input.h)?, side(input.w)?)
    }
}

/// Gradients produced by a convolution VJP.
#[derive(Debug, Clone)]
pub struct ConvVjp<T = f64> {
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Grouped 2-D cross-correlation with zero padding.
pub fn conv2d<T: Float>(x: &Tensor4<T>, kern: &ConvKernel<T>) -> Result<Tensor4<T>> {
    if x.c() != kern.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            x.c(),
            kern.in_channels
        )));
    }
    let out = kern.output_extent(x.spatial())?;
    let mut y = Tensor4::zeros(x.n(), kern.out_channels, out.h, out.w)?;
    let icpg = kern.in_channels / kern.groups;
    let ocpg = kern.out_channels / kern.groups;
    let (k, s) = (kern.k, kern.stride);
    let p = kern.padding as isize;
    let (ih, iw) = (x.h() as isize, x.w() as isize);

    for n in 0..x.n() {
        for oc in 0..kern.out_channels {
            let g = oc / ocpg;
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let mut acc = T::zero();
                    for icg in 0..icpg {
                        let ic = g * icpg + icg;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= ih {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p;
                                if ix < 0 || ix >= iw {
                                    continue;
                                }
                                acc = acc
                                    + kern.weight(oc, icg, ky, kx)
                                        * x.get(n, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(b) = &kern.bias {
                        acc = acc + b[oc];
                    }
                    y.set(n, oc, oy, ox, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Exact adjoints of [`conv2d`]'s linear map: input gradient, weight
/// gradient, and (when the kernel carries a bias) the per-channel sum of
/// the output cotangent.
pub fn conv2d_vjp<T: Float>(
    x: &Tensor4<T>,
    kern: &ConvKernel<T>,
    g_out: &Tensor4<T>,
) -> Result<ConvVjp<T>> {
    if x.c() != kern.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            x.c(),
            kern.in_channels
        )));
    }
    let out = kern.output_extent(x.spatial())?;
    if g_out.dims() != (x.n(), kern.out_channels, out.h, out.w) {
        return Err(Error::ShapeMismatch(format!(
            "cotangent shape {:?} does not match forward output {}x{}x{}",
            g_out.dims(),
            kern.out_channels,
            out.h,
            out.w
        )));
    }
    let mut g_x = Tensor4::zeros(x.n(), x.c(), x.h(), x.w())?;
    let mut g_w = vec![T::zero(); kern.weights.len()];
    let mut g_b = kern.bias.as_ref().map(|_| vec![T::zero(); kern.out_channels]);
    let icpg = kern.in_channels / kern.groups;
    let ocpg = kern.out_channels / kern.groups;
    let (k, s) = (kern.k, kern.stride);
    let p = kern.padding as isize;
    let (ih, iw) = (x.h() as isize, x.w() as isize);

    for n in 0..x.n() {
        for oc in 0..kern.out_channels {
            let g = oc / ocpg;
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let go = g_out.get(n, oc, oy, ox);
                    for icg in 0..icpg {
                        let ic = g * icpg + icg;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= ih {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p;
                                if ix < 0 || ix >= iw {
                                    continue;
                                }
                                let (iyu, ixu) = (iy as usize, ix as usize);
                                let xi = x.get(n, ic, iyu, ixu);
                                let gi = g_x.idx(n, ic, iyu, ixu);
                                g_x.data_mut()[gi] =
                                    g_x.data()[gi] + kern.weight(oc, icg, ky, kx) * go;
                                let wi = kern.w_idx(oc, icg, ky, kx);
                                g_w[wi] = g_w[wi] + xi * go;
                            }
                        }
                    }
                    if let Some(gb) = &mut g_b {
                        gb[oc] = gb[oc] + go;
                    }
                }
            }
        }
    }
    Ok(ConvVjp {
        input: g_x,
        weights: g_w,
        bias: g_b,
    })
}

/// Interpolation mode for [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Resampling request: mode plus target extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeSpec {
    pub mode: ResizeMode,
    pub target: Shape2,
}

impl ResizeSpec {
    pub fn bilinear(target: Shape2) -> Self {
        Self {
            mode: ResizeMode::Bilinear,
            target,
        }
    }

    pub fn nearest(target: Shape2) -> Self {
        Self {
            mode: ResizeMode::Nearest,
            target,
        }
    }
}

/// Per-axis interpolation stencil: two clamped neighbours and the weight of
/// the second one. `frac == 0` marks a pure gather from `i0`.
struct AxisLerp<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

fn bilinear_axis<T: Float>(in_len: usize, out_len: usize) -> Vec<AxisLerp<T>> {
    let scale = T::from(in_len).unwrap() / T::from(out_len).unwrap();
    let half = T::from(0.5).unwrap();
    let max_i = in_len - 1;
    (0..out_len)
        .map(|i| {
            let src = (T::from(i).unwrap() + half) * scale - half;
            let base = src.floor();
            let frac = src - base;
            let b = base.to_isize().unwrap();
            let i0 = b.clamp(0, max_i as isize) as usize;
            let i1 = (b + 1).clamp(0, max_i as isize) as usize;
            AxisLerp { i0, i1, frac }
        })
        .collect()
}

fn nearest_axis<T: Float>(in_len: usize, out_len: usize) -> Vec<usize> {
    let scale = T::from(in_len).unwrap() / T::from(out_len).unwrap();
    let half = T::from(0.5).unwrap();
    let max_i = in_len - 1;
    (0..out_len)
        .map(|i| {
            let src = (T::from(i).unwrap() + half) * scale;
            src.floor().to_isize().unwrap().clamp(0, max_i as isize) as usize
        })
        .collect()
}

/// `a + f * (b - a)`: exact for `f == 0` and for `a == b`, which is what the
/// identity-resize and constant-preservation contracts rely on.
#[inline]
fn lerp<T: Float>(a: T, b: T, f: T) -> T {
    if f == T::zero() {
        a
    } else {
        a + f * (b - a)
    }
}

/// Half-pixel resampling, per channel.
pub fn resize<T: Float>(x: &Tensor4<T>, spec: &ResizeSpec) -> Result<Tensor4<T>> {
    let t = spec.target;
    let mut y = Tensor4::zeros(x.n(), x.c(), t.h, t.w)?;
    match spec.mode {
        ResizeMode::Nearest => {
            let ys = nearest_axis::<T>(x.h(), t.h);
            let xs = nearest_axis::<T>(x.w(), t.w);
            for n in 0..x.n() {
                for c in 0..x.c() {
                    for oy in 0..t.h {
                        for ox in 0..t.w {
                            y.set(n, c, oy, ox, x.get(n, c, ys[oy], xs[ox]));
                        }
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let ys = bilinear_axis::<T>(x.h(), t.h);
            let xs = bilinear_axis::<T>(x.w(), t.w);
            for n in 0..x.n() {
                for c in 0..x.c() {
                    for oy in 0..t.h {
                        let ay = &ys[oy];
                        for ox in 0..t.w {
                            let ax = &xs[ox];
                            let top = lerp(
                                x.get(n, c, ay.i0, ax.i0),
                                x.get(n, c, ay.i0, ax.i1),
                                ax.frac,
                            );
                            let bot = lerp(
                                x.get(n, c, ay.i1, ax.i0),
                                x.get(n, c, ay.i1, ax.i1),
                                ax.frac,
                            );
                            y.set(n, c, oy, ox, lerp(top, bot, ay.frac));
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Exact adjoint of [`resize`]: scatters interpolation weights back onto the
/// source grid. `source` is the spatial extent of the tensor that was resized.
pub fn resize_vjp<T: Float>(
    source: Shape2,
    spec: &ResizeSpec,
    g_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if g_out.spatial() != spec.target {
        return Err(Error::ShapeMismatch(format!(
            "cotangent extent {} does not match resize target {}",
            g_out.spatial(),
            spec.target
        )));
    }
    let mut g_x = Tensor4::zeros(g_out.n(), g_out.c(), source.h, source.w)?;
    let t = spec.target;
    match spec.mode {
        ResizeMode::Nearest => {
            let ys = nearest_axis::<T>(source.h, t.h);
            let xs = nearest_axis::<T>(source.w, t.w);
            for n in 0..g_out.n() {
                for c in 0..g_out.c() {
                    for oy in 0..t.h {
                        for ox in 0..t.w {
                            let gi = g_x.idx(n, c, ys[oy], xs[ox]);
                            g_x.data_mut()[gi] = g_x.data()[gi] + g_out.get(n, c, oy, ox);
                        }
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let ys = bilinear_axis::<T>(source.h, t.h);
            let xs = bilinear_axis::<T>(source.w, t.w);
            let one = T::one();
            for n in 0..g_out.n() {
                for c in 0..g_out.c() {
                    for oy in 0..t.h {
                        let ay = &ys[oy];
                        let wy = [(ay.i0, one - ay.frac), (ay.i1, ay.frac)];
                        for ox in 0..t.w {
                            let ax = &xs[ox];
                            let wx = [(ax.i0, one - ax.frac), (ax.i1, ax.frac)];
                            let go = g_out.get(n, c, oy, ox);
                            for &(iy, fy) in &wy {
                                if fy == T::zero() {
                                    continue;
                                }
                                for &(ix, fx) in &wx {
                                    if fx == T::zero() {
                                        continue;
                                    }
                                    let gi = g_x.idx(n, c, iy, ix);
                                    g_x.data_mut()[gi] = g_x.data()[gi] + fy * fx * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(g_x)
}

fn require_transposable<T: Float>(
    x: &Tensor4<T>,
    kern: &ConvKernel<T>,
    target: Shape2,
) -> Result<()> {
    if !kern.is_depthwise() {
        return Err(Error::InvalidConfig(
            "transposed_dwconv requires a depthwise kernel".into(),
        ));
    }
    if kern.stride != 2 {
        return Err(Error::InvalidConfig(format!(
            "transposed_dwconv requires stride 2, kernel has stride {}",
            kern.stride
        )));
    }
    if x.c() != kern.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            x.c(),
            kern.in_channels
        )));
    }
    // The target is producible exactly when the stride-2 forward pass over a
    // target-sized input lands back on x's extent.
    let roundtrip = kern.output_extent(target)?;
    if roundtrip != x.spatial() {
        return Err(Error::InvalidGeometry(format!(
            "target {target} outside the producible extent: a stride-2 forward pass over {target} \
             yields {roundtrip}, input is {}",
            x.spatial()
        )));
    }
    Ok(())
}

/// Transposed depthwise convolution: the exact adjoint of the stride-2
/// forward geometry, center-cropped to `target`. Valid targets are the input
/// extents whose forward pass produces `x`'s extent (for side `m` those are
/// `2m - 1` and `2m`).
pub fn transposed_dwconv<T: Float>(
    x: &Tensor4<T>,
    kern: &ConvKernel<T>,
    target: Shape2,
) -> Result<Tensor4<T>> {
    require_transposable(x, kern, target)?;
    let mut y = Tensor4::zeros(x.n(), x.c(), target.h, target.w)?;
    let k = kern.k;
    let p = kern.padding as isize;
    let (th, tw) = (target.h as isize, target.w as isize);
    for n in 0..x.n() {
        for c in 0..x.c() {
            for oy in 0..x.h() {
                for ox in 0..x.w() {
                    let v = x.get(n, c, oy, ox);
                    for ky in 0..k {
                        let iy = (oy * 2 + ky) as isize - p;
                        if iy < 0 || iy >= th {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * 2 + kx) as isize - p;
                            if ix < 0 || ix >= tw {
                                continue;
                            }
                            let gi = y.idx(n, c, iy as usize, ix as usize);
                            y.data_mut()[gi] = y.data()[gi] + kern.weight(c, 0, ky, kx) * v;
                        }
                    }
                }
            }
            if let Some(b) = &kern.bias {
                for iy in 0..target.h {
                    for ix in 0..target.w {
                        let gi = y.idx(n, c, iy, ix);
                        y.data_mut()[gi] = y.data()[gi] + b[c];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// VJP of [`transposed_dwconv`]: the input gradient is the stride-2 forward
/// geometry applied to the cotangent; the weight gradient pairs the same taps
/// with the roles of input and cotangent swapped.
pub fn transposed_dwconv_vjp<T: Float>(
    x: &Tensor4<T>,
    kern: &ConvKernel<T>,
    target: Shape2,
    g_out: &Tensor4<T>,
) -> Result<ConvVjp<T>> {
    require_transposable(x, kern, target)?;
    if g_out.dims() != (x.n(), x.c(), target.h, target.w) {
        return Err(Error::ShapeMismatch(format!(
            "cotangent shape {:?} does not match transposed output {}x{}",
            g_out.dims(),
            target.h,
            target.w
        )));
    }
    let mut g_x = Tensor4::zeros(x.n(), x.c(), x.h(), x.w())?;
    let mut g_w = vec![T::zero(); kern.weights.len()];
    let mut g_b = kern.bias.as_ref().map(|_| vec![T::zero(); kern.out_channels]);
    let k = kern.k;
    let p = kern.padding as isize;
    let (th, tw) = (target.h as isize, target.w as isize);
    for n in 0..x.n() {
        for c in 0..x.c() {
            for oy in 0..x.h() {
                for ox in 0..x.w() {
                    let xv = x.get(n, c, oy, ox);
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let iy = (oy * 2 + ky) as isize - p;
                        if iy < 0 || iy >= th {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * 2 + kx) as isize - p;
                            if ix < 0 || ix >= tw {
                                continue;
                            }
                            let go = g_out.get(n, c, iy as usize, ix as usize);
                            acc = acc + kern.weight(c, 0, ky, kx) * go;
                            let wi = kern.w_idx(c, 0, ky, kx);
                            g_w[wi] = g_w[wi] + xv * go;
                        }
                    }
                    let gi = g_x.idx(n, c, oy, ox);
                    g_x.data_mut()[gi] = acc;
                }
            }
            if let Some(gb) = &mut g_b {
                for iy in 0..target.h {
                    for ix in 0..target.w {
                        gb[c] = gb[c] + g_out.get(n, c, iy, ix);
                    }
                }
            }
        }
    }
    Ok(ConvVjp {
        input: g_x,
        weights: g_w,
        bias: g_b,
    })
}

/// Tanh-approximation GELU: `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))`.
pub fn gelu<T: Float>(x: &Tensor4<T>) -> Tensor4<T> {
    let c0 = T::from(std::f64::consts::FRAC_2_PI.sqrt()).unwrap();
    let c1 = T::from(0.044715).unwrap();
    let half = T::from(0.5).unwrap();
    x.map(|v| half * v * (T::one() + (c0 * (v + c1 * v * v * v)).tanh()))
}

/// Analytic derivative of the tanh-form GELU, applied as a VJP.
pub fn gelu_vjp<T: Float>(x: &Tensor4<T>, g_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if !x.same_shape(g_out) {
        return Err(Error::ShapeMismatch(
            "gelu_vjp requires matching input and cotangent shapes".into(),
        ));
    }
    let c0 = T::from(std::f64::consts::FRAC_2_PI.sqrt()).unwrap();
    let c1 = T::from(0.044715).unwrap();
    let three = T::from(3.0).unwrap();
    let half = T::from(0.5).unwrap();
    let data = x
        .data()
        .iter()
        .zip(g_out.data().iter())
        .map(|(&v, &g)| {
            let t = (c0 * (v + c1 * v * v * v)).tanh();
            let du = c0 * (T::one() + three * c1 * v * v);
            let d = half * (T::one() + t) + half * v * (T::one() - t * t) * du;
            d * g
        })
        .collect();
    let (n, c, h, w) = x.dims();
    Tensor4::from_vec(n, c, h, w, data)
}

/// Inference-mode batch norm as a fused per-channel affine:
/// `y[n,c,i,j] = scale[c] * x[n,c,i,j] + shift[c]`.
pub fn channel_affine<T: Float>(x: &Tensor4<T>, scale: &[T], shift: &[T]) -> Result<Tensor4<T>> {
    if scale.len() != x.c() || shift.len() != x.c() {
        return Err(Error::ShapeMismatch(format!(
            "affine parameters have lengths {}/{}, input has {} channels",
            scale.len(),
            shift.len(),
            x.c()
        )));
    }
    let mut y = Tensor4::zeros(x.n(), x.c(), x.h(), x.w())?;
    for n in 0..x.n() {
        for c in 0..x.c() {
            for yy in 0..x.h() {
                for xx in 0..x.w() {
                    y.set(n, c, yy, xx, scale[c] * x.get(n, c, yy, xx) + shift[c]);
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`channel_affine`].
#[derive(Debug, Clone)]
pub struct AffineVjp<T = f64> {
    pub input: Tensor4<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

pub fn channel_affine_vjp<T: Float>(
    x: &Tensor4<T>,
    scale: &[T],
    g_out: &Tensor4<T>,
) -> Result<AffineVjp<T>> {
    if scale.len() != x.c() {
        return Err(Error::ShapeMismatch(format!(
            "scale has length {}, input has {} channels",
            scale.len(),
            x.c()
        )));
    }
    if !x.same_shape(g_out) {
        return Err(Error::ShapeMismatch(
            "channel_affine_vjp requires matching input and cotangent shapes".into(),
        ));
    }
    let mut g_x = Tensor4::zeros(x.n(), x.c(), x.h(), x.w())?;
    let mut g_scale = vec![T::zero(); x.c()];
    let mut g_shift = vec![T::zero(); x.c()];
    for n in 0..x.n() {
        for c in 0..x.c() {
            for yy in 0..x.h() {
                for xx in 0..x.w() {
                    let g = g_out.get(n, c, yy, xx);
                    g_x.set(n, c, yy, xx, scale[c] * g);
                    g_scale[c] = g_scale[c] + x.get(n, c, yy, xx) * g;
                    g_shift[c] = g_shift[c] + g;
                }
            }
        }
    }
    Ok(AffineVjp {
        input: g_x,
        scale: g_scale,
        shift: g_shift,
    })
}
