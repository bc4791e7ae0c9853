//! Complexity accounting (parameters and multiply-accumulates), closed-form
//! verification of the recursive mixer's cost laws, receptive-field
//! measurement, and the finite-difference gradient checker.
//!
//! Cost conventions: one MAC per multiply-accumulate; a convolution costs
//! `out_c * (in_c / groups) * k^2 * H_out * W_out`. Resampling, GELU and
//! affine layers are excluded unless resize accounting is requested, in
//! which case bilinear interpolation costs 4 MACs per output element and
//! nearest costs none. Parameter counts enumerate actual weight storage.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::ops::ConvKernel;
use crate::rec::{
    recconv_forward, recconv_vjp, Aggregation, AggregationKernels, RecConvConfig, RecConvWeights,
    UpsampleMode,
};
use crate::rng::SplitMix64;
use crate::tensor::{Shape2, Tensor4};

/// Relative-error bound the gradient checker enforces.
pub const GRADCHECK_TOL: f64 = 1e-5;

/// Parameter storage split into the lines the reports print.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamBreakdown {
    pub conv_weights: usize,
    pub biases: usize,
    pub norm_params: usize,
    pub upsample_weights: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.conv_weights + self.biases + self.norm_params + self.upsample_weights
    }

    fn kernel(&mut self, kern: &ConvKernel, upsample: bool) {
        if upsample {
            self.upsample_weights += kern.weights().len();
        } else {
            self.conv_weights += kern.weights().len();
        }
        self.biases += kern.bias().map_or(0, <[f64]>::len);
    }
}

/// Enumerate the actual weight storage of one recursive mixer. Upsample
/// kernels are reported on their own line so the `(level + 2) * k^2 * C`
/// law stays directly checkable.
pub fn count_params_recconv(w: &RecConvWeights) -> ParamBreakdown {
    let mut out = ParamBreakdown::default();
    out.kernel(&w.down, false);
    match &w.aggregation {
        AggregationKernels::Parallel(kernels) => {
            for kern in kernels {
                out.kernel(kern, false);
            }
        }
        AggregationKernels::Recurrent {
            hidden,
            input,
            output,
            skip,
        } => {
            for kern in [hidden, input, output, skip] {
                out.kernel(kern, false);
            }
        }
    }
    for kern in &w.upsample {
        out.kernel(kern, true);
    }
    out
}

/// Enumerate the actual storage of a whole model.
pub fn count_params_model(model: &Model) -> ParamBreakdown {
    let mut out = ParamBreakdown::default();
    out.kernel(&model.stem.conv1, false);
    out.kernel(&model.stem.conv2, false);
    for stage in &model.stages {
        if let Some(down) = &stage.downsample {
            out.kernel(&down.spatial, false);
            out.kernel(&down.expand, false);
            out.norm_params += down.norm.scale.len() + down.norm.shift.len();
            out.kernel(&down.mixer_up, false);
            out.kernel(&down.mixer_down, false);
        }
        for block in &stage.blocks {
            let mixer = count_params_recconv(&block.mixer);
            out.conv_weights += mixer.conv_weights;
            out.biases += mixer.biases;
            out.upsample_weights += mixer.upsample_weights;
            out.norm_params += block.norm.scale.len() + block.norm.shift.len();
            out.kernel(&block.mixer_up, false);
            out.kernel(&block.mixer_down, false);
        }
    }
    out
}

/// MAC totals, with resize cost kept on its own line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacBreakdown {
    pub conv: u64,
    pub resize: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.conv + self.resize
    }
}

fn ceil_half(n: usize) -> usize {
    n.div_ceil(2)
}

fn halved(s: Shape2) -> Shape2 {
    Shape2 {
        h: ceil_half(s.h),
        w: ceil_half(s.w),
    }
}

fn area(s: Shape2) -> u64 {
    (s.h * s.w) as u64
}

/// MACs of the plain depthwise convolution the mixer replaces:
/// `k^2 * C * H * W`.
pub fn base_depthwise_macs(cfg: &RecConvConfig, input: Shape2) -> u64 {
    (cfg.kernel * cfg.kernel * cfg.channels) as u64 * area(input)
}

/// Count the mixer's MACs by walking the forward dataflow over shapes.
/// Transposed upsampling is a convolution and is always counted;
/// interpolation is counted only when `include_resize` is set.
pub fn count_macs_recconv(
    cfg: &RecConvConfig,
    input: Shape2,
    include_resize: bool,
) -> Result<MacBreakdown> {
    cfg.validate()?;
    if input.min_side() < cfg.min_input_side() {
        return Err(Error::InvalidGeometry(format!(
            "input {input} too small for {} decomposition levels",
            cfg.level
        )));
    }
    let k2c = (cfg.kernel * cfg.kernel * cfg.channels) as u64;
    let mut sizes = Vec::with_capacity(cfg.level + 1);
    sizes.push(input);
    for _ in 0..cfg.level {
        sizes.push(halved(*sizes.last().unwrap()));
    }

    let mut macs = MacBreakdown::default();
    // shared downsampler, applied once per scale
    for size in sizes.iter().skip(1) {
        macs.conv += k2c * area(*size);
    }
    let upsample_at = |macs: &mut MacBreakdown, depth: usize| match cfg.upsample {
        UpsampleMode::TransposedDwConv => macs.conv += k2c * area(sizes[depth]),
        UpsampleMode::Bilinear => {
            if include_resize {
                macs.resize += 4 * cfg.channels as u64 * area(sizes[depth - 1]);
            }
        }
        UpsampleMode::Nearest => {}
    };
    match cfg.aggregation {
        Aggregation::Parallel => {
            for step in 0..cfg.level {
                let depth = cfg.level - step;
                macs.conv += k2c * area(sizes[depth]);
                upsample_at(&mut macs, depth);
            }
            macs.conv += k2c * area(sizes[0]);
        }
        Aggregation::Recurrent => {
            for step in 0..cfg.level {
                let depth = cfg.level - step;
                macs.conv += k2c * area(sizes[depth]);
                if step > 0 {
                    macs.conv += k2c * area(sizes[depth]);
                }
                upsample_at(&mut macs, depth);
            }
            macs.conv += 2 * k2c * area(sizes[0]);
        }
    }
    Ok(macs)
}

/// One row of the model's closed-form shape schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub label: String,
    pub channels: usize,
    pub shape: Shape2,
}

/// Shape schedule implied by a config: stem quarters the input, every later
/// stage halves it (ceil division). Errors name the stage whose
/// decomposition depth the input cannot support.
pub fn model_shape_schedule(cfg: &ModelConfig, input: Shape2) -> Result<Vec<ScheduleEntry>> {
    cfg.validate()?;
    let mut entries = Vec::with_capacity(cfg.stages.len() + 1);
    let quarter = halved(halved(input));
    entries.push(ScheduleEntry {
        label: "stem".into(),
        channels: cfg.stages[0].channels,
        shape: quarter,
    });
    let mut current = quarter;
    for (i, stage) in cfg.stages.iter().enumerate() {
        if i > 0 {
            current = halved(current);
        }
        let need = 1usize << stage.level;
        if current.min_side() < need {
            return Err(Error::InvalidGeometry(format!(
                "stage {}: feature map {current} too small for decomposition level {} \
                 (needs side >= {need}); minimum model input side is {}",
                i + 1,
                stage.level,
                cfg.min_input_side()
            )));
        }
        entries.push(ScheduleEntry {
            label: format!("stage{}", i + 1),
            channels: stage.channels,
            shape: current,
        });
    }
    Ok(entries)
}

/// Model-wide MAC count following the forward dataflow over shapes.
pub fn count_macs_model(
    cfg: &ModelConfig,
    input: Shape2,
    include_resize: bool,
) -> Result<MacBreakdown> {
    let schedule = model_shape_schedule(cfg, input)?;
    let c0 = cfg.stages[0].channels;
    let mid = halved(input);
    let quarter = schedule[0].shape;

    let mut macs = MacBreakdown::default();
    macs.conv += 9 * 3 * (c0 / 2) as u64 * area(mid);
    macs.conv += 9 * (c0 / 2) as u64 * c0 as u64 * area(quarter);

    for (i, stage) in cfg.stages.iter().enumerate() {
        let feature = schedule[i + 1].shape;
        if i > 0 {
            let c_in = cfg.stages[i - 1].channels as u64;
            let c_out = 2 * c_in;
            let hidden = c_out * cfg.expansion as u64;
            macs.conv += 49 * c_in * area(feature);
            macs.conv += c_in * c_out * area(feature);
            macs.conv += c_out * hidden * area(feature);
            macs.conv += hidden * c_out * area(feature);
        }
        let mixer_cfg = RecConvConfig {
            channels: stage.channels,
            kernel: stage.kernel,
            level: stage.level,
            aggregation: cfg.aggregation,
            upsample: cfg.upsample,
        };
        let per_block = count_macs_recconv(&mixer_cfg, feature, include_resize)?;
        let c = stage.channels as u64;
        let hidden = c * cfg.expansion as u64;
        let mixers = 2 * c * hidden * area(feature);
        macs.conv += stage.depth as u64 * (per_block.conv + mixers);
        macs.resize += stage.depth as u64 * per_block.resize;
    }
    Ok(macs)
}

/// Exact MAC growth factor of the parallel mixer relative to the base
/// depthwise convolution: `1 + 2 * sum_{n=1..level} 4^-n`, strictly below
/// 5/3 for every level.
pub fn mac_factor_closed_form(level: usize) -> Ratio<u64> {
    let mut acc = Ratio::from_integer(1u64);
    for n in 1..=level {
        acc += Ratio::new(2u64, 4u64.pow(n as u32));
    }
    acc
}

/// Nominal effective receptive field, `k * 2^level`.
pub fn nominal_erf(kernel: usize, level: usize) -> usize {
    kernel << level
}

/// Inclusive bounding box of the nonzero entries of a gradient map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl SupportBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }
}

/// Gradient magnitude of one output unit with respect to the input plane,
/// aggregated over input channels.
#[derive(Debug, Clone)]
pub struct ErfMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl ErfMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.w + x]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn support_box(&self) -> Option<SupportBox> {
        let mut found: Option<SupportBox> = None;
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) != 0.0 {
                    found = Some(match found {
                        None => SupportBox {
                            y0: y,
                            x0: x,
                            y1: y,
                            x1: x,
                        },
                        Some(b) => SupportBox {
                            y0: b.y0.min(y),
                            x0: b.x0.min(x),
                            y1: b.y1.max(y),
                            x1: b.x1.max(x),
                        },
                    });
                }
            }
        }
        found
    }

    /// Side of the smallest centered square holding at least `fraction` of
    /// the total gradient mass; 0 for an identically zero map.
    pub fn energy_square_side(&self, fraction: f64) -> usize {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0;
        }
        let (cy, cx) = (self.h / 2, self.w / 2);
        let max_r = self.h.max(self.w);
        for r in 0..=max_r {
            let y0 = cy.saturating_sub(r);
            let y1 = (cy + r).min(self.h - 1);
            let x0 = cx.saturating_sub(r);
            let x1 = (cx + r).min(self.w - 1);
            let mut sum = 0.0;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    sum += self.get(y, x);
                }
            }
            if sum >= fraction * total {
                return 2 * r + 1;
            }
        }
        2 * max_r + 1
    }
}

fn center_one_hot(like: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = like.dims();
    let mut g = Tensor4::zeros(n, c, h, w).expect("shape already validated");
    for ch in 0..c {
        g.set(0, ch, h / 2, w / 2, 1.0);
    }
    g
}

fn aggregate_abs(g: &Tensor4) -> ErfMap {
    let (_, c, h, w) = g.dims();
    let mut values = vec![0.0; h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                values[y * w + x] += g.get(0, ch, y, x).abs();
            }
        }
    }
    ErfMap { h, w, values }
}

/// Gradient map of the center output unit of one mixer.
pub fn erf_map_recconv(
    cfg: &RecConvConfig,
    w: &RecConvWeights,
    input: &Tensor4,
) -> Result<ErfMap> {
    let (y, trace) = recconv_forward(input, cfg, w)?;
    let cot = center_one_hot(&y);
    let grads = recconv_vjp(&trace, cfg, w, &cot)?;
    Ok(aggregate_abs(&grads.input))
}

/// Gradient map of the center unit of the final feature map.
pub fn erf_map_model(model: &Model, input: &Tensor4) -> Result<ErfMap> {
    let (y, trace, _) = crate::model::model_forward_traced(model, input)?;
    let cot = center_one_hot(&y);
    let g = crate::model::model_backward_input(model, &trace, &cot)?;
    Ok(aggregate_abs(&g))
}

/// Probe side for support measurement: odd (exact center pixel) with the
/// center aligned to the deepest downsampling grid. Under stride-2 pyramids
/// the support of a pixel depends on its coordinate residue modulo
/// `2^level`, so growing an unaligned probe would change the measured box;
/// pinning `center = m * 2^level` makes the measurement size-independent.
pub fn aligned_probe_side(level: usize, at_least: usize) -> usize {
    let step = 1usize << (level + 1);
    let m = at_least.saturating_sub(1).div_ceil(step).max(1);
    m * step + 1
}

/// Exact side length of the input support influencing one output pixel,
/// measured by a brute-force oracle: all-positive constant weights make
/// cancellation impossible, so the nonzero bounding box of the center
/// gradient map is the structural receptive field. The probe is centered on
/// the downsampling grid (see [`aligned_probe_side`]) and enlarged until the
/// box clears the border.
pub fn structural_rf(cfg: &RecConvConfig) -> Result<usize> {
    if cfg.aggregation != Aggregation::Parallel {
        return Err(Error::InvalidConfig(
            "structural receptive field is defined for parallel aggregation".into(),
        ));
    }
    cfg.validate()?;
    // depthwise pipelines have channel-independent support, so probe one channel
    let probe_cfg = RecConvConfig {
        channels: 1,
        ..*cfg
    };
    let weights = RecConvWeights::constant(&probe_cfg, 1.0)?;
    let mut side = aligned_probe_side(
        cfg.level,
        (4 * probe_cfg.nominal_erf() + 4 * probe_cfg.kernel + 9).max(probe_cfg.min_input_side()),
    );
    const MAX_SIDE: usize = 1 << 15;
    while side <= MAX_SIDE {
        let input = Tensor4::full(1, 1, side, side, 1.0)?;
        let map = erf_map_recconv(&probe_cfg, &weights, &input)?;
        let the_box = map
            .support_box()
            .ok_or_else(|| Error::Contract("positive-weight gradient map came out empty".into()))?;
        let clipped =
            the_box.y0 == 0 || the_box.x0 == 0 || the_box.y1 == side - 1 || the_box.x1 == side - 1;
        if !clipped {
            return Ok(the_box.height().max(the_box.width()));
        }
        side = aligned_probe_side(cfg.level, side * 2);
    }
    Err(Error::InvalidGeometry(format!(
        "support did not fit inside a {MAX_SIDE}x{MAX_SIDE} probe"
    )))
}

/// Outcome of one finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub coords_checked: usize,
}

/// Central-difference check of a VJP against its forward map.
///
/// `forward` maps a flat input vector to a flat output; `vjp` maps
/// (input, output cotangent) to the input gradient. A random cotangent
/// turns the pair into a scalar function whose partial derivatives are
/// probed one coordinate at a time with step `1e-6 * max(1, |x_i|)` on a
/// seed-deterministic subsample of at least `min_coords` coordinates.
/// Relative error uses `max(|fd|, |analytic|, 1e-8)` as the denominator and
/// must stay within [`GRADCHECK_TOL`].
pub fn fd_gradcheck(
    forward: impl Fn(&[f64]) -> Vec<f64>,
    vjp: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    x0: &[f64],
    seed: u64,
    min_coords: usize,
) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let y0 = forward(x0);
    let cot: Vec<f64> = (0..y0.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let analytic = vjp(x0, &cot);
    assert_eq!(
        analytic.len(),
        x0.len(),
        "vjp must return one gradient entry per input coordinate"
    );

    let dim = x0.len();
    let coords: Vec<usize> = if dim <= min_coords {
        (0..dim).collect()
    } else {
        let mut pool: Vec<usize> = (0..dim).collect();
        for i in 0..min_coords {
            let j = i + rng.below(dim - i);
            pool.swap(i, j);
        }
        pool.truncate(min_coords);
        pool
    };

    // compensated summation: the probed differences sit many orders below
    // the raw loss magnitude, so the checker must not add its own noise
    let loss = |x: &[f64]| -> f64 {
        let y = forward(x);
        let mut sum = 0.0;
        let mut carry = 0.0;
        for (a, b) in y.iter().zip(cot.iter()) {
            let term = a * b - carry;
            let t = sum + term;
            carry = (t - sum) - term;
            sum = t;
        }
        sum
    };

    let mut x = x0.to_vec();
    let mut max_rel_err = 0.0f64;
    for &i in &coords {
        let orig = x[i];
        let h = 1e-6 * orig.abs().max(1.0);
        x[i] = orig + h;
        let plus = loss(&x);
        x[i] = orig - h;
        let minus = loss(&x);
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        let rel = (fd - analytic[i]).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
        }
    }
    GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= GRADCHECK_TOL,
        coords_checked: coords.len(),
    }
}
