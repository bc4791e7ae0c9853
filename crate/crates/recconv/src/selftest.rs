//! Built-in verification suites: the closed-form cost laws, degenerate-case
//! equivalence, the standard gradient-check battery, and receptive-field
//! agreement. The CLI `selftest` command runs these; the acceptance tests
//! exercise the same entry points.
//!
//! Suite output is fully deterministic (no timing, no environment), so two
//! runs produce byte-identical reports.

use num_rational::Ratio;

use crate::analysis::{
    base_depthwise_macs, count_macs_recconv, count_params_recconv, erf_map_recconv, fd_gradcheck,
    mac_factor_closed_form, nominal_erf, structural_rf, GradCheckReport,
};
use crate::model::{
    downsample_forward_traced, downsample_vjp, metanext_forward_traced, metanext_vjp,
    DownsampleBlock, MetaNeXtBlock,
};
use crate::ops::{
    channel_affine, channel_affine_vjp, conv2d, conv2d_vjp, gelu, gelu_vjp, resize, resize_vjp,
    transposed_dwconv, transposed_dwconv_vjp, ConvKernel, ResizeSpec,
};
use crate::rec::{
    recconv_forward, recconv_param_count, recconv_vjp, Aggregation, AggregationKernels,
    RecConvConfig, RecConvWeights,
};
use crate::rng::SplitMix64;
use crate::tensor::{Shape2, Tensor4};

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteReport {
    fn pass(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: false,
            detail,
        }
    }
}

/// Knobs for [`run_all`]. `corrupt_param_count` deliberately miscounts one
/// configuration so the parameter-law suite can be watched failing — a
/// falsifiability probe, never set in normal operation.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelfTestOptions {
    pub corrupt_param_count: bool,
}

const GRID_KERNELS: [usize; 3] = [3, 5, 7];
const GRID_CHANNELS: [usize; 2] = [8, 16];
const GRID_LEVELS: std::ops::RangeInclusive<usize> = 0..=4;

/// Conv-weight count must equal `(level + 2) * k^2 * C` over the whole grid,
/// counting the shared downsampler once; recurrent variants hold five
/// kernels regardless of depth.
pub fn parameter_law(corrupt: bool) -> SuiteReport {
    const NAME: &str = "parameter-law";
    let mut rng = SplitMix64::new(0xA0);
    let mut checked = 0usize;
    for k in GRID_KERNELS {
        for level in GRID_LEVELS {
            for c in GRID_CHANNELS {
                let cfg = RecConvConfig::new(c, k, level);
                let w = match RecConvWeights::seeded(&cfg, &mut rng) {
                    Ok(w) => w,
                    Err(e) => return SuiteReport::fail(NAME, format!("build failed: {e}")),
                };
                let mut measured = count_params_recconv(&w).conv_weights;
                if corrupt && checked == 0 {
                    measured += 1;
                }
                let closed = (level + 2) * k * k * c;
                if measured != closed {
                    return SuiteReport::fail(
                        NAME,
                        format!("k={k} level={level} c={c}: measured {measured}, closed form {closed}"),
                    );
                }
                if recconv_param_count(&cfg) != closed {
                    return SuiteReport::fail(
                        NAME,
                        format!("k={k} level={level} c={c}: closed-form helper disagrees"),
                    );
                }
                checked += 1;
            }
        }
    }
    // recurrent aggregation: five kernels, independent of depth
    for level in 1..=3 {
        let cfg = RecConvConfig {
            aggregation: Aggregation::Recurrent,
            ..RecConvConfig::new(8, 5, level)
        };
        let w = RecConvWeights::seeded(&cfg, &mut rng).expect("valid config");
        let measured = count_params_recconv(&w).conv_weights;
        if measured != 5 * 5 * 5 * 8 || recconv_param_count(&cfg) != measured {
            return SuiteReport::fail(
                NAME,
                format!("recurrent level={level}: measured {measured}, expected 1000"),
            );
        }
        checked += 1;
    }
    SuiteReport::pass(NAME, format!("{checked} configurations verified"))
}

/// Measured MACs over the base depthwise cost must equal
/// `1 + 2 * sum_{n=1..level} 4^-n` exactly as rationals on sizes divisible
/// by `2^level`, and stay strictly below 5/3.
pub fn mac_law() -> SuiteReport {
    const NAME: &str = "mac-law";
    let bound = Ratio::new(5u64, 3u64);
    let mut checked = 0usize;
    for k in GRID_KERNELS {
        for level in GRID_LEVELS {
            for c in GRID_CHANNELS {
                for side in [64usize, 128] {
                    let cfg = RecConvConfig::new(c, k, level);
                    let shape = Shape2::new(side, side).expect("valid");
                    let measured = match count_macs_recconv(&cfg, shape, false) {
                        Ok(m) => m.conv,
                        Err(e) => return SuiteReport::fail(NAME, format!("count failed: {e}")),
                    };
                    let base = base_depthwise_macs(&cfg, shape);
                    let factor = Ratio::new(measured, base);
                    let closed = mac_factor_closed_form(level);
                    if factor != closed {
                        return SuiteReport::fail(
                            NAME,
                            format!(
                                "k={k} level={level} c={c} side={side}: {measured}/{base} != {closed}"
                            ),
                        );
                    }
                    if factor >= bound {
                        return SuiteReport::fail(
                            NAME,
                            format!("k={k} level={level}: factor {factor} reaches 5/3"),
                        );
                    }
                    checked += 1;
                }
            }
        }
    }
    SuiteReport::pass(NAME, format!("{checked} grid points match the closed form"))
}

/// With zero decomposition levels the mixer must be bit-identical to a plain
/// depthwise convolution on 50 random inputs.
pub fn level0_equivalence() -> SuiteReport {
    const NAME: &str = "level0-equivalence";
    let mut rng = SplitMix64::new(0xB0);
    for case in 0..50 {
        let channels = 1 + rng.below(6);
        let k = [3, 5, 7][rng.below(3)];
        let h = 5 + rng.below(20);
        let w = 5 + rng.below(20);
        let n = 1 + rng.below(2);
        let cfg = RecConvConfig::new(channels, k, 0);
        let weights = RecConvWeights::seeded(&cfg, &mut rng).expect("valid config");
        let x: Tensor4 =
            Tensor4::random(n, channels, h, w, -2.0, 2.0, &mut rng).expect("valid shape");
        let (y, _) = recconv_forward(&x, &cfg, &weights).expect("forward");
        let AggregationKernels::Parallel(kernels) = &weights.aggregation else {
            unreachable!()
        };
        let plain = conv2d(&x, &kernels[0]).expect("conv");
        let identical = y
            .data()
            .iter()
            .zip(plain.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !identical {
            return SuiteReport::fail(
                NAME,
                format!("case {case} (c={channels} k={k} {h}x{w}): outputs differ"),
            );
        }
    }
    SuiteReport::pass(NAME, "50 random inputs bit-identical".into())
}

/// Sequentially reads segments out of a flat parameter vector.
struct SegReader<'a> {
    v: &'a [f64],
    pos: usize,
}

impl<'a> SegReader<'a> {
    fn new(v: &'a [f64]) -> Self {
        Self { v, pos: 0 }
    }

    fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.v[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn finish(self) {
        assert_eq!(self.pos, self.v.len(), "parameter vector length mismatch");
    }
}

fn fill_kernel(kern: &mut ConvKernel, r: &mut SegReader) {
    let n = kern.weights().len();
    kern.weights_mut().copy_from_slice(r.take(n));
    if let Some(b) = kern.bias_mut() {
        let n = b.len();
        b.copy_from_slice(r.take(n));
    }
}

fn push_kernel(out: &mut Vec<f64>, kern: &ConvKernel) {
    out.extend_from_slice(kern.weights());
    if let Some(b) = kern.bias() {
        out.extend_from_slice(b);
    }
}

fn fill_recconv(w: &mut RecConvWeights, r: &mut SegReader) {
    fill_kernel(&mut w.down, r);
    match &mut w.aggregation {
        AggregationKernels::Parallel(kernels) => {
            for kern in kernels {
                fill_kernel(kern, r);
            }
        }
        AggregationKernels::Recurrent {
            hidden,
            input,
            output,
            skip,
        } => {
            for kern in [hidden, input, output, skip] {
                fill_kernel(kern, r);
            }
        }
    }
    for kern in &mut w.upsample {
        fill_kernel(kern, r);
    }
}

fn push_recconv(out: &mut Vec<f64>, w: &RecConvWeights) {
    push_kernel(out, &w.down);
    match &w.aggregation {
        AggregationKernels::Parallel(kernels) => {
            for kern in kernels {
                push_kernel(out, kern);
            }
        }
        AggregationKernels::Recurrent {
            hidden,
            input,
            output,
            skip,
        } => {
            for kern in [hidden, input, output, skip] {
                push_kernel(out, kern);
            }
        }
    }
    for kern in &w.upsample {
        push_kernel(out, kern);
    }
}

fn push_recconv_grads(out: &mut Vec<f64>, g: &crate::rec::RecConvGrads) {
    out.extend_from_slice(&g.down);
    match &g.aggregation {
        crate::rec::AggregationGrads::Parallel(levels) => {
            for l in levels {
                out.extend_from_slice(l);
            }
        }
        crate::rec::AggregationGrads::Recurrent {
            hidden,
            input,
            output,
            skip,
        } => {
            for l in [hidden, input, output, skip] {
                out.extend_from_slice(l);
            }
        }
    }
    for l in &g.upsample {
        out.extend_from_slice(l);
    }
}

fn check_conv2d(name: &'static str) -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xC1);
    let template = ConvKernel::seeded(2, 2, 2, 3, 2, false, &mut rng).unwrap();
    let x: Tensor4 = Tensor4::random(1, 2, 6, 6, -1.0, 1.0, &mut rng).unwrap();
    let mut x0 = x.data().to_vec();
    x0.extend_from_slice(template.weights());
    let split = |v: &[f64]| {
        let mut r = SegReader::new(v);
        let x = Tensor4::from_vec(1, 2, 6, 6, r.take(72).to_vec()).unwrap();
        let mut kern = template.clone();
        fill_kernel(&mut kern, &mut r);
        r.finish();
        (x, kern)
    };
    let report = fd_gradcheck(
        |v| {
            let (x, kern) = split(v);
            conv2d(&x, &kern).unwrap().data().to_vec()
        },
        |v, g| {
            let (x, kern) = split(v);
            let g = Tensor4::from_vec(1, 2, 3, 3, g.to_vec()).unwrap();
            let vj = conv2d_vjp(&x, &kern, &g).unwrap();
            let mut out = vj.input.data().to_vec();
            out.extend_from_slice(&vj.weights);
            out
        },
        &x0,
        0xC2,
        200,
    );
    (name.to_string(), report)
}

fn check_resize(name: &'static str, spec: ResizeSpec) -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xC3);
    let x: Tensor4 = Tensor4::random(1, 2, 5, 7, -1.0, 1.0, &mut rng).unwrap();
    let x0 = x.data().to_vec();
    let source = x.spatial();
    let report = fd_gradcheck(
        |v| {
            let x = Tensor4::from_vec(1, 2, 5, 7, v.to_vec()).unwrap();
            resize(&x, &spec).unwrap().data().to_vec()
        },
        |_, g| {
            let g = Tensor4::from_vec(1, 2, spec.target.h, spec.target.w, g.to_vec()).unwrap();
            resize_vjp(source, &spec, &g).unwrap().data().to_vec()
        },
        &x0,
        0xC4,
        200,
    );
    (name.to_string(), report)
}

fn check_transposed() -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xC5);
    let template = ConvKernel::seeded(2, 2, 2, 3, 2, false, &mut rng).unwrap();
    let target = Shape2::new(6, 6).unwrap();
    let x: Tensor4 = Tensor4::random(1, 2, 3, 3, -1.0, 1.0, &mut rng).unwrap();
    let mut x0 = x.data().to_vec();
    x0.extend_from_slice(template.weights());
    let split = |v: &[f64]| {
        let mut r = SegReader::new(v);
        let x = Tensor4::from_vec(1, 2, 3, 3, r.take(18).to_vec()).unwrap();
        let mut kern = template.clone();
        fill_kernel(&mut kern, &mut r);
        r.finish();
        (x, kern)
    };
    let report = fd_gradcheck(
        |v| {
            let (x, kern) = split(v);
            transposed_dwconv(&x, &kern, target).unwrap().data().to_vec()
        },
        |v, g| {
            let (x, kern) = split(v);
            let g = Tensor4::from_vec(1, 2, 6, 6, g.to_vec()).unwrap();
            let vj = transposed_dwconv_vjp(&x, &kern, target, &g).unwrap();
            let mut out = vj.input.data().to_vec();
            out.extend_from_slice(&vj.weights);
            out
        },
        &x0,
        0xC6,
        200,
    );
    ("transposed-dwconv".to_string(), report)
}

fn check_gelu() -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xC7);
    let x: Tensor4 = Tensor4::random(1, 2, 6, 6, -2.0, 2.0, &mut rng).unwrap();
    let x0 = x.data().to_vec();
    let report = fd_gradcheck(
        |v| {
            let x = Tensor4::from_vec(1, 2, 6, 6, v.to_vec()).unwrap();
            gelu(&x).data().to_vec()
        },
        |v, g| {
            let x = Tensor4::from_vec(1, 2, 6, 6, v.to_vec()).unwrap();
            let g = Tensor4::from_vec(1, 2, 6, 6, g.to_vec()).unwrap();
            gelu_vjp(&x, &g).unwrap().data().to_vec()
        },
        &x0,
        0xC8,
        200,
    );
    ("gelu".to_string(), report)
}

fn check_affine() -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xC9);
    let x: Tensor4 = Tensor4::random(1, 3, 5, 5, -1.0, 1.0, &mut rng).unwrap();
    let mut x0 = x.data().to_vec();
    let scale: Vec<f64> = (0..3).map(|_| rng.uniform(-1.5, 1.5)).collect();
    let shift: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
    x0.extend_from_slice(&scale);
    x0.extend_from_slice(&shift);
    let split = |v: &[f64]| {
        let mut r = SegReader::new(v);
        let x = Tensor4::from_vec(1, 3, 5, 5, r.take(75).to_vec()).unwrap();
        let scale = r.take(3).to_vec();
        let shift = r.take(3).to_vec();
        r.finish();
        (x, scale, shift)
    };
    let report = fd_gradcheck(
        |v| {
            let (x, scale, shift) = split(v);
            channel_affine(&x, &scale, &shift).unwrap().data().to_vec()
        },
        |v, g| {
            let (x, scale, _) = split(v);
            let g = Tensor4::from_vec(1, 3, 5, 5, g.to_vec()).unwrap();
            let vj = channel_affine_vjp(&x, &scale, &g).unwrap();
            let mut out = vj.input.data().to_vec();
            out.extend_from_slice(&vj.scale);
            out.extend_from_slice(&vj.shift);
            out
        },
        &x0,
        0xCA,
        200,
    );
    ("channel-affine".to_string(), report)
}

fn check_recconv(level: usize, side: usize, seed: u64) -> (String, GradCheckReport) {
    let cfg = RecConvConfig::new(2, 3, level);
    let mut rng = SplitMix64::new(seed);
    let template = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
    let x: Tensor4 = Tensor4::random(1, 2, side, side, -1.0, 1.0, &mut rng).unwrap();
    let mut x0 = x.data().to_vec();
    push_recconv(&mut x0, &template);
    let n_input = x.len();
    let split = move |v: &[f64]| {
        let mut r = SegReader::new(v);
        let x = Tensor4::from_vec(1, 2, side, side, r.take(n_input).to_vec()).unwrap();
        let mut w = template.clone();
        fill_recconv(&mut w, &mut r);
        r.finish();
        (x, w)
    };
    let report = fd_gradcheck(
        |v| {
            let (x, w) = split(v);
            recconv_forward(&x, &cfg, &w).unwrap().0.data().to_vec()
        },
        |v, g| {
            let (x, w) = split(v);
            let g = Tensor4::from_vec(1, 2, side, side, g.to_vec()).unwrap();
            let (_, trace) = recconv_forward(&x, &cfg, &w).unwrap();
            let grads = recconv_vjp(&trace, &cfg, &w, &g).unwrap();
            let mut out = grads.input.data().to_vec();
            push_recconv_grads(&mut out, &grads);
            out
        },
        &x0,
        seed ^ 0xFF,
        200,
    );
    (format!("recconv-level{level}"), report)
}

fn check_metanext() -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xD1);
    let template: MetaNeXtBlock = MetaNeXtBlock::seeded(
        8,
        5,
        2,
        2,
        Aggregation::Parallel,
        crate::rec::UpsampleMode::Bilinear,
        &mut rng,
    )
    .unwrap();
    let x: Tensor4 = Tensor4::random(1, 8, 32, 32, -1.0, 1.0, &mut rng).unwrap();
    let mut x0 = x.data().to_vec();
    push_recconv(&mut x0, &template.mixer);
    x0.extend_from_slice(&template.norm.scale);
    x0.extend_from_slice(&template.norm.shift);
    push_kernel(&mut x0, &template.mixer_up);
    push_kernel(&mut x0, &template.mixer_down);
    let n_input = x.len();
    let split = move |v: &[f64]| {
        let mut r = SegReader::new(v);
        let x = Tensor4::from_vec(1, 8, 32, 32, r.take(n_input).to_vec()).unwrap();
        let mut block = template.clone();
        fill_recconv(&mut block.mixer, &mut r);
        block.norm.scale.copy_from_slice(r.take(8));
        block.norm.shift.copy_from_slice(r.take(8));
        fill_kernel(&mut block.mixer_up, &mut r);
        fill_kernel(&mut block.mixer_down, &mut r);
        r.finish();
        (x, block)
    };
    let report = fd_gradcheck(
        |v| {
            let (x, block) = split(v);
            metanext_forward_traced(&x, &block).unwrap().0.data().to_vec()
        },
        |v, g| {
            let (x, block) = split(v);
            let g = Tensor4::from_vec(1, 8, 32, 32, g.to_vec()).unwrap();
            let (_, trace) = metanext_forward_traced(&x, &block).unwrap();
            let (g_x, grads) = metanext_vjp(&block, &trace, &g).unwrap();
            let mut out = g_x.data().to_vec();
            push_recconv_grads(&mut out, &grads.mixer);
            out.extend_from_slice(&grads.norm_scale);
            out.extend_from_slice(&grads.norm_shift);
            out.extend_from_slice(&grads.mixer_up_w);
            out.extend_from_slice(&grads.mixer_up_b);
            out.extend_from_slice(&grads.mixer_down_w);
            out.extend_from_slice(&grads.mixer_down_b);
            out
        },
        &x0,
        0xD2,
        200,
    );
    ("metanext-block".to_string(), report)
}

fn check_downsample() -> (String, GradCheckReport) {
    let mut rng = SplitMix64::new(0xD3);
    let template: DownsampleBlock = DownsampleBlock::seeded(4, 2, &mut rng).unwrap();
    let x: Tensor4 = Tensor4::random(1, 4, 14, 14, -1.0, 1.0, &mut rng).unwrap();
    let mut x0 = x.data().to_vec();
    push_kernel(&mut x0, &template.spatial);
    push_kernel(&mut x0, &template.expand);
    x0.extend_from_slice(&template.norm.scale);
    x0.extend_from_slice(&template.norm.shift);
    push_kernel(&mut x0, &template.mixer_up);
    push_kernel(&mut x0, &template.mixer_down);
    let n_input = x.len();
    let split = move |v: &[f64]| {
        let mut r = SegReader::new(v);
        let x = Tensor4::from_vec(1, 4, 14, 14, r.take(n_input).to_vec()).unwrap();
        let mut block = template.clone();
        fill_kernel(&mut block.spatial, &mut r);
        fill_kernel(&mut block.expand, &mut r);
        block.norm.scale.copy_from_slice(r.take(8));
        block.norm.shift.copy_from_slice(r.take(8));
        fill_kernel(&mut block.mixer_up, &mut r);
        fill_kernel(&mut block.mixer_down, &mut r);
        r.finish();
        (x, block)
    };
    let report = fd_gradcheck(
        |v| {
            let (x, block) = split(v);
            downsample_forward_traced(&x, &block).unwrap().0.data().to_vec()
        },
        |v, g| {
            let (x, block) = split(v);
            let g = Tensor4::from_vec(1, 8, 7, 7, g.to_vec()).unwrap();
            let (_, trace) = downsample_forward_traced(&x, &block).unwrap();
            let (g_x, grads) = downsample_vjp(&block, &trace, &g).unwrap();
            let mut out = g_x.data().to_vec();
            out.extend_from_slice(&grads.spatial_w);
            out.extend_from_slice(&grads.expand_w);
            out.extend_from_slice(&grads.norm_scale);
            out.extend_from_slice(&grads.norm_shift);
            out.extend_from_slice(&grads.mixer_up_w);
            out.extend_from_slice(&grads.mixer_up_b);
            out.extend_from_slice(&grads.mixer_down_w);
            out.extend_from_slice(&grads.mixer_down_b);
            out
        },
        &x0,
        0xD4,
        200,
    );
    ("downsample-block".to_string(), report)
}

/// The full gradient-check battery: every exported differentiable operation
/// plus the composite blocks, each on a fixed seed.
pub fn standard_gradchecks() -> Vec<(String, GradCheckReport)> {
    let target_up = Shape2::new(9, 11).unwrap();
    vec![
        check_conv2d("conv2d"),
        check_resize("resize-bilinear", ResizeSpec::bilinear(target_up)),
        check_resize("resize-nearest", ResizeSpec::nearest(target_up)),
        check_transposed(),
        check_gelu(),
        check_affine(),
        check_recconv(1, 12, 0xE1),
        check_recconv(2, 16, 0xE2),
        check_metanext(),
        check_downsample(),
    ]
}

/// All gradient checks must pass at the shared tolerance.
pub fn gradient_checks() -> SuiteReport {
    const NAME: &str = "gradient-checks";
    let reports = standard_gradchecks();
    let mut worst: Option<(&str, f64)> = None;
    for (name, report) in &reports {
        if !report.pass {
            return SuiteReport::fail(
                NAME,
                format!("{name}: max_rel_err {:.3e}", report.max_rel_err),
            );
        }
        if worst.map_or(true, |(_, w)| report.max_rel_err > w) {
            worst = Some((name, report.max_rel_err));
        }
    }
    let (name, err) = worst.expect("battery is nonempty");
    SuiteReport::pass(
        NAME,
        format!("{} checks passed, worst {name} at {err:.3e}", reports.len()),
    )
}

/// Nominal schedule values, structural-field monotonicity, and exact
/// agreement between the measured gradient support and the positive-weight
/// oracle box.
pub fn receptive_field() -> SuiteReport {
    const NAME: &str = "receptive-field";
    let schedule: Vec<usize> = [4usize, 3, 2, 1].iter().map(|&l| nominal_erf(3, l)).collect();
    if schedule != [48, 24, 12, 6] {
        return SuiteReport::fail(NAME, format!("nominal schedule came out as {schedule:?}"));
    }
    for k in [3usize, 5] {
        let mut previous = None;
        for level in 0..=2 {
            let cfg = RecConvConfig::new(2, k, level);
            let rf = match structural_rf(&cfg) {
                Ok(rf) => rf,
                Err(e) => return SuiteReport::fail(NAME, format!("oracle failed: {e}")),
            };
            if level == 0 && rf != k {
                return SuiteReport::fail(NAME, format!("k={k} level=0: rf {rf} != kernel"));
            }
            if level >= 1 && rf < nominal_erf(k, level) {
                return SuiteReport::fail(
                    NAME,
                    format!("k={k} level={level}: rf {rf} below nominal {}", nominal_erf(k, level)),
                );
            }
            if let Some(prev) = previous {
                if rf <= prev {
                    return SuiteReport::fail(
                        NAME,
                        format!("k={k} level={level}: rf {rf} not above previous {prev}"),
                    );
                }
            }
            previous = Some(rf);

            // independent measurement: support box on an explicit probe,
            // grid-aligned like the oracle's
            let weights = RecConvWeights::constant(&cfg, 1.0).expect("valid config");
            let side = crate::analysis::aligned_probe_side(level, 2 * rf + k + 8);
            let probe = Tensor4::full(1, 2, side, side, 1.0).expect("valid shape");
            let map = erf_map_recconv(&cfg, &weights, &probe).expect("map");
            let Some(b) = map.support_box() else {
                return SuiteReport::fail(NAME, format!("k={k} level={level}: empty support"));
            };
            if b.height().max(b.width()) != rf {
                return SuiteReport::fail(
                    NAME,
                    format!(
                        "k={k} level={level}: measured support {}x{} vs oracle {rf}",
                        b.height(),
                        b.width()
                    ),
                );
            }
        }
    }
    SuiteReport::pass(NAME, "schedule, monotonicity and support agreement hold".into())
}

/// Run every suite in a fixed order.
pub fn run_all(opts: SelfTestOptions) -> Vec<SuiteReport> {
    vec![
        parameter_law(opts.corrupt_param_count),
        mac_law(),
        level0_equivalence(),
        gradient_checks(),
        receptive_field(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_hook_fails_the_parameter_suite() {
        assert!(parameter_law(false).passed);
        assert!(!parameter_law(true).passed);
    }

    #[test]
    fn suites_are_deterministic() {
        let a = run_all(SelfTestOptions::default());
        let b = run_all(SelfTestOptions::default());
        let fmt = |reports: &[SuiteReport]| {
            reports
                .iter()
                .map(|r| format!("{} {} {}", r.name, r.passed, r.detail))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(fmt(&a), fmt(&b));
    }
}
