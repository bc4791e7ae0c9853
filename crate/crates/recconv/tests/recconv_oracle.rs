//! Straight-line oracle for the recursive mixer: every decomposition depth up
//! to three is written out explicitly, with all scales materialised, so the
//! recursive control flow is checked against code with no recursion in it.
//! Also contains the symbolic dataflow check relating the recurrent variant
//! to the parallel one.

use recconv::{
    conv2d, recconv_forward, Aggregation, AggregationKernels, ConvKernel, RecConvConfig,
    RecConvWeights, ResizeSpec, Shape2, SplitMix64, Tensor4, UpsampleMode,
};

fn up(x: &Tensor4, target: Shape2, mode: UpsampleMode) -> Tensor4 {
    let spec = match mode {
        UpsampleMode::Bilinear => ResizeSpec::bilinear(target),
        UpsampleMode::Nearest => ResizeSpec::nearest(target),
        UpsampleMode::TransposedDwConv => unreachable!("oracle covers interpolation modes"),
    };
    recconv::resize(x, &spec).unwrap()
}

/// Non-recursive reference: one function per depth, all scales named.
fn oracle(x: &Tensor4, level: usize, down: &ConvKernel, scale: &[ConvKernel], mode: UpsampleMode) -> Tensor4 {
    let s0 = x.spatial();
    match level {
        0 => conv2d(x, &scale[0]).unwrap(),
        1 => {
            let d1 = conv2d(x, down).unwrap();
            let u1 = up(&conv2d(&d1, &scale[0]).unwrap(), s0, mode);
            conv2d(&x.add(&u1).unwrap(), &scale[1]).unwrap()
        }
        2 => {
            let d1 = conv2d(x, down).unwrap();
            let s1 = d1.spatial();
            let d2 = conv2d(&d1, down).unwrap();
            let u2 = up(&conv2d(&d2, &scale[0]).unwrap(), s1, mode);
            let u1 = up(&conv2d(&d1.add(&u2).unwrap(), &scale[1]).unwrap(), s0, mode);
            conv2d(&x.add(&u1).unwrap(), &scale[2]).unwrap()
        }
        3 => {
            let d1 = conv2d(x, down).unwrap();
            let s1 = d1.spatial();
            let d2 = conv2d(&d1, down).unwrap();
            let s2 = d2.spatial();
            let d3 = conv2d(&d2, down).unwrap();
            let u3 = up(&conv2d(&d3, &scale[0]).unwrap(), s2, mode);
            let u2 = up(&conv2d(&d2.add(&u3).unwrap(), &scale[1]).unwrap(), s1, mode);
            let u1 = up(&conv2d(&d1.add(&u2).unwrap(), &scale[2]).unwrap(), s0, mode);
            conv2d(&x.add(&u1).unwrap(), &scale[3]).unwrap()
        }
        _ => panic!("oracle written out for depths 0..=3"),
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = SplitMix64::new(0x51);
    let shapes = [(32usize, 32usize), (37, 53), (24, 40), (33, 19)];
    let mut cases = 0;
    for &k in &[3usize, 5, 7] {
        for level in 0..=3usize {
            for &mode in &[UpsampleMode::Bilinear, UpsampleMode::Nearest] {
                let (h, w) = shapes[(cases as usize) % shapes.len()];
                let channels = 1 + rng.below(4);
                let cfg = RecConvConfig {
                    channels,
                    kernel: k,
                    level,
                    aggregation: Aggregation::Parallel,
                    upsample: mode,
                };
                let weights: RecConvWeights = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
                let x: Tensor4 = Tensor4::random(1, channels, h, w, -1.0, 1.0, &mut rng).unwrap();
                let (got, _) = recconv_forward(&x, &cfg, &weights).unwrap();
                let AggregationKernels::Parallel(scale) = &weights.aggregation else {
                    unreachable!()
                };
                let want = oracle(&x, level, &weights.down, scale, mode);
                let diff = got.max_abs_diff(&want).unwrap();
                assert!(
                    diff <= 1e-12,
                    "k={k} level={level} mode={mode:?} {h}x{w}: diff {diff}"
                );
                cases += 1;
            }
        }
    }
    assert!(cases >= 20, "oracle grid covered {cases} cases");
}

#[test]
fn odd_shapes_round_trip_through_the_recorded_scales() {
    // 37x53 halves as 37 -> 19 -> 10 -> 5 and 53 -> 27 -> 14 -> 7; the
    // output must come back at exactly the input extent at every depth
    let mut rng = SplitMix64::new(0x52);
    for level in 0..=3usize {
        let cfg = RecConvConfig::new(2, 3, level);
        let weights: RecConvWeights = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, 2, 37, 53, -1.0, 1.0, &mut rng).unwrap();
        let (y, _) = recconv_forward(&x, &cfg, &weights).unwrap();
        assert_eq!(y.dims(), (1, 2, 37, 53), "level {level}");
    }
}

// ---------------------------------------------------------------------------
// Symbolic dataflow reduction: with one level, hidden kernel zero, input
// kernel equal to the deepest parallel kernel and output/skip kernels equal
// to the full-resolution parallel kernel, the recurrent dataflow equals the
// parallel dataflow with the final addition distributed through the last
// convolution. Checked on expression DAGs, not numerically, because the
// reassociated addition changes rounding.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Expr {
    Input,
    Down(Box<Expr>),
    Conv(&'static str, Box<Expr>),
    Up(Box<Expr>),
    Add(Vec<Expr>),
}

fn add2(a: Expr, b: Expr) -> Expr {
    Expr::Add(vec![a, b])
}

/// Distribute the linear maps over addition, flatten nested sums, sort terms.
fn normalize(e: Expr) -> Expr {
    match e {
        Expr::Input => Expr::Input,
        Expr::Down(inner) => match normalize(*inner) {
            Expr::Add(terms) => normalize(Expr::Add(
                terms.into_iter().map(|t| Expr::Down(Box::new(t))).collect(),
            )),
            other => Expr::Down(Box::new(other)),
        },
        Expr::Up(inner) => match normalize(*inner) {
            Expr::Add(terms) => normalize(Expr::Add(
                terms.into_iter().map(|t| Expr::Up(Box::new(t))).collect(),
            )),
            other => Expr::Up(Box::new(other)),
        },
        Expr::Conv(name, inner) => match normalize(*inner) {
            Expr::Add(terms) => normalize(Expr::Add(
                terms
                    .into_iter()
                    .map(|t| Expr::Conv(name, Box::new(t)))
                    .collect(),
            )),
            other => Expr::Conv(name, Box::new(other)),
        },
        Expr::Add(terms) => {
            let mut flat = Vec::new();
            for t in terms {
                match normalize(t) {
                    Expr::Add(inner) => flat.extend(inner),
                    other => flat.push(other),
                }
            }
            flat.sort();
            if flat.len() == 1 {
                flat.pop().unwrap()
            } else {
                Expr::Add(flat)
            }
        }
    }
}

/// The parallel dataflow, mirroring the forward loop structure.
fn parallel_dataflow(level: usize, names: &[&'static str]) -> Expr {
    let mut features = vec![Expr::Input];
    for _ in 0..level {
        features.push(Expr::Down(Box::new(features.last().unwrap().clone())));
    }
    let mut carry: Option<Expr> = None;
    for step in 0..level {
        let depth = level - step;
        let sum = match carry {
            None => features[depth].clone(),
            Some(c) => add2(features[depth].clone(), c),
        };
        carry = Some(Expr::Up(Box::new(Expr::Conv(names[step], Box::new(sum)))));
    }
    let final_sum = match carry {
        None => Expr::Input,
        Some(c) => add2(Expr::Input, c),
    };
    Expr::Conv(names[level], Box::new(final_sum))
}

/// The recurrent dataflow; `hidden = None` encodes an all-zero hidden kernel,
/// whose term vanishes from the sum.
fn recurrent_dataflow(
    level: usize,
    hidden: Option<&'static str>,
    input: &'static str,
    output: &'static str,
    skip: &'static str,
) -> Expr {
    let mut features = vec![Expr::Input];
    for _ in 0..level {
        features.push(Expr::Down(Box::new(features.last().unwrap().clone())));
    }
    let mut h: Option<Expr> = None;
    for step in 0..level {
        let depth = level - step;
        let drive = Expr::Conv(input, Box::new(features[depth].clone()));
        let pre = match (&h, hidden) {
            (None, _) => drive,
            (Some(prev), Some(hname)) => add2(Expr::Conv(hname, Box::new(prev.clone())), drive),
            (Some(_), None) => drive, // zero hidden kernel contributes nothing
        };
        h = Some(Expr::Up(Box::new(pre)));
    }
    add2(
        Expr::Conv(output, Box::new(h.expect("level >= 1"))),
        Expr::Conv(skip, Box::new(Expr::Input)),
    )
}

#[test]
fn recurrent_level_one_reduces_to_parallel_symbolically() {
    let parallel = parallel_dataflow(1, &["L0", "L1"]);
    let recurrent = recurrent_dataflow(1, None, "L0", "L1", "L1");
    assert_eq!(normalize(parallel), normalize(recurrent));
}

#[test]
fn reduction_does_not_hold_with_distinct_kernels() {
    // sanity check that the symbolic normal form can tell dataflows apart
    let parallel = parallel_dataflow(1, &["L0", "L1"]);
    let recurrent = recurrent_dataflow(1, None, "L0", "C", "D");
    assert_ne!(normalize(parallel), normalize(recurrent));
    let deeper = parallel_dataflow(2, &["L0", "L1", "L2"]);
    assert_ne!(normalize(deeper), normalize(parallel_dataflow(1, &["L0", "L1"])));
}
