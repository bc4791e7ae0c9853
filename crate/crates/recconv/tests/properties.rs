//! Cross-module invariants: adjoint consistency of every linear operator,
//! channel separability of depthwise convolution, interpolation exactness
//! classes, and elementwise algebra.

use proptest::prelude::*;

use recconv::{
    channel_affine, channel_affine_vjp, conv2d, conv2d_vjp, resize, resize_vjp, transposed_dwconv,
    transposed_dwconv_vjp, ConvKernel, ResizeSpec, Shape2, SplitMix64, Tensor4,
};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn assert_adjoint(lhs: f64, rhs: f64, what: &str) {
    let tol = 1e-10 * lhs.abs().max(rhs.abs()).max(1.0);
    assert!(
        (lhs - rhs).abs() <= tol,
        "{what}: <Lx, g> = {lhs} vs <x, L^T g> = {rhs}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn add_is_exactly_commutative(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
        let mut rng = SplitMix64::new(seed);
        let a: Tensor4 = Tensor4::random(1, 2, h, w, -10.0, 10.0, &mut rng).unwrap();
        let b: Tensor4 = Tensor4::random(1, 2, h, w, -10.0, 10.0, &mut rng).unwrap();
        let ab = a.add(&b).unwrap();
        let ba = b.add(&a).unwrap();
        prop_assert_eq!(ab.data(), ba.data());
    }

    #[test]
    fn concat_prefix_is_bit_exact(seed in any::<u64>(), ca in 1usize..4, cb in 1usize..4) {
        let mut rng = SplitMix64::new(seed);
        let a: Tensor4 = Tensor4::random(2, ca, 3, 4, -1.0, 1.0, &mut rng).unwrap();
        let b: Tensor4 = Tensor4::random(2, cb, 3, 4, -1.0, 1.0, &mut rng).unwrap();
        let cat = a.concat_channels(&b).unwrap();
        for n in 0..2 {
            for c in 0..ca {
                for y in 0..3 {
                    for x in 0..4 {
                        prop_assert_eq!(cat.get(n, c, y, x).to_bits(), a.get(n, c, y, x).to_bits());
                    }
                }
            }
            for c in 0..cb {
                for y in 0..3 {
                    for x in 0..4 {
                        prop_assert_eq!(
                            cat.get(n, ca + c, y, x).to_bits(),
                            b.get(n, c, y, x).to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_adjoint_consistency(seed in any::<u64>(), stride in 1usize..3, depthwise in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let kern: ConvKernel = if depthwise {
            ConvKernel::seeded(3, 3, 3, 3, stride, false, &mut rng).unwrap()
        } else {
            ConvKernel::seeded(4, 3, 1, 3, stride, false, &mut rng).unwrap()
        };
        let x: Tensor4 = Tensor4::random(1, 3, 7, 9, -1.0, 1.0, &mut rng).unwrap();
        let y = conv2d(&x, &kern).unwrap();
        let g: Tensor4 =
            Tensor4::random(y.n(), y.c(), y.h(), y.w(), -1.0, 1.0, &mut rng).unwrap();
        let vj = conv2d_vjp(&x, &kern, &g).unwrap();
        assert_adjoint(dot(y.data(), g.data()), dot(x.data(), vj.input.data()), "conv2d");
    }

    #[test]
    fn resize_adjoint_consistency(seed in any::<u64>(), th in 2usize..12, tw in 2usize..12, bilinear in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let x: Tensor4 = Tensor4::random(1, 2, 5, 7, -1.0, 1.0, &mut rng).unwrap();
        let target = Shape2::new(th, tw).unwrap();
        let spec = if bilinear {
            ResizeSpec::bilinear(target)
        } else {
            ResizeSpec::nearest(target)
        };
        let y = resize(&x, &spec).unwrap();
        let g: Tensor4 = Tensor4::random(1, 2, th, tw, -1.0, 1.0, &mut rng).unwrap();
        let gx = resize_vjp(x.spatial(), &spec, &g).unwrap();
        assert_adjoint(dot(y.data(), g.data()), dot(x.data(), gx.data()), "resize");
    }

    #[test]
    fn transposed_adjoint_consistency(seed in any::<u64>(), grow in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let kern: ConvKernel = ConvKernel::seeded(2, 2, 2, 3, 2, false, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, 2, 4, 4, -1.0, 1.0, &mut rng).unwrap();
        let side = if grow { 8 } else { 7 };
        let target = Shape2::new(side, side).unwrap();
        let y = transposed_dwconv(&x, &kern, target).unwrap();
        let g: Tensor4 = Tensor4::random(1, 2, side, side, -1.0, 1.0, &mut rng).unwrap();
        let vj = transposed_dwconv_vjp(&x, &kern, target, &g).unwrap();
        assert_adjoint(
            dot(y.data(), g.data()),
            dot(x.data(), vj.input.data()),
            "transposed_dwconv",
        );
    }

    #[test]
    fn affine_adjoint_consistency(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let scale: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let x: Tensor4 = Tensor4::random(1, 3, 5, 5, -1.0, 1.0, &mut rng).unwrap();
        let y = channel_affine(&x, &scale, &[0.0; 3]).unwrap();
        let g: Tensor4 = Tensor4::random(1, 3, 5, 5, -1.0, 1.0, &mut rng).unwrap();
        let vj = channel_affine_vjp(&x, &scale, &g).unwrap();
        assert_adjoint(
            dot(y.data(), g.data()),
            dot(x.data(), vj.input.data()),
            "channel_affine",
        );
    }

    #[test]
    fn depthwise_conv_is_channel_separable(seed in any::<u64>()) {
        // permuting input channels together with kernel channels permutes
        // the output channels the same way, bit for bit
        let mut rng = SplitMix64::new(seed);
        let channels = 3usize;
        let kern: ConvKernel =
            ConvKernel::seeded(channels, channels, channels, 3, 1, false, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, channels, 6, 6, -1.0, 1.0, &mut rng).unwrap();
        let y = conv2d(&x, &kern).unwrap();

        let perm = [2usize, 0, 1];
        let mut xp: Tensor4 = Tensor4::zeros(1, channels, 6, 6).unwrap();
        for c in 0..channels {
            for yy in 0..6 {
                for xx in 0..6 {
                    xp.set(0, c, yy, xx, x.get(0, perm[c], yy, xx));
                }
            }
        }
        let mut wp = vec![0.0; kern.weights().len()];
        let k2 = 9;
        for c in 0..channels {
            wp[c * k2..(c + 1) * k2]
                .copy_from_slice(&kern.weights()[perm[c] * k2..(perm[c] + 1) * k2]);
        }
        let kern_p = ConvKernel::depthwise(channels, 3, 1, wp, None).unwrap();
        let yp = conv2d(&xp, &kern_p).unwrap();
        for c in 0..channels {
            for yy in 0..6 {
                for xx in 0..6 {
                    prop_assert_eq!(
                        yp.get(0, c, yy, xx).to_bits(),
                        y.get(0, perm[c], yy, xx).to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn bilinear_reproduces_affine_ramps_in_the_interior(
        seed in any::<u64>(),
        th in 4usize..16,
        tw in 4usize..16,
    ) {
        let mut rng = SplitMix64::new(seed);
        let (a, b, c) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let (h, w) = (9usize, 11usize);
        let mut x: Tensor4 = Tensor4::zeros(1, 1, h, w).unwrap();
        for y in 0..h {
            for xx in 0..w {
                x.set(0, 0, y, xx, a * y as f64 + b * xx as f64 + c);
            }
        }
        let spec = ResizeSpec::bilinear(Shape2::new(th, tw).unwrap());
        let out = resize(&x, &spec).unwrap();
        // interior: both neighbours unclamped, i.e. source coordinate in [0, len-1]
        let sy = h as f64 / th as f64;
        let sx = w as f64 / tw as f64;
        for oy in 0..th {
            let src_y = (oy as f64 + 0.5) * sy - 0.5;
            if src_y < 0.0 || src_y > (h - 1) as f64 {
                continue;
            }
            for ox in 0..tw {
                let src_x = (ox as f64 + 0.5) * sx - 0.5;
                if src_x < 0.0 || src_x > (w - 1) as f64 {
                    continue;
                }
                let want = a * src_y + b * src_x + c;
                let got = out.get(0, 0, oy, ox);
                prop_assert!(
                    (got - want).abs() <= 1e-12,
                    "({oy},{ox}): got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn resize_constant_preservation(seed in any::<u64>(), th in 1usize..14, tw in 1usize..14) {
        let mut rng = SplitMix64::new(seed);
        let value = rng.uniform(-5.0, 5.0);
        let x: Tensor4 = Tensor4::full(1, 2, 6, 5, value).unwrap();
        let target = Shape2::new(th, tw).unwrap();
        for spec in [ResizeSpec::bilinear(target), ResizeSpec::nearest(target)] {
            let y = resize(&x, &spec).unwrap();
            prop_assert!(y.data().iter().all(|&v| v == value));
        }
    }
}

#[test]
fn add_associativity_within_rounding() {
    let mut rng = SplitMix64::new(77);
    let a: Tensor4 = Tensor4::random(1, 2, 8, 8, -100.0, 100.0, &mut rng).unwrap();
    let b: Tensor4 = Tensor4::random(1, 2, 8, 8, -100.0, 100.0, &mut rng).unwrap();
    let c: Tensor4 = Tensor4::random(1, 2, 8, 8, -100.0, 100.0, &mut rng).unwrap();
    let left = a.add(&b).unwrap().add(&c).unwrap();
    let right = a.add(&b.add(&c).unwrap()).unwrap();
    for (l, r) in left.data().iter().zip(right.data()) {
        // one rounding step per accumulation
        assert!((l - r).abs() <= 1e-13 * l.abs().max(r.abs()).max(1.0));
    }
}
