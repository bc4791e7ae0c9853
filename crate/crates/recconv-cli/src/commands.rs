//! The four CLI commands: complexity analysis, forward execution,
//! receptive-field maps, and the built-in verification suites.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_rational::Ratio;

use recconv::analysis::{
    base_depthwise_macs, count_macs_model, count_macs_recconv, count_params_model,
    count_params_recconv, erf_map_model, erf_map_recconv, mac_factor_closed_form,
    model_shape_schedule, nominal_erf, structural_rf, ErfMap,
};
use recconv::model::{build_model, model_forward, Model, ModelConfig};
use recconv::selftest::{run_all, SelfTestOptions};
use recconv::{
    recconv_forward, Aggregation, RecConvConfig, RecConvWeights, Shape2, SplitMix64, Tensor4,
    UpsampleMode,
};

use crate::config::{load_config, LoadedConfig};
use crate::errors::{CliError, CliResult};
use crate::pnm;
use crate::report::ReportDocument;

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Exact-equality gate for the MAC law: holds for the parallel decomposition
/// with interpolation upsampling on sizes divisible by `2^level`.
fn mac_equality_contractual(cfg: &RecConvConfig, input: Shape2, include_resize: bool) -> bool {
    cfg.aggregation == Aggregation::Parallel
        && cfg.upsample != UpsampleMode::TransposedDwConv
        && !include_resize
        && input.h % (1 << cfg.level) == 0
        && input.w % (1 << cfg.level) == 0
}

fn upsample_name(mode: UpsampleMode) -> &'static str {
    match mode {
        UpsampleMode::Bilinear => "bilinear",
        UpsampleMode::Nearest => "nearest",
        UpsampleMode::TransposedDwConv => "transposed",
    }
}

fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Parallel => "parallel",
        Aggregation::Recurrent => "recurrent",
    }
}

pub struct AnalyzeArgs {
    pub config: PathBuf,
    pub include_resize_macs: bool,
    pub input_h: Option<usize>,
    pub input_w: Option<usize>,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let loaded = load_config(&args.config)?;
    let mut doc = ReportDocument::new();
    let contract_ok = match &loaded {
        LoadedConfig::RecConv { cfg, .. } => {
            let input = Shape2::new(args.input_h.unwrap_or(64), args.input_w.unwrap_or(64))?;
            analyze_recconv(&mut doc, cfg, input, args.include_resize_macs)?
        }
        LoadedConfig::Model(cfg) => {
            let input = Shape2::new(args.input_h.unwrap_or(224), args.input_w.unwrap_or(224))?;
            analyze_model(&mut doc, cfg, input, args.include_resize_macs)?
        }
    };
    print!("{}", doc.render());
    if contract_ok {
        Ok(())
    } else {
        Err(CliError::Contract(
            "measured values deviate from the closed form".into(),
        ))
    }
}

fn analyze_recconv(
    doc: &mut ReportDocument,
    cfg: &RecConvConfig,
    input: Shape2,
    include_resize: bool,
) -> CliResult<bool> {
    let weights = RecConvWeights::constant(cfg, 0.0)?;
    let params = count_params_recconv(&weights);
    let closed_params = recconv::recconv_param_count(cfg);
    let macs = count_macs_recconv(cfg, input, include_resize)?;
    let base = base_depthwise_macs(cfg, input);
    let factor = Ratio::new(macs.total(), base);
    let closed_factor = mac_factor_closed_form(cfg.level);
    let contractual = mac_equality_contractual(cfg, input, include_resize);
    let nominal = nominal_erf(cfg.kernel, cfg.level);

    doc.line("== mixer analysis ==");
    doc.line(format!(
        "config: channels {}, kernel {}, levels {}, {} aggregation, {} upsampling",
        cfg.channels,
        cfg.kernel,
        cfg.level,
        aggregation_name(cfg.aggregation),
        upsample_name(cfg.upsample)
    ));
    doc.line(format!("input: {input}"));
    doc.line(format!(
        "parameters: {} conv weights measured, {} closed form",
        params.conv_weights, closed_params
    ));
    if params.upsample_weights > 0 {
        doc.line(format!(
            "upsample kernels: {} weights (reported separately)",
            params.upsample_weights
        ));
    }
    doc.line(format!(
        "macs: {} measured, base conv {}, factor {} ({:.6}), closed form {} ({:.6})",
        macs.total(),
        base,
        factor,
        ratio_f64(factor),
        closed_factor,
        ratio_f64(closed_factor)
    ));
    doc.line(format!(
        "mac equality contractual here: {}",
        if contractual { "yes" } else { "no" }
    ));
    doc.line(format!("nominal erf: {nominal}"));

    doc.kv("params.conv_weights.measured", params.conv_weights);
    doc.kv("params.conv_weights.closed_form", closed_params);
    doc.kv("params.biases", params.biases);
    doc.kv("params.upsample_weights", params.upsample_weights);
    doc.kv("macs.measured", macs.total());
    doc.kv("macs.conv", macs.conv);
    doc.kv("macs.resize", macs.resize);
    doc.kv("macs.base", base);
    doc.kv("mac_factor.measured", factor);
    doc.kv("mac_factor.closed_form", closed_factor);
    doc.kv("erf.nominal", nominal);
    if cfg.aggregation == Aggregation::Parallel {
        let rf = structural_rf(cfg)?;
        doc.line(format!("structural rf: {rf}"));
        doc.kv("erf.structural", rf);
    } else {
        doc.line("structural rf: defined for parallel aggregation only".to_string());
    }

    let params_ok = params.conv_weights == closed_params;
    let macs_ok = !contractual || factor == closed_factor;
    Ok(params_ok && macs_ok)
}

fn analyze_model(
    doc: &mut ReportDocument,
    cfg: &ModelConfig,
    input: Shape2,
    include_resize: bool,
) -> CliResult<bool> {
    let schedule = model_shape_schedule(cfg, input)?;
    let model: Model = build_model(cfg)?;
    let params = count_params_model(&model);
    let macs = count_macs_model(cfg, input, include_resize)?;
    let mut all_ok = true;

    doc.line("== model analysis ==");
    doc.line(format!(
        "config: {} stages, expansion {}, {} aggregation, {} upsampling, seed {}",
        cfg.stages.len(),
        cfg.expansion,
        aggregation_name(cfg.aggregation),
        upsample_name(cfg.upsample),
        cfg.seed
    ));
    doc.line(format!("input: {input}"));
    doc.line(format!(
        "parameters: {} total ({} conv weights, {} biases, {} norm, {} upsample)",
        params.total(),
        params.conv_weights,
        params.biases,
        params.norm_params,
        params.upsample_weights
    ));
    doc.line(format!(
        "macs: {} measured ({} conv, {} resize)",
        macs.total(),
        macs.conv,
        macs.resize
    ));

    doc.kv("params.total", params.total());
    doc.kv("params.conv_weights", params.conv_weights);
    doc.kv("params.biases", params.biases);
    doc.kv("params.norm", params.norm_params);
    doc.kv("params.upsample_weights", params.upsample_weights);
    doc.kv("macs.measured", macs.total());
    doc.kv("macs.conv", macs.conv);
    doc.kv("macs.resize", macs.resize);

    for (i, (stage, model_stage)) in cfg.stages.iter().zip(&model.stages).enumerate() {
        let label = format!("stage{}", i + 1);
        let feature = schedule[i + 1].shape;
        let mixer_cfg = RecConvConfig {
            channels: stage.channels,
            kernel: stage.kernel,
            level: stage.level,
            aggregation: cfg.aggregation,
            upsample: cfg.upsample,
        };
        let measured_mixer: usize = model_stage
            .blocks
            .iter()
            .map(|b| count_params_recconv(&b.mixer).conv_weights)
            .sum();
        let closed_mixer = stage.depth * recconv::recconv_param_count(&mixer_cfg);
        if measured_mixer != closed_mixer {
            all_ok = false;
        }
        let nominal = nominal_erf(stage.kernel, stage.level);
        let mixer_macs = count_macs_recconv(&mixer_cfg, feature, include_resize)?;
        let base = base_depthwise_macs(&mixer_cfg, feature);
        let factor = Ratio::new(mixer_macs.total(), base);
        let closed_factor = mac_factor_closed_form(stage.level);
        let contractual = mac_equality_contractual(&mixer_cfg, feature, include_resize);
        if contractual && factor != closed_factor {
            all_ok = false;
        }

        doc.line(format!(
            "{label}: {} channels, depth {}, kernel {}, level {} at {feature}; \
             mixer weights {measured_mixer} (closed {closed_mixer}); \
             mac factor {factor} (closed {closed_factor}{})",
            stage.channels,
            stage.depth,
            stage.kernel,
            stage.level,
            if contractual { "" } else { ", not contractual here" }
        ));
        doc.kv(format!("{label}.channels"), stage.channels);
        doc.kv(format!("{label}.depth"), stage.depth);
        doc.kv(format!("{label}.kernel"), stage.kernel);
        doc.kv(format!("{label}.level"), stage.level);
        doc.kv(format!("{label}.mixer_weights.measured"), measured_mixer);
        doc.kv(format!("{label}.mixer_weights.closed_form"), closed_mixer);
        doc.kv(format!("{label}.mac_factor.measured"), factor);
        doc.kv(format!("{label}.mac_factor.closed_form"), closed_factor);
        doc.kv(format!("{label}.erf.nominal"), nominal);
        if cfg.aggregation == Aggregation::Parallel {
            let rf = structural_rf(&mixer_cfg)?;
            doc.kv(format!("{label}.erf.structural"), rf);
        }
    }
    Ok(all_ok)
}

pub struct ForwardArgs {
    pub config: PathBuf,
    pub image: Option<PathBuf>,
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub out: Option<PathBuf>,
}

fn seeded_input(channels: usize, side: usize, seed: u64) -> CliResult<Tensor4> {
    let mut rng = SplitMix64::new(seed);
    Ok(Tensor4::random(1, channels, side, side, 0.0, 1.0, &mut rng)?)
}

fn dump_raw(path: &Path, t: &Tensor4) -> CliResult<()> {
    let (n, c, h, w) = t.dims();
    let mut out = Vec::with_capacity(16 + t.len() * 8);
    for dim in [n, c, h, w] {
        let v = u32::try_from(dim)
            .map_err(|_| CliError::Validation(format!("dimension {dim} exceeds the dump header")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
    file.write_all(&out)?;
    Ok(())
}

fn summarise(label: &str, t: &Tensor4) {
    let (n, c, h, w) = t.dims();
    println!("{label} shape: {n}x{c}x{h}x{w}");
    let plane = h * w * n;
    for ch in 0..c {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for nn in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let v = t.get(nn, ch, y, x);
                    min = min.min(v);
                    max = max.max(v);
                    sum += v;
                }
            }
        }
        println!(
            "channel {ch}: mean {:.9e} min {:.9e} max {:.9e}",
            sum / plane as f64,
            min,
            max
        );
    }
}

pub fn cmd_forward(args: &ForwardArgs) -> CliResult<()> {
    let loaded = load_config(&args.config)?;
    let (channels, default_side) = match &loaded {
        LoadedConfig::RecConv { cfg, .. } => (cfg.channels, 64),
        LoadedConfig::Model(_) => (3, 224),
    };
    let input = match (&args.image, args.seed) {
        (Some(path), None) => {
            let img = pnm::read_pnm(path)?;
            pnm::to_tensor(&img, channels)?
        }
        (None, Some(seed)) => seeded_input(channels, args.size.unwrap_or(default_side), seed)?,
        _ => {
            return Err(CliError::Validation(
                "forward needs exactly one input: --image PATH or --seed N".into(),
            ))
        }
    };

    let output = match &loaded {
        LoadedConfig::RecConv { cfg, seed } => {
            let weights = RecConvWeights::seeded(cfg, &mut SplitMix64::new(*seed))?;
            let (y, _) = recconv_forward(&input, cfg, &weights)?;
            y
        }
        LoadedConfig::Model(cfg) => {
            let model: Model = build_model(cfg)?;
            let (y, ledger) = model_forward(&model, &input)?;
            for entry in &ledger {
                println!(
                    "{}: {}x{}x{}x{}",
                    entry.label, entry.n, entry.c, entry.h, entry.w
                );
            }
            y
        }
    };
    summarise("output", &output);
    if let Some(path) = &args.out {
        dump_raw(path, &output)?;
        println!("raw dump written to {}", path.display());
    }
    Ok(())
}

pub struct ErfArgs {
    pub config: PathBuf,
    pub size: usize,
    pub out: Option<PathBuf>,
}

fn erf_to_pgm(map: &ErfMap) -> Vec<u8> {
    let max = map.max_value();
    if max <= 0.0 {
        return vec![0u8; map.h * map.w];
    }
    map.values
        .iter()
        .map(|&v| (v / max * 255.0).round() as u8)
        .collect()
}

pub fn cmd_erf(args: &ErfArgs) -> CliResult<()> {
    let loaded = load_config(&args.config)?;
    let side = args.size;
    let map = match &loaded {
        LoadedConfig::RecConv { cfg, seed } => {
            if side < cfg.min_input_side() {
                return Err(CliError::Validation(format!(
                    "size {side} too small for {} decomposition levels, minimum is {}",
                    cfg.level,
                    cfg.min_input_side()
                )));
            }
            // weights first, probe input second, from one seeded stream
            let mut rng = SplitMix64::new(*seed);
            let weights = RecConvWeights::seeded(cfg, &mut rng)?;
            let input = Tensor4::random(1, cfg.channels, side, side, 0.0, 1.0, &mut rng)?;
            erf_map_recconv(cfg, &weights, &input)?
        }
        LoadedConfig::Model(cfg) => {
            let min = cfg.min_input_side();
            if side < min {
                return Err(CliError::Validation(format!(
                    "size {side} too small for this model, minimum input side is {min}"
                )));
            }
            let model: Model = build_model(cfg)?;
            let mut rng = SplitMix64::new(cfg.seed ^ 0x9E37_79B9);
            let input = Tensor4::random(1, 3, side, side, 0.0, 1.0, &mut rng)?;
            erf_map_model(&model, &input)?
        }
    };

    let mut doc = ReportDocument::new();
    doc.line(format!("== receptive-field map ({}x{}) ==", map.h, map.w));
    match map.support_box() {
        Some(b) => {
            doc.line(format!(
                "support box: rows {}..={}, cols {}..={} ({}x{})",
                b.y0,
                b.y1,
                b.x0,
                b.x1,
                b.height(),
                b.width()
            ));
            doc.kv("support.y0", b.y0);
            doc.kv("support.x0", b.x0);
            doc.kv("support.y1", b.y1);
            doc.kv("support.x1", b.x1);
            doc.kv("support.height", b.height());
            doc.kv("support.width", b.width());
        }
        None => {
            doc.line("support box: empty (zero map)");
            doc.kv("support.height", 0);
            doc.kv("support.width", 0);
        }
    }
    let side95 = map.energy_square_side(0.95);
    doc.line(format!("95% energy square side: {side95}"));
    doc.kv("energy95.side", side95);
    print!("{}", doc.render());

    if let Some(path) = &args.out {
        let pixels = erf_to_pgm(&map);
        pnm::write_pgm(path, map.w, map.h, &pixels)?;
        println!("heatmap written to {}", path.display());
    }
    Ok(())
}

pub fn cmd_selftest(corrupt_param_count: bool) -> CliResult<()> {
    let reports = run_all(SelfTestOptions {
        corrupt_param_count,
    });
    let mut failures = 0;
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    if failures == 0 {
        println!("all {} suites passed", reports.len());
        Ok(())
    } else {
        Err(CliError::Contract(format!(
            "{failures} of {} suites failed",
            reports.len()
        )))
    }
}
