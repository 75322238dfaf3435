use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sfp_core::floatcore::decompose;
use sfp_core::gecko::{account_exponents, DEFAULT_BIAS};
use sfp_core::packer::{js_encode_bits, read_raw_tensor, write_raw_tensor, RawTensor};
use sfp_core::perfmodel::{layer_names, read_traffic_csv, run_report, synthetic_suite, write_traffic_csv};
use sfp_core::statsbench::{
    exponent_width_cdf, ratio_sweep, trace_exponents, write_cdf_csv, write_sweep_csv, SyntheticDistribution,
    SyntheticKind,
};
use sfp_core::trainer::{train as run_training, Trace};
use sfp_core::{
    bitchop, bitlearn, selftest as checks, Container, FloatFormat, HardwareConfig, NonFinitePolicy, PackConfig,
    TrainConfig, Variant,
};

use crate::{CompressArgs, DecompressArgs, PerfArgs, SelftestArgs, StatsArgs, TensorInput, TrainArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_tensor(t: &TensorInput) -> Result<RawTensor> {
    read_raw_tensor(&t.input, t.format, t.shape.as_deref()).with_context(|| format!("reading {}", t.input.display()))
}

pub fn compress(a: CompressArgs) -> Result<()> {
    let tensor = load_tensor(&a.source)?;
    let fmt = tensor.format;
    let width = match (&a.width_log, a.man_width) {
        (Some(log), _) => width_from_log(log, a.tensor, fmt)?,
        (None, Some(w)) => w,
        (None, None) => fmt.mantissa_bits(),
    };
    let mut cfg = PackConfig::lossless(fmt)
        .with_man_width(width)
        .with_variant(a.variant)
        .with_signless(a.signless);
    if a.bypass_non_finite {
        cfg = cfg.with_non_finite(NonFinitePolicy::Bypass);
    }
    if let Some(bits) = a.lane_word {
        cfg = cfg.with_lane_word_bits(bits);
    }
    let container = Container::pack(&tensor.values, &tensor.shape, &cfg)?;
    let bytes = container.to_bytes();
    fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;

    let n = tensor.values.len() as u64;
    let acc = container.block.ratio(fmt);
    let js = js_encode_bits(&tensor.values, fmt);
    eprintln!("values          {n} ({fmt}, shape {:?})", tensor.shape);
    eprintln!("mantissa width  {width}");
    eprintln!("variant         {}", a.variant);
    eprintln!("metadata M      {} bits", acc.metadata_bits);
    eprintln!("payload C       {} bits", acc.payload_bits);
    eprintln!("original O      {} bits", acc.original_bits);
    eprintln!("(M+C)/O         {:.6}", acc.ratio());
    eprintln!("container       {} bytes", bytes.len());
    eprintln!("JS baseline     {js} bits ({:.6} of original)", js as f64 / acc.original_bits.max(1) as f64);
    Ok(())
}

/// Final width recorded in a controller log.
fn width_from_log(path: &Path, tensor: Option<usize>, fmt: FloatFormat) -> Result<u32> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let m = fmt.mantissa_bits();
    if let Some(wc) = col("width") {
        let mut last = None;
        for rec in rdr.records() {
            last = Some(rec?[wc].parse::<u32>().context("width column")?);
        }
        let w = last.with_context(|| format!("{} has no rows", path.display()))?;
        if w > m {
            bail!("logged width {w} exceeds the {m} mantissa bits of {fmt}");
        }
        return Ok(w);
    }
    let (Some(nc), Some(tc)) = (col("n"), col("tensor")) else {
        bail!("{}: expected a `width` column or `tensor` and `n` columns", path.display());
    };
    let mut last: Option<(usize, f64)> = None;
    let mut seen = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: usize = rec[tc].parse().context("tensor column")?;
        seen.insert(t);
        if tensor.map_or(true, |want| want == t) {
            last = Some((t, rec[nc].parse().context("n column")?));
        }
    }
    if tensor.is_none() && seen.len() > 1 {
        bail!("{} logs {} tensors; pick one with --tensor", path.display(), seen.len());
    }
    let (_, n) = last.with_context(|| match tensor {
        Some(t) => format!("tensor {t} not found in {}", path.display()),
        None => format!("{} has no rows", path.display()),
    })?;
    Ok((n.ceil().max(0.0) as u32).min(m))
}

pub fn decompress(a: DecompressArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let container = Container::from_bytes(&bytes)?;
    let values = container.unpack()?;
    let h = &container.header;
    let tensor = RawTensor::new(h.format, h.shape.clone(), values)?;
    write_raw_tensor(&a.output, &tensor, a.raw_header)?;
    eprintln!("values {} ({}, shape {:?})", tensor.values.len(), h.format, h.shape);
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    if let Some(dir) = &a.sweep {
        return sweep(&a, dir);
    }
    let input = a.input.clone().expect("clap requires --input without --sweep");
    let tensor = load_tensor(&TensorInput {
        input,
        format: a.format,
        shape: a.shape.clone(),
    })?;
    let fmt = tensor.format;
    let n = tensor.values.len() as u64;
    let original = n * fmt.width() as u64;
    let js = js_encode_bits(&tensor.values, fmt);
    println!("values            {n} ({fmt}, shape {:?})", tensor.shape);
    println!("original bits     {original}");
    println!("js_bits           {js}");
    println!("js_ratio          {:.6}", js as f64 / original.max(1) as f64);
    let exps: Vec<u8> = tensor.values.iter().map(|&v| decompose(v, fmt).exponent).collect();
    for variant in [Variant::DeltaBase, Variant::FixedBias] {
        let acc = account_exponents(&exps, variant, DEFAULT_BIAS);
        println!(
            "exponent {variant:<10} M={} C={} O={} (M+C)/O={:.6}",
            acc.metadata_bits,
            acc.payload_bits,
            acc.original_bits,
            acc.ratio()
        );
    }
    println!("exponent width cdf (bits: fraction)");
    for (b, f) in exponent_width_cdf(&[exps]) {
        println!("  {b}: {f:.6}");
    }
    Ok(())
}

fn sweep(a: &StatsArgs, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut kinds = vec![SyntheticKind::Uniform];
    kinds.extend([1.0, 2.0, 4.0, 8.0].map(|sigma| SyntheticKind::GaussianExponent { sigma }));
    let mut sources = Vec::new();
    for kind in kinds {
        let d = SyntheticDistribution {
            kind,
            size: a.size,
            seed: a.seed,
        };
        sources.push((d.label(), vec![d.exponents()?]));
    }
    if let Some(path) = &a.trace {
        let trace = Trace::read(path).with_context(|| format!("reading {}", path.display()))?;
        sources.push((format!("trace-epoch{}+", a.min_epoch), trace_exponents(&trace, a.min_epoch)));
    }
    let mut rows = ratio_sweep(&sources, Variant::DeltaBase);
    rows.extend(ratio_sweep(&sources, Variant::FixedBias));
    write_sweep_csv(create(&dir.join("sweep.csv"))?, &rows)?;
    let cdfs: Vec<_> = sources
        .iter()
        .map(|(label, streams)| (label.clone(), exponent_width_cdf(streams)))
        .collect();
    write_cdf_csv(create(&dir.join("cdf.csv"))?, &cdfs)?;
    for r in &rows {
        println!("{:<24} {:<10} {:.6}", r.source, r.variant, r.ratio);
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut text = match &a.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    for kv in &a.overrides {
        text.push('\n');
        text.push_str(kv);
    }
    let mut cfg = TrainConfig::parse(&text)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    if a.trace {
        cfg.trace_path = Some(a.out_dir.join("trace.sfpt"));
    }
    let report = run_training(&cfg)?;
    let dir = &a.out_dir;
    fs::write(dir.join("config.txt"), cfg.to_kv_string())?;
    report.write_metrics_csv(create(&dir.join("metrics.csv"))?)?;
    bitlearn::write_trajectory(create(&dir.join("bitlengths.csv"))?, &report.qm_trajectory)?;
    bitchop::write_widths(create(&dir.join("widths.csv"))?, &report.chop_widths)?;
    fs::write(dir.join("footprint.json"), report.footprint_json()?)?;
    write_traffic_csv(create(&dir.join("traffic.csv"))?, &report.layer_traffic)?;
    println!("final train accuracy       {:.4}", report.final_train_accuracy());
    println!("final validation accuracy  {:.4}", report.final_validation_accuracy());
    println!("weighted mean width        {:.3}", report.weighted_mean_width());
    println!("mean activation width      {:.3}", report.mean_activation_width());
    println!(
        "relative footprint         {:.4}",
        report.compressed_bits() as f64 / report.raw_bits().max(1) as f64
    );
    Ok(())
}

pub fn perf(a: PerfArgs) -> Result<()> {
    let hw = match &a.hw {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<HardwareConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => HardwareConfig::default(),
    };
    let traffic = match (&a.traffic, a.synthetic) {
        (Some(p), _) => read_traffic_csv(File::open(p).with_context(|| format!("reading {}", p.display()))?)?,
        (None, Some(suite)) => synthetic_suite(suite, a.ratio, &hw),
        (None, None) => bail!("one of --traffic or --synthetic is required"),
    };
    let report = run_report(&layer_names(&traffic), &traffic, &hw)?;
    if let Some(p) = &a.json {
        fs::write(p, report.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.csv {
        report.write_csv(create(p)?)?;
    }
    println!("layers                       {}", report.layers.len());
    println!("traffic ratio                {:.6}", report.traffic_ratio);
    println!("speedup                      {:.6}", report.speedup);
    println!("energy ratio                 {:.6}", report.energy_ratio);
    println!("memory-bound (baseline)      {:.3}", report.memory_bound_fraction_baseline);
    println!("memory-bound (compressed)    {:.3}", report.memory_bound_fraction_compressed);
    println!("flipped to compute-bound     {:.3}", report.flipped_fraction);
    Ok(())
}

pub fn selftest(a: SelftestArgs) -> Result<()> {
    let results = checks::run_all(a.quick);
    let failed = results.iter().filter(|c| !c.passed).count();
    for c in &results {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    Ok(())
}
