use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use irevnet::analysis::{
    depth_probe, full_jacobian_spectrum, interpolate, jacobian_spectrum, pca_probe,
    reconstruction_error, ProbeConfig, SpectrumOptions, SpectrumReport,
};
use irevnet::io::{
    load_dataset, peek_dtype, read_pnm, write_pnm, Checkpoint, CsvTable, DataSource, Dataset,
    DatasetHandle, Split,
};
use irevnet::tensor::relative_error;
use irevnet::training::{evaluate, train_loop, OptimState, TrainLog, TrainOutputs};
use irevnet::{DType, Mode, NetConfig, Network, Scalar, Tensor};

use crate::config::{preset_config, RunConfig};
use crate::{usage, Command, Global};

/// Where the network comes from: a checkpoint, or a freshly initialized preset.
#[derive(Debug, Args)]
pub struct NetArgs {
    /// Trained checkpoint (`.irev`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Preset used when no checkpoint is given (an untrained network).
    #[arg(long, default_value = "tiny-b")]
    pub preset: String,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// mnist, cifar10 or raw.
    #[arg(long, default_value = "mnist")]
    pub source: String,
    /// Use only the first n train samples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first n test samples.
    #[arg(long)]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML experiment file with [net], [optimizer], [data] and [train] sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `[data] dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("samples").required(true).args(["input", "noise", "data"])))]
pub struct InvertArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// A PGM/PPM image, adapted to the network input shape.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of uniform-noise inputs in [0, 1).
    #[arg(long)]
    pub noise: Option<usize>,
    /// Dataset directory; the first `--count` test images are used.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "mnist")]
    pub source: String,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, requires = "img1", conflicts_with = "data")]
    pub img0: Option<PathBuf>,
    #[arg(long, requires = "img0")]
    pub img1: Option<PathBuf>,
    /// Take both endpoints from the test split of this dataset.
    #[arg(long, required_unless_present = "img0")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "mnist")]
    pub source: String,
    #[arg(long, default_value_t = 0)]
    pub index0: usize,
    #[arg(long, default_value_t = 1)]
    pub index1: usize,
    /// Number of intervals; frames are written at t = i / steps, i = 0..=steps.
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpectrumMethodArg {
    Power,
    Full,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Image at which the Jacobian is taken; defaults to one seeded uniform-noise input.
    #[arg(long, conflicts_with = "data")]
    pub input: Option<PathBuf>,
    /// Take the input from the test split of this dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "mnist")]
    pub source: String,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_enum, default_value_t = SpectrumMethodArg::Power)]
    pub method: SpectrumMethodArg,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Truncation depth, default the full network.
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeOpts {
    /// Candidate l2 strengths for the linear probe.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-3, 1e-2, 1e-1])]
    pub lambdas: Vec<f64>,
    /// Gradient iterations per linear fit.
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Depths to probe (0 is the split input), default all.
    #[arg(long, value_delimiter = ',')]
    pub taps: Vec<usize>,
    #[command(flatten)]
    pub probe: ProbeOpts,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Depth whose features are projected, default the last block.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Projection ranks, default powers of two plus the full dimension.
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<usize>,
    #[command(flatten)]
    pub probe: ProbeOpts,
}

pub fn run(g: &Global, cmd: Command) -> Result<()> {
    std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    match cmd {
        Command::Train(a) => train(g, &a),
        Command::Invert(a) => match net_dtype(g, &a.net)? {
            DType::F32 => invert::<f32>(g, &a),
            DType::F64 => invert::<f64>(g, &a),
        },
        Command::Interpolate(a) => match net_dtype(g, &a.net)? {
            DType::F32 => interpolate_cmd::<f32>(g, &a),
            DType::F64 => interpolate_cmd::<f64>(g, &a),
        },
        Command::Spectrum(a) => match net_dtype(g, &a.net)? {
            DType::F32 => spectrum::<f32>(g, &a),
            DType::F64 => spectrum::<f64>(g, &a),
        },
        Command::Probe(a) => match net_dtype(g, &a.net)? {
            DType::F32 => probe::<f32>(g, &a),
            DType::F64 => probe::<f64>(g, &a),
        },
        Command::Pca(a) => match net_dtype(g, &a.net)? {
            DType::F32 => pca::<f32>(g, &a),
            DType::F64 => pca::<f64>(g, &a),
        },
        Command::Info(a) => match net_dtype(g, &a)? {
            DType::F32 => info_cmd::<f32>(g, &a),
            DType::F64 => info_cmd::<f64>(g, &a),
        },
    }
}

fn net_dtype(g: &Global, net: &NetArgs) -> Result<DType> {
    match &net.checkpoint {
        Some(path) => {
            let dtype = peek_dtype(path)?;
            if let Some(requested) = g.dtype.filter(|&d| d != dtype) {
                warn!(
                    "--dtype {requested} ignored: {} stores {dtype}",
                    path.display()
                );
            }
            Ok(dtype)
        }
        None => Ok(g.dtype.unwrap_or(DType::F32)),
    }
}

enum Origin {
    Checkpoint { path: PathBuf, step: u64 },
    Untrained { preset: String, seed: u64 },
}

impl Origin {
    fn describe(&self) -> String {
        match self {
            Origin::Checkpoint { path, step } => {
                format!("checkpoint {} (step {step})", path.display())
            }
            Origin::Untrained { preset, seed } => {
                format!("warning: untrained network (no --checkpoint given), preset {preset}, seed {seed}")
            }
        }
    }
}

fn load_net<T: Scalar>(g: &Global, args: &NetArgs) -> Result<(Network<T>, Origin)> {
    match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path)?;
            let origin = Origin::Checkpoint {
                path: path.clone(),
                step: ck.step,
            };
            Ok((ck.net, origin))
        }
        None => {
            let origin = Origin::Untrained {
                preset: args.preset.clone(),
                seed: g.seed,
            };
            warn!("{}", origin.describe());
            Ok((
                Network::build(preset_config(&args.preset)?, g.seed)?,
                origin,
            ))
        }
    }
}

/// CSV with the provenance comments every report carries.
fn report(g: &Global, command: &str, origin: &Origin, header: &[&str]) -> CsvTable {
    let mut t = CsvTable::new(header.iter().copied());
    t.comment(format!("irevnet {command}"));
    t.comment(origin.describe());
    t.comment(format!("seed {} deterministic {}", g.seed, g.deterministic));
    t
}

fn data_source(s: &str) -> Result<DataSource> {
    s.parse().map_err(|e| usage(format!("--source: {e}")))
}

fn load_split<T: Scalar>(
    dir: &Path,
    source: DataSource,
    split: Split,
    limit: Option<usize>,
    input: [usize; 3],
) -> Result<Dataset<T>> {
    if !dir.is_dir() {
        return Err(usage(format!(
            "data directory not found: {}",
            dir.display()
        )));
    }
    let handle = DatasetHandle {
        source,
        dir: dir.to_path_buf(),
        split,
    };
    Ok(load_dataset::<T>(&handle, limit)?.conform(input)?)
}

/// Reads a PGM/PPM and adapts it to the network input like dataset images.
fn load_image<T: Scalar>(path: &Path, input: [usize; 3]) -> Result<Tensor<T>> {
    let img = read_pnm::<T>(path)?;
    Ok(Dataset::new(img, vec![0], 1)?.conform(input)?.images)
}

fn image_ext(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let dtype = match &a.resume {
        Some(path) => peek_dtype(path)?,
        None => g.dtype.unwrap_or(DType::F32),
    };
    match dtype {
        DType::F32 => train_with::<f32>(g, a, &cfg),
        DType::F64 => train_with::<f64>(g, a, &cfg),
    }
}

fn train_with<T: Scalar>(g: &Global, a: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let net_cfg = cfg.net()?;
    let dir = a
        .data
        .clone()
        .or_else(|| cfg.data.dir.clone())
        .ok_or_else(|| usage("no data directory: pass --data or set `dir` under [data]"))?;
    let source = cfg.source()?;
    let log_path = g.out.join("train_log.csv");
    let (mut net, mut optim, seed, log) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path)?;
            if ck.net.config() != &net_cfg {
                warn!(
                    "resuming with the layout stored in {}, not the one in [net]",
                    path.display()
                );
            }
            if ck.seed != g.seed {
                warn!(
                    "resuming with the checkpoint seed {} instead of --seed {}",
                    ck.seed, g.seed
                );
            }
            let optim = match ck.optim {
                Some(o) => o,
                None => {
                    let mut o = OptimState::new(cfg.optimizer.clone(), &ck.net.params())?;
                    o.step = ck.step;
                    o
                }
            };
            let log = if log_path.exists() {
                let text = std::fs::read_to_string(&log_path)
                    .with_context(|| log_path.display().to_string())?;
                TrainLog::from_csv(&CsvTable::parse(&text)?)?
            } else {
                TrainLog::default()
            };
            info!("resuming at step {}", optim.step);
            (ck.net, optim, ck.seed, log)
        }
        None => {
            let net = Network::<T>::build(net_cfg, g.seed)?;
            let optim = OptimState::new(cfg.optimizer.clone(), &net.params())?;
            (net, optim, g.seed, TrainLog::default())
        }
    };
    let input = net.config().input;
    let train_set = load_split::<T>(&dir, source, Split::Train, cfg.data.train_limit, input)?;
    info!(
        "training {} parameters on {} samples for {} epoch(s)",
        net.param_count(),
        train_set.len(),
        cfg.train.epochs
    );
    let outputs = TrainOutputs {
        log_path: Some(log_path),
        checkpoint_dir: Some(g.out.join("checkpoints")),
    };
    let log = train_loop(
        &mut net, &mut optim, &train_set, &cfg.train, seed, &outputs, log,
    )?;
    if cfg.data.test_limit != Some(0) {
        let test_set = load_split::<T>(&dir, source, Split::Test, cfg.data.test_limit, input)?;
        let acc = evaluate(&net, &test_set, 200)?;
        let mut t = CsvTable::new(["split", "samples", "accuracy"]);
        t.comment(format!("irevnet train, step {}", optim.step));
        t.push([
            "test".to_string(),
            test_set.len().to_string(),
            acc.to_string(),
        ])?;
        t.write(&g.out.join("eval.csv"))?;
        println!("test accuracy {acc:.4} after {} iterations", optim.step);
    }
    if let Some(last) = log.rows.last() {
        println!("final minibatch loss {:.4}", last.loss);
    }
    Ok(())
}

fn invert<T: Scalar>(g: &Global, a: &InvertArgs) -> Result<()> {
    let (net, origin) = load_net::<T>(g, &a.net)?;
    let input = net.config().input;
    let x = if let Some(path) = &a.input {
        load_image::<T>(path, input)?
    } else if let Some(n) = a.noise {
        if n == 0 {
            return Err(usage("--noise needs at least one sample"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let u = Uniform::new(0.0, 1.0).expect("valid range");
        let [c, h, w] = input;
        Tensor::from_fn([n, c, h, w], |_| T::from_f64_lossy(u.sample(&mut rng)))
    } else {
        let dir = a.data.as_ref().expect("clap enforces one sample source");
        load_split::<T>(
            dir,
            data_source(&a.source)?,
            Split::Test,
            Some(a.count),
            input,
        )?
        .images
    };
    let r = reconstruction_error(&net, &x, a.batch)?;

    let mut t = report(g, "invert", &origin, &["sample", "relative_error"]);
    t.comment(format!("mean_relative_error {}", r.epsilon));
    t.comment(format!("skipped_zero_norm {}", r.skipped));
    for (i, e) in r.per_sample.iter().enumerate() {
        t.push([i.to_string(), e.map_or_else(String::new, |v| v.to_string())])?;
    }
    t.write(&g.out.join("invert.csv"))?;

    let mut summary = report(
        g,
        "invert",
        &origin,
        &["sample", "norm", "mean", "min", "max"],
    );
    let (feats, _) = net.forward(&x, Mode::Eval, &[])?;
    let [_, c, h, w] = feats.merged.shape();
    summary.comment(format!("feature shape {c}x{h}x{w}"));
    for i in 0..x.batch() {
        let s = feats.merged.sample_slice(i);
        let vals: Vec<f64> = s.iter().map(|v| v.as_f64()).collect();
        let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summary.push([
            i.to_string(),
            norm.to_string(),
            mean.to_string(),
            min.to_string(),
            max.to_string(),
        ])?;
    }
    summary.write(&g.out.join("features.csv"))?;

    if a.input.is_some() {
        let back = net.inverse(&feats, irevnet::InverseMode::Eval)?;
        let ext = image_ext(input[0]);
        write_pnm(&g.out.join(format!("input.{ext}")), &x)?;
        write_pnm(&g.out.join(format!("reconstruction.{ext}")), &back)?;
    }
    println!(
        "mean relative reconstruction error {:e} over {} sample(s)",
        r.epsilon,
        x.batch() - r.skipped
    );
    Ok(())
}

fn interpolate_cmd<T: Scalar>(g: &Global, a: &InterpolateArgs) -> Result<()> {
    if a.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let (net, origin) = load_net::<T>(g, &a.net)?;
    let input = net.config().input;
    let (x0, x1) = match (&a.img0, &a.img1, &a.data) {
        (Some(p0), Some(p1), _) => (load_image::<T>(p0, input)?, load_image::<T>(p1, input)?),
        (_, _, Some(dir)) => {
            let need = a.index0.max(a.index1) + 1;
            let set =
                load_split::<T>(dir, data_source(&a.source)?, Split::Test, Some(need), input)?;
            if set.len() < need {
                return Err(usage(format!("test split has only {} images", set.len())));
            }
            (set.images.sample(a.index0), set.images.sample(a.index1))
        }
        _ => return Err(usage("pass --img0 and --img1, or --data")),
    };
    let t_values: Vec<f64> = (0..=a.steps).map(|i| i as f64 / a.steps as f64).collect();
    let r = interpolate(&net, &x0, &x1, &t_values)?;
    let ext = image_ext(input[0]);
    let mut manifest = report(g, "interpolate", &origin, &["index", "t", "file"]);
    manifest.comment("phi_t = t * Phi(x0) + (1 - t) * Phi(x1); t = 1 decodes x0, t = 0 decodes x1");
    manifest.comment(format!(
        "endpoint relative errors: t=1 vs x0 {}, t=0 vs x1 {}",
        relative_error(r.images.last().expect("steps >= 1"), &x0),
        relative_error(&r.images[0], &x1)
    ));
    write_pnm(&g.out.join(format!("x0.{ext}")), &x0)?;
    write_pnm(&g.out.join(format!("x1.{ext}")), &x1)?;
    for (i, (t, img)) in r.t_values.iter().zip(&r.images).enumerate() {
        let file = format!("interp_{i:03}.{ext}");
        write_pnm(&g.out.join(&file), img)?;
        manifest.push([i.to_string(), t.to_string(), file])?;
    }
    manifest.write(&g.out.join("manifest.csv"))?;
    println!("wrote {} frames to {}", r.images.len(), g.out.display());
    Ok(())
}

fn spectrum<T: Scalar>(g: &Global, a: &SpectrumArgs) -> Result<()> {
    let (net, origin) = load_net::<T>(g, &a.net)?;
    let input = net.config().input;
    let (x, what) = if let Some(path) = &a.input {
        (
            load_image::<T>(path, input)?,
            format!("image {}", path.display()),
        )
    } else if let Some(dir) = &a.data {
        let set = load_split::<T>(
            dir,
            data_source(&a.source)?,
            Split::Test,
            Some(a.index + 1),
            input,
        )?;
        if set.len() <= a.index {
            return Err(usage(format!("test split has only {} images", set.len())));
        }
        (
            set.images.sample(a.index),
            format!("test image {}", a.index),
        )
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let u = Uniform::new(0.0, 1.0).expect("valid range");
        let [c, h, w] = input;
        (
            Tensor::from_fn([1, c, h, w], |_| T::from_f64_lossy(u.sample(&mut rng))),
            format!("uniform noise, seed {}", g.seed),
        )
    };
    let rep: SpectrumReport = match a.method {
        SpectrumMethodArg::Full => full_jacobian_spectrum(&net, &x, a.depth)?,
        SpectrumMethodArg::Power => {
            let opts = SpectrumOptions {
                k: a.k,
                max_iters: a.iters,
                tol: a.tol,
                seed: g.seed,
                depth: a.depth,
                ..Default::default()
            };
            jacobian_spectrum(&net, &x, &opts)?
        }
    };
    if !rep.converged {
        warn!(
            "power iteration stopped after {} iterations without converging",
            rep.iterations
        );
    }
    let mut t = report(
        g,
        "spectrum",
        &origin,
        &["index", "singular_value", "energy_cdf"],
    );
    t.comment(format!(
        "input {what}, depth {}",
        a.depth.unwrap_or(net.depth())
    ));
    t.comment(format!("method {:?}", rep.method));
    t.comment(format!(
        "converged {} iterations {}",
        rep.converged, rep.iterations
    ));
    if rep.energy_is_lower_bound {
        t.comment("energy_cdf is a lower bound (top-k values only)");
    }
    for (i, (s, e)) in rep.singular_values.iter().zip(&rep.energy_cdf).enumerate() {
        t.push([(i + 1).to_string(), s.to_string(), e.to_string()])?;
    }
    t.write(&g.out.join("spectrum.csv"))?;
    println!(
        "largest singular value {:.6}, smallest reported {:.6}",
        rep.singular_values[0],
        rep.singular_values.last().expect("nonempty")
    );
    Ok(())
}

fn probe_config(g: &Global, p: &ProbeOpts) -> ProbeConfig {
    ProbeConfig {
        lambdas: p.lambdas.clone(),
        iterations: p.iterations,
        seed: g.seed,
        batch: p.batch,
    }
}

fn load_both<T: Scalar>(d: &DataArgs, input: [usize; 3]) -> Result<(Dataset<T>, Dataset<T>)> {
    let source = data_source(&d.source)?;
    Ok((
        load_split::<T>(&d.data, source, Split::Train, d.train_limit, input)?,
        load_split::<T>(&d.data, source, Split::Test, d.test_limit, input)?,
    ))
}

fn probe<T: Scalar>(g: &Global, a: &ProbeArgs) -> Result<()> {
    let (net, origin) = load_net::<T>(g, &a.net)?;
    let (train, test) = load_both::<T>(&a.data, net.config().input)?;
    let taps: Vec<usize> = if a.taps.is_empty() {
        (0..=net.depth()).collect()
    } else {
        a.taps.clone()
    };
    let rep = depth_probe(&net, &train, &test, &taps, &probe_config(g, &a.probe))?;
    let mut t = report(
        g,
        "probe",
        &origin,
        &[
            "depth",
            "feature_dim",
            "linear_accuracy",
            "nn1_accuracy",
            "lambda",
        ],
    );
    t.comment(format!("train {} test {} samples", train.len(), test.len()));
    for r in &rep.rows {
        t.push([
            r.depth.to_string(),
            r.feature_dim.to_string(),
            r.linear_accuracy.to_string(),
            r.nn1_accuracy.to_string(),
            r.lambda.to_string(),
        ])?;
    }
    t.write(&g.out.join("probe.csv"))?;
    for r in &rep.rows {
        println!(
            "depth {:>3}  dim {:>5}  linear {:.4}  1-nn {:.4}",
            r.depth, r.feature_dim, r.linear_accuracy, r.nn1_accuracy
        );
    }
    Ok(())
}

fn pca<T: Scalar>(g: &Global, a: &PcaArgs) -> Result<()> {
    let (net, origin) = load_net::<T>(g, &a.net)?;
    let depth = a.depth.unwrap_or(net.depth());
    let shapes = net.config().depth_shapes();
    let dim = shapes.get(depth).ok_or_else(|| {
        usage(format!(
            "--depth {depth} exceeds network depth {}",
            net.depth()
        ))
    })?[0];
    let d_list: Vec<usize> = if a.d.is_empty() {
        let mut v: Vec<usize> = std::iter::successors(Some(1usize), |d| Some(d * 2))
            .take_while(|&d| d < dim)
            .collect();
        v.push(dim);
        v
    } else {
        a.d.clone()
    };
    let (train, test) = load_both::<T>(&a.data, net.config().input)?;
    let rep = pca_probe(
        &net,
        &train,
        &test,
        depth,
        &d_list,
        &probe_config(g, &a.probe),
    )?;
    let mut t = report(
        g,
        "pca",
        &origin,
        &["d", "linear_accuracy", "nn1_accuracy", "lambda"],
    );
    t.comment(format!(
        "depth {depth}, standardized feature dim {}, train {} test {} samples",
        rep.feature_dim,
        train.len(),
        test.len()
    ));
    for r in &rep.rows {
        t.push([
            r.d.to_string(),
            r.linear_accuracy.to_string(),
            r.nn1_accuracy.to_string(),
            r.lambda.to_string(),
        ])?;
    }
    t.write(&g.out.join("pca.csv"))?;
    let mut v = report(
        g,
        "pca",
        &origin,
        &["component", "explained_variance", "cumulative"],
    );
    let mut acc = 0.0;
    for (i, e) in rep.explained_variance.iter().enumerate() {
        acc += e;
        v.push([(i + 1).to_string(), e.to_string(), acc.to_string()])?;
    }
    v.write(&g.out.join("pca_variance.csv"))?;
    for r in &rep.rows {
        println!(
            "d {:>5}  linear {:.4}  1-nn {:.4}",
            r.d, r.linear_accuracy, r.nn1_accuracy
        );
    }
    Ok(())
}

fn info_cmd<T: Scalar>(g: &Global, a: &NetArgs) -> Result<()> {
    let (net, origin) = load_net::<T>(g, a)?;
    let cfg: &NetConfig = net.config();
    println!("{}", origin.describe());
    println!("dtype {}", T::DTYPE);
    println!("blocks {}  parameters {}", net.depth(), net.param_count());
    println!("bijective {}", cfg.is_bijective());
    for (j, s) in cfg.depth_shapes().iter().enumerate() {
        println!("depth {j:>3}: {}x{}x{}", s[0], s[1], s[2]);
    }
    if let Some(path) = &a.checkpoint {
        let ck = Checkpoint::<T>::load(path)?;
        println!("seed {}  step {}", ck.seed, ck.step);
        if let Some(o) = &ck.optim {
            println!("optimizer lr {} momentum {}", o.lr(), o.config.momentum);
        }
    }
    println!("\n[net]\n{}", cfg.to_toml());
    Ok(())
}
