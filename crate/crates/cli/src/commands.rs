//! Subcommand bodies. Each returns the text to print; `verify` also
//! reports whether the check passed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdrnet_core::bench::{time_runs, with_threads, BenchReport, ROW_HEADER};
use rdrnet_core::blocks::Structure;
use rdrnet_core::metrics::{argmax, ConfusionMatrix};
use rdrnet_core::model_io::convert_checkpoint;
use rdrnet_core::network::{accounting_report, Reference, INPUT_MULTIPLE};
use rdrnet_core::{DType, Dims, Element, Network, NetworkDef, Tensor4, WeightStore};

use crate::image_io;

/// End-to-end tolerance of `verify` at each precision.
pub fn tolerance(dtype: DType) -> f64 {
    match dtype {
        DType::F32 => 1e-3,
        DType::F64 => 1e-8,
    }
}

/// Unit-scale uniform input; `stream` selects one of many independent
/// inputs for the same seed.
pub fn random_input<T: Element>(dims: Dims, seed: u64, stream: u64) -> Tensor4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    Tensor4::from_fn(dims, |_, _, _, _| T::from_f64(rng.gen_range(-1.0..1.0)))
}

fn load_store(path: &Path) -> Result<WeightStore> {
    WeightStore::load(path).with_context(|| format!("cannot load weights from {}", path.display()))
}

/// Training-structure network from a checkpoint or from seeded weights.
fn train_net<T: Element>(def: &NetworkDef, weights: Option<&Path>, seed: u64) -> Result<Network<T>> {
    match weights {
        Some(path) => {
            let store = load_store(path)?;
            if !store.has_batchnorm() {
                bail!("{} holds deployment weights; a training checkpoint is needed", path.display());
            }
            Ok(Network::from_store(def, &store)?)
        }
        None => Ok(Network::random(def, seed)?),
    }
}

/// Deployment-structure network; training checkpoints are converted.
fn deploy_net<T: Element>(def: &NetworkDef, weights: Option<&Path>, seed: u64) -> Result<Network<T>> {
    let net = match weights {
        Some(path) => Network::from_store(def, &load_store(path)?)?,
        None => Network::random(def, seed)?,
    };
    Ok(match net.structure() {
        Structure::Train => net.reparameterize()?,
        Structure::Deploy => net,
    })
}

pub struct VerifyArgs {
    pub def: NetworkDef,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub precision: DType,
    pub trials: usize,
    pub input_hw: (usize, usize),
    /// Adds 1 to channel 0 of this block's fused bias before comparing.
    pub corrupt_block: Option<String>,
}

pub struct VerifyOutcome {
    pub text: String,
    pub passed: bool,
    /// First traced point whose difference exceeds the tolerance.
    pub failed_at: Option<String>,
    pub max_diff: f64,
}

pub fn verify(args: &VerifyArgs) -> Result<VerifyOutcome> {
    match args.precision {
        DType::F32 => verify_at::<f32>(args),
        DType::F64 => verify_at::<f64>(args),
    }
}

fn verify_at<T: Element>(a: &VerifyArgs) -> Result<VerifyOutcome> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let train = train_net::<T>(&a.def, a.weights.as_deref(), a.seed)?;
    let mut deploy = train.reparameterize()?;
    if let Some(block) = &a.corrupt_block {
        deploy.perturb_bias(block, 0, T::one())?;
    }
    let tol = tolerance(T::DTYPE);
    let dims = Dims::new(1, a.def.in_channels, a.input_hw.0, a.input_hw.1);

    let mut points: Vec<(String, f64)> = Vec::new();
    let (mut agree, mut pixels) = (0usize, 0usize);
    for t in 0..a.trials {
        let x = random_input::<T>(dims, a.seed, t as u64);
        let mut reference = Vec::new();
        let want = train.forward_traced(&x, false, &mut |n, y| reference.push((n.to_string(), y.clone())))?;
        let mut diffs = Vec::new();
        let got = deploy.forward_traced(&x, false, &mut |n, y| {
            if let Some((_, r)) = reference.iter().find(|(m, _)| m == n) {
                diffs.push((n.to_string(), r.max_abs_diff(y).unwrap_or(f64::INFINITY)));
            }
        })?;
        for (name, d) in diffs {
            match points.iter_mut().find(|(n, _)| *n == name) {
                Some((_, m)) => *m = m.max(d),
                None => points.push((name, d)),
            }
        }
        let (p, q) = (argmax(&want.logits), argmax(&got.logits));
        agree += p.data.iter().zip(&q.data).filter(|(a, b)| a == b).count();
        pixels += p.len();
    }

    let max_diff = points.iter().find(|(n, _)| n == "head").map_or(f64::INFINITY, |(_, d)| *d);
    let failed_at = points.iter().find(|(_, d)| !(*d <= tol)).map(|(n, _)| n.clone());

    let mut s = String::new();
    let (h, w) = a.input_hw;
    s += &format!(
        "verify {} [{}] input {h}x{w}, {} trials, seed {}\n",
        a.def.name, T::DTYPE, a.trials, a.seed
    );
    s += &format!("params: train {}, deploy {}\n\n", train.count_params(), deploy.count_params());
    s += &format!("{:<32} {:>14}\n", "point", "max abs diff");
    for (n, d) in &points {
        s += &format!("{n:<32} {d:>14.3e}\n");
    }
    s += &format!("\nend-to-end logits max abs diff: {max_diff:.3e} (tolerance {tol:e})\n");
    s += &format!("argmax agreement: {:.4}% of {pixels} pixels\n", 100.0 * agree as f64 / pixels as f64);
    match &failed_at {
        None => s += "PASS\n",
        Some(n) => {
            let d = points.iter().find(|(m, _)| m == n).map_or(f64::NAN, |(_, d)| *d);
            s += &format!("FAIL: first divergence at `{n}` (max abs diff {d:.3e})\n");
        }
    }
    Ok(VerifyOutcome { text: s, passed: failed_at.is_none(), failed_at, max_diff })
}

pub struct BenchArgs {
    pub def: NetworkDef,
    pub seed: u64,
    pub precision: DType,
    pub structures: Vec<Structure>,
    pub input_hw: (usize, usize),
    pub batch: usize,
    pub runs: usize,
    pub threads: Vec<usize>,
}

/// Minimum runs accepted by `bench`, warmup included.
pub const MIN_RUNS: usize = 5;

pub fn bench(args: &BenchArgs) -> Result<Vec<BenchReport>> {
    if args.runs < MIN_RUNS {
        bail!("--runs must be at least {MIN_RUNS}, got {}", args.runs);
    }
    match args.precision {
        DType::F32 => bench_at::<f32>(args),
        DType::F64 => bench_at::<f64>(args),
    }
}

fn bench_at<T: Element>(a: &BenchArgs) -> Result<Vec<BenchReport>> {
    let train = Network::<T>::random(&a.def, a.seed)?;
    let deploy = train.reparameterize()?;
    let x = random_input::<T>(Dims::new(a.batch, a.def.in_channels, a.input_hw.0, a.input_hw.1), a.seed, 0);
    let mut reports = Vec::new();
    for &threads in &a.threads {
        for &structure in &a.structures {
            let net = match structure {
                Structure::Train => &train,
                Structure::Deploy => &deploy,
            };
            let times = with_threads(threads, || time_runs(a.runs, || net.forward(&x, false).map(|_| ())))??;
            reports.push(BenchReport::new(&a.def.name, structure, x.dims(), threads, times)?);
        }
    }
    Ok(reports)
}

/// Human-readable reports followed by machine-readable rows.
pub fn bench_text(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s += &r.to_text();
    }
    for t in reports.iter().filter(|r| r.structure == Structure::Train) {
        if let Some(d) = reports.iter().find(|r| r.structure == Structure::Deploy && r.threads == t.threads) {
            s += &format!("threads {}: deploy/train median ratio {:.3}\n", t.threads, d.median / t.median);
        }
    }
    s += "\n";
    s += ROW_HEADER;
    s += "\n";
    for r in reports {
        s += &r.to_row();
        s += "\n";
    }
    s
}

pub struct InferArgs {
    pub def: NetworkDef,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub precision: DType,
    pub image: PathBuf,
    pub out: PathBuf,
    pub overlay: Option<PathBuf>,
}

fn check_image_size(path: &Path, w: u32, h: u32) -> Result<()> {
    let m = INPUT_MULTIPLE as u32;
    if w == 0 || h == 0 || !w.is_multiple_of(m) || !h.is_multiple_of(m) {
        bail!("{}: image is {h}x{w}; height and width must be multiples of {m}", path.display());
    }
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<String> {
    match args.precision {
        DType::F32 => infer_at::<f32>(args),
        DType::F64 => infer_at::<f64>(args),
    }
}

fn infer_at<T: Element>(a: &InferArgs) -> Result<String> {
    let img = image_io::read_rgb(&a.image)?;
    let (w, h) = img.dimensions();
    check_image_size(&a.image, w, h)?;
    let net = deploy_net::<T>(&a.def, a.weights.as_deref(), a.seed)?;
    let labels = argmax(&net.forward(&image_io::to_tensor(&img), false)?.logits);
    image_io::write_class_map(&a.out, &labels)?;
    let mut s = format!("{}: {h}x{w} -> class map {}\n", a.image.display(), a.out.display());
    if let Some(path) = &a.overlay {
        image_io::write_rgb(path, &image_io::overlay(&img, &labels)?)?;
        s += &format!("overlay {}\n", path.display());
    }
    let mut present: Vec<u8> = labels.data.clone();
    present.sort_unstable();
    present.dedup();
    s += &format!("classes present: {present:?}\n");
    Ok(s)
}

pub struct EvalArgs {
    pub def: NetworkDef,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub precision: DType,
    pub dataset: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub images: usize,
    pub cm: ConfusionMatrix,
}

impl EvalResult {
    pub fn to_text(&self) -> Result<String> {
        let mut s = format!("images: {}\npixels: {}\n", self.images, self.cm.total());
        s += &format!("mIoU: {:.4}\npixel accuracy: {:.4}\n", self.cm.miou()?, self.cm.pixel_accuracy()?);
        for (c, iou) in self.cm.class_iou().iter().enumerate() {
            match iou {
                Some(v) => s += &format!("class {c:>3}: IoU {v:.4}\n"),
                None => s += &format!("class {c:>3}: absent\n"),
            }
        }
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "images": self.images,
            "pixels": self.cm.total(),
            "miou": self.cm.miou()?,
            "pixel_accuracy": self.cm.pixel_accuracy()?,
            "class_iou": self.cm.class_iou(),
        });
        Ok(v.to_string())
    }
}

/// `(id, image path, label path)` for every image in `dir/images`, sorted
/// by id. Images are `<id>.ppm` or `<id>.png`; labels are
/// `labels/<id>.pgm`.
pub fn dataset_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let images = dir.join("images");
    let entries = std::fs::read_dir(&images).with_context(|| format!("cannot list {}", images.display()))?;
    let mut pairs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "ppm" | "png") {
            continue;
        }
        let id = path.file_stem().and_then(|s| s.to_str()).context("non UTF-8 file name")?.to_string();
        let label = dir.join("labels").join(format!("{id}.pgm"));
        if !label.is_file() {
            bail!("{}: no label file {}", path.display(), label.display());
        }
        pairs.push((id, path, label));
    }
    pairs.sort();
    if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
        bail!("image id `{}` appears twice", w[0].0);
    }
    if pairs.is_empty() {
        bail!("{}: no .ppm or .png images", images.display());
    }
    Ok(pairs)
}

pub fn eval(args: &EvalArgs) -> Result<EvalResult> {
    match args.precision {
        DType::F32 => eval_at::<f32>(args),
        DType::F64 => eval_at::<f64>(args),
    }
}

fn eval_at<T: Element>(a: &EvalArgs) -> Result<EvalResult> {
    let pairs = dataset_pairs(&a.dataset)?;
    let net = deploy_net::<T>(&a.def, a.weights.as_deref(), a.seed)?;
    let mut cm = ConfusionMatrix::new(a.def.num_classes);
    for (id, image, label) in &pairs {
        let img = image_io::read_rgb(image)?;
        let (w, h) = img.dimensions();
        check_image_size(image, w, h)?;
        let truth = image_io::read_labels(label)?;
        if (truth.h, truth.w) != (h as usize, w as usize) {
            bail!("{id}: label is {}x{}, image is {h}x{w}", truth.h, truth.w);
        }
        let pred = argmax(&net.forward(&image_io::to_tensor(&img), false)?.logits);
        cm.accumulate(&pred, &truth).with_context(|| format!("sample {id}"))?;
    }
    Ok(EvalResult { images: pairs.len(), cm })
}

/// Converts a training checkpoint into deployment weights.
pub fn reparam(def: &NetworkDef, input: &Path, output: &Path) -> Result<String> {
    let train = load_store(input)?;
    let deploy = convert_checkpoint(&train, def)?;
    deploy.save(output).with_context(|| format!("cannot write {}", output.display()))?;
    let dtype = deploy.dtype().map_or("mixed".to_string(), |d| d.to_string());
    Ok(format!(
        "{}: {} tensors -> {}: {} tensors [{dtype}]\n",
        input.display(),
        train.len(),
        output.display(),
        deploy.len()
    ))
}

/// Accounting report plus stage output shapes.
pub fn count(def: &NetworkDef, structure: Structure, (h, w): (usize, usize)) -> Result<String> {
    let net = Network::<f32>::zeros(def, structure)?;
    let reference = if (h, w) == (1024, 2048) { Reference::for_preset(&def.name) } else { None };
    let mut s = accounting_report(&net, h, w, reference)?;
    s += "\nstage outputs (c x h x w):\n";
    for (name, [c, oh, ow]) in net.accounting(h, w)?.shapes {
        s += &format!("{name:<24} {c} x {oh} x {ow}\n");
    }
    Ok(s)
}
