use std::fs;
use std::path::{Path, PathBuf};

use fcnseg::dataio::{
    build_manifest, decode_voc_mask, encode_voc_mask, generate_phantom_with, save_gray_png, scan_dataset_dir,
    DatasetManifest, DatasetTag, PhantomConfig, ScanRef, SubjectPools, SubjectScans,
};
use fcnseg::kv;
use fcnseg::metrics::{Aggregate, Index};
use fcnseg::models::{load_checkpoint, save_checkpoint, BackboneSpec, ModelGraph};
use fcnseg::pipeline::report::{collect_runs, render_kv, render_tables, BENCH_FILE, METRICS_FILE};
use fcnseg::pipeline::{
    bench_inference, cross_validate, evaluate_items, run_experiment, scan_paths, DiskSource, ExperimentConfig,
    SampleSource,
};
use fcnseg::postproc::{postprocess, PostprocConfig};
use fcnseg::seed::derive_seed;
use fcnseg::{Error, Result};

use crate::{BenchArgs, Cli, Command, ConfigArgs, CvArgs, DatasetCommand, EvalArgs, OutArg, PostprocArgs, TrainArgs};

const RESOLVED: &str = "config.resolved";
const CHECKPOINT: &str = "model.fcnz";

pub fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Dataset(DatasetCommand::Build { tag, root, seed, out }) => dataset_build(tag, &root, seed, &out, json),
        Command::Dataset(DatasetCommand::Phantom { subjects, scans, seed, size, tag, out }) => {
            let scans: usize = scans.parse().expect("clap restricts --scans to 13 or 26");
            dataset_phantom(subjects, scans, seed, size, tag, &out, json)
        }
        Command::Train(args) => train(args, json),
        Command::Eval(args) => eval(args, json),
        Command::Cv(args) => cv(args, json),
        Command::Bench(args) => bench(args, json),
        Command::Postproc(args) => postproc(args, json),
        Command::Report(args) => {
            let runs = collect_runs(&args.dirs)?;
            print!("{}", if json { render_kv(&runs) } else { render_tables(&runs) });
            Ok(())
        }
    }
}

fn output_dir(out: &OutArg, default_name: &str) -> Result<PathBuf> {
    let dir = match (&out.out, std::env::var_os("FCNSEG_OUT")) {
        (Some(dir), _) => dir.clone(),
        (None, Some(root)) => PathBuf::from(root).join(default_name),
        (None, None) => Path::new("runs").join(default_name),
    };
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    Ok(dir)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io(&path, e))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| io(path, e))
}

/// `config.resolved`: the command and its inputs as comments, then the
/// settings as `key=value` lines that `--config` accepts back.
fn write_resolved(dir: &Path, command: &str, inputs: &[(&str, String)], settings: &str) -> Result<()> {
    let mut text = format!("# command={command}\n");
    for (k, v) in inputs {
        text += &format!("# {k}={v}\n");
    }
    text += settings;
    write(dir, RESOLVED, &text)
}

fn resolve_config(args: &ConfigArgs, dataset: DatasetTag) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    if let Some(path) = &args.config {
        c.apply_kv(&fs::read_to_string(path).map_err(|e| io(path, e))?)?;
    }
    c.dataset = dataset;
    if let Some(v) = args.variant {
        c.variant = v;
    }
    if let Some(v) = args.solver {
        c.solver = v;
    }
    let set = |slot: &mut Option<f64>, v: Option<f64>| {
        if v.is_some() {
            *slot = v;
        }
    };
    if let Some(v) = args.lr {
        c.lr = v;
    }
    set(&mut c.hyper.momentum, args.momentum);
    set(&mut c.hyper.beta1, args.beta1);
    set(&mut c.hyper.beta2, args.beta2);
    set(&mut c.hyper.rho, args.rho);
    set(&mut c.hyper.eps, args.eps);
    set(&mut c.hyper.rms_decay, args.rms_decay);
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = args.loss_scale {
        c.loss_scale = v;
    }
    if let Some(v) = args.folds {
        c.folds = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(b) = &args.backbone {
        c.backbone = match b.as_str() {
            "tiny" => BackboneSpec::tiny(),
            "small" => BackboneSpec::small(),
            widths => BackboneSpec { widths: BackboneSpec::parse_widths(widths)?, ..c.backbone.clone() },
        };
    }
    if let Some(v) = args.fc_width {
        c.backbone.fc_width = v;
    }
    if let Some(v) = &args.postproc {
        c.postproc = v == "on";
    }
    if let Some(v) = &args.pipeline {
        c.postproc_steps = v.parse()?;
    }
    c.validate()?;
    Ok(c)
}

fn aggregate_table(raw: &Aggregate, post: Option<&Aggregate>) -> String {
    let mut out = format!("stage\timages\t{}\n", Index::ALL.map(|i| i.as_str()).join("\t"));
    let row = |name: &str, a: &Aggregate| {
        let cells: Vec<String> = Index::ALL
            .iter()
            .map(|&i| {
                let s = a.get(i);
                match (s.mean, s.sd) {
                    (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
                    _ => "-".to_string(),
                }
            })
            .collect();
        format!("{name}\t{}\t{}\n", a.images, cells.join("\t"))
    };
    out += &row("raw", raw);
    if let Some(p) = post {
        out += &row("post", p);
    }
    out
}

fn dataset_build(tag: DatasetTag, root: &Path, seed: u64, out: &OutArg, json: bool) -> Result<()> {
    let root = absolute(root)?;
    let rooted = |dir: &Path, subjects: Vec<SubjectScans>| -> Result<Vec<SubjectScans>> {
        subjects
            .into_iter()
            .map(|s| {
                let scans = s
                    .scans()
                    .iter()
                    .map(|r| ScanRef { image: dir.join(&r.image), mask: dir.join(&r.mask) })
                    .collect();
                SubjectScans::with_any_count(s.subject_id, scans)
            })
            .collect()
    };
    let pools = match tag {
        DatasetTag::Md => SubjectPools { md: rooted(&root, scan_dataset_dir(&root, true)?)?, wd: Vec::new() },
        DatasetTag::Wd => SubjectPools { md: Vec::new(), wd: rooted(&root, scan_dataset_dir(&root, false)?)? },
        DatasetTag::Ad => {
            let (md, wd) = (root.join("md"), root.join("wd"));
            SubjectPools {
                md: rooted(&md, scan_dataset_dir(&md, true)?)?,
                wd: rooted(&wd, scan_dataset_dir(&wd, false)?)?,
            }
        }
    };
    let manifest = build_manifest(tag, &pools, seed)?;
    let dir = output_dir(out, &format!("dataset-{tag}"))?;
    manifest.write(dir.join("manifest.tsv"))?;
    write_resolved(&dir, "dataset build", &[], &kv::render([
        ("tag", tag.to_string()),
        ("root", root.display().to_string()),
        ("seed", seed.to_string()),
    ]))?;
    print_counts(&manifest, &dir, json);
    Ok(())
}

fn print_counts(manifest: &DatasetManifest, dir: &Path, json: bool) {
    let [train, val, test] = manifest.counts();
    if json {
        print!(
            "{}",
            kv::render([
                ("manifest", dir.join("manifest.tsv").display().to_string()),
                ("train", train.to_string()),
                ("val", val.to_string()),
                ("test", test.to_string()),
            ])
        );
    } else {
        println!("split\titems");
        println!("train\t{train}\nval\t{val}\ntest\t{test}");
        println!("manifest written to {}", dir.join("manifest.tsv").display());
    }
}

fn dataset_phantom(subjects: usize, scans: usize, seed: u64, size: usize, tag: DatasetTag, out: &OutArg, json: bool) -> Result<()> {
    if subjects == 0 {
        return Err(Error::InvalidArgument("--subjects must be at least 1".into()));
    }
    if tag == DatasetTag::Ad {
        return Err(Error::InvalidArgument(
            "phantom datasets are md or wd; build ad from md/ and wd/ directories with `dataset build`".into(),
        ));
    }
    let dir = output_dir(out, "phantom")?;
    let cfg = PhantomConfig::new(size, scans);
    let mut pool = Vec::with_capacity(subjects);
    for i in 0..subjects {
        let id = format!("s{i:03}");
        let phantom = generate_phantom_with(derive_seed(seed, &format!("subject/{i}")), &cfg)?;
        for sub in ["images", "masks"] {
            let d = dir.join(sub).join(&id);
            fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
        }
        let mut refs = Vec::with_capacity(scans);
        for (j, scan) in phantom.scans.iter().enumerate() {
            let r = scan_paths(&id, j + 1);
            save_gray_png(&scan.image, dir.join(&r.image))?;
            encode_voc_mask(&scan.mask, dir.join(&r.mask))?;
            refs.push(r);
        }
        pool.push(SubjectScans::new(id, refs)?);
    }
    let pools = match tag {
        DatasetTag::Md => SubjectPools { md: pool, wd: Vec::new() },
        _ => SubjectPools { md: Vec::new(), wd: pool },
    };
    let manifest = build_manifest(tag, &pools, seed)?;
    manifest.write(dir.join("manifest.tsv"))?;
    write_resolved(&dir, "dataset phantom", &[], &kv::render([
        ("subjects", subjects.to_string()),
        ("scans", scans.to_string()),
        ("seed", seed.to_string()),
        ("size", size.to_string()),
        ("tag", tag.to_string()),
    ]))?;
    print_counts(&manifest, &dir, json);
    Ok(())
}

fn read_manifest(path: &Path) -> Result<(PathBuf, DatasetManifest)> {
    let path = absolute(path)?;
    let manifest = DatasetManifest::read(&path)?;
    Ok((path, manifest))
}

fn train(args: TrainArgs, json: bool) -> Result<()> {
    let (manifest_path, manifest) = read_manifest(&args.manifest)?;
    let cfg = resolve_config(&args.config, manifest.tag)?;
    let dir = output_dir(&args.out, &format!("train-{}-{}-{}-s{}", cfg.variant, cfg.dataset, cfg.solver, cfg.seed))?;
    write_resolved(&dir, "train", &[("manifest", manifest_path.display().to_string())], &cfg.to_kv())?;
    let (model, record) = run_experiment(&cfg, &DiskSource, &manifest)?;
    save_checkpoint(&model, dir.join(CHECKPOINT))?;
    write(&dir, METRICS_FILE, &record.to_kv())?;
    write(&dir, "history.tsv", &record.history_tsv())?;
    write(&dir, "per_image.tsv", &record.per_image_tsv())?;
    warn_failed(&record.test.failed);
    if json {
        print!("{}", record.to_kv());
    } else {
        let h = &record.history;
        println!("trained {} epochs; best epoch {} (val jsi {:.4})", h.train_loss.len(), h.best_epoch, h.val_jsi[h.best_epoch]);
        print!("{}", aggregate_table(&record.test.raw, record.test.post.as_ref()));
        println!("outputs in {}", dir.display());
    }
    Ok(())
}

fn warn_failed(failed: &[(String, String)]) {
    for (item, reason) in failed {
        eprintln!("warning: skipped {item}: {}", reason.replace('\n', " "));
    }
}

/// Labels recorded next to a checkpoint by `train`, used to key eval and
/// bench outputs in reports.
fn checkpoint_labels(model_path: &Path, model: &ModelGraph, dataset: DatasetTag) -> Vec<(&'static str, String)> {
    let resolved = model_path.parent().map(|d| d.join(RESOLVED));
    let solver = resolved
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| kv::parse(&t, "resolved config").ok())
        .and_then(|m| m.get("solver").cloned())
        .unwrap_or_else(|| "-".to_string());
    let variant = model.variant().map_or_else(|| "-".to_string(), |v| v.to_string());
    vec![("dataset", dataset.to_string()), ("variant", variant), ("solver", solver)]
}

fn postproc_choice(flag: &str, pipeline: &Option<String>) -> Result<Option<PostprocConfig>> {
    if flag == "off" {
        return Ok(None);
    }
    Ok(Some(match pipeline {
        Some(p) => p.parse()?,
        None => PostprocConfig::default(),
    }))
}

fn eval(args: EvalArgs, json: bool) -> Result<()> {
    let (manifest_path, manifest) = read_manifest(&args.manifest)?;
    let model_path = absolute(&args.model)?;
    let model = load_checkpoint(&model_path)?;
    let post = postproc_choice(&args.postproc, &args.pipeline)?;
    let dir = output_dir(&args.out, &format!("eval-{}", args.split))?;
    let labels = checkpoint_labels(&model_path, &model, manifest.tag);
    let mut settings = labels.clone();
    settings.push(("split", args.split.to_string()));
    settings.push(("postproc", if post.is_some() { "on" } else { "off" }.to_string()));
    settings.push(("postproc_steps", post.clone().unwrap_or_default().to_string()));
    write_resolved(
        &dir,
        "eval",
        &[("manifest", manifest_path.display().to_string()), ("model", model_path.display().to_string())],
        &kv::render(settings.iter().map(|(k, v)| (*k, v.clone()))),
    )?;

    let items: Vec<_> = manifest.split(args.split).collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("the {} split of the manifest is empty", args.split)));
    }
    let result = evaluate_items(&model, &DiskSource, items, post.as_ref())?;
    let mut text = kv::render(settings.iter().map(|(k, v)| (*k, v.clone())));
    text += &result.raw.to_kv("raw.");
    if let Some(p) = &result.post {
        text += &p.to_kv("post.");
    }
    text += &format!("failed={}\n", result.failed.len());
    write(&dir, METRICS_FILE, &text)?;
    warn_failed(&result.failed);
    if json {
        print!("{text}");
    } else {
        print!("{}", aggregate_table(&result.raw, result.post.as_ref()));
        if !result.failed.is_empty() {
            println!("{} item(s) could not be loaded", result.failed.len());
        }
    }
    Ok(())
}

fn cv(args: CvArgs, json: bool) -> Result<()> {
    let (manifest_path, manifest) = read_manifest(&args.manifest)?;
    let cfg = resolve_config(&args.config, manifest.tag)?;
    let threads = args.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let dir = output_dir(&args.out, &format!("cv-{}-{}-{}-s{}", cfg.variant, cfg.dataset, cfg.solver, cfg.seed))?;
    write_resolved(&dir, "cv", &[("manifest", manifest_path.display().to_string())], &cfg.to_kv())?;
    let result = cross_validate(&cfg, &DiskSource, &manifest, threads)?;
    write(&dir, METRICS_FILE, &result.to_kv())?;
    write(&dir, "per_image.tsv", &result.per_image_tsv())?;
    for (i, fold) in result.folds.iter().enumerate() {
        let fold_dir = dir.join(format!("fold{i}"));
        fs::create_dir_all(&fold_dir).map_err(|e| io(&fold_dir, e))?;
        write(&fold_dir, "history.tsv", &fold.history_tsv())?;
        warn_failed(&fold.test.failed);
    }
    if json {
        print!("{}", result.to_kv());
    } else {
        for (i, fold) in result.folds.iter().enumerate() {
            println!("# fold {i}");
            print!("{}", aggregate_table(&fold.test.raw, fold.test.post.as_ref()));
        }
        println!("# pooled");
        print!("{}", aggregate_table(&result.pooled_raw, result.pooled_post.as_ref()));
        println!("outputs in {}", dir.display());
    }
    Ok(())
}

fn bench(args: BenchArgs, json: bool) -> Result<()> {
    let (manifest_path, manifest) = read_manifest(&args.manifest)?;
    let model_path = absolute(&args.model)?;
    let model = load_checkpoint(&model_path)?;
    let post = postproc_choice(&args.postproc, &args.pipeline)?;
    let dir = output_dir(&args.out, "bench")?;
    let mut settings = checkpoint_labels(&model_path, &model, manifest.tag);
    settings.push(("split", args.split.to_string()));
    settings.push(("repetitions", args.repetitions.to_string()));
    settings.push(("limit", args.limit.map_or_else(|| "all".to_string(), |l| l.to_string())));
    settings.push(("postproc", if post.is_some() { "on" } else { "off" }.to_string()));
    settings.push(("postproc_steps", post.clone().unwrap_or_default().to_string()));
    let settings = kv::render(settings.iter().map(|(k, v)| (*k, v.clone())));
    write_resolved(
        &dir,
        "bench",
        &[("manifest", manifest_path.display().to_string()), ("model", model_path.display().to_string())],
        &settings,
    )?;
    let images = manifest
        .split(args.split)
        .take(args.limit.unwrap_or(usize::MAX))
        .map(|it| DiskSource.load(it).map(|s| s.image))
        .collect::<Result<Vec<_>>>()?;
    let report = bench_inference(&model, &images, args.repetitions, post.as_ref())?;
    let text = settings + &report.to_kv();
    write(&dir, BENCH_FILE, &text)?;
    if json {
        print!("{text}");
    } else {
        println!("{}", report.describe());
    }
    Ok(())
}

fn postproc(args: PostprocArgs, json: bool) -> Result<()> {
    let cfg: PostprocConfig = args.pipeline.parse()?;
    let input = absolute(&args.input)?;
    let dir = output_dir(&args.out, "postproc")?;
    let mut names: Vec<String> = fs::read_dir(&input)
        .map_err(|e| io(&input, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no .png masks in {}", input.display())));
    }
    write_resolved(&dir, "postproc", &[("in", input.display().to_string())], &kv::render([("pipeline", cfg.to_string())]))?;
    let mut changed = 0;
    for name in &names {
        let mask = decode_voc_mask(input.join(name))?;
        let cleaned = postprocess(&mask, &cfg)?;
        changed += mask.labels().iter().zip(cleaned.labels()).filter(|(a, b)| a != b).count();
        encode_voc_mask(&cleaned, dir.join(name))?;
    }
    if json {
        print!("{}", kv::render([("masks", names.len().to_string()), ("pixels_changed", changed.to_string())]));
    } else {
        println!("post-processed {} mask(s) with {cfg} ({changed} pixels changed) into {}", names.len(), dir.display());
    }
    Ok(())
}
