use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adsiam::config::Config;
use adsiam::eval::{aggregate, evaluate, run_ope, write_precision_csv, write_success_csv, EvalResult};
use adsiam::geometry::{read_ground_truth, BBox};
use adsiam::men::{save_heatmap, write_score_map_csv};
use adsiam::synth::{read_sequence, write_sequence, Sequence, SequenceSpec, Suite, GT_FILE};
use adsiam::tracker::{overlay, read_track_boxes, train_models, write_track_csv, Models, Tracker, Variant};
use adsiam::wcnn::{write_scores_csv, SCORES_HEADER};
use anyhow::{anyhow, Context};

use crate::manifest::RunManifest;
use crate::{CliError, CliResult, EvalArgs, OpeArgs, SynthArgs, TrackArgs, TrainArgs};

pub const TRACK_FILE: &str = "track.csv";

/// Creates `dir` and checks it accepts files.
fn prepare_out(dir: &Path) -> CliResult<()> {
    let probe = dir.join(".adsiam-write-test");
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&probe, b""))
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| CliError::usage(anyhow!("output directory {} is not writable: {e}", dir.display())))
}

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn parse_suite(name: &str) -> CliResult<Suite> {
    Suite::parse(name).ok_or_else(|| {
        CliError::usage(anyhow!("unknown suite {name:?}; expected train, smooth, jump, occlusion or distractor"))
    })
}

fn is_sequence_dir(dir: &Path) -> bool {
    dir.join(GT_FILE).is_file()
}

/// Sequences under `dir`: the directory itself if it holds a ground-truth
/// file, otherwise each such subdirectory in name order.
pub fn load_corpus(dir: &Path) -> CliResult<Vec<Sequence>> {
    if !dir.is_dir() {
        return Err(CliError::usage(anyhow!("corpus {} is not a directory", dir.display())));
    }
    if is_sequence_dir(dir) {
        return Ok(vec![read_sequence(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_sequence_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::usage(anyhow!("corpus {} contains no sequences", dir.display())));
    }
    dirs.iter().map(|d| Ok(read_sequence(d)?)).collect()
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let mut m = RunManifest::new("synth", argv, &a.out);
    let seqs: Vec<(PathBuf, Sequence)> = if let Some(spec_path) = &a.spec {
        let text = fs::read_to_string(spec_path)
            .map_err(|e| CliError::usage(anyhow!("reading spec {}: {e}", spec_path.display())))?;
        let spec: SequenceSpec =
            toml::from_str(&text).map_err(|e| CliError::usage(anyhow!("spec {}: {e}", spec_path.display())))?;
        spec.validate()?;
        let mut seq = adsiam::synth::generate_sequence(&spec, a.seed)?;
        seq.name = a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        m.inputs.push(spec_path.clone());
        m.seeds.push(a.seed);
        vec![(a.out.clone(), seq)]
    } else {
        let suite = parse_suite(a.suite.as_deref().unwrap_or_default())?;
        let n = a.count.unwrap_or(suite.default_count());
        m.seeds.extend((0..n).map(|i| suite.seed(i)));
        suite.generate_all(n)?.into_iter().map(|s| (a.out.join(&s.name), s)).collect()
    };
    prepare_out(&a.out)?;
    for (dir, seq) in &seqs {
        write_sequence(dir, seq)?;
        log::info!("wrote {} frames to {}", seq.len(), dir.display());
    }
    m.write(&a.out)?;
    Ok(())
}

pub fn train(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let corpus = load_corpus(&a.corpus)?;
    prepare_out(&a.out)?;
    log::info!("training on {} sequences", corpus.len());
    let trained = train_models(&cfg, &corpus, a.seed)?;
    trained.models.save(&a.out)?;
    let mut w = create(&a.out.join("loss.csv"))?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in trained.siamese_losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    let mut w = create(&a.out.join("fmen_loss.csv"))?;
    writeln!(w, "iteration,loss")?;
    for (i, l) in trained.fmen_losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    let mut m = RunManifest::new("train", argv, &a.out);
    m.config_path = a.config.clone();
    m.seeds.push(a.seed);
    m.inputs.push(a.corpus.clone());
    m.config = Some(cfg);
    m.write(&a.out)?;
    Ok(())
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    Ok(s.parse::<Variant>()?)
}

pub fn track(a: &TrackArgs, argv: &[String]) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(t) = a.threads {
        cfg.tracker.threads = t;
        cfg.validate()?;
    }
    let variant = parse_variant(&a.ablate)?;
    let models = Models::load(&cfg, &a.checkpoint)?;
    if !is_sequence_dir(&a.sequence) {
        return Err(CliError::usage(anyhow!("{} has no {GT_FILE}", a.sequence.display())));
    }
    let seq = read_sequence(&a.sequence)?;
    if seq.is_empty() {
        return Err(CliError::usage(anyhow!("sequence {} is empty", a.sequence.display())));
    }
    prepare_out(&a.out)?;

    let mut tracker = Tracker::init(&models, &cfg, variant, &seq.frames[0], &seq.gt[0], a.seed)?;
    tracker.set_recording(a.scores);
    let mut scores = if a.scores {
        fs::create_dir_all(a.out.join("score_maps"))?;
        let mut w = create(&a.out.join("scores.csv"))?;
        writeln!(w, "{SCORES_HEADER}")?;
        Some(w)
    } else {
        None
    };
    if a.overlay {
        let dir = a.out.join("overlays");
        fs::create_dir_all(&dir)?;
        overlay(&seq.frames[0], &seq.gt[0], Some(&seq.gt[0]))?.save(dir.join("0001.png")).map_err(anyhow::Error::from)?;
    }
    let mut outputs = Vec::with_capacity(seq.len() - 1);
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        let mut f = tracker.track_frame(frame)?;
        if let Some(w) = scores.as_mut() {
            write_scores_csv(w, f.frame, &f.candidates)?;
            if let Some(map) = f.score_map.take() {
                let base = a.out.join("score_maps").join(format!("{:04}", f.frame));
                write_score_map_csv(create(&base.with_extension("csv"))?, &map)?;
                save_heatmap(&base.with_extension("png"), &map)?;
            }
            f.candidates.clear();
        }
        if a.overlay {
            let path = a.out.join("overlays").join(format!("{:04}.png", f.frame));
            overlay(frame, &f.bbox, seq.gt.get(i))?.save(path).map_err(anyhow::Error::from)?;
        }
        outputs.push(f);
    }
    if let Some(mut w) = scores {
        w.flush()?;
    }
    let mut w = create(&a.out.join(TRACK_FILE))?;
    write_track_csv(&mut w, &outputs)?;
    w.flush()?;

    let mut pred = vec![seq.gt[0]];
    pred.extend(outputs.iter().map(|f| f.bbox));
    if let Ok(r) = evaluate(&pred, &seq.gt) {
        log::info!("{} [{variant}] {}", seq.name, r.summary_line());
    }
    let mut m = RunManifest::new("track", argv, &a.out);
    m.config_path = a.config.clone();
    m.seeds.push(a.seed);
    m.inputs = vec![a.checkpoint.clone(), a.sequence.clone()];
    m.config = Some(cfg);
    m.write(&a.out)?;
    Ok(())
}

/// Boxes of a track CSV (file or directory holding one), completed with the
/// first ground-truth box when the CSV starts at frame 2.
pub fn read_predictions(path: &Path, gt: &[BBox]) -> CliResult<Vec<BBox>> {
    let file = if path.is_dir() { path.join(TRACK_FILE) } else { path.to_path_buf() };
    let f = File::open(&file).map_err(|e| CliError::usage(anyhow!("prediction {}: {e}", file.display())))?;
    let mut boxes = read_track_boxes(BufReader::new(f)).map_err(|e| CliError::from(e).context(file.display()))?;
    if boxes.len() + 1 == gt.len() {
        boxes.insert(0, gt[0]);
    }
    if boxes.len() != gt.len() {
        return Err(CliError::usage(anyhow!(
            "{} has {} boxes but the ground truth has {} frames",
            file.display(),
            boxes.len(),
            gt.len()
        )));
    }
    Ok(boxes)
}

fn read_gt(path: &Path) -> CliResult<(String, Vec<BBox>)> {
    let file = if path.is_dir() { path.join(GT_FILE) } else { path.to_path_buf() };
    let f = File::open(&file).map_err(|e| CliError::usage(anyhow!("ground truth {}: {e}", file.display())))?;
    let gt = read_ground_truth(BufReader::new(f))?;
    if gt.is_empty() {
        return Err(CliError::usage(anyhow!("ground truth {} is empty", file.display())));
    }
    let named = if path.is_dir() { Some(path) } else { file.parent() };
    let name = named
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok((name, gt))
}

fn write_result(dir: &Path, r: &EvalResult) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("precision.csv"))?;
    write_precision_csv(&mut w, r)?;
    w.flush()?;
    let mut w = create(&dir.join("success.csv"))?;
    write_success_csv(&mut w, r)?;
    w.flush()?;
    fs::write(dir.join("summary.txt"), r.summary_line() + "\n")?;
    Ok(())
}

fn unique_names(names: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashMap::new();
    names
        .into_iter()
        .map(|n| {
            let k = seen.entry(n.clone()).or_insert(0usize);
            *k += 1;
            if *k == 1 { n } else { format!("{n}_{k}") }
        })
        .collect()
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> CliResult<()> {
    if a.pred.is_empty() {
        return Err(CliError::usage(anyhow!("no prediction files given")));
    }
    if a.pred.len() != a.gt.len() {
        return Err(CliError::usage(anyhow!("{} prediction files but {} ground-truth files", a.pred.len(), a.gt.len())));
    }
    let mut names = Vec::new();
    let mut results = Vec::new();
    for (p, g) in a.pred.iter().zip(&a.gt) {
        let (name, gt) = read_gt(g)?;
        let pred = read_predictions(p, &gt)?;
        results.push(evaluate(&pred, &gt)?);
        names.push(name);
    }
    prepare_out(&a.out)?;
    let names = unique_names(names);
    let mut lines = String::new();
    for (name, r) in names.iter().zip(&results) {
        write_result(&a.out.join(name), r)?;
        lines.push_str(&format!("{name} {}\n", r.summary_line()));
    }
    let agg = aggregate(&results)?;
    write_result(&a.out, &agg)?;
    fs::write(a.out.join("per_sequence.txt"), lines)?;
    println!("{}", agg.summary_line());
    let mut m = RunManifest::new("eval", argv, &a.out);
    m.inputs = a.pred.iter().chain(&a.gt).cloned().collect();
    m.write(&a.out)?;
    Ok(())
}

pub fn ope(a: &OpeArgs, argv: &[String]) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(t) = a.threads {
        cfg.tracker.threads = t;
        cfg.validate()?;
    }
    let variants = a.ablate.split(',').map(|s| parse_variant(s.trim())).collect::<CliResult<Vec<_>>>()?;
    let suite = parse_suite(&a.suite)?;
    let models = Models::load(&cfg, &a.checkpoint)?;
    prepare_out(&a.out)?;
    let seqs = suite.generate_all(a.count.unwrap_or(suite.default_count()))?;
    for v in variants {
        let report = run_ope(&models, &cfg, v, &seqs, a.seed)?;
        let dir = a.out.join(v.name());
        let mut lines = String::new();
        for (name, r) in &report.per_sequence {
            write_result(&dir.join(name), r)?;
            lines.push_str(&format!("{name} {}\n", r.summary_line()));
        }
        write_result(&dir, &report.aggregate)?;
        fs::write(dir.join("per_sequence.txt"), lines)?;
        println!("{} {} {}", suite.name(), v, report.aggregate.summary_line());
    }
    let mut m = RunManifest::new("ope", argv, &a.out);
    m.config_path = a.config.clone();
    m.seeds.push(a.seed);
    m.inputs.push(a.checkpoint.clone());
    m.config = Some(cfg);
    m.write(&a.out)?;
    Ok(())
}
