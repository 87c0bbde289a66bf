//! The seven subcommands.
//!
//! Shared behavior: every command resolves its inputs up front, registers
//! each output file with an [`OutputGuard`] so a failure removes partial
//! results, and re-loads everything it wrote through the matching loader
//! before declaring success. All randomness flows through the seeds of the
//! run configuration, so a rerun writes byte-identical artifacts.

use std::path::{Path, PathBuf};

use kinecast_core::ensemble::{ensemble_sample, train_ensemble, EnsembleSpec};
use kinecast_core::geometry::{frame_boundaries, proximity, FrameBoundary, ProximityReport};
use kinecast_core::metrics::{apd, horizon_table, mpjpe};
use kinecast_core::motion::{
    split_dataset, streams, synthesize, MotionSequence, ObservationWindow,
};
use kinecast_core::rng::RngStream;
use kinecast_core::tgn::{predict, window_input, TgnParams};
use kinecast_core::Tensor;

use crate::boundary_file::{load_boundary, save_boundary, save_proximity, surface_csv};
use crate::eval_file::{load_eval_csv, load_eval_json, load_forecast, save_eval, save_forecast};
use crate::eval_file::{EvalRow, ForecastFile};
use crate::jsonio::write_text;
use crate::model_file::{load_model, load_train_log, save_model, save_train_log};
use crate::motion_file::{load_manifest, load_motion, save_manifest, save_motion};
use crate::runconfig::RunConfig;
use crate::sample_file::{load_samples, save_samples, SampleFile};
use crate::{CliError, CliResult};

/// Horizons reported by `eval`, milliseconds; entries beyond the forecast
/// length are dropped.
pub const DEFAULT_HORIZONS_MS: &[f64] = &[80.0, 160.0, 320.0, 400.0, 1000.0, 2000.0];

/// Removes tracked files on drop unless the command committed.
struct OutputGuard {
    paths: Vec<PathBuf>,
    keep: bool,
}

impl OutputGuard {
    fn new() -> OutputGuard {
        OutputGuard { paths: Vec::new(), keep: false }
    }

    fn track(&mut self, path: &Path) {
        self.paths.push(path.to_path_buf());
    }

    fn commit(mut self) {
        self.keep = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.paths {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn member_seeds(cfg: &RunConfig) -> CliResult<Vec<u64>> {
    Ok(EnsembleSpec::from_base(cfg.ensemble.members, cfg.ensemble.base_seed)?.seeds().to_vec())
}

fn model_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("model_{seed}.json"))
}

fn load_members(cfg: &RunConfig) -> CliResult<Vec<TgnParams>> {
    let members = member_seeds(cfg)?
        .iter()
        .map(|&seed| load_model(&model_path(&cfg.io.model_dir, seed)))
        .collect::<CliResult<Vec<TgnParams>>>()?;
    let head = &members[0].config;
    for m in &members[1..] {
        if m.config.history != head.history
            || m.config.horizon != head.horizon
            || m.config.joints != head.joints
            || m.config.robot_channels != head.robot_channels
        {
            return Err(CliError::Validation(
                "ensemble members disagree on window dimensions".into(),
            ));
        }
    }
    Ok(members)
}

/// Cuts the window ending `horizon` frames before the end of the file, so
/// the trailing frames remain available as ground truth for `eval`.
fn cut_window(
    seq: &MotionSequence,
    path: &Path,
    n: usize,
    t: usize,
) -> CliResult<(ObservationWindow, String)> {
    let frames = seq.frames();
    if frames.len() < n + t {
        return Err(CliError::Validation(format!(
            "{} has {} frames, the window needs {}",
            path.display(),
            frames.len(),
            n + t
        )));
    }
    let start = frames.len() - n - t;
    let window = ObservationWindow {
        history: frames[start..start + n].to_vec(),
        future: frames[start + n..].to_vec(),
        source_id: 0,
        start,
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("window");
    Ok((window, format!("{stem}@{start}")))
}

// ---------------------------------------------------------------------------

/// Generates synthetic trajectories and the manifest listing them.
pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let sequences = synthesize(&cfg.data.synth)?;
    let mut guard = OutputGuard::new();
    let mut files = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        let name = format!("traj_{i:04}.json");
        let path = out.join(&name);
        guard.track(&path);
        save_motion(&path, seq)?;
        files.push(name);
    }
    let manifest = out.join("manifest.json");
    guard.track(&manifest);
    save_manifest(&manifest, &files)?;

    for name in load_manifest(&manifest)? {
        load_motion(&out.join(name))?;
    }
    guard.commit();
    println!("wrote {} trajectories and {}", files.len(), manifest.display());
    Ok(())
}

/// Trains one model per ensemble member and writes each with its loss curve.
pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let manifest = cfg.io.data_dir.join("manifest.json");
    let files = load_manifest(&manifest)?;
    if files.is_empty() {
        return Err(CliError::Validation(format!("{} lists no trajectories", manifest.display())));
    }
    let sequences = files
        .iter()
        .map(|f| load_motion(&cfg.io.data_dir.join(f)))
        .collect::<CliResult<Vec<MotionSequence>>>()?;
    let tree = sequences[0].tree.clone();
    for (i, s) in sequences.iter().enumerate() {
        if s.tree != tree {
            return Err(CliError::Validation(format!(
                "{} has a different skeleton than {}",
                files[i], files[0]
            )));
        }
        if s.fps != sequences[0].fps {
            return Err(CliError::Validation(format!(
                "{} has fps {}, {} has {}",
                files[i], s.fps, files[0], sequences[0].fps
            )));
        }
    }

    let split = split_dataset(
        &sequences,
        cfg.data.split,
        cfg.data.synth.seed,
        cfg.model.history,
        cfg.model.horizon,
        cfg.data.stride,
    )?;
    let spec = EnsembleSpec::from_base(cfg.ensemble.members, cfg.ensemble.base_seed)?;
    let results = train_ensemble(&split, &tree, &cfg.model, &cfg.train, &spec)?;

    let mut guard = OutputGuard::new();
    for (&seed, (params, log)) in spec.seeds().iter().zip(&results) {
        let mpath = model_path(out, seed);
        guard.track(&mpath);
        save_model(&mpath, params)?;
        let lpath = out.join(format!("train_log_{seed}.csv"));
        guard.track(&lpath);
        save_train_log(&lpath, log)?;
    }

    for &seed in spec.seeds() {
        load_model(&model_path(out, seed))?;
        load_train_log(&out.join(format!("train_log_{seed}.csv")))?;
    }
    guard.commit();
    for (&seed, (_, log)) in spec.seeds().iter().zip(&results) {
        println!(
            "member {seed}: best val loss {:.3} mm at epoch {}",
            log.best_val_loss, log.best_epoch
        );
    }
    println!("wrote {} models to {}", results.len(), out.display());
    Ok(())
}

/// Writes the ensemble-mean point forecast for one window.
pub fn predict_cmd(cfg: &RunConfig, window_path: &Path, out: &Path) -> CliResult<()> {
    let members = load_members(cfg)?;
    let seq = load_motion(window_path)?;
    let (n, t) = (members[0].config.history, members[0].config.horizon);
    let (window, window_id) = cut_window(&seq, window_path, n, t)?;

    let mut mean: Option<Tensor> = None;
    for m in &members {
        let p = predict(m, &window, &seq.tree)?;
        mean = Some(match mean {
            None => p,
            Some(acc) => acc.add(&p)?,
        });
    }
    let data = mean.unwrap().scale(1.0 / members.len() as f64);

    let path = out.join("forecast.json");
    let mut guard = OutputGuard::new();
    guard.track(&path);
    save_forecast(&path, &ForecastFile { window_id, fps: seq.fps, data })?;
    load_forecast(&path)?;
    guard.commit();
    println!("wrote {}", path.display());
    Ok(())
}

/// Draws stochastic forecasts from every member for one window.
pub fn sample(cfg: &RunConfig, window_path: &Path, out: &Path) -> CliResult<()> {
    let members = load_members(cfg)?;
    let seq = load_motion(window_path)?;
    let (n, t) = (members[0].config.history, members[0].config.horizon);
    let (window, window_id) = cut_window(&seq, window_path, n, t)?;
    let input = window_input(&window, &seq.tree, &members[0].config)?;

    let rng = RngStream::new(cfg.sampling.seed, streams::SAMPLING);
    let set = ensemble_sample(&members, &input, cfg.sampling.draws, cfg.sampling.rate, &rng)?;

    let path = out.join("samples.json");
    let mut guard = OutputGuard::new();
    guard.track(&path);
    save_samples(&path, &SampleFile { window_id, set })?;
    load_samples(&path)?;
    guard.commit();
    println!("wrote {}", path.display());
    Ok(())
}

/// Fits joint ellipsoids and segment envelopes for every forecast frame.
pub fn boundary(cfg: &RunConfig, samples_path: &Path, out: &Path) -> CliResult<()> {
    let sf = load_samples(samples_path)?;
    let shape = sf.set.samples[0].shape().to_vec();
    let (t_len, j) = (shape[0], shape[1]);
    let (tree, _) = cfg.data.synth.preset.build()?;
    let humans = tree.human_nodes();
    if humans.len() != j {
        return Err(CliError::Validation(format!(
            "samples carry {j} joints but preset has {} human nodes; set data.preset to match",
            humans.len()
        )));
    }

    let frames = (0..t_len)
        .map(|f| Ok(frame_boundaries(&sf.set.samples, &tree, f, cfg.boundary.alpha)?))
        .collect::<CliResult<Vec<FrameBoundary>>>()?;

    let bpath = out.join("boundary.json");
    let cpath = out.join("boundary_surface.csv");
    let mut guard = OutputGuard::new();
    guard.track(&bpath);
    save_boundary(&bpath, &frames, &humans)?;
    guard.track(&cpath);
    write_text(&cpath, &surface_csv(&frames, cfg.boundary.resolution)?)?;

    load_boundary(&bpath)?;
    crate::boundary_file::load_surface_csv(&cpath)?;
    guard.commit();
    println!("wrote {} and {}", bpath.display(), cpath.display());
    Ok(())
}

/// Robot segments of a trajectory frame: edges whose endpoints are both
/// robot nodes.
fn robot_segments(seq: &MotionSequence, frame: usize) -> Vec<([f64; 3], [f64; 3])> {
    let nodes = seq.tree.nodes();
    seq.tree
        .edges()
        .iter()
        .filter(|&&(a, b)| {
            nodes[a].kind == kinecast_core::motion::NodeKind::Robot
                && nodes[b].kind == kinecast_core::motion::NodeKind::Robot
        })
        .map(|&(a, b)| (seq.frames()[frame][a], seq.frames()[frame][b]))
        .collect()
}

/// Evaluates clearance between a robot trajectory and a boundary file.
pub fn proximity_cmd(
    cfg: &RunConfig,
    boundary_path: &Path,
    robot_path: &Path,
    out: &Path,
) -> CliResult<()> {
    let frames = load_boundary(boundary_path)?;
    let robot = load_motion(robot_path)?;
    if robot_segments(&robot, 0).is_empty() && !robot.is_empty() {
        return Err(CliError::Validation(format!(
            "{} has no robot-robot segments",
            robot_path.display()
        )));
    }
    let mut reports: Vec<(usize, ProximityReport)> = Vec::with_capacity(frames.len());
    for fb in &frames {
        if fb.frame >= robot.len() {
            return Err(CliError::Validation(format!(
                "boundary frame {} is beyond the {} robot frames",
                fb.frame,
                robot.len()
            )));
        }
        let segs = robot_segments(&robot, fb.frame);
        reports.push((fb.frame, proximity(fb, &segs, cfg.boundary.resolution)?));
    }

    let path = out.join("proximity.json");
    let mut guard = OutputGuard::new();
    guard.track(&path);
    save_proximity(&path, &reports)?;
    crate::boundary_file::load_proximity(&path)?;
    guard.commit();
    let violations: usize =
        reports.iter().flat_map(|(_, r)| &r.rows).filter(|r| r.violation).count();
    println!("wrote {} ({} violations)", path.display(), violations);
    Ok(())
}

/// Ground truth for `eval`: a forecast file, or the trailing frames of a
/// motion file (human joints only).
fn load_truth(path: &Path, t_len: usize, j: usize) -> CliResult<Tensor> {
    let what = path.display().to_string();
    let value = crate::jsonio::parse_json(&crate::jsonio::read_text(path)?, &what)?;
    let obj = crate::jsonio::as_object(&value, &what)?;
    if obj.contains_key("frames") {
        let seq = crate::motion_file::motion_from_value(&value, &what)?;
        let humans = seq.tree.human_nodes();
        if humans.len() != j {
            return Err(CliError::Validation(format!(
                "{what} has {} human joints, the forecast has {j}",
                humans.len()
            )));
        }
        if seq.len() < t_len {
            return Err(CliError::Validation(format!(
                "{what} has {} frames, the forecast covers {t_len}",
                seq.len()
            )));
        }
        let start = seq.len() - t_len;
        let mut data = Vec::with_capacity(t_len * j * 3);
        for frame in &seq.frames()[start..] {
            for &node in &humans {
                data.extend(frame[node]);
            }
        }
        Ok(Tensor::from_vec(&[t_len, j, 3], data)?)
    } else {
        let f = load_forecast(path)?;
        if f.data.shape() != [t_len, j, 3] {
            return Err(CliError::Validation(format!(
                "{what} has shape {:?}, the forecast is [{t_len}, {j}, 3]",
                f.data.shape()
            )));
        }
        Ok(f.data)
    }
}

/// Writes the metric table for a forecast against ground truth.
pub fn eval(
    pred_path: &Path,
    truth_path: &Path,
    samples_path: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let pred = load_forecast(pred_path)?;
    let shape = pred.data.shape().to_vec();
    let truth = load_truth(truth_path, shape[0], shape[1])?;

    let kept: Vec<f64> = DEFAULT_HORIZONS_MS
        .iter()
        .copied()
        .filter(|&ms| {
            let frame = (ms * pred.fps / 1000.0).round() as usize;
            (1..=shape[0]).contains(&frame)
        })
        .collect();
    let mut rows: Vec<EvalRow> = horizon_table(&pred.data, &truth, pred.fps, &kept)?
        .into_iter()
        .map(|e| EvalRow { metric: "mpjpe".into(), horizon_ms: Some(e.ms), value_mm: e.value_mm })
        .collect();
    rows.push(EvalRow {
        metric: "mpjpe_mean".into(),
        horizon_ms: None,
        value_mm: mpjpe(&pred.data, &truth)?,
    });
    if let Some(sp) = samples_path {
        let sf = load_samples(sp)?;
        rows.push(EvalRow {
            metric: "apd".into(),
            horizon_ms: None,
            value_mm: apd(&sf.set.samples)?,
        });
    }

    let csv_path = out.join("eval.csv");
    let json_path = out.join("eval.json");
    let mut guard = OutputGuard::new();
    guard.track(&csv_path);
    guard.track(&json_path);
    save_eval(&csv_path, &json_path, &rows)?;
    load_eval_csv(&csv_path)?;
    load_eval_json(&json_path)?;
    guard.commit();
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}
