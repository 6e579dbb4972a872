//! Commands behind the `chromaflow` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use chromaflow::color::{lab_to_rgb, luminance, rgb_to_lab, LabImage, Plane, RgbImage};
use chromaflow::io::{load_rgb, read_frames, save_rgb, FrameFile, MANIFEST_NAME};
use chromaflow::metrics::{evaluate_report, MetricsReport};
use chromaflow::propagation::{colorize_video, VideoSequence};
use chromaflow::reference::{build_index, CorpusIndex, FilterSummary};
use chromaflow::{Mode, PipelineConfig};

/// Layered configuration: defaults, then a config file, then `--set`
/// overrides, then the dedicated flags.
#[derive(Clone, Debug, Default)]
pub struct ConfigArgs {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub mode: Option<Mode>,
    pub strides: Option<String>,
}

/// A resolved configuration, remembering whether the mode was chosen explicitly.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: PipelineConfig,
    pub mode_explicit: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        let mut cfg = PipelineConfig::default();
        let mut mode_explicit = false;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in config {}", path.display()))?;
            mode_explicit |= text.lines().any(|l| {
                l.split('#')
                    .next()
                    .unwrap_or("")
                    .split('=')
                    .next()
                    .unwrap_or("")
                    .trim()
                    == "mode"
            });
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got `{kv}`"))?;
            cfg.set(k, v)?;
            mode_explicit |= k.trim() == "mode";
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
            mode_explicit = true;
        }
        if let Some(s) = &self.strides {
            cfg.set("cdc_strides", s)?;
        }
        cfg.validate()?;
        Ok(Resolved {
            config: cfg,
            mode_explicit,
        })
    }
}

fn ensure_writable(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        bail!(
            "{} already exists (pass --overwrite to replace it)",
            path.display()
        );
    }
    Ok(())
}

pub fn cmd_index(
    corpus_dir: &Path,
    out_index: &Path,
    cfg: &PipelineConfig,
    overwrite: bool,
) -> Result<FilterSummary> {
    ensure_writable(out_index, overwrite)?;
    let (index, summary) = build_index(corpus_dir, cfg)
        .with_context(|| format!("indexing {}", corpus_dir.display()))?;
    index.save(out_index)?;
    println!("{summary}");
    println!(
        "wrote {} entries to {}",
        index.entries.len(),
        out_index.display()
    );
    Ok(summary)
}

/// Where the reference came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    User {
        path: PathBuf,
        /// Index that was also given and ignored.
        overridden_index: Option<PathBuf>,
    },
    Retrieved {
        index: PathBuf,
        entry_id: usize,
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: String,
    pub frames: usize,
    pub input_dir: PathBuf,
    pub reference: Provenance,
    pub config: std::collections::BTreeMap<String, String>,
}

/// Reference inputs for colorizing a directory.
#[derive(Clone, Debug, Default)]
pub struct ReferenceArgs {
    pub reference: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

impl ReferenceArgs {
    /// Mode used when none was given: exemplar for a user image, two-stage otherwise.
    fn default_mode(&self) -> Mode {
        if self.reference.is_some() {
            Mode::Exemplar
        } else {
            Mode::TwoStage
        }
    }

    fn load(&self, gray0: &Plane<f64>) -> Result<(RgbImage, Provenance)> {
        match (&self.reference, &self.index) {
            (Some(path), index) => Ok((
                load_rgb(path)?,
                Provenance::User {
                    path: path.clone(),
                    overridden_index: index.clone(),
                },
            )),
            (None, Some(index_path)) => {
                let index = CorpusIndex::load(index_path)?;
                let entry = index.retrieve(gray0)?;
                let path = index.entry_path(entry);
                Ok((
                    load_rgb(&path)?,
                    Provenance::Retrieved {
                        index: index_path.clone(),
                        entry_id: entry.id,
                        path: entry.path.clone(),
                    },
                ))
            }
            (None, None) => bail!("a reference source is required: pass --reference or --index"),
        }
    }
}

struct Input {
    files: Vec<FrameFile>,
    gray: VideoSequence<Plane<f64>>,
    reference: LabImage<f64>,
    provenance: Provenance,
}

fn prepare(frames_dir: &Path, refs: &ReferenceArgs) -> Result<Input> {
    let (files, video) = read_frames(frames_dir)?;
    let gray = video.map(luminance::<f64>)?;
    let (img, provenance) = refs.load(&gray.frames()[0])?;
    Ok(Input {
        files,
        gray,
        reference: rgb_to_lab(&img),
        provenance,
    })
}

fn to_rgb(video: &VideoSequence<LabImage<f64>>) -> Result<VideoSequence<RgbImage>> {
    let frames: Vec<RgbImage> = video.frames().par_iter().map(lab_to_rgb).collect();
    Ok(VideoSequence::new(frames)?)
}

pub fn cmd_colorize(
    frames_dir: &Path,
    out_dir: &Path,
    refs: &ReferenceArgs,
    resolved: &Resolved,
    overwrite: bool,
) -> Result<RunManifest> {
    let mut cfg = resolved.config.clone();
    if !resolved.mode_explicit {
        cfg.mode = refs.default_mode();
    }
    let input = prepare(frames_dir, refs)?;
    let manifest_path = out_dir.join(MANIFEST_NAME);
    ensure_writable(&manifest_path, overwrite)?;
    for f in &input.files {
        ensure_writable(&out_dir.join(&f.name), overwrite)?;
    }

    let out = to_rgb(&colorize_video(&input.gray, &input.reference, &cfg)?)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    input
        .files
        .par_iter()
        .zip(out.frames())
        .try_for_each(|(f, img)| save_rgb(&out_dir.join(&f.name), img))?;

    let manifest = RunManifest {
        mode: cfg.mode.to_string(),
        frames: input.files.len(),
        input_dir: frames_dir.to_path_buf(),
        reference: input.provenance,
        config: cfg.snapshot(),
    };
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )
    .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!(
        "colorized {} frames ({} mode) into {}",
        manifest.frames,
        manifest.mode,
        out_dir.display()
    );
    Ok(manifest)
}

/// `<parent>/<dir name>_report.json`
pub fn report_path(output_dir: &Path) -> Result<PathBuf> {
    let name = output_dir
        .file_name()
        .with_context(|| format!("{} has no directory name", output_dir.display()))?;
    let mut file = name.to_os_string();
    file.push("_report.json");
    Ok(output_dir.with_file_name(file))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}"))
        .unwrap_or_else(|| "null".into())
}

pub fn cmd_evaluate(
    output_dir: &Path,
    ground_truth_dir: Option<&Path>,
    cfg: &PipelineConfig,
    overwrite: bool,
) -> Result<(PathBuf, MetricsReport)> {
    let path = report_path(output_dir)?;
    ensure_writable(&path, overwrite)?;
    let (_, output) = read_frames(output_dir)?;
    let gt = match ground_truth_dir {
        Some(dir) => {
            let (_, gt) = read_frames(dir)?;
            if gt.len() != output.len() {
                bail!(
                    "frame count mismatch: {} outputs, {} ground truth frames",
                    output.len(),
                    gt.len()
                );
            }
            Some(gt)
        }
        None => None,
    };
    let report = evaluate_report(&output, gt.as_ref(), cfg)?;
    fs::write(&path, report.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    println!("cdc        {}", fmt_metric(report.cdc));
    println!("warp_error {}", fmt_metric(report.warp_error));
    println!("perceptual {}", fmt_metric(report.perceptual));
    println!("frechet    {}", fmt_metric(report.frechet));
    println!("chroma_l1  {}", fmt_metric(report.chroma_l1));
    println!("combined   {:.6}", report.combined);
    println!("report written to {}", path.display());
    Ok((path, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub mode: Mode,
    pub cdc: Option<f64>,
    pub warp_error: Option<f64>,
}

pub fn render_table(rows: &[CompareRow]) -> String {
    let mut s = format!("{:<10} {:>12} {:>12}\n", "mode", "cdc", "warp_error");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>12}",
            r.mode,
            fmt_metric(r.cdc),
            fmt_metric(r.warp_error)
        );
    }
    s
}

/// Colorizes in every mode and tabulates CDC and warp error.
pub fn cmd_compare(
    frames_dir: &Path,
    refs: &ReferenceArgs,
    cfg: &PipelineConfig,
) -> Result<Vec<CompareRow>> {
    let input = prepare(frames_dir, refs)?;
    let rows = Mode::ALL
        .iter()
        .map(|&mode| {
            let run = PipelineConfig {
                mode,
                ..cfg.clone()
            };
            let out = to_rgb(&colorize_video(&input.gray, &input.reference, &run)?)?;
            let report = evaluate_report(&out, None, &run)?;
            Ok(CompareRow {
                mode,
                cdc: report.cdc,
                warp_error: report.warp_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_table(&rows));
    Ok(rows)
}

/// Sizes the global worker pool from `CHROMAFLOW_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CHROMAFLOW_THREADS") {
        let n: usize =
            v.trim().parse().ok().filter(|n| *n > 0).with_context(|| {
                format!("CHROMAFLOW_THREADS must be a positive integer, got `{v}`")
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}
