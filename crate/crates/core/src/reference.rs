//! Stage-1 reference: corpus filtering, PCA retrieval index and chroma
//! transfer onto the first frame.
//!
//! # Index file
//!
//! Plain UTF-8 text, one record per line, fields separated by single spaces.
//! Floats use Rust's shortest round-trip exponent form, so a save/load cycle
//! is bit-exact.
//!
//! ```text
//! chromaflow-index v1
//! root <absolute corpus directory>
//! config <key>=<value>            one line per index parameter
//! basis <input_dim> <n_components>
//! mean <input_dim floats>
//! component <input_dim floats>    n_components lines
//! explained <n_components floats>
//! entries <count>
//! entry <id> <width> <height> <colorfulness> <n_components floats>
//! path <path relative to root>    follows each entry line
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::color::{rgb_to_lab, LabImage, Plane, RgbImage};
use crate::config::{PipelineConfig, INDEX_KEYS};
use crate::error::{Error, Result};
use crate::features::{extract_pyramid, flatten_embedding, mean_vector, pca_fit, PcaBasis};
use crate::io::{list_images, load_rgb};
use crate::propagation::transfer_reference;
use crate::scalar::Real;

pub const INDEX_MAGIC: &str = "chromaflow-index v1";

/// Chroma magnitude below which every pixel counts as neutral.
pub const GRAYSCALE_CHROMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    LowResolution,
    Grayscale,
    Monotonous,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::LowResolution => "low resolution",
            RejectReason::Grayscale => "grayscale",
            RejectReason::Monotonous => "monotonous colors",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    Accept { colorfulness: f64 },
    Reject(RejectReason),
}

/// `std(a) + std(b)` over all pixels.
pub fn colorfulness(lab: &LabImage<f64>) -> f64 {
    lab.a().std_dev() + lab.b().std_dev()
}

pub fn filter_image(img: &RgbImage, min_side: usize, min_colorfulness: f64) -> Verdict {
    if img.width().min(img.height()) < min_side {
        return Verdict::Reject(RejectReason::LowResolution);
    }
    let lab = rgb_to_lab::<f64>(img);
    let peak = lab
        .a()
        .data()
        .iter()
        .zip(lab.b().data())
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0, f64::max);
    if peak < GRAYSCALE_CHROMA {
        return Verdict::Reject(RejectReason::Grayscale);
    }
    let c = colorfulness(&lab);
    if c < min_colorfulness {
        return Verdict::Reject(RejectReason::Monotonous);
    }
    Verdict::Accept { colorfulness: c }
}

/// Settings an index is built with; stored in the index file.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexParams {
    pub feature_levels: usize,
    pub n_components: usize,
    pub retrieval_size: usize,
    pub min_side: usize,
    pub min_colorfulness: f64,
}

impl IndexParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            feature_levels: cfg.feature_levels,
            n_components: cfg.n_components,
            retrieval_size: cfg.retrieval_size,
            min_side: cfg.min_side,
            min_colorfulness: cfg.min_colorfulness,
        }
    }

    fn to_config(&self) -> PipelineConfig {
        PipelineConfig {
            feature_levels: self.feature_levels,
            n_components: self.n_components,
            retrieval_size: self.retrieval_size,
            min_side: self.min_side,
            min_colorfulness: self.min_colorfulness,
            ..PipelineConfig::default()
        }
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let cfg = self.to_config();
        INDEX_KEYS
            .iter()
            .map(|k| (k.to_string(), cfg.get(k).expect("index key")))
            .collect()
    }
}

/// Retrieval descriptor of a luminance plane, before projection.
pub fn retrieval_descriptor(l: &Plane<f64>, params: &IndexParams) -> Result<Vec<f64>> {
    let side = params.retrieval_size;
    let small = l.resize_area(side, side)?;
    Ok(flatten_embedding(&extract_pyramid(
        &small,
        params.feature_levels,
    )?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: usize,
    /// Relative to the index root.
    pub path: PathBuf,
    pub embedding: Vec<f64>,
    pub colorfulness: f64,
    pub resolution: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub params: IndexParams,
    pub basis: PcaBasis<f64>,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterSummary {
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl FilterSummary {
    pub fn rejected_for(&self, reason: RejectReason) -> usize {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }
}

impl fmt::Display for FilterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "accepted {}; rejected", self.accepted)?;
        for (i, r) in [
            RejectReason::Grayscale,
            RejectReason::LowResolution,
            RejectReason::Monotonous,
        ]
        .iter()
        .enumerate()
        {
            let sep = if i == 0 { " " } else { ", " };
            write!(f, "{sep}{r} {}", self.rejected_for(*r))?;
        }
        Ok(())
    }
}

/// Basis for a corpus without variance: mean plus leading unit vectors.
fn degenerate_basis(samples: &[Vec<f64>], n: usize) -> PcaBasis<f64> {
    let mean = mean_vector(samples);
    let components = (0..n)
        .map(|i| {
            let mut e = vec![0.0; mean.len()];
            e[i] = 1.0;
            e
        })
        .collect();
    PcaBasis {
        mean,
        components,
        explained_fraction: vec![0.0; n],
    }
}

/// Filters and embeds every image directly inside `dir`.
pub fn build_index(dir: &Path, cfg: &PipelineConfig) -> Result<(CorpusIndex, FilterSummary)> {
    let params = IndexParams::from_config(cfg);
    let root = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let paths = list_images(&root)?;
    let scanned = paths
        .par_iter()
        .map(|p| {
            let img = load_rgb(p)?;
            Ok(
                match filter_image(&img, params.min_side, params.min_colorfulness) {
                    Verdict::Accept { colorfulness } => {
                        let l = rgb_to_lab::<f64>(&img).into_parts().0;
                        Ok((
                            p,
                            img.dims(),
                            colorfulness,
                            retrieval_descriptor(&l, &params)?,
                        ))
                    }
                    Verdict::Reject(r) => Err(r),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = FilterSummary::default();
    let mut accepted = Vec::new();
    for item in scanned {
        match item {
            Ok(a) => accepted.push(a),
            Err(r) => *summary.rejected.entry(r).or_insert(0) += 1,
        }
    }
    summary.accepted = accepted.len();
    let needed = params.n_components + 1;
    if accepted.len() < needed {
        return Err(Error::TooFewAccepted {
            needed,
            accepted: accepted.len(),
            summary: summary.to_string(),
        });
    }

    let samples: Vec<Vec<f64>> = accepted.iter().map(|a| a.3.clone()).collect();
    let basis = match pca_fit(&samples, params.n_components) {
        Err(Error::ZeroVariance) => degenerate_basis(&samples, params.n_components),
        other => other?,
    };
    let entries = accepted
        .into_iter()
        .enumerate()
        .map(|(id, (path, resolution, colorfulness, desc))| {
            Ok(CorpusEntry {
                id,
                path: path.strip_prefix(&root).unwrap_or(path).to_path_buf(),
                embedding: basis.project(&desc)?,
                colorfulness,
                resolution,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        CorpusIndex {
            root,
            params,
            basis,
            entries,
        },
        summary,
    ))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb).sqrt()
    } else {
        0.0
    }
}

impl CorpusIndex {
    pub fn entry_path(&self, entry: &CorpusEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Whether a stored entry still passes the stored filter thresholds.
    pub fn entry_passes(&self, entry: &CorpusEntry) -> bool {
        entry.resolution.0.min(entry.resolution.1) >= self.params.min_side
            && entry.colorfulness >= self.params.min_colorfulness
            && entry.embedding.len() == self.basis.n_components()
    }

    pub fn embed(&self, gray: &Plane<f64>) -> Result<Vec<f64>> {
        self.basis
            .project(&retrieval_descriptor(gray, &self.params)?)
    }

    /// Entry with the largest cosine similarity to `gray`; ties go to the smallest id.
    pub fn retrieve(&self, gray: &Plane<f64>) -> Result<&CorpusEntry> {
        retrieve(self, gray)
    }

    pub fn to_text(&self) -> String {
        let floats = |v: &[f64]| v.iter().map(|x| format!(" {x:e}")).collect::<String>();
        let mut s = format!("{INDEX_MAGIC}\nroot {}\n", self.root.display());
        for (k, v) in self.params.snapshot() {
            s += &format!("config {k}={v}\n");
        }
        s += &format!(
            "basis {} {}\n",
            self.basis.input_dim(),
            self.basis.n_components()
        );
        s += &format!("mean{}\n", floats(&self.basis.mean));
        for c in &self.basis.components {
            s += &format!("component{}\n", floats(c));
        }
        s += &format!("explained{}\n", floats(&self.basis.explained_fraction));
        s += &format!("entries {}\n", self.entries.len());
        for e in &self.entries {
            s += &format!(
                "entry {} {} {} {:e}{}\npath {}\n",
                e.id,
                e.resolution.0,
                e.resolution.1,
                e.colorfulness,
                floats(&e.embedding),
                e.path.display()
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| {
                Error::IndexFormat(format!("unexpected end of file, expected {what}"))
            })
        };
        if next("header")? != INDEX_MAGIC {
            return Err(Error::IndexFormat(format!(
                "missing `{INDEX_MAGIC}` header"
            )));
        }
        let root = PathBuf::from(field(next("root")?, "root")?);
        let mut cfg = PipelineConfig::default();
        let mut line = next("config")?;
        while let Some(kv) = line.strip_prefix("config ") {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::IndexFormat(format!("bad config line `{line}`")))?;
            if !INDEX_KEYS.contains(&k) {
                return Err(Error::IndexFormat(format!("unexpected config key `{k}`")));
            }
            cfg.set(k, v)
                .map_err(|e| Error::IndexFormat(e.to_string()))?;
            line = next("basis")?;
        }
        let dims: Vec<usize> = numbers(field(line, "basis")?)?;
        let [dim, n] = dims[..] else {
            return Err(Error::IndexFormat("basis line needs two sizes".into()));
        };
        let mean = floats_exact(field(next("mean")?, "mean")?, dim)?;
        let components = (0..n)
            .map(|_| floats_exact(field(next("component")?, "component")?, dim))
            .collect::<Result<Vec<_>>>()?;
        let explained_fraction = floats_exact(field(next("explained")?, "explained")?, n)?;
        let count: usize = field(next("entries")?, "entries")?
            .parse()
            .map_err(|_| Error::IndexFormat("bad entry count".into()))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let head: Vec<&str> = field(next("entry")?, "entry")?.split(' ').collect();
            if head.len() != 4 + n {
                return Err(Error::IndexFormat(format!(
                    "entry line has {} fields, expected {}",
                    head.len(),
                    4 + n
                )));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::IndexFormat(format!("bad integer `{s}`")))
            };
            let path = PathBuf::from(field(next("path")?, "path")?);
            entries.push(CorpusEntry {
                id: int(head[0])?,
                resolution: (int(head[1])?, int(head[2])?),
                colorfulness: float(head[3])?,
                embedding: head[4..].iter().map(|s| float(s)).collect::<Result<_>>()?,
                path,
            });
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::IndexFormat("trailing content".into()));
        }
        if entries.is_empty() {
            return Err(Error::IndexFormat("index has no entries".into()));
        }
        Ok(Self {
            root,
            params: IndexParams::from_config(&cfg),
            basis: PcaBasis {
                mean,
                components,
                explained_fraction,
            },
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn field<'a>(line: &'a str, tag: &str) -> Result<&'a str> {
    line.strip_prefix(tag)
        .and_then(|rest| rest.strip_prefix(' ').or((rest.is_empty()).then_some("")))
        .ok_or_else(|| Error::IndexFormat(format!("expected `{tag}` line, found `{line}`")))
}

fn float(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::IndexFormat(format!("bad float `{s}`")))
}

fn numbers<N: std::str::FromStr>(s: &str) -> Result<Vec<N>> {
    s.split(' ')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::IndexFormat(format!("bad number `{t}`")))
        })
        .collect()
}

fn floats_exact(s: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = if s.is_empty() {
        Vec::new()
    } else {
        numbers(s)?
    };
    if v.len() != n {
        return Err(Error::IndexFormat(format!(
            "expected {n} values, found {}",
            v.len()
        )));
    }
    Ok(v)
}

pub fn retrieve<'a>(index: &'a CorpusIndex, gray: &Plane<f64>) -> Result<&'a CorpusEntry> {
    if index.entries.is_empty() {
        return Err(Error::Empty("corpus index has no entries"));
    }
    let q = index.embed(gray)?;
    let mut best = &index.entries[0];
    let mut best_score = cosine(&q, &best.embedding);
    for e in &index.entries[1..] {
        let s = cosine(&q, &e.embedding);
        if s > best_score || (s == best_score && e.id < best.id) {
            best = e;
            best_score = s;
        }
    }
    Ok(best)
}

/// Colorized frame 0: chroma transferred from `retrieved` onto `gray0`.
pub fn make_reference<T: Real>(
    gray0: &Plane<T>,
    retrieved: &RgbImage,
    cfg: &PipelineConfig,
) -> Result<LabImage<T>> {
    transfer_reference(gray0, &rgb_to_lab(retrieved), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_rgb;

    fn hues(w: usize, h: usize, seed: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let t = (x * 7 + y * 3 + seed * 37) % 256;
            [
                t as u8,
                ((x * 255) / w) as u8,
                (((y + seed * 11) * 255) / h % 256) as u8,
            ]
        })
        .unwrap()
    }

    #[test]
    fn filters() {
        let gray = RgbImage::from_fn(160, 160, |x, _| [x as u8; 3]).unwrap();
        assert_eq!(
            filter_image(&gray, 128, 8.0),
            Verdict::Reject(RejectReason::Grayscale)
        );
        assert_eq!(
            filter_image(&hues(32, 32, 0), 128, 8.0),
            Verdict::Reject(RejectReason::LowResolution)
        );
        let tint = RgbImage::filled(160, 160, [200, 40, 40]).unwrap();
        assert_eq!(
            filter_image(&tint, 128, 8.0),
            Verdict::Reject(RejectReason::Monotonous)
        );
        match filter_image(&hues(160, 160, 1), 128, 8.0) {
            Verdict::Accept { colorfulness } => assert!(colorfulness >= 8.0),
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn index_build_roundtrip_and_retrieval() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..7 {
            save_rgb(
                &dir.path().join(format!("img{i:02}.png")),
                &hues(130, 140, i),
            )
            .unwrap();
        }
        save_rgb(
            &dir.path().join("gray.png"),
            &RgbImage::filled(130, 130, [90; 3]).unwrap(),
        )
        .unwrap();
        let cfg = PipelineConfig {
            n_components: 4,
            ..PipelineConfig::default()
        };
        let (index, summary) = build_index(dir.path(), &cfg).unwrap();
        assert_eq!(index.entries.len(), 7);
        assert_eq!(summary.rejected_for(RejectReason::Grayscale), 1);
        assert!(index.entries.iter().all(|e| index.entry_passes(e)));

        let text = index.to_text();
        let back = CorpusIndex::from_text(&text).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.to_text(), text);
        let (again, _) = build_index(dir.path(), &cfg).unwrap();
        assert_eq!(again.to_text(), text);

        let query = rgb_to_lab::<f64>(&hues(130, 140, 3)).into_parts().0;
        assert_eq!(
            index.retrieve(&query).unwrap().path,
            PathBuf::from("img03.png")
        );
    }

    #[test]
    fn identical_corpus_shares_embedding() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5 {
            save_rgb(&dir.path().join(format!("same{i}.png")), &hues(128, 128, 2)).unwrap();
        }
        let cfg = PipelineConfig {
            n_components: 3,
            ..PipelineConfig::default()
        };
        let (index, _) = build_index(dir.path(), &cfg).unwrap();
        assert!(index
            .entries
            .windows(2)
            .all(|p| p[0].embedding == p[1].embedding));
        let q = Plane::filled(128, 128, 40.0).unwrap();
        assert_eq!(index.retrieve(&q).unwrap().id, 0);
    }

    #[test]
    fn too_few_accepted() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            save_rgb(
                &dir.path().join(format!("g{i}.png")),
                &RgbImage::filled(130, 130, [i as u8 * 50; 3]).unwrap(),
            )
            .unwrap();
        }
        match build_index(dir.path(), &PipelineConfig::default()) {
            Err(Error::TooFewAccepted {
                accepted: 0,
                summary,
                ..
            }) => assert!(summary.contains("grayscale 3")),
            other => panic!("{other:?}"),
        }
    }

    fn one_entry_index(embeddings: Vec<Vec<f64>>) -> CorpusIndex {
        let dim = 160;
        let n = embeddings[0].len();
        CorpusIndex {
            root: PathBuf::from("/corpus"),
            params: IndexParams {
                n_components: n,
                ..IndexParams::from_config(&PipelineConfig::default())
            },
            basis: PcaBasis {
                mean: vec![0.0; dim],
                components: (0..n)
                    .map(|i| {
                        let mut e = vec![0.0; dim];
                        e[i] = 1.0;
                        e
                    })
                    .collect(),
                explained_fraction: vec![0.5; n],
            },
            entries: embeddings
                .into_iter()
                .enumerate()
                .map(|(id, embedding)| CorpusEntry {
                    id,
                    path: PathBuf::from(format!("{id}.png")),
                    embedding,
                    colorfulness: 10.0,
                    resolution: (128, 128),
                })
                .collect(),
        }
    }

    #[test]
    fn retrieval_cases() {
        let q = Plane::from_fn(64, 64, |x, y| ((x * 13 + y * 7) % 50) as f64 + 20.0).unwrap();
        let single = one_entry_index(vec![vec![0.3, -0.2]]);
        assert_eq!(single.retrieve(&q).unwrap().id, 0);

        let emb = single.embed(&q).unwrap();
        let orthogonal = vec![-emb[1], emb[0]];
        let two = one_entry_index(vec![orthogonal, emb.clone()]);
        assert_eq!(two.retrieve(&q).unwrap().id, 1);

        let tied = one_entry_index(vec![emb.clone(), emb]);
        assert_eq!(tied.retrieve(&q).unwrap().id, 0);
    }

    #[test]
    fn make_reference_keeps_luminance() {
        let img = hues(64, 64, 4);
        let lab = rgb_to_lab::<f64>(&img);
        let cfg = PipelineConfig::default();
        let r = make_reference(lab.l(), &img, &cfg).unwrap();
        assert_eq!(r.l(), lab.l());
        assert!(r.chroma().mean_abs_diff(lab.chroma()).unwrap() < 2.0);

        let flat = RgbImage::from_fn(64, 64, |x, y| [((x * 3 + y) % 256) as u8; 3]).unwrap();
        let g = make_reference(lab.l(), &flat, &cfg).unwrap();
        assert!(g
            .a()
            .data()
            .iter()
            .chain(g.b().data())
            .all(|v| v.abs() < 1e-6));
    }
}
