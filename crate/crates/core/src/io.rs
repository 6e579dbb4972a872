//! Image files and numbered frame directories.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::color::RgbImage;
use crate::error::{Error, Result};
use crate::propagation::VideoSequence;

/// Run manifest written into colorized output directories; skipped when listing frames.
pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Digits in the numeric frame suffix.
pub const FRAME_DIGITS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameFile {
    pub number: u64,
    pub name: String,
    pub path: PathBuf,
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    RgbImage::new(w, h, pixels)
}

/// Writes an image; the format follows the extension.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let kind = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if kind.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();
    Ok(paths)
}

fn frame_number(name: &str) -> Option<u64> {
    let stem = name.strip_suffix(".png")?;
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits != FRAME_DIGITS {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

/// Frames of a directory, sorted by their numeric suffix.
///
/// Every file other than the run manifest must be `<prefix>NNNNNN.png`.
pub fn list_frames(dir: &Path) -> Result<Vec<FrameFile>> {
    let mut frames = Vec::new();
    for path in read_dir_sorted(dir)? {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if name == MANIFEST_NAME {
            continue;
        }
        let number = frame_number(&name).ok_or_else(|| {
            Error::Frames(format!(
                "`{name}` in {} is not a frame file (expected a {FRAME_DIGITS}-digit suffix and .png)",
                dir.display()
            ))
        })?;
        frames.push(FrameFile { number, name, path });
    }
    if frames.is_empty() {
        return Err(Error::Frames(format!("{} holds no frames", dir.display())));
    }
    frames.sort_by_key(|f| f.number);
    if let Some(pair) = frames.windows(2).find(|p| p[0].number == p[1].number) {
        return Err(Error::Frames(format!(
            "`{}` and `{}` share a frame number",
            pair[0].name, pair[1].name
        )));
    }
    Ok(frames)
}

/// Loads a frame directory as a video.
pub fn read_frames(dir: &Path) -> Result<(Vec<FrameFile>, VideoSequence<RgbImage>)> {
    let files = list_frames(dir)?;
    let images = files
        .par_iter()
        .map(|f| load_rgb(&f.path))
        .collect::<Result<Vec<_>>>()?;
    let first = images[0].dims();
    if let Some((f, img)) = files.iter().zip(&images).find(|(_, i)| i.dims() != first) {
        return Err(Error::Frames(format!(
            "`{}` is {}x{}, expected {}x{}",
            f.name,
            img.width(),
            img.height(),
            first.0,
            first.1
        )));
    }
    Ok((files, VideoSequence::new(images)?))
}

/// Image files (png, jpg, jpeg) directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                .unwrap_or(false)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_names() {
        assert_eq!(frame_number("frame_000012.png"), Some(12));
        assert_eq!(frame_number("000003.png"), Some(3));
        assert_eq!(frame_number("frame_12.png"), None);
        assert_eq!(frame_number("frame_0000012.png"), None);
        assert_eq!(frame_number("frame_000012.jpg"), None);
    }

    #[test]
    fn png_roundtrip_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(5, 4, |x, y| [x as u8 * 40, y as u8 * 60, 7]).unwrap();
        for n in [10, 2, 1] {
            save_rgb(&dir.path().join(format!("f_{n:06}.png")), &img).unwrap();
        }
        let (files, video) = read_frames(dir.path()).unwrap();
        assert_eq!(
            files.iter().map(|f| f.number).collect::<Vec<_>>(),
            vec![1, 2, 10]
        );
        assert_eq!(video.frames()[2], img);

        fs::write(dir.path().join(MANIFEST_NAME), "{}").unwrap();
        assert_eq!(list_frames(dir.path()).unwrap().len(), 3);
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert!(matches!(list_frames(dir.path()), Err(Error::Frames(_))));
    }

    #[test]
    fn mixed_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_rgb(
            &dir.path().join("a_000001.png"),
            &RgbImage::filled(4, 4, [1, 2, 3]).unwrap(),
        )
        .unwrap();
        save_rgb(
            &dir.path().join("a_000002.png"),
            &RgbImage::filled(5, 4, [1, 2, 3]).unwrap(),
        )
        .unwrap();
        assert!(read_frames(dir.path()).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(list_frames(empty.path()).is_err());
    }
}
