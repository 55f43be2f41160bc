//! On-disk hand-image dataset.
//!
//! One directory per episode, named `<person>_<episode>` (the person id is
//! everything before the last underscore), holding `labels.csv` with an
//! `index,label` header and one 50 × 50 binary graymap per frame named
//! `<index:06>.pgm` (0 = background, 255 = hand).

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use thiserror::Error;

use super::{resample_50, DepthError, HandImage, ImageMode, LabeledEpisode, HAND_IMAGE_SIDE};
use crate::GripState;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Depth(#[from] DepthError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn person_of(dir_name: &str) -> &str {
    dir_name.rsplit_once('_').map_or(dir_name, |(p, _)| p)
}

fn frame_name(index: usize) -> String {
    format!("{index:06}.pgm")
}

fn label_name(l: GripState) -> &'static str {
    match l {
        GripState::Open => "open",
        GripState::Closed => "closed",
    }
}

fn read_labels(path: &Path) -> Result<Vec<(String, GripState)>, DatasetError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(malformed(path, format!("row {}: expected 2 columns", i + 2)));
        }
        let label = record[1]
            .parse::<GripState>()
            .map_err(|e| malformed(path, format!("row {}: {e}", i + 2)))?;
        rows.push((record[0].trim().to_string(), label));
    }
    Ok(rows)
}

fn to_gray(img: &HandImage) -> GrayImage {
    GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([if img.get(x as usize, y as usize) > 0.0 { 255 } else { 0 }])
    })
}

fn from_gray(gray: &GrayImage) -> Result<HandImage, DepthError> {
    let pixels = gray.pixels().map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 }).collect();
    HandImage::new(gray.width() as usize, gray.height() as usize, ImageMode::Binary, pixels)
}

fn decode(path: &Path) -> Result<GrayImage, DatasetError> {
    image::open(path)
        .map(|i| i.to_luma8())
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_episode(dir: &Path, e: &LabeledEpisode) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| malformed(&labels_path, e.to_string()))?;
    let csv_err = |e: csv::Error| malformed(&labels_path, e.to_string());
    w.write_record(["index", "label"]).map_err(csv_err)?;
    for (i, (img, label)) in e.images().iter().zip(e.labels()).enumerate() {
        w.write_record([i.to_string().as_str(), label_name(*label)]).map_err(csv_err)?;
        let path = dir.join(frame_name(i));
        to_gray(img)
            .save_with_format(&path, ImageFormat::Pnm)
            .map_err(|source| DatasetError::Image { path, source })?;
    }
    w.flush().map_err(io_err(&labels_path))?;
    Ok(())
}

pub fn load_episode(dir: &Path) -> Result<LabeledEpisode, DatasetError> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| malformed(dir, "episode directory needs a UTF-8 name"))?;
    let labels_path = dir.join("labels.csv");
    let rows = read_labels(&labels_path)?;
    let mut images = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (expected, (index, label)) in rows.into_iter().enumerate() {
        let index: usize = index
            .parse()
            .map_err(|_| malformed(&labels_path, format!("bad index `{index}`")))?;
        if index != expected {
            return Err(malformed(&labels_path, format!("index {index} out of sequence")));
        }
        let img = from_gray(&decode(&dir.join(frame_name(index)))?)?;
        if img.width() != HAND_IMAGE_SIDE || img.height() != HAND_IMAGE_SIDE {
            return Err(malformed(&dir.join(frame_name(index)), "frame is not 50x50"));
        }
        images.push(img);
        labels.push(label);
    }
    Ok(LabeledEpisode::new(person_of(name), name, images, labels)?)
}

fn sorted_subdirs(root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Loads every episode directory under `root`, in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<LabeledEpisode>, DatasetError> {
    sorted_subdirs(root)?.iter().map(|d| load_episode(d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ImportSummary {
    pub episodes: usize,
    pub images: usize,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "bmp", "jpg", "jpeg", "pgm", "pnm"];

fn label_from_name(name: &str) -> Option<GripState> {
    let lower = name.to_ascii_lowercase();
    match (lower.contains("closed") || lower.contains("close"), lower.contains("open")) {
        (true, false) => Some(GripState::Closed),
        (false, true) => Some(GripState::Open),
        _ => None,
    }
}

/// Converts a foreign dataset into the layout above.
///
/// Each subdirectory of `src` is one episode holding image files (any
/// common format, any size, hand bright on dark background), ordered by file
/// name. Labels come from a `labels.csv` whose first column is either the
/// frame position or the file name, or failing that from an `open` /
/// `closed` token in each file name. Frames are binarized at mid-gray and
/// resampled to 50 × 50.
pub fn import_dataset(src: &Path, dst: &Path) -> Result<ImportSummary, DatasetError> {
    let mut summary = ImportSummary::default();
    for dir in sorted_subdirs(src)? {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            continue;
        }

        let file_name = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let labels_path = dir.join("labels.csv");
        let labels: Vec<GripState> = if labels_path.exists() {
            let rows = read_labels(&labels_path)?;
            files
                .iter()
                .enumerate()
                .map(|(pos, f)| {
                    let name = file_name(f);
                    let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    rows.iter()
                        .find(|(key, _)| *key == name || key == stem)
                        .or_else(|| rows.iter().find(|(key, _)| key.parse::<usize>().ok() == Some(pos)))
                        .map(|(_, l)| *l)
                        .ok_or_else(|| malformed(&labels_path, format!("no label for {name}")))
                })
                .collect::<Result<_, _>>()?
        } else {
            files
                .iter()
                .map(|f| label_from_name(&file_name(f)).ok_or_else(|| malformed(f, "cannot infer label from name")))
                .collect::<Result<_, _>>()?
        };

        let images = files
            .iter()
            .map(|f| Ok(resample_50(&from_gray(&decode(f)?)?)))
            .collect::<Result<Vec<_>, DatasetError>>()?;
        let name = file_name(&dir);
        let episode = LabeledEpisode::new(person_of(&name), name.clone(), images, labels)?;
        summary.episodes += 1;
        summary.images += episode.len();
        save_episode(&dst.join(&name), &episode)?;
    }
    Ok(summary)
}
