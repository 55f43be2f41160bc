//! Depth-image hand preprocessing: crop around the projected hand joint,
//! depth-threshold segmentation, binarization and resampling to the fixed
//! classifier input size. Sequence assembly and the classifier boundary live
//! in the submodules.

mod classifier;
pub mod dataset;
mod sequence;

pub use classifier::{classify_stub, ForegroundRatioClassifier, HandState, HandStateClassifier};
pub use sequence::{make_windows, twofold_split, LabeledEpisode, SequenceWindow, TwoFoldSplit};

use thiserror::Error;

/// Crop-size proportionality constant (pixels · meters).
pub const BOX_SCALE: f64 = 60.0;
/// Smallest crop side in pixels.
pub const MIN_BOX_SIDE: usize = 8;
/// Default segmentation depth band behind the closest hand point (meters).
pub const DEFAULT_THRESHOLD: f64 = 0.2;
/// Classifier input side.
pub const HAND_IMAGE_SIDE: usize = 50;
/// Default sequence length for windowed classification.
pub const DEFAULT_WINDOW: usize = 15;

const MIN_HAND_DEPTH: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("invalid hand depth {0} m")]
    InvalidDepth(f64),
    #[error("crop center ({x}, {y}) lies outside the {width}x{height} frame")]
    CenterOutOfFrame { x: i64, y: i64, width: usize, height: usize },
    #[error("hand region has no valid depth samples")]
    EmptyHandRegion,
    #[error("episode has {len} images, shorter than window {window}")]
    EpisodeTooShort { len: usize, window: usize },
    #[error("need at least 2 episodes to split, got {0}")]
    TooFewEpisodes(usize),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

/// Row-major depth image in meters; `0` marks pixels without a return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, DepthError> {
        if data.len() != width * height {
            return Err(DepthError::InvalidFrame(format!(
                "{}x{} frame with {} samples",
                width,
                height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(DepthError::InvalidFrame(format!("depth value {v}")));
        }
        Ok(DepthFrame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthFrame::new(width, height, vec![value; width * height]).expect("valid fill value")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn closest(&self) -> Option<f64> {
        self.data
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// Values in {0, 1}.
    Binary,
    /// Depth in meters.
    Grayscale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandImage {
    width: usize,
    height: usize,
    mode: ImageMode,
    pixels: Vec<f64>,
}

impl HandImage {
    pub fn new(width: usize, height: usize, mode: ImageMode, pixels: Vec<f64>) -> Result<Self, DepthError> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(DepthError::InvalidFrame(format!(
                "{}x{} image with {} pixels",
                width,
                height,
                pixels.len()
            )));
        }
        if mode == ImageMode::Binary && pixels.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(DepthError::InvalidFrame("binary image with non 0/1 pixel".into()));
        }
        Ok(HandImage {
            width,
            height,
            mode,
            pixels,
        })
    }

    /// Grayscale view of a (segmented) depth crop.
    pub fn grayscale(frame: &DepthFrame) -> Self {
        HandImage {
            width: frame.width,
            height: frame.height,
            mode: ImageMode::Grayscale,
            pixels: frame.data.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mode(&self) -> ImageMode {
        self.mode
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Fraction of strictly positive pixels.
    pub fn foreground_ratio(&self) -> f64 {
        self.pixels.iter().filter(|v| **v > 0.0).count() as f64 / self.pixels.len() as f64
    }
}

/// Pixel coordinates in the depth image (may fall outside it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pixel {
    pub x: i64,
    pub y: i64,
}

/// Crop side in pixels for a hand at `depth` meters: `round(60 / depth)`,
/// at least 8 and at most `max_side`.
pub fn hand_box_side(depth: f64, max_side: usize) -> Result<usize, DepthError> {
    if !(depth.is_finite() && depth > MIN_HAND_DEPTH) {
        return Err(DepthError::InvalidDepth(depth));
    }
    let side = (BOX_SCALE / depth).round() as usize;
    Ok(side.max(MIN_BOX_SIDE).min(max_side))
}

/// `side × side` window whose center pixel is `center` (for even sides the
/// center is the lower-right of the middle four). Out-of-frame pixels read as 0.
pub fn crop_hand(frame: &DepthFrame, center: Pixel, side: usize) -> Result<DepthFrame, DepthError> {
    let inside = |v: i64, n: usize| v >= 0 && (v as usize) < n;
    if !inside(center.x, frame.width) || !inside(center.y, frame.height) {
        return Err(DepthError::CenterOutOfFrame {
            x: center.x,
            y: center.y,
            width: frame.width,
            height: frame.height,
        });
    }
    let half = (side / 2) as i64;
    let (x0, y0) = (center.x - half, center.y - half);
    let mut data = vec![0.0; side * side];
    for (row, chunk) in data.chunks_exact_mut(side).enumerate() {
        let y = y0 + row as i64;
        if !inside(y, frame.height) {
            continue;
        }
        for (col, out) in chunk.iter_mut().enumerate() {
            let x = x0 + col as i64;
            if inside(x, frame.width) {
                *out = frame.get(x as usize, y as usize);
            }
        }
    }
    Ok(DepthFrame {
        width: side,
        height: side,
        data,
    })
}

/// Keeps pixels within `threshold` meters of the closest valid pixel and
/// zeroes everything further away.
pub fn threshold_segment(img: &DepthFrame, threshold: f64) -> Result<DepthFrame, DepthError> {
    let cutoff = img.closest().ok_or(DepthError::EmptyHandRegion)? + threshold;
    let data = img
        .data
        .iter()
        .map(|&v| if v > cutoff { 0.0 } else { v })
        .collect();
    Ok(DepthFrame {
        width: img.width,
        height: img.height,
        data,
    })
}

/// 1 for valid pixels within `threshold` of the closest one, else 0.
pub fn binarize(img: &DepthFrame, threshold: f64) -> Result<HandImage, DepthError> {
    let cutoff = img.closest().ok_or(DepthError::EmptyHandRegion)? + threshold;
    let pixels = img
        .data
        .iter()
        .map(|&v| if v > 0.0 && v <= cutoff { 1.0 } else { 0.0 })
        .collect();
    Ok(HandImage {
        width: img.width,
        height: img.height,
        mode: ImageMode::Binary,
        pixels,
    })
}

/// Nearest-neighbour resample to 50 × 50 (sampling at pixel centers).
pub fn resample_50(img: &HandImage) -> HandImage {
    resample(img, HAND_IMAGE_SIDE, HAND_IMAGE_SIDE)
}

pub fn resample(img: &HandImage, width: usize, height: usize) -> HandImage {
    let pick = |i: usize, src: usize, dst: usize| (((2 * i + 1) * src) / (2 * dst)).min(src - 1);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = pick(y, img.height, height);
        for x in 0..width {
            pixels.push(img.get(pick(x, img.width, width), sy));
        }
    }
    HandImage {
        width,
        height,
        mode: img.mode,
        pixels,
    }
}
