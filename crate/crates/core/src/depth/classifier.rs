use serde::{Deserialize, Serialize};

use super::{HandImage, SequenceWindow, DEFAULT_WINDOW};
use crate::GripState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub state: GripState,
    /// In `[0, 1]`.
    pub confidence: f64,
}

impl Default for HandState {
    fn default() -> Self {
        HandState {
            state: GripState::Open,
            confidence: 0.0,
        }
    }
}

/// Open/closed classifier over a fixed-length sequence of 50 × 50 hand images.
pub trait HandStateClassifier: Send + Sync {
    /// Number of consecutive images consumed per decision.
    fn window_len(&self) -> usize;

    /// `images.len() == self.window_len()`, oldest first.
    fn classify(&self, images: &[HandImage]) -> HandState;
}

/// Geometric placeholder: compares the foreground fraction of the newest
/// image against a threshold. An open hand covers more of the crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForegroundRatioClassifier {
    pub threshold: f64,
    pub window: usize,
}

impl Default for ForegroundRatioClassifier {
    fn default() -> Self {
        ForegroundRatioClassifier {
            threshold: 0.28,
            window: DEFAULT_WINDOW,
        }
    }
}

impl HandStateClassifier for ForegroundRatioClassifier {
    fn window_len(&self) -> usize {
        self.window
    }

    fn classify(&self, images: &[HandImage]) -> HandState {
        let Some(last) = images.last() else {
            return HandState::default();
        };
        let ratio = last.foreground_ratio();
        let t = self.threshold;
        // ties go to Open
        if ratio >= t {
            HandState {
                state: GripState::Open,
                confidence: if t < 1.0 { ((ratio - t) / (1.0 - t)).clamp(0.0, 1.0) } else { 0.0 },
            }
        } else {
            HandState {
                state: GripState::Closed,
                confidence: ((t - ratio) / t).clamp(0.0, 1.0),
            }
        }
    }
}

/// Runs the default placeholder classifier on a labeled window.
pub fn classify_stub(w: &SequenceWindow<'_>) -> HandState {
    ForegroundRatioClassifier::default().classify(w.images)
}
