use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DepthError, HandImage};
use crate::GripState;

/// Temporally continuous recording of hand images (30 Hz) with one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpisode {
    pub person: String,
    pub episode: String,
    images: Vec<HandImage>,
    labels: Vec<GripState>,
}

impl LabeledEpisode {
    pub fn new(
        person: impl Into<String>,
        episode: impl Into<String>,
        images: Vec<HandImage>,
        labels: Vec<GripState>,
    ) -> Result<Self, DepthError> {
        if images.len() != labels.len() {
            return Err(DepthError::InvalidFrame(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(LabeledEpisode {
            person: person.into(),
            episode: episode.into(),
            images,
            labels,
        })
    }

    pub fn images(&self) -> &[HandImage] {
        &self.images
    }

    pub fn labels(&self) -> &[GripState] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// `n` consecutive images labeled by the last one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceWindow<'a> {
    pub images: &'a [HandImage],
    pub label: GripState,
    /// Index of the first image within its episode.
    pub start: usize,
}

/// Stride-1 sliding windows: `len − n + 1` of them.
pub fn make_windows(e: &LabeledEpisode, n: usize) -> Result<Vec<SequenceWindow<'_>>, DepthError> {
    if n == 0 || e.len() < n {
        return Err(DepthError::EpisodeTooShort { len: e.len(), window: n });
    }
    Ok(e.images
        .windows(n)
        .enumerate()
        .map(|(k, images)| SequenceWindow {
            images,
            label: e.labels[k + n - 1],
            start: k,
        })
        .collect())
}

/// Episode indices assigned to each fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoFoldSplit {
    pub fold_a: Vec<usize>,
    pub fold_b: Vec<usize>,
}

/// Splits whole episodes into two folds with equal (±1) episode counts and
/// balanced image counts. Deterministic in `seed`.
pub fn twofold_split(episodes: &[LabeledEpisode], seed: u64) -> Result<TwoFoldSplit, DepthError> {
    if episodes.len() < 2 {
        return Err(DepthError::TooFewEpisodes(episodes.len()));
    }
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // stable: equal lengths keep their shuffled order
    order.sort_by_key(|&i| std::cmp::Reverse(episodes[i].len()));

    let cap_a = episodes.len().div_ceil(2);
    let cap_b = episodes.len() / 2;
    let (mut fold_a, mut fold_b) = (Vec::new(), Vec::new());
    let (mut images_a, mut images_b) = (0usize, 0usize);
    for i in order {
        let to_a = if fold_a.len() == cap_a {
            false
        } else if fold_b.len() == cap_b {
            true
        } else {
            images_a <= images_b
        };
        if to_a {
            fold_a.push(i);
            images_a += episodes[i].len();
        } else {
            fold_b.push(i);
            images_b += episodes[i].len();
        }
    }
    fold_a.sort_unstable();
    fold_b.sort_unstable();
    Ok(TwoFoldSplit { fold_a, fold_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::ImageMode;

    fn blank() -> HandImage {
        HandImage::new(2, 2, ImageMode::Binary, vec![0.0; 4]).unwrap()
    }

    fn episode(len: usize, tag: usize) -> LabeledEpisode {
        let labels = (0..len)
            .map(|i| if (i / 7 + tag).is_multiple_of(2) { GripState::Open } else { GripState::Closed })
            .collect();
        LabeledEpisode::new(format!("p{}", tag / 2), format!("e{tag}"), vec![blank(); len], labels).unwrap()
    }

    #[test]
    fn window_counts_and_labels() {
        let e = episode(100, 0);
        let w = make_windows(&e, 15).unwrap();
        assert_eq!(w.len(), 86);
        for win in &w {
            assert_eq!(win.images.len(), 15);
            assert_eq!(win.label, e.labels()[win.start + 14]);
        }
        let singles = make_windows(&e, 1).unwrap();
        assert_eq!(singles.len(), 100);
        assert!(singles.iter().zip(e.labels()).all(|(w, l)| w.label == *l));
        assert_eq!(
            make_windows(&episode(10, 0), 15),
            Err(DepthError::EpisodeTooShort { len: 10, window: 15 })
        );
    }

    #[test]
    fn split_fourteen_episodes() {
        let eps: Vec<_> = (0..14).map(|k| episode(600 + 37 * k, k)).collect();
        let s = twofold_split(&eps, 7).unwrap();
        assert_eq!((s.fold_a.len(), s.fold_b.len()), (7, 7));
        let mut all: Vec<_> = s.fold_a.iter().chain(&s.fold_b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..14).collect::<Vec<_>>());
        assert_eq!(twofold_split(&eps, 7).unwrap(), s);

        let count = |f: &[usize]| f.iter().map(|&i| eps[i].len()).sum::<usize>() as f64;
        let (a, b) = (count(&s.fold_a), count(&s.fold_b));
        assert!((a - b).abs() / (a + b) < 0.05);

        assert_eq!(twofold_split(&eps[..1], 0), Err(DepthError::TooFewEpisodes(1)));
    }

    #[test]
    fn different_seeds_can_differ() {
        let eps: Vec<_> = (0..14).map(|k| episode(500, k)).collect();
        let splits: std::collections::HashSet<_> =
            (0..8).map(|seed| twofold_split(&eps, seed).unwrap().fold_a).collect();
        assert!(splits.len() > 1);
    }
}
