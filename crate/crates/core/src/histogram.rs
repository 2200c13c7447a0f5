//! Binned coincidence counts on a delay axis, in picoseconds.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("bin width must be positive and finite, got {0} ps")]
    BinWidth(f64),
    #[error("origin must be finite, got {0} ps")]
    Origin(f64),
    #[error("histogram needs at least one bin")]
    Empty,
    #[error("mask range [{start}, {end}) ps is empty or not finite")]
    MaskRange { start: f64, end: f64 },
}

/// Half-open delay interval [start, end) in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeRange {
    pub start_ps: f64,
    pub end_ps: f64,
}

impl TimeRange {
    pub fn new(start_ps: f64, end_ps: f64) -> Result<Self, HistogramError> {
        if start_ps.is_finite() && end_ps.is_finite() && start_ps < end_ps {
            Ok(Self { start_ps, end_ps })
        } else {
            Err(HistogramError::MaskRange {
                start: start_ps,
                end: end_ps,
            })
        }
    }

    /// True when [lo, hi) intersects this range.
    pub fn overlaps(&self, lo: f64, hi: f64) -> bool {
        lo < self.end_ps && hi > self.start_ps
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Acquisition {
    pub duration_s: Option<f64>,
    pub label: String,
    /// Seed of the generating simulation, when there was one.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    bin_width_ps: f64,
    origin_ps: f64,
    counts: Vec<u64>,
    mask: Vec<TimeRange>,
    pub acquisition: Acquisition,
}

impl Histogram {
    pub fn new(bin_width_ps: f64, origin_ps: f64, counts: Vec<u64>) -> Result<Self, HistogramError> {
        if !(bin_width_ps > 0.0 && bin_width_ps.is_finite()) {
            return Err(HistogramError::BinWidth(bin_width_ps));
        }
        if !origin_ps.is_finite() {
            return Err(HistogramError::Origin(origin_ps));
        }
        if counts.is_empty() {
            return Err(HistogramError::Empty);
        }
        Ok(Self {
            bin_width_ps,
            origin_ps,
            counts,
            mask: Vec::new(),
            acquisition: Acquisition::default(),
        })
    }

    pub fn with_mask(mut self, mask: Vec<TimeRange>) -> Self {
        self.mask = mask;
        self
    }

    pub fn bin_width_ps(&self) -> f64 {
        self.bin_width_ps
    }

    pub fn origin_ps(&self) -> f64 {
        self.origin_ps
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mask(&self) -> &[TimeRange] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Left edge of bin `i`.
    pub fn bin_start_ps(&self, i: usize) -> f64 {
        self.origin_ps + i as f64 * self.bin_width_ps
    }

    pub fn bin_center_ps(&self, i: usize) -> f64 {
        self.origin_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    /// Right edge of the last bin.
    pub fn end_ps(&self) -> f64 {
        self.bin_start_ps(self.counts.len())
    }

    /// Index of the bin containing `t_ps`, if any.
    pub fn bin_index(&self, t_ps: f64) -> Option<usize> {
        let x = ((t_ps - self.origin_ps) / self.bin_width_ps).floor();
        if x >= 0.0 && x < self.counts.len() as f64 {
            Some(x as usize)
        } else {
            None
        }
    }

    pub fn is_masked(&self, i: usize) -> bool {
        let lo = self.bin_start_ps(i);
        let hi = self.bin_start_ps(i + 1);
        self.mask.iter().any(|r| r.overlaps(lo, hi))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Same counts and metadata on an axis shifted by `delta_ps`.
    pub fn shifted(&self, delta_ps: f64) -> Self {
        let mut h = self.clone();
        h.origin_ps += delta_ps;
        for r in &mut h.mask {
            r.start_ps += delta_ps;
            r.end_ps += delta_ps;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_geometry() {
        let h = Histogram::new(4.88, 100.0, vec![0; 10]).unwrap();
        assert_eq!(h.bin_center_ps(0), 102.44);
        assert_eq!(h.bin_index(100.0), Some(0));
        assert_eq!(h.bin_index(104.9), Some(1));
        assert_eq!(h.bin_index(99.99), None);
        assert_eq!(h.bin_index(h.end_ps()), None);
    }

    #[test]
    fn mask_overlap_is_half_open() {
        let h = Histogram::new(10.0, 0.0, vec![1; 5])
            .unwrap()
            .with_mask(vec![TimeRange::new(0.0, 20.0).unwrap()]);
        assert!(h.is_masked(0));
        assert!(h.is_masked(1));
        assert!(!h.is_masked(2));
        let partial = h.clone().with_mask(vec![TimeRange::new(0.0, 25.0).unwrap()]);
        assert!(partial.is_masked(2));
    }

    #[test]
    fn rejects_invalid_construction() {
        assert_eq!(Histogram::new(0.0, 0.0, vec![1]), Err(HistogramError::BinWidth(0.0)));
        assert_eq!(Histogram::new(1.0, 0.0, vec![]), Err(HistogramError::Empty));
        assert!(TimeRange::new(5.0, 5.0).is_err());
    }
}
