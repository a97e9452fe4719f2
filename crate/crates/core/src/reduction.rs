//! IERFH reduction: a 1-hour segment becomes the inverted relative-frequency
//! histogram of its samples over the sensor's measurement range.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const IERFH_BINS: usize = 512;
pub const SEGMENT_SECONDS: f64 = 3600.0;

/// One raw sensor segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSegment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    /// Nominal segment duration; the expected sample count is `duration_s * sample_rate_hz`.
    pub duration_s: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub channel_id: u32,
    pub hour_index: u32,
}

impl TimeSeriesSegment {
    /// A one-hour segment.
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, range_min: f64, range_max: f64) -> Result<Self> {
        Self::with_duration(samples, sample_rate_hz, SEGMENT_SECONDS, range_min, range_max)
    }

    pub fn with_duration(
        samples: Vec<f64>,
        sample_rate_hz: f64,
        duration_s: f64,
        range_min: f64,
        range_max: f64,
    ) -> Result<Self> {
        if !(range_min < range_max) || !range_min.is_finite() || !range_max.is_finite() {
            return Err(Error::Config(format!(
                "measurement range [{range_min}, {range_max}] is empty"
            )));
        }
        if !(sample_rate_hz > 0.0) || !(duration_s > 0.0) {
            return Err(Error::Config(format!(
                "sample rate {sample_rate_hz} Hz and duration {duration_s} s must be positive"
            )));
        }
        Ok(TimeSeriesSegment {
            samples,
            sample_rate_hz,
            duration_s,
            range_min,
            range_max,
            channel_id: 0,
            hour_index: 0,
        })
    }

    pub fn with_provenance(mut self, channel_id: u32, hour_index: u32) -> Self {
        self.channel_id = channel_id;
        self.hour_index = hour_index;
        self
    }

    pub fn expected_len(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

/// 512-bin IERFH feature with its source.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub channel_id: u32,
    pub hour_index: u32,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, channel_id: u32, hour_index: u32) -> Result<Self> {
        if values.len() != IERFH_BINS {
            return Err(Error::dimension("feature vector", IERFH_BINS, values.len()));
        }
        Ok(FeatureVector {
            values,
            channel_id,
            hour_index,
        })
    }
}

/// Bin index for `x`: bin `i` covers `[min + i*w, min + (i+1)*w)`, the last
/// bin is closed on the right, and out-of-range values clamp to the edges.
pub fn bin_index(x: f64, range_min: f64, range_max: f64) -> usize {
    let w = (range_max - range_min) / IERFH_BINS as f64;
    let pos = ((x - range_min) / w).floor();
    if pos < 0.0 {
        0
    } else if pos >= (IERFH_BINS - 1) as f64 {
        IERFH_BINS - 1
    } else {
        pos as usize
    }
}

/// Per-bin sample counts.
pub fn histogram(segment: &TimeSeriesSegment) -> Result<Vec<u64>> {
    if segment.samples.is_empty() {
        return Err(Error::MissingData(format!(
            "segment (channel {}, hour {}) has no samples",
            segment.channel_id, segment.hour_index
        )));
    }
    let mut counts = vec![0u64; IERFH_BINS];
    for (i, &x) in segment.samples.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Numeric(format!("sample {i} is not finite ({x})")));
        }
        counts[bin_index(x, segment.range_min, segment.range_max)] += 1;
    }
    Ok(counts)
}

/// `g_i = 1 - count_i / N` over 512 equal-width bins spanning the range.
pub fn ierfh(segment: &TimeSeriesSegment) -> Result<FeatureVector> {
    let counts = histogram(segment)?;
    let n = segment.samples.len() as f64;
    let values = counts.iter().map(|&c| 1.0 - c as f64 / n).collect();
    FeatureVector::new(values, segment.channel_id, segment.hour_index)
}

/// True when fewer samples than expected were recorded.
pub fn detect_missing(segment: &TimeSeriesSegment) -> bool {
    segment.samples.len() < segment.expected_len()
}

/// Raw segment as CSV rows `time,value` with a header line.
pub fn write_segment_csv<W: Write>(segment: &TimeSeriesSegment, w: &mut W) -> Result<()> {
    writeln!(w, "time,value")?;
    let dt = 1.0 / segment.sample_rate_hz;
    for (i, v) in segment.samples.iter().enumerate() {
        writeln!(w, "{},{}", i as f64 * dt, v)?;
    }
    Ok(())
}

/// Reads the `value` column of a `time,value` CSV (header optional).
pub fn read_segment_values<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if lineno == 0 => continue,
            Err(_) => {
                return Err(Error::Input(format!(
                    "line {}: cannot parse '{field}' as a number",
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn seg(samples: Vec<f64>) -> TimeSeriesSegment {
        TimeSeriesSegment::new(samples, 1.0, -1.0, 1.0).unwrap()
    }

    #[test]
    fn point_mass_at_zero() {
        let f = ierfh(&seg(vec![0.0; 100])).unwrap();
        let zero_bin = bin_index(0.0, -1.0, 1.0);
        assert_eq!(zero_bin, 256);
        assert_eq!(f.values[zero_bin], 0.0);
        assert_eq!(f.values.iter().filter(|&&g| g == 1.0).count(), 511);
    }

    #[test]
    fn uniform_samples_flatten_the_histogram() {
        // Each bin count is Binomial(512000, 1/512): sd of f is about 4.4e-5,
        // far inside the 0.02 band.
        let mut rng = rng_from(2024);
        let samples: Vec<f64> = (0..512 * 1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = ierfh(&seg(samples)).unwrap();
        let target = 1.0 - 1.0 / 512.0;
        assert!(f.values.iter().all(|g| (g - target).abs() < 0.02));
    }

    #[test]
    fn paper_scale_segment() {
        let mut rng = rng_from(1);
        let samples: Vec<f64> = (0..72_000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let s = TimeSeriesSegment::new(samples, 20.0, -1.0, 1.0).unwrap();
        assert_eq!(s.expected_len(), 72_000);
        assert!(!detect_missing(&s));
        assert_eq!(ierfh(&s).unwrap().values.len(), 512);
    }

    #[test]
    fn edges_and_clamping() {
        assert_eq!(bin_index(-1.0, -1.0, 1.0), 0);
        assert_eq!(bin_index(1.0, -1.0, 1.0), 511);
        assert_eq!(bin_index(-7.0, -1.0, 1.0), 0);
        assert_eq!(bin_index(3.0, -1.0, 1.0), 511);
        assert_eq!(bin_index(-1.0 + 2.0 / 512.0, -1.0, 1.0), 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(ierfh(&seg(vec![])), Err(Error::MissingData(_))));
        assert!(matches!(ierfh(&seg(vec![0.0, f64::NAN])), Err(Error::Numeric(_))));
        assert!(TimeSeriesSegment::new(vec![0.0], 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn missing_detection_is_strict() {
        let full = TimeSeriesSegment::new(vec![0.0; 72_000], 20.0, -1.0, 1.0).unwrap();
        assert!(!detect_missing(&full));
        let short = TimeSeriesSegment::new(vec![0.0; 71_999], 20.0, -1.0, 1.0).unwrap();
        assert!(detect_missing(&short));
        let empty = TimeSeriesSegment::new(vec![], 20.0, -1.0, 1.0).unwrap();
        assert!(detect_missing(&empty));
    }

    #[test]
    fn csv_round_trip() {
        let s = TimeSeriesSegment::new(vec![0.25, -0.5, 1.0 / 3.0], 2.0, -1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_segment_csv(&s, &mut buf).unwrap();
        assert_eq!(read_segment_values(buf.as_slice()).unwrap(), s.samples);
        assert!(read_segment_values("time,value\n0,abc\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn mass_sums_to_one_and_permutation_invariant(
            samples in prop::collection::vec(-2.0f64..2.0, 1..400),
            seed in any::<u64>(),
        ) {
            let f = ierfh(&seg(samples.clone())).unwrap();
            prop_assert!(f.values.iter().all(|g| (0.0..=1.0).contains(g)));
            let mass: f64 = f.values.iter().map(|g| 1.0 - g).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);

            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rng_from(seed));
            prop_assert_eq!(&ierfh(&seg(shuffled)).unwrap().values, &f.values);

            let mut doubled = samples.clone();
            doubled.extend_from_slice(&samples);
            let g2 = ierfh(&seg(doubled)).unwrap();
            for (a, b) in g2.values.iter().zip(&f.values) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
