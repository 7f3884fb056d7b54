//! The virtual time tagger: count rate, counter histograms, delay histograms and
//! coincidence analysis over [`TagStream`]s.
//!
//! Coincidences are counted over *all* cross pairs whose delay falls inside a window,
//! not by exclusive one-to-one matching. That keeps the expected accidental count at
//! exactly `r_a * r_b * tau * T`.

use crate::tagcore::{ChannelIndex, TagRecord, TagStream};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_WINDOW_PS: i64 = 500;
pub const DEFAULT_BACKGROUND_OFFSET_PS: i64 = 1_000;
pub const DEFAULT_BACKGROUND_WIDTH_PS: i64 = 500;
/// Full span searched for the correlation peak (±50 ns).
pub const DEFAULT_PEAK_RANGE_PS: i64 = 100_000;
pub const DEFAULT_PEAK_BIN_PS: i64 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MeasurementError {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("unknown channels: {0:?}")]
    UnknownChannels(Vec<ChannelIndex>),
    #[error("histogram has no counts, cannot locate a peak")]
    NoPeak,
    #[error("accidental rate is {0}, CAR undefined")]
    UndefinedCar(f64),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> MeasurementError {
    MeasurementError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

fn check_duration(duration_s: f64) -> Result<(), MeasurementError> {
    if duration_s > 0.0 && duration_s.is_finite() {
        Ok(())
    } else {
        Err(invalid("duration_s", format!("must be positive, got {duration_s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width_ps: i64,
    pub n_bins: usize,
}

impl HistogramSpec {
    pub fn new(bin_width_ps: i64, n_bins: usize) -> Result<Self, MeasurementError> {
        let spec = Self { bin_width_ps, n_bins };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if self.bin_width_ps < 1 {
            return Err(invalid("bin_width_ps", "must be at least 1 ps"));
        }
        if self.n_bins < 1 {
            return Err(invalid("n_bins", "must be at least 1"));
        }
        Ok(())
    }
}

/// Bin `k` covers `[origin_ps + k * w, origin_ps + (k + 1) * w)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ps: i64,
    pub origin_ps: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn spec(&self) -> HistogramSpec {
        HistogramSpec {
            bin_width_ps: self.bin_width_ps,
            n_bins: self.counts.len(),
        }
    }

    pub fn bin_center(&self, k: usize) -> i64 {
        self.origin_ps + k as i64 * self.bin_width_ps + self.bin_width_ps / 2
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceSpec {
    #[serde(default = "d_window")]
    pub window_ps: i64,
    #[serde(default = "d_offset")]
    pub background_offset_ps: i64,
    #[serde(default = "d_width")]
    pub background_width_ps: i64,
    #[serde(default = "d_range")]
    pub peak_range_ps: i64,
    #[serde(default = "d_bin")]
    pub peak_bin_ps: i64,
}

fn d_window() -> i64 {
    DEFAULT_WINDOW_PS
}
fn d_offset() -> i64 {
    DEFAULT_BACKGROUND_OFFSET_PS
}
fn d_width() -> i64 {
    DEFAULT_BACKGROUND_WIDTH_PS
}
fn d_range() -> i64 {
    DEFAULT_PEAK_RANGE_PS
}
fn d_bin() -> i64 {
    DEFAULT_PEAK_BIN_PS
}

impl Default for CoincidenceSpec {
    fn default() -> Self {
        Self {
            window_ps: DEFAULT_WINDOW_PS,
            background_offset_ps: DEFAULT_BACKGROUND_OFFSET_PS,
            background_width_ps: DEFAULT_BACKGROUND_WIDTH_PS,
            peak_range_ps: DEFAULT_PEAK_RANGE_PS,
            peak_bin_ps: DEFAULT_PEAK_BIN_PS,
        }
    }
}

impl CoincidenceSpec {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        for (field, v) in [
            ("window_ps", self.window_ps),
            ("background_offset_ps", self.background_offset_ps),
            ("background_width_ps", self.background_width_ps),
            ("peak_range_ps", self.peak_range_ps),
            ("peak_bin_ps", self.peak_bin_ps),
        ] {
            if v < 1 {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        // background windows may not overlap the coincidence window
        if 2 * self.background_offset_ps <= self.window_ps + self.background_width_ps {
            return Err(invalid(
                "background_offset_ps",
                "background windows overlap the coincidence window",
            ));
        }
        if self.peak_range_ps < self.peak_bin_ps {
            return Err(invalid("peak_range_ps", "must be at least one peak bin wide"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    pub rate_a_hz: f64,
    pub rate_b_hz: f64,
    #[serde(rename = "cc_hz")]
    pub coincidence_rate_hz: f64,
    #[serde(rename = "acc_hz")]
    pub accidental_rate_hz: f64,
    /// `None` when no accidentals were observed.
    pub car: Option<f64>,
    pub peak_delay_ps: i64,
}

/// Detections per second on each requested channel.
pub fn count_rate(
    streams: &BTreeMap<ChannelIndex, TagStream>,
    channels: &[ChannelIndex],
    duration_s: f64,
) -> Result<BTreeMap<ChannelIndex, f64>, MeasurementError> {
    check_duration(duration_s)?;
    let missing: Vec<_> = channels.iter().copied().filter(|c| !streams.contains_key(c)).collect();
    if !missing.is_empty() {
        return Err(MeasurementError::UnknownChannels(missing));
    }
    Ok(channels
        .iter()
        .map(|c| (*c, streams[c].len() as f64 / duration_s))
        .collect())
}

/// Time-resolved histogram of detections starting at `start_ps`. Tags outside the
/// histogram span are ignored.
pub fn counter(stream: &TagStream, spec: HistogramSpec, start_ps: i64) -> Result<Histogram, MeasurementError> {
    spec.validate()?;
    let w = spec.bin_width_ps;
    let end = start_ps.saturating_add(w.saturating_mul(spec.n_bins as i64));
    let records = stream.records();
    let first = records.partition_point(|r| r.timestamp_ps < start_ps);
    let mut counts = vec![0u64; spec.n_bins];
    for r in &records[first..] {
        if r.timestamp_ps >= end {
            break;
        }
        counts[((r.timestamp_ps - start_ps) / w) as usize] += 1;
    }
    Ok(Histogram {
        bin_width_ps: w,
        origin_ps: start_ps,
        counts,
    })
}

/// Integer division rounding half away from zero, so `rdiv(-n, d) == -rdiv(n, d)`.
fn rdiv(n: i64, d: i64) -> i64 {
    if n >= 0 {
        (2 * n + d) / (2 * d)
    } else {
        -((-2 * n + d) / (2 * d))
    }
}

/// Calls `f(delta)` for every cross pair with `lo <= t_b - t_a <= hi`.
///
/// Sorted two-pointer sweep; cost is linear in the stream lengths plus the number of
/// pairs visited.
fn for_each_delay(a: &[TagRecord], b: &[TagRecord], lo: i64, hi: i64, mut f: impl FnMut(i64)) {
    let mut start = 0;
    for ra in a {
        let from = ra.timestamp_ps + lo;
        let to = ra.timestamp_ps + hi;
        while start < b.len() && b[start].timestamp_ps < from {
            start += 1;
        }
        for rb in &b[start..] {
            if rb.timestamp_ps > to {
                break;
            }
            f(rb.timestamp_ps - ra.timestamp_ps);
        }
    }
}

/// Number of cross pairs with `lo <= t_b - t_a <= hi`.
pub fn count_pairs_in(a: &TagStream, b: &TagStream, lo: i64, hi: i64) -> u64 {
    let mut n = 0u64;
    for_each_delay(a.records(), b.records(), lo, hi, |_| n += 1);
    n
}

/// Histogram of `t_b - t_a` over pairs with `|delta| <= range_ps / 2`, bins centred on
/// multiples of `bin_width_ps`.
pub fn delay_histogram(a: &TagStream, b: &TagStream, bin_width_ps: i64, range_ps: i64) -> Result<Histogram, MeasurementError> {
    delay_histogram_around(a, b, bin_width_ps, range_ps, 0)
}

/// As [`delay_histogram`], with bins centred on `center_ps + k * bin_width_ps`.
///
/// `delay_histogram_around(b, a, w, r, -c)` is the bin-reversed image of
/// `delay_histogram_around(a, b, w, r, c)`.
pub fn delay_histogram_around(
    a: &TagStream,
    b: &TagStream,
    bin_width_ps: i64,
    range_ps: i64,
    center_ps: i64,
) -> Result<Histogram, MeasurementError> {
    if bin_width_ps < 1 {
        return Err(invalid("bin_width_ps", "must be at least 1 ps"));
    }
    if range_ps < bin_width_ps {
        return Err(invalid("range_ps", "must be at least one bin wide"));
    }
    let half = range_ps / 2;
    let k_max = rdiv(half, bin_width_ps);
    let mut counts = vec![0u64; (2 * k_max + 1) as usize];
    for_each_delay(a.records(), b.records(), center_ps - half, center_ps + half, |d| {
        counts[(rdiv(d - center_ps, bin_width_ps) + k_max) as usize] += 1;
    });
    Ok(Histogram {
        bin_width_ps,
        origin_ps: center_ps - k_max * bin_width_ps - bin_width_ps / 2,
        counts,
    })
}

/// Centre of the fullest bin. Ties go to the smallest `|delay|`, then the smallest delay.
pub fn find_peak(h: &Histogram) -> Result<i64, MeasurementError> {
    h.counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(k, c)| (*c, h.bin_center(k)))
        .max_by(|(ca, da), (cb, db)| {
            ca.cmp(cb)
                .then_with(|| db.abs().cmp(&da.abs()))
                .then_with(|| db.cmp(da))
        })
        .map(|(_, d)| d)
        .ok_or(MeasurementError::NoPeak)
}

pub fn car(cc_hz: f64, acc_hz: f64) -> Result<f64, MeasurementError> {
    if acc_hz > 0.0 {
        Ok(cc_hz / acc_hz)
    } else {
        Err(MeasurementError::UndefinedCar(acc_hz))
    }
}

/// Cross pairs within a closed window of `width_ps` centred on `center_ps`.
fn count_window(a: &TagStream, b: &TagStream, center_ps: i64, width_ps: i64) -> u64 {
    let half = width_ps / 2;
    count_pairs_in(a, b, center_ps - half, center_ps + half)
}

/// Locates the correlation peak, integrates the coincidence window around it, and
/// estimates accidentals from the mean of the two offset background windows.
pub fn coincidence_count(
    a: &TagStream,
    b: &TagStream,
    spec: &CoincidenceSpec,
    duration_s: f64,
) -> Result<CoincidenceResult, MeasurementError> {
    spec.validate()?;
    check_duration(duration_s)?;
    let h = delay_histogram(a, b, spec.peak_bin_ps, spec.peak_range_ps)?;
    let peak = find_peak(&h)?;
    let coincidences = count_window(a, b, peak, spec.window_ps);
    let early = count_window(a, b, peak - spec.background_offset_ps, spec.background_width_ps);
    let late = count_window(a, b, peak + spec.background_offset_ps, spec.background_width_ps);
    let cc = coincidences as f64 / duration_s;
    let acc = (early + late) as f64 / 2.0 / duration_s;
    Ok(CoincidenceResult {
        rate_a_hz: a.len() as f64 / duration_s,
        rate_b_hz: b.len() as f64 / duration_s,
        coincidence_rate_hz: cc,
        accidental_rate_hz: acc,
        car: car(cc, acc).ok(),
        peak_delay_ps: peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagcore::TagRecord;
    use proptest::prelude::*;

    fn stream(ch: u16, ts: &[i64], duration: i64) -> TagStream {
        TagStream::from_unsorted(ts.iter().map(|&t| TagRecord::new(ch, t)).collect(), duration).unwrap()
    }

    /// O(n^2) reference for the delay histogram.
    fn brute_delay_histogram(a: &TagStream, b: &TagStream, w: i64, range: i64, center: i64) -> Vec<u64> {
        let half = range / 2;
        let nearest = |x: i64| (x.abs() as f64 / w as f64 + 0.5).floor() as i64 * x.signum();
        let k_max = nearest(half);
        let mut counts = vec![0u64; (2 * k_max + 1) as usize];
        for ta in a.timestamps() {
            for tb in b.timestamps() {
                let d = tb - ta - center;
                if d.abs() <= half {
                    counts[(nearest(d) + k_max) as usize] += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn count_rate_basics() {
        let mut m = BTreeMap::new();
        m.insert(23, TagStream::empty(10));
        m.insert(19, stream(19, &(0..1000).collect::<Vec<_>>(), 1000));
        let r = count_rate(&m, &[23, 19], 10.0).unwrap();
        assert_eq!(r[&23], 0.0);
        assert_eq!(r[&19], 100.0);
        assert_eq!(count_rate(&m, &[23, 5, 7], 1.0), Err(MeasurementError::UnknownChannels(vec![5, 7])));
        assert!(count_rate(&m, &[23], 0.0).is_err());
    }

    #[test]
    fn counter_examples() {
        let spec = HistogramSpec::new(10, 2).unwrap();
        let h = counter(&TagStream::empty(100), spec, 0).unwrap();
        assert_eq!(h.counts, vec![0, 0]);
        let h = counter(&stream(1, &[5], 100), spec, 0).unwrap();
        assert_eq!(h.counts, vec![1, 0]);
        let h = counter(&stream(1, &[0, 9, 10, 19, 20, 100], 100), spec, 0).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        let h = counter(&stream(1, &[3, 12], 100), spec, 5).unwrap();
        assert_eq!((h.origin_ps, h.counts.clone()), (5, vec![1, 0]));
        assert!(HistogramSpec::new(0, 1).is_err());
        assert!(HistogramSpec::new(1, 0).is_err());
    }

    #[test]
    fn counter_uniform_is_flat() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let one_s = 1_000_000_000_000i64;
        let ts: Vec<i64> = (0..10_000).map(|_| rng.random_range(0..one_s)).collect();
        let h = counter(&stream(1, &ts, one_s), HistogramSpec::new(one_s / 10, 10).unwrap(), 0).unwrap();
        // multinomial: mean 1000, sigma ~ 30
        for c in &h.counts {
            assert!((*c as f64 - 1000.0).abs() <= 4.0 * 1000f64.sqrt(), "{c}");
        }
        assert_eq!(h.total(), 10_000);
    }

    #[test]
    fn delay_histogram_self_pairs() {
        let a = stream(1, &[0, 1_000, 5_000, 9_000], 10_000);
        let h = delay_histogram(&a, &a, 10, 200).unwrap();
        let zero = h.counts.iter().enumerate().find(|(k, _)| h.bin_center(*k) == 0).unwrap().1;
        assert!(*zero >= a.len() as u64);
    }

    #[test]
    fn delay_histogram_shift_peak() {
        let a = stream(1, &[0, 10_000, 20_000, 35_000], 40_000);
        let b = a.shifted(100).unwrap();
        let h = delay_histogram(&a, &b, 20, 2_000).unwrap();
        assert_eq!(find_peak(&h).unwrap(), 100);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn find_peak_rules() {
        let h = Histogram {
            bin_width_ps: 10,
            origin_ps: -15,
            counts: vec![0, 5, 0],
        };
        assert_eq!(find_peak(&h).unwrap(), 0);
        let h = Histogram {
            bin_width_ps: 10,
            origin_ps: -10,
            counts: vec![5, 5],
        };
        assert_eq!(find_peak(&h).unwrap(), -5);
        let h = Histogram {
            bin_width_ps: 10,
            origin_ps: -15,
            counts: vec![4, 1, 4],
        };
        assert_eq!(find_peak(&h).unwrap(), -10);
        let h = Histogram {
            bin_width_ps: 10,
            origin_ps: 0,
            counts: vec![0, 0],
        };
        assert_eq!(find_peak(&h), Err(MeasurementError::NoPeak));
    }

    #[test]
    fn car_arithmetic() {
        assert!((car(45_601.10, 28.80).unwrap() - 1583.37).abs() < 0.01);
        assert!((car(45_738.53, 31.03).unwrap() - 1473.85).abs() < 0.5);
        assert!((car(53_106.45, 33.35).unwrap() - 1592.40).abs() < 0.5);
        assert_eq!(car(7.5, 7.5).unwrap(), 1.0);
        assert_eq!(car(1.0, 0.0), Err(MeasurementError::UndefinedCar(0.0)));
    }

    #[test]
    fn coincidence_spec_validation() {
        CoincidenceSpec::default().validate().unwrap();
        let s = CoincidenceSpec {
            background_offset_ps: 500,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = CoincidenceSpec {
            window_ps: 0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn coincidence_on_constructed_streams() {
        // pairs at +40 ps, one accidental in each background window
        let a = stream(1, &[0, 100_000, 200_000, 300_000], 400_000);
        let b = stream(2, &[40, 100_040, 200_040, 201_000, 299_000], 400_000);
        let r = coincidence_count(&a, &b, &CoincidenceSpec::default(), 1.0).unwrap();
        assert_eq!(r.peak_delay_ps, 40);
        assert_eq!(r.coincidence_rate_hz, 3.0);
        assert_eq!(r.accidental_rate_hz, 1.0);
        assert_eq!(r.car, Some(3.0));

        let b = stream(2, &[40, 100_040], 400_000);
        let r = coincidence_count(&a, &b, &CoincidenceSpec::default(), 1.0).unwrap();
        assert_eq!(r.car, None);
        assert_eq!(
            coincidence_count(&a, &TagStream::empty(400_000), &CoincidenceSpec::default(), 1.0),
            Err(MeasurementError::NoPeak)
        );
    }

    #[test]
    fn window_boundaries_are_inclusive() {
        let a = stream(1, &[1_000], 10_000);
        let b = stream(2, &[1_000, 1_250, 1_251, 750, 749], 10_000);
        assert_eq!(count_window(&a, &b, 0, 500), 3);
    }

    #[test]
    fn result_json_schema() {
        let r = CoincidenceResult {
            rate_a_hz: 1.0,
            rate_b_hz: 2.0,
            coincidence_rate_hz: 3.0,
            accidental_rate_hz: 0.0,
            car: None,
            peak_delay_ps: -4,
        };
        let v = serde_json::to_value(r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 6);
        for k in ["rate_a_hz", "rate_b_hz", "cc_hz", "acc_hz", "car", "peak_delay_ps"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v["car"].is_null());
        let h = Histogram {
            bin_width_ps: 5,
            origin_ps: 0,
            counts: vec![1, 2],
        };
        assert_eq!(
            serde_json::to_string(&h).unwrap(),
            r#"{"bin_width_ps":5,"origin_ps":0,"counts":[1,2]}"#
        );
    }

    fn arb_stream(ch: u16) -> impl Strategy<Value = TagStream> {
        prop::collection::vec(0i64..20_000, 0..300).prop_map(move |v| stream(ch, &v, 20_000))
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(a in arb_stream(1), b in arb_stream(2), w in 1i64..40, range in 40i64..600, center in -200i64..200) {
            let h = delay_histogram_around(&a, &b, w, range, center).unwrap();
            prop_assert_eq!(h.counts, brute_delay_histogram(&a, &b, w, range, center));
        }

        #[test]
        fn delay_histogram_mirrors(a in arb_stream(1), b in arb_stream(2), w in 1i64..40, range in 40i64..600) {
            let ab = delay_histogram(&a, &b, w, range).unwrap();
            let mut ba = delay_histogram(&b, &a, w, range).unwrap().counts;
            ba.reverse();
            prop_assert_eq!(ab.counts, ba);
        }

        #[test]
        fn counter_conserves(a in arb_stream(1), w in 1i64..3000, n in 1usize..20, start in -5000i64..15_000) {
            let h = counter(&a, HistogramSpec::new(w, n).unwrap(), start).unwrap();
            let outside = a.timestamps().filter(|t| *t < start || *t >= start + w * n as i64).count() as u64;
            prop_assert_eq!(h.total() + outside, a.len() as u64);
        }

        #[test]
        fn coincidence_offset_invariant(a in arb_stream(1), b in arb_stream(2), shift in 0i64..1_000_000) {
            let spec = CoincidenceSpec { peak_range_ps: 4_000, peak_bin_ps: 20, ..Default::default() };
            let r0 = coincidence_count(&a, &b, &spec, 1.0);
            let r1 = coincidence_count(&a.shifted(shift).unwrap(), &b.shifted(shift).unwrap(), &spec, 1.0);
            prop_assert_eq!(r0, r1);
        }
    }
}
