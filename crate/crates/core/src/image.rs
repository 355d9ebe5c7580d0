//! Image grids shared by every branch: optical and SAR rasters with a declared
//! value range, time-ordered sequences, the six-channel feature map fed to the
//! head, and per-pixel class volumes.
//!
//! Pixel data is stored row-major in `(H, W, C)` order, the same layout as the
//! tensor files on disk.

use std::fmt;
use std::str::FromStr;

use plfm_nn::Tensor;

use crate::error::{invalid, shape, PlfmError, Result};

/// Bands of an optical image (RGB).
pub const OPTICAL_BANDS: usize = 3;
/// Polarizations of a SAR image (VV only).
pub const SAR_BANDS: usize = 1;
/// Channels of the concatenated feature map.
pub const FEATURE_CHANNELS: usize = 2 * OPTICAL_BANDS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RangeTag {
    /// `[0, 1]`, the canonical storage range.
    #[default]
    Unit,
    /// `[-1, 1]`, used inside the generator.
    Symmetric,
    /// `[0, 255]`, real-valued until export.
    Byte,
}

impl RangeTag {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RangeTag::Unit => (0.0, 1.0),
            RangeTag::Symmetric => (-1.0, 1.0),
            RangeTag::Byte => (0.0, 255.0),
        }
    }

    pub fn width(self) -> f64 {
        let (lo, hi) = self.bounds();
        hi - lo
    }

    pub fn contains(self, v: f64) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&v)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RangeTag::Unit => "unit",
            RangeTag::Symmetric => "symmetric",
            RangeTag::Byte => "byte",
        }
    }

    /// Affine map of one value from `self` to `target`.
    pub fn convert(self, v: f64, target: RangeTag) -> f64 {
        let (lo, _) = self.bounds();
        let (tlo, _) = target.bounds();
        let unit = (v - lo) / self.width();
        tlo + unit * target.width()
    }
}

impl fmt::Display for RangeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RangeTag {
    type Err = PlfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unit" => Ok(RangeTag::Unit),
            "symmetric" => Ok(RangeTag::Symmetric),
            "byte" => Ok(RangeTag::Byte),
            other => Err(PlfmError::UnknownRange(other.to_string())),
        }
    }
}

/// A `W×H×C` grid of reals in `(H, W, C)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(shape(format!(
                "{width}x{height}x{channels} raster needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds a raster from `f(x, y, c)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Stacks equally sized single planes (each `H·W` long, row-major).
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let n = width * height;
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(shape(format!(
                "plane of {} values in a {width}x{height} raster",
                p.len()
            )));
        }
        Ok(Self::from_fn(width, height, planes.len(), |x, y, c| {
            planes[c][y * width + x]
        }))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channel values of one pixel.
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel `c` as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        assert!(c < self.channels, "channel {c} out of {}", self.channels);
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sub-window `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        assert!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop outside raster"
        );
        Raster::from_fn(w, h, self.channels, |x, y, c| self.get(x0 + x, y0 + y, c))
    }

    /// `[1, C, H, W]` tensor view for the networks.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = self.dims();
        Tensor::from_fn([1, c, h, w], |[_, ch, y, x]| self.get(x, y, ch))
    }

    /// Sample `n` of an NCHW tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Raster {
        let [_, c, h, w] = t.shape();
        let s = t.sample(n);
        Raster::from_fn(w, h, c, |x, y, ch| s[(ch * h + y) * w + x])
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }
}

/// One violated invariant found by [`validate_image`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyExtent,
    BandCount {
        expected: usize,
        found: usize,
    },
    /// Values outside the declared range; `count` of them, first at `index`.
    OutOfRange {
        count: usize,
        index: usize,
        value: f64,
    },
    NonFinite {
        count: usize,
    },
    ZeroLooks,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyExtent => write!(f, "zero width or height"),
            Violation::BandCount { expected, found } => {
                write!(f, "expected {expected} bands, found {found}")
            }
            Violation::OutOfRange {
                count,
                index,
                value,
            } => {
                write!(f, "{count} values out of range (first {value} at {index})")
            }
            Violation::NonFinite { count } => write!(f, "{count} non-finite values"),
            Violation::ZeroLooks => write!(f, "looks must be positive"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Anything [`validate_image`] can check.
pub trait Validate {
    fn validate(&self) -> ValidationReport;
}

/// Lists every broken invariant of `img`; never fails.
pub fn validate_image(img: &impl Validate) -> ValidationReport {
    img.validate()
}

fn check_grid(r: &Raster, bands: usize, in_range: impl Fn(f64) -> bool, out: &mut Vec<Violation>) {
    if r.width == 0 || r.height == 0 {
        out.push(Violation::EmptyExtent);
    }
    if r.channels != bands {
        out.push(Violation::BandCount {
            expected: bands,
            found: r.channels,
        });
    }
    let non_finite = r.data.iter().filter(|v| !v.is_finite()).count();
    if non_finite > 0 {
        out.push(Violation::NonFinite { count: non_finite });
    }
    let mut bad = r
        .data
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite() && !in_range(**v));
    if let Some((index, &value)) = bad.next() {
        out.push(Violation::OutOfRange {
            count: 1 + bad.count(),
            index,
            value,
        });
    }
}

/// Optical (RGB) image.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalImage {
    pub raster: Raster,
    pub range: RangeTag,
}

impl OpticalImage {
    pub fn new(raster: Raster, range: RangeTag) -> Self {
        Self { raster, range }
    }

    pub fn unit(raster: Raster) -> Self {
        Self::new(raster, RangeTag::Unit)
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    /// Luma-weighted grayscale plane.
    pub fn grayscale(&self) -> Raster {
        let r = &self.raster;
        Raster::from_fn(r.width(), r.height(), 1, |x, y, _| {
            let p = r.pixel(x, y);
            match p.len() {
                3 => 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2],
                _ => p.iter().sum::<f64>() / p.len() as f64,
            }
        })
    }
}

impl Validate for OpticalImage {
    fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let range = self.range;
        check_grid(
            &self.raster,
            OPTICAL_BANDS,
            |v| range.contains(v),
            &mut violations,
        );
        ValidationReport { violations }
    }
}

/// Single-polarization (VV) SAR backscatter.
#[derive(Clone, Debug, PartialEq)]
pub struct SarImage {
    pub raster: Raster,
    pub range: RangeTag,
    pub looks: u32,
}

impl SarImage {
    pub fn new(raster: Raster, range: RangeTag, looks: u32) -> Self {
        Self {
            raster,
            range,
            looks,
        }
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

impl Validate for SarImage {
    fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        // Speckle pushes amplitudes above the nominal maximum, so only the
        // lower bound is enforced.
        let lo = self.range.bounds().0;
        check_grid(&self.raster, SAR_BANDS, |v| v >= lo, &mut violations);
        if self.looks == 0 {
            violations.push(Violation::ZeroLooks);
        }
        ValidationReport { violations }
    }
}

/// Maps an image affinely onto another range tag.
pub fn normalize(img: &OpticalImage, target: RangeTag) -> OpticalImage {
    let from = img.range;
    OpticalImage {
        raster: img.raster.map(|v| from.convert(v, target)),
        range: target,
    }
}

/// Same affine map for SAR backscatter.
pub fn normalize_sar(img: &SarImage, target: RangeTag) -> SarImage {
    let from = img.range;
    SarImage {
        raster: img.raster.map(|v| from.convert(v, target)),
        range: target,
        looks: img.looks,
    }
}

/// Time-ordered optical frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSequence {
    frames: Vec<OpticalImage>,
    timestamps: Vec<f64>,
}

impl TemporalSequence {
    pub fn new(frames: Vec<OpticalImage>, timestamps: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(invalid("a sequence needs at least one frame"));
        }
        if frames.len() != timestamps.len() {
            return Err(shape(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("timestamps must be strictly increasing"));
        }
        let first = &frames[0];
        for f in &frames[1..] {
            if !f.raster.same_dims(&first.raster) || f.range != first.range {
                return Err(shape("frames differ in size, bands or range"));
            }
        }
        Ok(Self { frames, timestamps })
    }

    /// Frames labelled with consecutive months starting at zero.
    pub fn monthly(frames: Vec<OpticalImage>) -> Result<Self> {
        let ts = (0..frames.len()).map(|t| t as f64).collect();
        Self::new(frames, ts)
    }

    pub fn frames(&self) -> &[OpticalImage] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Channels `(Ẑ_R, Ẑ_G, Ẑ_B, Ŷ_R, Ŷ_G, Ŷ_B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    raster: Raster,
}

impl FeatureMap {
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    /// Reassembles a map from its three channel pairs.
    pub fn from_pairs(pairs: &[Raster]) -> Result<Self> {
        if pairs.len() != OPTICAL_BANDS || pairs.iter().any(|p| p.channels() != 2) {
            return Err(shape("expected three two-channel pairs"));
        }
        let (w, h) = (pairs[0].width(), pairs[0].height());
        if pairs.iter().any(|p| p.width() != w || p.height() != h) {
            return Err(shape("pairs differ in size"));
        }
        let raster = Raster::from_fn(w, h, FEATURE_CHANNELS, |x, y, c| {
            let (k, slot) = if c < OPTICAL_BANDS {
                (c, 0)
            } else {
                (c - OPTICAL_BANDS, 1)
            };
            pairs[k].get(x, y, slot)
        });
        Ok(Self { raster })
    }
}

/// Stacks the SAR-branch and temporal-branch predictions channel-wise.
pub fn concat_embeddings(z_hat: &OpticalImage, y_hat: &OpticalImage) -> Result<FeatureMap> {
    if !z_hat.raster.same_dims(&y_hat.raster) {
        return Err(shape(format!(
            "embeddings {:?} and {:?} differ",
            z_hat.raster.dims(),
            y_hat.raster.dims()
        )));
    }
    if z_hat.raster.channels() != OPTICAL_BANDS {
        return Err(shape(format!("embeddings need {OPTICAL_BANDS} bands")));
    }
    if z_hat.range != y_hat.range {
        return Err(invalid(format!(
            "range mismatch: {} vs {}",
            z_hat.range, y_hat.range
        )));
    }
    let (z, y) = (&z_hat.raster, &y_hat.raster);
    let raster = Raster::from_fn(z.width(), z.height(), FEATURE_CHANNELS, |px, py, c| {
        if c < OPTICAL_BANDS {
            z.get(px, py, c)
        } else {
            y.get(px, py, c - OPTICAL_BANDS)
        }
    });
    Ok(FeatureMap { raster })
}

/// `F^k` for `k ∈ 1..=3`: channel `k−1` of Ẑ next to channel `k−1` of Ŷ.
pub fn channel_pair(f: &FeatureMap, k: usize) -> Result<Raster> {
    if !(1..=OPTICAL_BANDS).contains(&k) {
        return Err(invalid(format!("channel pair index {k} outside 1..=3")));
    }
    let r = &f.raster;
    Ok(Raster::from_fn(r.width(), r.height(), 2, |x, y, slot| {
        r.get(x, y, k - 1 + slot * OPTICAL_BANDS)
    }))
}

/// Per-pixel class probabilities, `(H, W, |C|)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassVolume {
    probs: Raster,
}

impl ClassVolume {
    pub fn new(probs: Raster) -> Result<Self> {
        if probs.channels() < 2 {
            return Err(invalid("a class volume needs at least two classes"));
        }
        Ok(Self { probs })
    }

    /// Degenerate volume with all mass on `targets[j]` at pixel `j`.
    pub fn one_hot(width: usize, height: usize, classes: usize, targets: &[usize]) -> Result<Self> {
        if targets.len() != width * height {
            return Err(shape("one target per pixel"));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(invalid(format!("class {t} outside 0..{classes}")));
        }
        let probs = Raster::from_fn(width, height, classes, |x, y, c| {
            f64::from(u8::from(targets[y * width + x] == c))
        });
        Self::new(probs)
    }

    pub fn classes(&self) -> usize {
        self.probs.channels()
    }

    pub fn width(&self) -> usize {
        self.probs.width()
    }

    pub fn height(&self) -> usize {
        self.probs.height()
    }

    pub fn probs(&self) -> &Raster {
        &self.probs
    }

    /// Distribution at pixel `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.probs.pixel(x, y)
    }

    /// Pixels whose distribution is not normalized within `1e-6` or has
    /// entries outside `[0, 1]`.
    pub fn validate(&self) -> Vec<usize> {
        let (w, h) = (self.width(), self.height());
        (0..w * h)
            .filter(|&j| {
                let p = self.at(j % w, j / w);
                let s: f64 = p.iter().sum();
                (s - 1.0).abs() > 1e-6 || p.iter().any(|v| !(0.0..=1.0).contains(v))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_image(w: usize, h: usize, v: f64) -> OpticalImage {
        OpticalImage::unit(Raster::filled(w, h, 3, v))
    }

    #[test]
    fn validation_reports_rather_than_fails() {
        assert!(validate_image(&unit_image(4, 4, 0.0)).is_valid());

        let mut img = unit_image(4, 4, 0.2);
        img.raster.set(1, 2, 0, 1.5);
        let report = validate_image(&img);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::OutOfRange { count: 1, value, .. } if value == 1.5
        ));

        let two_band = OpticalImage::unit(Raster::zeros(4, 4, 2));
        assert_eq!(
            validate_image(&two_band).violations,
            vec![Violation::BandCount {
                expected: 3,
                found: 2
            }]
        );
    }

    #[test]
    fn sar_allows_speckle_overshoot_but_not_negatives() {
        let mut sar = SarImage::new(Raster::filled(4, 4, 1, 2.5), RangeTag::Unit, 1);
        assert!(validate_image(&sar).is_valid());
        sar.raster.set(0, 0, 0, -0.1);
        assert_eq!(validate_image(&sar).violations.len(), 1);
    }

    #[test]
    fn normalize_endpoints() {
        let byte = OpticalImage::new(Raster::filled(1, 1, 3, 255.0), RangeTag::Byte);
        assert_eq!(normalize(&byte, RangeTag::Unit).raster.data()[0], 1.0);
        let half = unit_image(1, 1, 0.5);
        assert_eq!(normalize(&half, RangeTag::Symmetric).raster.data()[0], 0.0);
        let q = unit_image(1, 1, 0.25);
        assert_eq!(normalize(&q, RangeTag::Byte).raster.data()[0], 63.75);
        assert!("bogus".parse::<RangeTag>().is_err());
    }

    #[test]
    fn concat_and_pairs() {
        let f = concat_embeddings(&unit_image(2, 2, 1.0), &unit_image(2, 2, 0.0)).unwrap();
        assert_eq!(f.raster().channels(), FEATURE_CHANNELS);
        for px in f.raster().data().chunks(6) {
            assert_eq!(px, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        }
        let p = channel_pair(&f, 2).unwrap();
        assert!(p.plane(0).iter().all(|&v| v == 1.0));
        assert!(p.plane(1).iter().all(|&v| v == 0.0));
        assert!(channel_pair(&f, 4).is_err());
        assert!(channel_pair(&f, 0).is_err());
    }

    #[test]
    fn concat_rejects_mismatch() {
        assert!(concat_embeddings(&unit_image(2, 2, 0.0), &unit_image(3, 2, 0.0)).is_err());
        let sym = OpticalImage::new(Raster::zeros(2, 2, 3), RangeTag::Symmetric);
        assert!(concat_embeddings(&unit_image(2, 2, 0.0), &sym).is_err());
    }

    #[test]
    fn sequence_invariants() {
        let frames = vec![unit_image(4, 4, 0.1); 3];
        assert!(TemporalSequence::new(frames.clone(), vec![0.0, 1.0, 2.0]).is_ok());
        assert!(TemporalSequence::new(frames.clone(), vec![0.0, 1.0, 1.0]).is_err());
        let mut mixed = frames;
        mixed[1] = unit_image(5, 4, 0.1);
        assert!(TemporalSequence::monthly(mixed).is_err());
    }

    #[test]
    fn one_hot_volume_is_valid() {
        let v = ClassVolume::one_hot(3, 2, 4, &[0, 1, 2, 3, 0, 1]).unwrap();
        assert!(v.validate().is_empty());
        assert_eq!(v.at(1, 1), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(v.at(2, 0), &[0.0, 0.0, 1.0, 0.0]);
        assert!(ClassVolume::one_hot(1, 1, 4, &[4]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let r = Raster::from_fn(5, 3, 2, |x, y, c| (x + 10 * y + 100 * c) as f64);
        let t = r.to_tensor();
        assert_eq!(t.shape(), [1, 2, 3, 5]);
        assert_eq!(t.get([0, 1, 2, 4]), 124.0);
        assert_eq!(Raster::from_tensor(&t, 0), r);
    }

    fn raster_strategy(channels: usize) -> impl Strategy<Value = Raster> {
        (1usize..6, 1usize..6).prop_flat_map(move |(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h * channels)
                .prop_map(move |d| Raster::new(w, h, channels, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn normalize_round_trips(r in raster_strategy(3), t in 0usize..3) {
            let target = [RangeTag::Unit, RangeTag::Symmetric, RangeTag::Byte][t];
            let img = OpticalImage::unit(r);
            let there = normalize(&img, target);
            prop_assert!(validate_image(&there).is_valid());
            let back = normalize(&there, RangeTag::Unit);
            for (a, b) in back.raster.data().iter().zip(img.raster.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn pairs_partition_the_feature_map(
            (z, y) in (1usize..5, 1usize..5).prop_flat_map(|(w, h)| {
                let v = proptest::collection::vec(0.0f64..=1.0, w * h * 3);
                (v.clone(), v).prop_map(move |(a, b)| {
                    (Raster::new(w, h, 3, a).unwrap(), Raster::new(w, h, 3, b).unwrap())
                })
            })
        ) {
            let f = concat_embeddings(&OpticalImage::unit(z), &OpticalImage::unit(y)).unwrap();
            let pairs: Vec<Raster> = (1..=3).map(|k| channel_pair(&f, k).unwrap()).collect();
            prop_assert_eq!(FeatureMap::from_pairs(&pairs).unwrap(), f);
        }
    }
}
