//! Image-quality measures between a reference (ground truth) and a
//! prediction, and the integer shift search that compensates residual
//! co-registration error.
//!
//! Every statistic is computed globally per band and then averaged over bands.
//! Sample (co)variances use the `1/(N−1)` normalization throughout.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, shape, PlfmError, Result};
use crate::image::Raster;

/// Reported PSNR when the residual vanishes.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Psnr,
    Ssim,
    Sam,
    Mse,
    Rmse,
    Cc,
    Dd,
    Uqi,
}

/// Which extreme the shift search keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    Max,
    Min,
}

impl MetricId {
    pub const ALL: [MetricId; 8] = [
        MetricId::Psnr,
        MetricId::Ssim,
        MetricId::Sam,
        MetricId::Mse,
        MetricId::Rmse,
        MetricId::Cc,
        MetricId::Dd,
        MetricId::Uqi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Psnr => "psnr",
            MetricId::Ssim => "ssim",
            MetricId::Sam => "sam",
            MetricId::Mse => "mse",
            MetricId::Rmse => "rmse",
            MetricId::Cc => "cc",
            MetricId::Dd => "dd",
            MetricId::Uqi => "uqi",
        }
    }

    /// Improving direction: similarity scores are maximized, errors minimized.
    pub fn mode(self) -> SearchMode {
        match self {
            MetricId::Psnr | MetricId::Ssim | MetricId::Cc | MetricId::Uqi => SearchMode::Max,
            MetricId::Sam | MetricId::Mse | MetricId::Rmse | MetricId::Dd => SearchMode::Min,
        }
    }

    /// True when `a` is at least as good as `b`.
    pub fn no_worse(self, a: f64, b: f64) -> bool {
        match self.mode() {
            SearchMode::Max => a >= b,
            SearchMode::Min => a <= b,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = PlfmError;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricOptions {
    /// Width `L` of the value range, for the SSIM stabilizers.
    pub data_range: f64,
    /// Report SAM in degrees instead of radians.
    pub sam_degrees: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            data_range: 1.0,
            sam_degrees: false,
        }
    }
}

fn same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if !a.same_dims(b) {
        return Err(shape(format!(
            "reference {:?} vs prediction {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.data().is_empty() {
        return Err(shape("empty images"));
    }
    Ok(())
}

/// Mean, variance and covariance of two equally long planes.
#[derive(Clone, Copy, Debug)]
struct Moments {
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn moments(a: &[f64], b: &[f64]) -> Moments {
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - mu_a, y - mu_b);
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    let dof = (n - 1.0).max(1.0);
    Moments {
        mu_a,
        mu_b,
        var_a: var_a / dof,
        var_b: var_b / dof,
        cov: cov / dof,
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn bands(r: &Raster) -> Vec<Vec<f64>> {
    (0..r.channels()).map(|c| r.plane(c)).collect()
}

/// Per-band PSNR against each reference band's own maximum.
pub fn psnr_bands(reference: &Raster, pred: &Raster) -> Result<Vec<f64>> {
    same_shape(reference, pred)?;
    bands(reference)
        .iter()
        .zip(bands(pred))
        .enumerate()
        .map(|(k, (r, p))| {
            let peak = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if peak <= 0.0 {
                return Err(PlfmError::Degenerate(format!(
                    "reference band {k} has no positive maximum"
                )));
            }
            let sse: f64 = r.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            if sse == 0.0 {
                return Ok(PSNR_CAP);
            }
            let v = 10.0 * (peak * peak * r.len() as f64 / sse).log10();
            Ok(v.min(PSNR_CAP))
        })
        .collect()
}

pub fn psnr(reference: &Raster, pred: &Raster) -> Result<f64> {
    Ok(mean(&psnr_bands(reference, pred)?))
}

pub fn ssim_bands(reference: &Raster, pred: &Raster, data_range: f64) -> Result<Vec<f64>> {
    same_shape(reference, pred)?;
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    Ok(bands(reference)
        .iter()
        .zip(bands(pred))
        .map(|(r, p)| {
            let m = moments(r, &p);
            ((2.0 * m.mu_a * m.mu_b + c1) * (2.0 * m.cov + c2))
                / ((m.mu_a.powi(2) + m.mu_b.powi(2) + c1) * (m.var_a + m.var_b + c2))
        })
        .collect())
}

pub fn ssim(reference: &Raster, pred: &Raster, data_range: f64) -> Result<f64> {
    Ok(mean(&ssim_bands(reference, pred, data_range)?))
}

/// Mean spectral angle in radians and the number of skipped zero-norm pixels.
pub fn sam_detailed(reference: &Raster, pred: &Raster) -> Result<(f64, usize)> {
    same_shape(reference, pred)?;
    let (w, h) = (reference.width(), reference.height());
    let (mut total, mut used) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (reference.pixel(x, y), pred.pixel(x, y));
            let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
            let na = a.iter().map(|u| u * u).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            // Identical vectors get an exact zero rather than acos(1 − ulp).
            if a != b {
                total += (dot / (na * nb)).clamp(-1.0, 1.0).acos();
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(PlfmError::Degenerate(
            "every pixel has a zero spectral vector".into(),
        ));
    }
    Ok((total / used as f64, w * h - used))
}

pub fn sam(reference: &Raster, pred: &Raster) -> Result<f64> {
    Ok(sam_detailed(reference, pred)?.0)
}

pub fn mse(reference: &Raster, pred: &Raster) -> Result<f64> {
    same_shape(reference, pred)?;
    let n = reference.data().len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(pred.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// Frobenius norm of the residual over `√(pixels · bands)`.
pub fn rmse(reference: &Raster, pred: &Raster) -> Result<f64> {
    Ok(mse(reference, pred)?.sqrt())
}

/// Per-band Pearson coefficients; constant bands are `None`.
pub fn cc_bands(reference: &Raster, pred: &Raster) -> Result<Vec<Option<f64>>> {
    same_shape(reference, pred)?;
    Ok(bands(reference)
        .iter()
        .zip(bands(pred))
        .map(|(r, p)| {
            if is_constant(r) || is_constant(&p) {
                return None;
            }
            let m = moments(r, &p);
            Some(m.cov / (m.var_a * m.var_b).sqrt())
        })
        .collect())
}

/// Band-averaged correlation and the number of constant bands skipped.
pub fn cc_detailed(reference: &Raster, pred: &Raster) -> Result<(f64, usize)> {
    average_defined(cc_bands(reference, pred)?, "correlation")
}

pub fn cc(reference: &Raster, pred: &Raster) -> Result<f64> {
    Ok(cc_detailed(reference, pred)?.0)
}

/// Mean absolute difference over all entries.
pub fn dd(reference: &Raster, pred: &Raster) -> Result<f64> {
    same_shape(reference, pred)?;
    let n = reference.data().len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(pred.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Per-band quality index; bands with a vanishing denominator are `None`.
pub fn uqi_bands(reference: &Raster, pred: &Raster) -> Result<Vec<Option<f64>>> {
    same_shape(reference, pred)?;
    Ok(bands(reference)
        .iter()
        .zip(bands(pred))
        .map(|(r, p)| {
            let m = moments(r, &p);
            let den = (m.var_a + m.var_b) * (m.mu_a.powi(2) + m.mu_b.powi(2));
            // Grouping μ_A·μ_B makes numerator and denominator the same
            // product on identical bands, so Q(X, X) is exactly 1.
            (den != 0.0).then(|| 4.0 * m.cov * (m.mu_a * m.mu_b) / den)
        })
        .collect())
}

pub fn uqi_detailed(reference: &Raster, pred: &Raster) -> Result<(f64, usize)> {
    average_defined(uqi_bands(reference, pred)?, "quality index")
}

pub fn uqi(reference: &Raster, pred: &Raster) -> Result<f64> {
    Ok(uqi_detailed(reference, pred)?.0)
}

fn average_defined(per_band: Vec<Option<f64>>, what: &str) -> Result<(f64, usize)> {
    let defined: Vec<f64> = per_band.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(PlfmError::Degenerate(format!(
            "{what} undefined on every band"
        )));
    }
    let skipped = per_band.len() - defined.len();
    if skipped > 0 {
        log::warn!("{what}: skipped {skipped} degenerate band(s)");
    }
    Ok((mean(&defined), skipped))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluates one metric by id.
pub fn compute(
    id: MetricId,
    reference: &Raster,
    pred: &Raster,
    opts: &MetricOptions,
) -> Result<f64> {
    match id {
        MetricId::Psnr => psnr(reference, pred),
        MetricId::Ssim => ssim(reference, pred, opts.data_range),
        MetricId::Sam => {
            let rad = sam(reference, pred)?;
            Ok(if opts.sam_degrees {
                rad.to_degrees()
            } else {
                rad
            })
        }
        MetricId::Mse => mse(reference, pred),
        MetricId::Rmse => rmse(reference, pred),
        MetricId::Cc => cc(reference, pred),
        MetricId::Dd => dd(reference, pred),
        MetricId::Uqi => uqi(reference, pred),
    }
}

/// Shift `(e1, e2)`: rows, columns.
pub type Shift = (i32, i32);

/// Crops `reference` and the prediction displaced by `(e1, e2)` to their
/// common window, so that `ref[y][x]` is paired with `pred[y + e1][x + e2]`.
pub fn shifted_overlap(reference: &Raster, pred: &Raster, (e1, e2): Shift) -> (Raster, Raster) {
    let (w, h) = (reference.width() as i64, reference.height() as i64);
    let (e1, e2) = (e1 as i64, e2 as i64);
    let (y0, x0) = ((-e1).max(0), (-e2).max(0));
    let (oh, ow) = (h - e1.abs(), w - e2.abs());
    assert!(oh > 0 && ow > 0, "shift leaves no overlap");
    let r = reference.crop(x0 as usize, y0 as usize, ow as usize, oh as usize);
    let p = pred.crop(
        (x0 + e2) as usize,
        (y0 + e1) as usize,
        ow as usize,
        oh as usize,
    );
    (r, p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CscResult {
    pub value: f64,
    pub shift: Shift,
}

/// Best metric value over all integer shifts in `[−radius, radius]²`, keeping
/// the maximum or minimum according to `mode`. Ties keep the lexicographically
/// smallest shift. Radius 0 is exactly the plain metric.
pub fn with_csc_mode(
    id: MetricId,
    reference: &Raster,
    pred: &Raster,
    radius: usize,
    mode: SearchMode,
    opts: &MetricOptions,
) -> Result<CscResult> {
    same_shape(reference, pred)?;
    let (w, h) = (reference.width(), reference.height());
    if radius >= w.min(h) || 2 * (w - radius) * (h - radius) < w * h {
        return Err(invalid(format!(
            "shift radius {radius} leaves less than half of a {w}x{h} image"
        )));
    }
    if radius == 0 {
        return Ok(CscResult {
            value: compute(id, reference, pred, opts)?,
            shift: (0, 0),
        });
    }
    let e = radius as i32;
    let mut best: Option<CscResult> = None;
    let mut first_err = None;
    for e1 in -e..=e {
        for e2 in -e..=e {
            let (r, p) = shifted_overlap(reference, pred, (e1, e2));
            let value = match compute(id, &r, &p, opts) {
                Ok(v) if v.is_finite() => v,
                Ok(_) => continue,
                Err(err) => {
                    first_err.get_or_insert(err);
                    continue;
                }
            };
            let better = match best {
                None => true,
                Some(b) => match mode {
                    SearchMode::Max => value > b.value,
                    SearchMode::Min => value < b.value,
                },
            };
            if better {
                best = Some(CscResult {
                    value,
                    shift: (e1, e2),
                });
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one candidate was evaluated"))
}

/// Shift search in the metric's improving direction.
pub fn with_csc(
    id: MetricId,
    reference: &Raster,
    pred: &Raster,
    radius: usize,
    opts: &MetricOptions,
) -> Result<CscResult> {
    with_csc_mode(id, reference, pred, radius, id.mode(), opts)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Shift radius `E`; `None` disables compensation.
    pub csc_radius: Option<usize>,
    pub options: MetricOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            csc_radius: Some(2),
            options: MetricOptions::default(),
        }
    }
}

impl EvalConfig {
    pub fn raw() -> Self {
        Self {
            csc_radius: None,
            ..Self::default()
        }
    }
}

/// All eight measures for one (prediction, ground truth) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub mse: f64,
    pub rmse: f64,
    pub cc: f64,
    pub dd: f64,
    pub uqi: f64,
    /// Unshifted per-band PSNR, SSIM, CC and UQI (`NaN` where undefined).
    pub band_psnr: Vec<f64>,
    pub band_ssim: Vec<f64>,
    pub band_cc: Vec<f64>,
    pub band_uqi: Vec<f64>,
    pub csc_applied: bool,
    /// Shift chosen per metric, in [`MetricId::ALL`] order.
    pub shifts: [Shift; 8],
}

impl MetricsReport {
    pub fn get(&self, id: MetricId) -> f64 {
        match id {
            MetricId::Psnr => self.psnr,
            MetricId::Ssim => self.ssim,
            MetricId::Sam => self.sam,
            MetricId::Mse => self.mse,
            MetricId::Rmse => self.rmse,
            MetricId::Cc => self.cc,
            MetricId::Dd => self.dd,
            MetricId::Uqi => self.uqi,
        }
    }

    fn set(&mut self, id: MetricId, v: f64) {
        *match id {
            MetricId::Psnr => &mut self.psnr,
            MetricId::Ssim => &mut self.ssim,
            MetricId::Sam => &mut self.sam,
            MetricId::Mse => &mut self.mse,
            MetricId::Rmse => &mut self.rmse,
            MetricId::Cc => &mut self.cc,
            MetricId::Dd => &mut self.dd,
            MetricId::Uqi => &mut self.uqi,
        } = v;
    }

    /// The shift reported in the TSV row: the one chosen for PSNR.
    pub fn shift(&self) -> Shift {
        self.shifts[0]
    }

    pub fn tsv_header() -> String {
        let mut cols = vec!["image_id"];
        cols.extend(MetricId::ALL.iter().map(|m| m.name()));
        cols.extend(["csc", "e1", "e2"]);
        cols.join("\t")
    }

    pub fn to_tsv_row(&self, image_id: &str) -> String {
        let mut cols = vec![image_id.to_string()];
        cols.extend(MetricId::ALL.iter().map(|&m| format!("{}", self.get(m))));
        let (e1, e2) = self.shift();
        cols.extend([
            u8::from(self.csc_applied).to_string(),
            e1.to_string(),
            e2.to_string(),
        ]);
        cols.join("\t")
    }
}

pub fn evaluate(pred: &Raster, gt: &Raster, cfg: &EvalConfig) -> Result<MetricsReport> {
    same_shape(gt, pred)?;
    let opts = &cfg.options;
    let undefined = |v: Vec<Option<f64>>| v.into_iter().map(|b| b.unwrap_or(f64::NAN)).collect();
    let mut report = MetricsReport {
        psnr: 0.0,
        ssim: 0.0,
        sam: 0.0,
        mse: 0.0,
        rmse: 0.0,
        cc: 0.0,
        dd: 0.0,
        uqi: 0.0,
        band_psnr: psnr_bands(gt, pred)?,
        band_ssim: ssim_bands(gt, pred, opts.data_range)?,
        band_cc: undefined(cc_bands(gt, pred)?),
        band_uqi: undefined(uqi_bands(gt, pred)?),
        csc_applied: cfg.csc_radius.is_some(),
        shifts: [(0, 0); 8],
    };
    let radius = cfg.csc_radius.unwrap_or(0);
    for (i, id) in MetricId::ALL.into_iter().enumerate() {
        let r = with_csc(id, gt, pred, radius, opts)?;
        report.set(id, r.value);
        report.shifts[i] = r.shift;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identical_images_hit_ideal_values() {
        let x = random(8, 8, 3, 1);
        let r = evaluate(&x, &x, &EvalConfig::raw()).unwrap();
        assert_eq!(r.psnr, PSNR_CAP);
        assert_eq!(r.ssim, 1.0);
        assert_eq!(r.sam, 0.0);
        assert_eq!((r.mse, r.rmse, r.dd), (0.0, 0.0, 0.0));
        assert!((r.cc - 1.0).abs() < 1e-15);
        assert!((r.uqi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_residual() {
        let x = Raster::from_fn(
            6,
            6,
            3,
            |px, py, _| if (px + py) % 2 == 0 { 1.0 } else { 0.5 },
        );
        let y = x.map(|v| v - 0.1);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
        assert!((mse(&x, &y).unwrap() - 0.01).abs() < 1e-12);
        assert!((rmse(&x, &y).unwrap() - 0.1).abs() < 1e-12);
        assert!((dd(&x, &y).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn psnr_rejects_zero_reference() {
        let z = Raster::zeros(4, 4, 3);
        assert!(psnr(&z, &random(4, 4, 3, 2)).is_err());
    }

    #[test]
    fn ssim_of_inverted_ramp_is_negative() {
        let ramp = Raster::from_fn(8, 8, 1, |x, y, _| (x + 8 * y) as f64 / 63.0);
        let inv = ramp.map(|v| 1.0 - v);
        assert!(ssim(&ramp, &inv, 1.0).unwrap() < 0.0);
        let c = Raster::filled(4, 4, 1, 0.3);
        assert_eq!(ssim(&c, &c, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn sam_angles() {
        let x = random(5, 5, 3, 3);
        assert!(sam(&x, &x.map(|v| 2.0 * v)).unwrap() < 1e-7);
        let a = Raster::from_fn(2, 2, 3, |_, _, c| f64::from(u8::from(c == 0)));
        let b = Raster::from_fn(2, 2, 3, |_, _, c| f64::from(u8::from(c == 1)));
        assert!((sam(&a, &b).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let opts = MetricOptions {
            sam_degrees: true,
            ..Default::default()
        };
        assert!((compute(MetricId::Sam, &a, &b, &opts).unwrap() - 90.0).abs() < 1e-12);
        let mut z = a.clone();
        z.data_mut()[..3].fill(0.0);
        assert_eq!(sam_detailed(&z, &b).unwrap().1, 1);
        assert!(sam(&Raster::zeros(2, 2, 3), &b).is_err());
    }

    #[test]
    fn correlation_signs() {
        let x = random(16, 16, 3, 4);
        assert!((cc(&x, &x.map(|v| 3.0 - v)).unwrap() + 1.0).abs() < 1e-12);
        let mut partly_const = x.clone();
        for y in 0..16 {
            for px in 0..16 {
                partly_const.set(px, y, 1, 0.5);
            }
        }
        assert_eq!(cc_detailed(&x, &partly_const).unwrap().1, 1);
        assert!(cc(&Raster::filled(4, 4, 3, 0.2), &x.crop(0, 0, 4, 4)).is_err());
    }

    #[test]
    fn shuffled_correlation_vanishes() {
        let x = random(128, 128, 1, 5);
        let mut data = x.data().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in (1..data.len()).rev() {
            data.swap(i, rng.random_range(0..=i));
        }
        let shuffled = Raster::new(128, 128, 1, data).unwrap();
        assert!(cc(&x, &shuffled).unwrap().abs() < 0.05);
    }

    #[test]
    fn uqi_of_scaled_image_matches_closed_form() {
        let x = random(8, 8, 1, 7);
        let c: f64 = 1.7;
        // Correlation 1, contrast 2c/(1+c²), luminance 2c/(1+c²).
        let expected = (2.0 * c / (1.0 + c * c)).powi(2);
        assert!((uqi(&x, &x.map(|v| c * v)).unwrap() - expected).abs() < 1e-12);
        assert!(uqi(&Raster::zeros(3, 3, 1), &Raster::zeros(3, 3, 1)).is_err());
    }

    #[test]
    fn csc_recovers_a_planted_shift() {
        let x = random(16, 16, 3, 8);
        // pred[y][x] = x[y - 1][x + 2], so ref[y][x] pairs with pred[y + 1][x - 2].
        let pred = Raster::from_fn(16, 16, 3, |px, py, c| {
            let (sy, sx) = (py as i64 - 1, px as i64 + 2);
            if (0..16).contains(&sy) && (0..16).contains(&sx) {
                x.get(sx as usize, sy as usize, c)
            } else {
                0.0
            }
        });
        let opts = MetricOptions::default();
        let r = with_csc(MetricId::Ssim, &x, &pred, 2, &opts).unwrap();
        assert_eq!(r.shift, (1, -2));
        assert!((r.value - 1.0).abs() < 1e-12);
        let p = with_csc(MetricId::Psnr, &x, &pred, 2, &opts).unwrap();
        assert_eq!((p.value, p.shift), (PSNR_CAP, (1, -2)));
    }

    #[test]
    fn csc_radius_zero_is_plain_metric() {
        let (a, b) = (random(8, 8, 3, 9), random(8, 8, 3, 10));
        let opts = MetricOptions::default();
        for id in MetricId::ALL {
            let r = with_csc(id, &a, &b, 0, &opts).unwrap();
            assert_eq!(
                r.value.to_bits(),
                compute(id, &a, &b, &opts).unwrap().to_bits()
            );
            assert_eq!(r.shift, (0, 0));
        }
        assert!(with_csc(MetricId::Mse, &a, &b, 3, &opts).is_err());
    }

    #[test]
    fn csc_ties_keep_lowest_shift() {
        let c = Raster::filled(8, 8, 3, 0.4);
        let r = with_csc(MetricId::Mse, &c, &c, 1, &MetricOptions::default()).unwrap();
        assert_eq!(r.shift, (-1, -1));
    }

    #[test]
    fn tsv_row_has_fixed_columns() {
        let x = random(8, 8, 3, 11);
        let r = evaluate(&x, &x.map(|v| v * 0.9), &EvalConfig::default()).unwrap();
        let header = MetricsReport::tsv_header();
        assert_eq!(
            header,
            "image_id\tpsnr\tssim\tsam\tmse\trmse\tcc\tdd\tuqi\tcsc\te1\te2"
        );
        let row = r.to_tsv_row("a");
        assert_eq!(row.split('\t').count(), header.split('\t').count());
    }

    proptest! {
        #[test]
        fn symmetric_metrics_are_symmetric(s1 in 0u64..1000, s2 in 1000u64..2000) {
            let (a, b) = (random(6, 5, 3, s1), random(6, 5, 3, s2));
            for f in [
                |a: &Raster, b: &Raster| ssim(a, b, 1.0),
                cc,
                uqi,
                dd,
                mse,
            ] {
                let (ab, ba) = (f(&a, &b).unwrap(), f(&b, &a).unwrap());
                prop_assert!((ab - ba).abs() < 1e-12);
            }
        }

        #[test]
        fn bounds_and_orderings(s1 in 0u64..1000, s2 in 1000u64..2000) {
            let (a, b) = (random(6, 6, 3, s1), random(6, 6, 3, s2));
            let r = evaluate(&b, &a, &EvalConfig::raw()).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r.ssim));
            prop_assert!((-1.0..=1.0).contains(&r.uqi));
            prop_assert!((-1.0..=1.0).contains(&r.cc));
            prop_assert!(r.sam >= 0.0 && r.mse >= 0.0);
            prop_assert!(r.dd <= r.rmse + 1e-15);
            prop_assert!((r.rmse * r.rmse - r.mse).abs() < 1e-12);
        }

        #[test]
        fn larger_radius_never_hurts(s1 in 0u64..1000, s2 in 1000u64..2000) {
            let (a, b) = (random(8, 8, 3, s1), random(8, 8, 3, s2));
            let opts = MetricOptions::default();
            for id in MetricId::ALL {
                let v: Vec<f64> = (0..=2)
                    .map(|e| with_csc(id, &a, &b, e, &opts).unwrap().value)
                    .collect();
                prop_assert!(id.no_worse(v[1], v[0]) && id.no_worse(v[2], v[1]));
            }
        }
    }
}
