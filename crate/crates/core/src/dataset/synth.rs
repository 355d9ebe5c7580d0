//! Synthetic monthly scenes: a band-limited terrain height field colored by
//! elevation, slow month-to-month drift, alpha-blended clouds and Gamma
//! speckle on the SAR side.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::{OpticalImage, RangeTag, Raster, SarImage};
use crate::seed::{self, streams};

/// Time steps per region.
pub const MONTHS: usize = 4;

/// Width of the soft cloud edge in noise units.
const CLOUD_EDGE: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Side length in pixels.
    pub size: usize,
    /// Cloud coverage is drawn uniformly from `[coverage_min, coverage_max]`
    /// for every frame.
    pub coverage_min: f64,
    pub coverage_max: f64,
    pub thickness: f64,
    /// Strength of the monthly structural and brightness drift.
    pub drift: f64,
    pub looks: u32,
    /// Largest terrain feature, as a fraction of the side length.
    pub feature_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 64,
            coverage_min: 0.0,
            coverage_max: 1.0,
            thickness: 0.8,
            drift: 0.05,
            looks: 1,
            feature_scale: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(invalid(format!("scene size {} below 16", self.size)));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.coverage_min)
            || !unit.contains(&self.coverage_max)
            || self.coverage_min > self.coverage_max
        {
            return Err(invalid("coverage bounds must satisfy 0 ≤ min ≤ max ≤ 1"));
        }
        if !unit.contains(&self.thickness) {
            return Err(invalid("cloud thickness outside [0, 1]"));
        }
        if self.looks == 0 {
            return Err(invalid("looks must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.drift) || !(self.feature_scale > 0.0) {
            return Err(invalid(
                "drift must lie in [0, 1] and feature scale be positive",
            ));
        }
        Ok(())
    }
}

/// Four co-registered monthly acquisitions of one region.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSeries {
    pub roi_id: String,
    /// Cloud-free frames (ground truth).
    pub optical: Vec<OpticalImage>,
    /// The same frames as observed through clouds.
    pub cloudy: Vec<OpticalImage>,
    pub sar: Vec<SarImage>,
    /// Binary cloud masks, one channel.
    pub cloud_masks: Vec<Raster>,
    pub seed: u64,
    pub config: SceneConfig,
}

impl RoiSeries {
    pub fn coverage(&self, t: usize) -> f64 {
        mask_coverage(&self.cloud_masks[t])
    }
}

pub fn mask_coverage(mask: &Raster) -> f64 {
    mask.data().iter().filter(|&&v| v > 0.5).count() as f64 / mask.pixels() as f64
}

/// Band-limited random field in `[0, 1]`: octaves of smoothly interpolated
/// lattice noise, rescaled to span the unit interval.
pub fn smooth_field(
    width: usize,
    height: usize,
    cell: f64,
    octaves: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    let mut amp = 1.0;
    let mut cell = cell.max(1.0);
    for _ in 0..octaves {
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
        let (ox, oy) = (rng.random::<f64>(), rng.random::<f64>());
        for y in 0..height {
            let fy = y as f64 / cell + oy;
            let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
            for x in 0..width {
                let fx = x as f64 / cell + ox;
                let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                let l = |i: usize, j: usize| lattice[j * gw + i];
                let top = lerp(l(ix, iy), l(ix + 1, iy), tx);
                let bottom = lerp(l(ix, iy + 1), l(ix + 1, iy + 1), tx);
                out[y * width + x] += amp * lerp(top, bottom, ty);
            }
        }
        amp *= 0.5;
        cell = (cell / 2.0).max(1.0);
    }
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    out.iter_mut().for_each(|v| *v = (*v - lo) / span);
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Elevation colormap: deep water, lowland vegetation, soil, bare rock. Luma
/// increases monotonically with height, so grayscale determines color.
const PALETTE: [(f64, [f64; 3]); 5] = [
    (0.0, [0.04, 0.09, 0.28]),
    (0.25, [0.10, 0.32, 0.14]),
    (0.5, [0.30, 0.45, 0.18]),
    (0.75, [0.52, 0.42, 0.28]),
    (1.0, [0.80, 0.78, 0.74]),
];

pub fn terrain_color(h: f64) -> [f64; 3] {
    let h = h.clamp(0.0, 1.0);
    let k = PALETTE
        .windows(2)
        .position(|w| h <= w[1].0)
        .unwrap_or(PALETTE.len() - 2);
    let ((h0, c0), (h1, c1)) = (PALETTE[k], PALETTE[k + 1]);
    let t = (h - h0) / (h1 - h0);
    [
        lerp(c0[0], c1[0], t),
        lerp(c0[1], c1[1], t),
        lerp(c0[2], c1[2], t),
    ]
}

/// Clean optical frames of one region: month `t` adds `t·drift` of a second
/// field to the terrain and scales brightness linearly in time.
pub fn terrain_frames(seed: u64, cfg: &SceneConfig) -> Vec<OpticalImage> {
    let n = cfg.size;
    let cell = (cfg.feature_scale * n as f64).max(2.0);
    let base = smooth_field(n, n, cell, 4, &mut seed::rng(seed, streams::TERRAIN));
    let mut drift_rng = seed::rng(seed, streams::DRIFT);
    let delta = smooth_field(n, n, cell, 3, &mut drift_rng);
    let slope = drift_rng.random_range(-1.0..1.0) * cfg.drift;
    (0..MONTHS)
        .map(|t| {
            let t = t as f64;
            let gain = 1.0 + slope * t;
            let raster = Raster::from_fn(n, n, 3, |x, y, c| {
                let i = y * n + x;
                let h = base[i] + cfg.drift * t * (delta[i] - 0.5);
                (terrain_color(h)[c] * gain).clamp(0.0, 1.0)
            });
            OpticalImage::unit(raster)
        })
        .collect()
}

/// Blends a white-ish cloud layer over `img`:
/// `cloudy = (1−α)·img + α·cloud`, `α = thickness·soft_mask`, and the binary
/// mask marks `α > thickness/2`.
pub fn apply_clouds(
    img: &OpticalImage,
    coverage: f64,
    thickness: f64,
    seed: u64,
) -> Result<(OpticalImage, Raster)> {
    if !(0.0..=1.0).contains(&coverage) || !(0.0..=1.0).contains(&thickness) {
        return Err(invalid(format!(
            "cloud coverage {coverage} and thickness {thickness} must lie in [0, 1]"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if coverage == 0.0 {
        return Ok((img.clone(), Raster::zeros(w, h, 1)));
    }
    let mut rng = seed::rng(seed, streams::CLOUDS);
    let cell = (w.max(h) as f64 / 3.0).max(2.0);
    let noise = smooth_field(w, h, cell, 4, &mut rng);
    let texture = smooth_field(w, h, cell / 4.0, 2, &mut rng);

    // Threshold at the (1 − coverage) quantile so the mask hits the request.
    let mut sorted = noise.clone();
    sorted.sort_by(f64::total_cmp);
    let k = ((1.0 - coverage) * sorted.len() as f64).round() as usize;
    let threshold = if k == 0 {
        sorted[0] - 1.0
    } else {
        sorted[k - 1]
    };

    let alpha: Vec<f64> = noise
        .iter()
        .map(|&n| thickness * (0.5 + (n - threshold) / (2.0 * CLOUD_EDGE)).clamp(0.0, 1.0))
        .collect();
    let mask = Raster::from_fn(w, h, 1, |x, y, _| {
        f64::from(u8::from(alpha[y * w + x] > 0.5 * thickness))
    });
    let (lo, _) = img.range.bounds();
    let cloudy = Raster::from_fn(w, h, img.raster.channels(), |x, y, c| {
        let i = y * w + x;
        let cloud = RangeTag::Unit.convert(0.82 + 0.18 * texture[i], img.range);
        let v = img.raster.get(x, y, c);
        ((1.0 - alpha[i]) * v + alpha[i] * cloud).max(lo)
    });
    Ok((OpticalImage::new(cloudy, img.range), mask))
}

/// Multiplicative speckle: every pixel times an independent
/// `Gamma(shape = L, scale = 1/L)` draw (mean 1, variance `1/L`).
pub fn simulate_sar(gray: &Raster, looks: u32, seed: u64) -> Result<SarImage> {
    if looks < 1 {
        return Err(invalid("looks must be at least 1"));
    }
    if gray.channels() != 1 {
        return Err(invalid("speckle simulation takes a single-channel image"));
    }
    if let Some(v) = gray.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("gray value {v} outside [0, 1]")));
    }
    let l = f64::from(looks);
    let gamma = Gamma::new(l, 1.0 / l).expect("positive shape and scale");
    let mut rng = seed::rng(seed, streams::SPECKLE);
    let data = gray
        .data()
        .iter()
        .map(|v| v * gamma.sample(&mut rng))
        .collect();
    let raster = Raster::new(gray.width(), gray.height(), 1, data)?;
    Ok(SarImage::new(raster, RangeTag::Unit, looks))
}

/// Deterministic region generator.
pub fn synth_scene(roi_id: impl Into<String>, seed: u64, cfg: &SceneConfig) -> Result<RoiSeries> {
    cfg.validate()?;
    let optical = terrain_frames(seed, cfg);
    let mut cover_rng = seed::rng(seed, streams::CLOUDS);
    let mut cloudy = Vec::with_capacity(MONTHS);
    let mut cloud_masks = Vec::with_capacity(MONTHS);
    let mut sar = Vec::with_capacity(MONTHS);
    for (t, frame) in optical.iter().enumerate() {
        let coverage = if cfg.coverage_max > cfg.coverage_min {
            cover_rng.random_range(cfg.coverage_min..=cfg.coverage_max)
        } else {
            cfg.coverage_min
        };
        let (c, m) = apply_clouds(
            frame,
            coverage,
            cfg.thickness,
            seed::derive(seed, 100 + t as u64),
        )?;
        cloudy.push(c);
        cloud_masks.push(m);
        sar.push(simulate_sar(
            &frame.grayscale(),
            cfg.looks,
            seed::derive(seed, 200 + t as u64),
        )?);
    }
    Ok(RoiSeries {
        roi_id: roi_id.into(),
        optical,
        cloudy,
        sar,
        cloud_masks,
        seed,
        config: cfg.clone(),
    })
}
