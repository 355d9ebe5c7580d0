//! Tensor files: raw little-endian `f32` in `(H, W, C)` order next to a UTF-8
//! `key: value` sidecar, plus 8-bit RGB export for viewing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{PlfmError, Result};
use crate::image::{OpticalImage, RangeTag, Raster, SarImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sensor {
    S1,
    S2,
    Synthetic,
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensor::S1 => "S1",
            Sensor::S2 => "S2",
            Sensor::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Sensor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "S1" => Ok(Sensor::S1),
            "S2" => Ok(Sensor::S2),
            "synthetic" => Ok(Sensor::Synthetic),
            other => Err(format!("unknown sensor {other:?}")),
        }
    }
}

/// Contents of a sidecar file.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorMeta {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub range: RangeTag,
    pub sensor: Sensor,
    pub timestamp: Option<f64>,
    /// Additional keys, written in sorted order after the fixed ones.
    pub extra: BTreeMap<String, String>,
}

impl TensorMeta {
    pub fn for_raster(r: &Raster, range: RangeTag, sensor: Sensor) -> Self {
        Self {
            height: r.height(),
            width: r.width(),
            channels: r.channels(),
            range,
            sensor,
            timestamp: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = Some(t);
        self
    }

    fn render(&self) -> String {
        let mut s = format!(
            "shape: {},{},{}\nrange: {}\nsensor: {}\n",
            self.height, self.width, self.channels, self.range, self.sensor
        );
        if let Some(t) = self.timestamp {
            s.push_str(&format!("timestamp: {t}\n"));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}: {v}\n"));
        }
        s
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| PlfmError::format(path, reason);
        let mut shape = None;
        let mut range = None;
        let mut sensor = None;
        let mut timestamp = None;
        let mut extra = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| bad(format!("line {}: expected `key: value`", n + 1)))?;
            let value = value.trim();
            match key.trim() {
                "shape" => {
                    let dims: Vec<usize> = value
                        .split(',')
                        .map(|d| d.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(format!("bad shape {value:?}")))?;
                    if dims.len() != 3 {
                        return Err(bad(format!("shape needs three dimensions, got {value:?}")));
                    }
                    shape = Some((dims[0], dims[1], dims[2]));
                }
                "range" => range = Some(value.parse::<RangeTag>().map_err(|e| bad(e.to_string()))?),
                "sensor" => sensor = Some(value.parse::<Sensor>().map_err(bad)?),
                "timestamp" => {
                    timestamp = Some(
                        value
                            .parse()
                            .map_err(|_| bad(format!("bad timestamp {value:?}")))?,
                    )
                }
                other => {
                    extra.insert(other.to_string(), value.to_string());
                }
            }
        }
        let (height, width, channels) = shape.ok_or_else(|| bad("missing shape".into()))?;
        Ok(Self {
            height,
            width,
            channels,
            range: range.ok_or_else(|| bad("missing range".into()))?,
            sensor: sensor.ok_or_else(|| bad("missing sensor".into()))?,
            timestamp,
            extra,
        })
    }
}

/// `dir/s2.f32` → `dir/s2.meta`.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("meta")
}

pub fn write_tensor(blob: &Path, raster: &Raster, meta: &TensorMeta) -> Result<()> {
    assert_eq!(
        (meta.height, meta.width, meta.channels),
        (raster.height(), raster.width(), raster.channels()),
        "sidecar shape disagrees with the raster"
    );
    if let Some(dir) = blob.parent() {
        fs::create_dir_all(dir).map_err(PlfmError::io(dir))?;
    }
    let bytes: Vec<u8> = raster
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(blob, bytes).map_err(PlfmError::io(blob))?;
    let side = sidecar_path(blob);
    fs::write(&side, meta.render()).map_err(PlfmError::io(&side))
}

/// Parses only the sidecar of `blob`.
pub fn read_meta(blob: &Path) -> Result<TensorMeta> {
    let side = sidecar_path(blob);
    let text = fs::read_to_string(&side).map_err(PlfmError::io(&side))?;
    TensorMeta::parse(&text, &side)
}

pub fn read_tensor(blob: &Path) -> Result<(Raster, TensorMeta)> {
    let meta = read_meta(blob)?;
    let bytes = fs::read(blob).map_err(PlfmError::io(blob))?;
    let expected = meta.height * meta.width * meta.channels * 4;
    if bytes.len() != expected {
        return Err(PlfmError::format(
            blob,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let raster = Raster::new(meta.width, meta.height, meta.channels, data)?;
    Ok((raster, meta))
}

pub fn read_optical(blob: &Path) -> Result<OpticalImage> {
    let (raster, meta) = read_tensor(blob)?;
    Ok(OpticalImage::new(raster, meta.range))
}

pub fn read_sar(blob: &Path) -> Result<SarImage> {
    let (raster, meta) = read_tensor(blob)?;
    let looks = match meta.extra.get("looks") {
        Some(l) => l
            .parse()
            .map_err(|_| PlfmError::format(sidecar_path(blob), format!("bad looks {l:?}")))?,
        None => 1,
    };
    Ok(SarImage::new(raster, meta.range, looks))
}

pub fn write_optical(
    blob: &Path,
    img: &OpticalImage,
    sensor: Sensor,
    timestamp: Option<f64>,
) -> Result<()> {
    let mut meta = TensorMeta::for_raster(&img.raster, img.range, sensor);
    meta.timestamp = timestamp;
    write_tensor(blob, &img.raster, &meta)
}

pub fn write_sar(blob: &Path, img: &SarImage, timestamp: Option<f64>) -> Result<()> {
    let mut meta = TensorMeta::for_raster(&img.raster, img.range, Sensor::S1);
    meta.timestamp = timestamp;
    meta.extra.insert("looks".into(), img.looks.to_string());
    write_tensor(blob, &img.raster, &meta)
}

/// Saves an optical image as an 8-bit RGB PNG, clamping to the declared range.
pub fn export_png(path: &Path, img: &OpticalImage) -> Result<()> {
    let r = &img.raster;
    let (lo, _) = img.range.bounds();
    let width = img.range.width();
    let mut buf = image::RgbImage::new(r.width() as u32, r.height() as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let p = r.pixel(x as usize, y as usize);
        for c in 0..3 {
            let v = p[c.min(p.len() - 1)];
            px.0[c] = (((v - lo) / width).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path)
        .map_err(|e| PlfmError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("t0/s2.f32");
        let img = OpticalImage::unit(Raster::from_fn(5, 4, 3, |x, y, c| {
            (x as f64 * 0.1 + y as f64 * 0.03 + c as f64 * 0.2) / 2.0
        }));
        write_optical(&blob, &img, Sensor::S2, Some(2.0)).unwrap();
        let back = read_optical(&blob).unwrap();
        assert_eq!(back.range, RangeTag::Unit);
        assert_eq!(back.raster.dims(), (5, 4, 3));
        for (a, b) in back.raster.data().iter().zip(img.raster.data()) {
            assert!((a - b).abs() < 1e-7);
        }
        let meta = read_meta(&blob).unwrap();
        assert_eq!(meta.timestamp, Some(2.0));
        assert_eq!(meta.sensor, Sensor::S2);
    }

    #[test]
    fn sidecar_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("s1.f32");
        let sar = SarImage::new(Raster::filled(2, 2, 1, 0.5), RangeTag::Unit, 4);
        write_sar(&blob, &sar, None).unwrap();
        assert_eq!(read_sar(&blob).unwrap().looks, 4);

        fs::write(sidecar_path(&blob), "shape: 2,2\nrange: unit\nsensor: S1\n").unwrap();
        let err = read_tensor(&blob).unwrap_err().to_string();
        assert!(err.contains("s1.meta"), "{err}");

        fs::write(
            sidecar_path(&blob),
            "shape: 3,2,1\nrange: unit\nsensor: S1\n",
        )
        .unwrap();
        let err = read_tensor(&blob).unwrap_err().to_string();
        assert!(err.contains("s1.f32") && err.contains("bytes"), "{err}");
    }

    #[test]
    fn png_export_writes_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = OpticalImage::unit(Raster::from_fn(3, 2, 3, |x, _, c| (x * c) as f64 / 4.0));
        export_png(&path, &img).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (3, 2));
        assert_eq!(back.get_pixel(2, 0).0, [0, 128, 255]);
    }
}
