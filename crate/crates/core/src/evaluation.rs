//! Batch evaluation grouped by cloud coverage.

use std::fmt;

use crate::error::{PlfmError, Result};
use crate::image::OpticalImage;
use crate::metrics::{evaluate, EvalConfig, MetricId, MetricsReport, Shift};

/// Mean-RGB level above which a pixel counts as cloud when no mask exists.
pub const WHITE_THRESHOLD: f64 = 0.85;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoverageBucket {
    /// `[0, 20%]`
    UpTo20,
    /// `(20%, 50%]`
    UpTo50,
    /// `(50%, 80%]`
    UpTo80,
    /// `(80%, 100%]`
    UpTo100,
}

impl CoverageBucket {
    pub const ALL: [CoverageBucket; 4] = [Self::UpTo20, Self::UpTo50, Self::UpTo80, Self::UpTo100];

    /// Bucket of a coverage fraction; values outside `[0, 1]` are clamped.
    pub fn of(coverage: f64) -> Self {
        let c = coverage.clamp(0.0, 1.0);
        if c <= 0.2 {
            Self::UpTo20
        } else if c <= 0.5 {
            Self::UpTo50
        } else if c <= 0.8 {
            Self::UpTo80
        } else {
            Self::UpTo100
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::UpTo20 => "<=20%",
            Self::UpTo50 => "20-50%",
            Self::UpTo80 => "50-80%",
            Self::UpTo100 => "80-100%",
        }
    }

    /// Fraction bounds `(low, high]` (the first bucket includes 0).
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Self::UpTo20 => (0.0, 0.2),
            Self::UpTo50 => (0.2, 0.5),
            Self::UpTo80 => (0.5, 0.8),
            Self::UpTo100 => (0.8, 1.0),
        }
    }
}

impl fmt::Display for CoverageBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Share of pixels whose mean RGB exceeds `threshold`.
pub fn estimate_coverage_white(img: &OpticalImage, threshold: f64) -> f64 {
    let r = &img.raster;
    let c = r.channels() as f64;
    let white = r
        .data()
        .chunks(r.channels())
        .filter(|px| px.iter().sum::<f64>() / c > threshold)
        .count();
    white as f64 / r.pixels() as f64
}

/// One evaluated image: its metric values and the coverage it is bucketed by.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub values: [f64; 8],
    pub csc: bool,
    pub shift: Shift,
    pub coverage: f64,
}

impl EvalRow {
    pub fn from_report(image_id: impl Into<String>, report: &MetricsReport, coverage: f64) -> Self {
        Self {
            image_id: image_id.into(),
            values: MetricId::ALL.map(|m| report.get(m)),
            csc: report.csc_applied,
            shift: report.shift(),
            coverage,
        }
    }

    pub fn get(&self, id: MetricId) -> f64 {
        self.values[MetricId::ALL
            .iter()
            .position(|&m| m == id)
            .expect("listed metric")]
    }

    pub fn bucket(&self) -> CoverageBucket {
        CoverageBucket::of(self.coverage)
    }

    pub fn tsv_header() -> String {
        format!("{}\tcoverage", MetricsReport::tsv_header())
    }

    pub fn to_tsv(&self) -> String {
        let mut cols = vec![self.image_id.clone()];
        cols.extend(self.values.iter().map(|v| v.to_string()));
        cols.extend([
            u8::from(self.csc).to_string(),
            self.shift.0.to_string(),
            self.shift.1.to_string(),
            self.coverage.to_string(),
        ]);
        cols.join("\t")
    }
}

pub fn evaluate_pair(
    image_id: &str,
    pred: &OpticalImage,
    gt: &OpticalImage,
    coverage: f64,
    cfg: &EvalConfig,
) -> Result<EvalRow> {
    let report = evaluate(&pred.raster, &gt.raster, cfg)?;
    Ok(EvalRow::from_report(image_id, &report, coverage))
}

pub fn rows_to_tsv(rows: &[EvalRow]) -> String {
    let mut out = EvalRow::tsv_header();
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

/// Parses the output of [`rows_to_tsv`]. Empty input yields no rows.
pub fn parse_rows(text: &str) -> Result<Vec<EvalRow>> {
    let bad = |line: usize, why: String| {
        PlfmError::format("metrics table", format!("line {line}: {why}"))
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    if header.trim_end() != EvalRow::tsv_header() {
        return Err(bad(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 13 {
            return Err(bad(
                i + 1,
                format!("expected 13 columns, found {}", cols.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(i + 1, format!("{s:?}: {e}")))
        };
        let int = |s: &str| {
            s.parse::<i32>()
                .map_err(|e| bad(i + 1, format!("{s:?}: {e}")))
        };
        let mut values = [0.0; 8];
        for (k, v) in values.iter_mut().enumerate() {
            *v = num(cols[1 + k])?;
        }
        let csc = match cols[9] {
            "0" => false,
            "1" => true,
            other => return Err(bad(i + 1, format!("csc flag {other:?}"))),
        };
        rows.push(EvalRow {
            image_id: cols[0].to_string(),
            values,
            csc,
            shift: (int(cols[10])?, int(cols[11])?),
            coverage: num(cols[12])?,
        });
    }
    Ok(rows)
}

/// Per-bucket means; metrics undefined for some rows average the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketSummary {
    pub bucket: CoverageBucket,
    pub count: usize,
    pub means: [f64; 8],
}

impl BucketSummary {
    pub fn get(&self, id: MetricId) -> f64 {
        self.means[MetricId::ALL
            .iter()
            .position(|&m| m == id)
            .expect("listed metric")]
    }
}

/// One summary per populated bucket, in coverage order.
pub fn summarize(rows: &[EvalRow]) -> Vec<BucketSummary> {
    CoverageBucket::ALL
        .into_iter()
        .filter_map(|bucket| {
            let members: Vec<&EvalRow> = rows.iter().filter(|r| r.bucket() == bucket).collect();
            if members.is_empty() {
                return None;
            }
            let means = std::array::from_fn(|k| {
                let vals: Vec<f64> = members
                    .iter()
                    .map(|r| r.values[k])
                    .filter(|v| v.is_finite())
                    .collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            });
            Some(BucketSummary {
                bucket,
                count: members.len(),
                means,
            })
        })
        .collect()
}

/// Buckets as rows, metrics as columns.
pub fn summary_to_tsv(summaries: &[BucketSummary]) -> String {
    let mut out = String::from("coverage\tcount");
    for m in MetricId::ALL {
        out.push('\t');
        out.push_str(m.name());
    }
    out.push('\n');
    for s in summaries {
        out.push_str(&format!("{}\t{}", s.bucket.label(), s.count));
        for v in s.means {
            out.push_str(&format!("\t{v:.4}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Raster;
    use crate::metrics::PSNR_CAP;

    #[test]
    fn bucket_edges() {
        let cases = [
            (0.0, CoverageBucket::UpTo20),
            (0.2, CoverageBucket::UpTo20),
            (0.2000001, CoverageBucket::UpTo50),
            (0.5, CoverageBucket::UpTo50),
            (0.5000001, CoverageBucket::UpTo80),
            (0.8, CoverageBucket::UpTo80),
            (0.81, CoverageBucket::UpTo100),
            (1.0, CoverageBucket::UpTo100),
        ];
        for (c, b) in cases {
            assert_eq!(CoverageBucket::of(c), b, "{c}");
        }
    }

    #[test]
    fn white_pixels() {
        let img = OpticalImage::unit(Raster::from_fn(
            4,
            4,
            3,
            |x, _, _| if x == 0 { 0.95 } else { 0.3 },
        ));
        assert_eq!(estimate_coverage_white(&img, WHITE_THRESHOLD), 0.25);
        assert_eq!(estimate_coverage_white(&img, 0.99), 0.0);
    }

    #[test]
    fn self_evaluation_is_ideal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let gt = OpticalImage::unit(Raster::from_fn(16, 16, 3, |_, _, _| rng.random()));
        let row = evaluate_pair("a", &gt, &gt, 0.3, &EvalConfig::default()).unwrap();
        assert_eq!(row.get(MetricId::Psnr), PSNR_CAP);
        assert_eq!(row.get(MetricId::Ssim), 1.0);
        assert_eq!(row.get(MetricId::Mse), 0.0);
        assert_eq!(row.shift, (0, 0));
    }

    #[test]
    fn one_row_per_populated_bucket() {
        let row = |id: &str, cov: f64, psnr: f64| EvalRow {
            image_id: id.into(),
            values: [psnr, 0.5, 0.1, 0.0, 0.0, f64::NAN, 0.0, 0.5],
            csc: true,
            shift: (0, 1),
            coverage: cov,
        };
        let rows = vec![
            row("a", 0.1, 30.0),
            row("b", 0.9, 20.0),
            row("c", 0.15, 20.0),
        ];
        let s = summarize(&rows);
        assert_eq!(
            s.iter().map(|b| b.bucket).collect::<Vec<_>>(),
            vec![CoverageBucket::UpTo20, CoverageBucket::UpTo100]
        );
        assert_eq!(s[0].count, 2);
        assert_eq!(s[0].get(MetricId::Psnr), 25.0);
        assert!(s[0].get(MetricId::Cc).is_nan());
        assert_eq!(summary_to_tsv(&s).lines().count(), 3);
        assert_eq!(summarize(&rows[1..2]).len(), 1);
    }

    #[test]
    fn tsv_round_trip() {
        let rows = vec![EvalRow {
            image_id: "roi7".into(),
            values: [31.25, 0.9, 0.05, 0.001, 0.0316, 0.98, 0.002, f64::NAN],
            csc: true,
            shift: (-1, 2),
            coverage: 0.6,
        }];
        let back = parse_rows(&rows_to_tsv(&rows)).unwrap();
        assert_eq!(back[0].image_id, "roi7");
        assert_eq!(back[0].shift, (-1, 2));
        assert_eq!(back[0].values[..7], rows[0].values[..7]);
        assert!(back[0].values[7].is_nan());
        assert!(parse_rows("").unwrap().is_empty());
        assert!(parse_rows("nonsense\n").is_err());
        let truncated = format!("{}\nroi\t1\t2\n", EvalRow::tsv_header());
        assert!(parse_rows(&truncated).is_err());
    }
}
