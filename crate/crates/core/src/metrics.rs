//! Full-reference quality metrics (PSNR, SSIM) and directory evaluation.
//!
//! Both metrics work on 8-bit quantized values with a peak of 255. SSIM uses
//! an 11x11 Gaussian window (sigma 1.5) over valid positions only and, by
//! default, averages the per-channel scores of R, G and B.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::color::RgbImage;
use crate::error::{Error, Result};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_EVAL_SIZE: (usize, usize) = (640, 480);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// Mean of the R, G and B channel scores.
    #[default]
    Rgb,
    /// Single score on BT.601 luma.
    Luma,
}

impl SsimMode {
    pub fn describe(&self) -> &'static str {
        match self {
            SsimMode::Rgb => "per-channel SSIM averaged over R,G,B",
            SsimMode::Luma => "SSIM on BT.601 luma",
        }
    }
}

fn ensure_same(a: &RgbImage, b: &RgbImage, context: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(context, a.dims(), b.dims()));
    }
    Ok(())
}

/// 8-bit samples of one channel (`None` = luma) as reals.
fn byte_plane(img: &RgbImage, channel: Option<usize>) -> Vec<f64> {
    let bytes = img.to_bytes();
    bytes
        .pixels()
        .map(|p| match channel {
            Some(c) => f64::from(p.0[c]),
            None => {
                0.299 * f64::from(p.0[0]) + 0.587 * f64::from(p.0[1]) + 0.114 * f64::from(p.0[2])
            }
        })
        .collect()
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ensure_same(a, b, "psnr")?;
    let (qa, qb) = (a.to_bytes(), b.to_bytes());
    let sum: f64 = qa
        .as_raw()
        .iter()
        .zip(qb.as_raw())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    let mse = sum / qa.as_raw().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, _, _) = filter_valid(a, w, h, &k);
    let (mu_b, _, _) = filter_valid(b, w, h, &k);
    let (e_aa, _, _) = filter_valid(&aa, w, h, &k);
    let (e_bb, _, _) = filter_valid(&bb, w, h, &k);
    let (e_ab, ow, oh) = filter_valid(&ab, w, h, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / (ow * oh) as f64
}

/// Mean SSIM over all valid 11x11 windows, averaged over R, G and B.
///
/// Degenerate case: for two constant images at 8-bit levels `a` and `b` every
/// window has zero variance and covariance, so the score reduces to the
/// luminance term `(2ab + C1) / (a^2 + b^2 + C1)` with `C1 = (0.01 * 255)^2`.
/// Images smaller than the window are rejected.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ssim_with(a, b, SsimMode::Rgb)
}

pub fn ssim_with(a: &RgbImage, b: &RgbImage, mode: SsimMode) -> Result<f64> {
    ensure_same(a, b, "ssim")?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            reason: "SSIM needs at least 11x11 pixels",
        });
    }
    Ok(match mode {
        SsimMode::Rgb => {
            (0..3)
                .map(|c| ssim_plane(&byte_plane(a, Some(c)), &byte_plane(b, Some(c)), w, h))
                .sum::<f64>()
                / 3.0
        }
        SsimMode::Luma => ssim_plane(&byte_plane(a, None), &byte_plane(b, None), w, h),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub name: String,
    /// `None` when the images are identical (infinite PSNR).
    pub psnr: Option<f64>,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim_mode: SsimMode,
    pub eval_size: Option<(usize, usize)>,
    pub pairs: Vec<PairScore>,
    /// Files present in only one of the two directories.
    pub unmatched: Vec<String>,
    /// Mean over finite PSNR values; `None` if there are none.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub infinite_psnr: usize,
    pub count: usize,
}

impl MetricReport {
    pub fn from_pairs(
        pairs: Vec<PairScore>,
        unmatched: Vec<String>,
        ssim_mode: SsimMode,
        eval_size: Option<(usize, usize)>,
    ) -> Self {
        let finite: Vec<f64> = pairs.iter().filter_map(|p| p.psnr).collect();
        let infinite_psnr = pairs.len() - finite.len();
        if infinite_psnr > 0 {
            log::warn!("{infinite_psnr} pair(s) are identical (PSNR inf); excluded from the PSNR mean");
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let ssims: Vec<f64> = pairs.iter().map(|p| p.ssim).collect();
        Self {
            ssim_mode,
            eval_size,
            count: pairs.len(),
            mean_psnr: mean(&finite),
            mean_ssim: mean(&ssims),
            infinite_psnr,
            unmatched,
            pairs,
        }
    }

    fn fmt_psnr(v: Option<f64>) -> String {
        v.map_or_else(|| "inf".to_string(), |p| format!("{p:.4}"))
    }

    /// Human-readable table headed by the SSIM channel convention.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# ssim: {}", self.ssim_mode.describe());
        if let Some((w, h)) = self.eval_size {
            let _ = writeln!(out, "# evaluated at {w}x{h}");
        }
        let _ = writeln!(out, "{:<40} {:>10} {:>8}", "image", "psnr_db", "ssim");
        for p in &self.pairs {
            let _ = writeln!(out, "{:<40} {:>10} {:>8.4}", p.name, Self::fmt_psnr(p.psnr), p.ssim);
        }
        let _ = writeln!(
            out,
            "{:<40} {:>10} {:>8}",
            format!("mean ({} images)", self.count),
            self.mean_psnr.map_or("n/a".into(), |v| format!("{v:.4}")),
            self.mean_ssim.map_or("n/a".into(), |v| format!("{v:.4}")),
        );
        for u in &self.unmatched {
            let _ = writeln!(out, "unmatched: {u}");
        }
        out
    }

    /// One JSON object per line: a header, one record per pair, then the summary.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "record": "header",
            "ssim_mode": self.ssim_mode,
            "ssim_convention": self.ssim_mode.describe(),
            "eval_size": self.eval_size,
        });
        let _ = writeln!(out, "{header}");
        for p in &self.pairs {
            let rec = serde_json::json!({
                "record": "pair",
                "name": p.name,
                "psnr": Self::fmt_psnr(p.psnr),
                "ssim": p.ssim,
            });
            let _ = writeln!(out, "{rec}");
        }
        for u in &self.unmatched {
            let _ = writeln!(out, "{}", serde_json::json!({"record": "unmatched", "name": u}));
        }
        let summary = serde_json::json!({
            "record": "summary",
            "count": self.count,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "infinite_psnr": self.infinite_psnr,
        });
        let _ = writeln!(out, "{summary}");
        out
    }
}

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Image files of a directory keyed by file stem.
fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_path(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                map.insert(stem.to_string(), path);
            }
        }
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Both images are resized to this `(width, height)` before scoring.
    pub size: Option<(usize, usize)>,
    pub ssim_mode: SsimMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            size: Some(DEFAULT_EVAL_SIZE),
            ssim_mode: SsimMode::Rgb,
        }
    }
}

pub fn score_pair(
    name: &str,
    enhanced: &RgbImage,
    reference: &RgbImage,
    options: &EvalOptions,
) -> Result<PairScore> {
    let (a, b) = match options.size {
        Some((w, h)) => (enhanced.resize(w, h), reference.resize(w, h)),
        None => (enhanced.clone(), reference.clone()),
    };
    let p = psnr(&a, &b)?;
    Ok(PairScore {
        name: name.to_string(),
        psnr: p.is_finite().then_some(p),
        ssim: ssim_with(&a, &b, options.ssim_mode)?,
    })
}

/// Scores every enhanced image against the reference with the same file stem.
pub fn evaluate(enhanced_dir: &Path, reference_dir: &Path, options: &EvalOptions) -> Result<MetricReport> {
    let enhanced = images_by_stem(enhanced_dir)?;
    let references = images_by_stem(reference_dir)?;
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (stem, path) in &enhanced {
        match references.get(stem) {
            Some(rpath) => {
                let a = RgbImage::load(path)?;
                let b = RgbImage::load(rpath)?;
                pairs.push(score_pair(stem, &a, &b, options)?);
            }
            None => unmatched.push(path.display().to_string()),
        }
    }
    for (stem, path) in &references {
        if !enhanced.contains_key(stem) {
            unmatched.push(path.display().to_string());
        }
    }
    Ok(MetricReport::from_pairs(
        pairs,
        unmatched,
        options.ssim_mode,
        options.size,
    ))
}
