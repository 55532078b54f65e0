//! Unit-interval image containers and the RGB/HSV hexcone conversion.
//!
//! Hue is stored as a fraction of a full turn in `[0, 1)`, so every HSV plane
//! shares the unit interval with the RGB channels. Achromatic pixels get a hue
//! of 0; saturation 0 makes the hue irrelevant when converting back.

use std::path::Path;

use ndarray::{Array2, Array3, Zip};

use crate::error::{Error, Result};

/// A single-channel `height x width` grid of reals.
///
/// Carries the value channel and every quantity derived from it during
/// enhancement (disturbed value, reflectance, inverse illumination).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    data: Array2<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            data: Array2::from_elem((height, width), value),
        }
    }

    /// Builds a plane from row-major samples.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidValue(format!(
                "{} samples cannot fill a {width}x{height} plane",
                data.len()
            )));
        }
        let data = Array2::from_shape_vec((height, width), data)
            .map_err(|e| Error::InvalidValue(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            data: Array2::from_shape_fn((height, width), |(y, x)| f(x, y)),
        }
    }

    /// Wraps an array indexed `[row, column]`.
    pub fn from_array(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[[y, x]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[[y, x]] = value;
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Row-major samples.
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("planes are always stored in standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data
            .as_slice_mut()
            .expect("planes are always stored in standard layout")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.mapv(f),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn clamp_unit(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub(crate) fn ensure_same_dims(&self, other: &Plane, context: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::mismatch(context, self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Quantizes to an 8-bit grayscale image, clamping to `[0, 1]` first.
    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            image::Luma([quantize(self.get(x as usize, y as usize))])
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_luma8().save(path).map_err(|source| Error::Encode {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Hue, saturation and value planes of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct HsvPlanes {
    pub hue: Plane,
    pub saturation: Plane,
    pub value: Plane,
}

impl HsvPlanes {
    pub fn dims(&self) -> (usize, usize) {
        self.value.dims()
    }
}

/// An RGB image with every component in `[0, 1]`, stored `[row, column, channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    data: Array3<f64>,
}

impl RgbImage {
    /// Wraps `[row, column, channel]` data after checking the invariants.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 {
            return Err(Error::InvalidValue(format!("expected 3 channels, got {c}")));
        }
        if w == 0 || h == 0 {
            return Err(Error::TooSmall {
                width: w,
                height: h,
                reason: "images need at least one pixel",
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "rgb component {bad} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Builds an image from a per-pixel closure; outputs are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..3 {
                    data[[y, x, c]] = px[c].clamp(0.0, 1.0);
                }
            }
        }
        Self { data }
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [
            self.data[[y, x, 0]],
            self.data[[y, x, 1]],
            self.data[[y, x, 2]],
        ]
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.data
    }

    /// One channel (0 = red, 1 = green, 2 = blue) as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        Plane::from_fn(self.width(), self.height(), |x, y| self.data[[y, x, c]])
    }

    /// Channel-wise maximum, which is exactly the HSV value plane.
    pub fn max_channel(&self) -> Plane {
        Plane::from_fn(self.width(), self.height(), |x, y| {
            let [r, g, b] = self.pixel(x, y);
            r.max(g).max(b)
        })
    }

    /// Decodes an 8-bit RGB buffer by dividing every component by 255.
    pub fn from_bytes(raw: &image::RgbImage) -> Self {
        let (w, h) = (raw.width() as usize, raw.height() as usize);
        let mut data = Array3::zeros((h, w, 3));
        for (x, y, px) in raw.enumerate_pixels() {
            for c in 0..3 {
                data[[y as usize, x as usize, c]] = f64::from(px.0[c]) / 255.0;
            }
        }
        Self { data }
    }

    /// Quantizes with `round(x * 255)` (halves round up), clamped to `[0, 255]`.
    pub fn to_bytes(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let [r, g, b] = self.pixel(x as usize, y as usize);
            image::Rgb([quantize(r), quantize(g), quantize(b)])
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_bytes(&img.to_rgb8()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_bytes().save(path).map_err(|source| Error::Encode {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resize (triangle filter) in floating point.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if self.dims() == (width, height) {
            return self.clone();
        }
        let src = image::Rgb32FImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let [r, g, b] = self.pixel(x as usize, y as usize);
            image::Rgb([r as f32, g as f32, b as f32])
        });
        let dst = image::imageops::resize(
            &src,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        Self::from_fn(width, height, |x, y| {
            let px = dst.get_pixel(x as u32, y as u32).0;
            [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])]
        })
    }
}

/// Maps a unit-interval sample to 8 bits with round-half-up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Converts one RGB triple to `(hue, saturation, value)`.
#[inline]
pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let value = max;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, saturation, value];
    }
    let sector = if max == r {
        (g - b) / delta
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut hue = sector / 6.0;
    if hue < 0.0 {
        hue += 1.0;
    }
    if hue >= 1.0 {
        hue = 0.0;
    }
    [hue, saturation, value]
}

/// Inverse hexcone mapping; the result is clamped to `[0, 1]`.
#[inline]
pub fn hsv_to_rgb_pixel([hue, saturation, value]: [f64; 3]) -> [f64; 3] {
    let h6 = hue.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = value * (1.0 - saturation);
    let q = value * (1.0 - saturation * f);
    let t = value * (1.0 - saturation * (1.0 - f));
    let rgb = match sector as u32 % 6 {
        0 => [value, t, p],
        1 => [q, value, p],
        2 => [p, value, t],
        3 => [p, q, value],
        4 => [t, p, value],
        _ => [value, p, q],
    };
    rgb.map(|c| c.clamp(0.0, 1.0))
}

pub fn rgb_to_hsv(img: &RgbImage) -> HsvPlanes {
    let (w, h) = img.dims();
    let mut hue = Plane::zeros(w, h);
    let mut saturation = Plane::zeros(w, h);
    let mut value = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let [hh, ss, vv] = rgb_to_hsv_pixel(img.pixel(x, y));
            hue.set(x, y, hh);
            saturation.set(x, y, ss);
            value.set(x, y, vv);
        }
    }
    HsvPlanes {
        hue,
        saturation,
        value,
    }
}

pub fn hsv_to_rgb(planes: &HsvPlanes) -> RgbImage {
    let (w, h) = planes.dims();
    let mut data = Array3::zeros((h, w, 3));
    Zip::indexed(planes.hue.array())
        .and(planes.saturation.array())
        .and(planes.value.array())
        .for_each(|(y, x), &hh, &ss, &vv| {
            let rgb = hsv_to_rgb_pixel([hh, ss, vv]);
            for c in 0..3 {
                data[[y, x, c]] = rgb[c];
            }
        });
    RgbImage { data }
}

/// Recombines the hue and saturation of `colors` with a new value plane.
pub fn regroup(colors: &HsvPlanes, enhanced_value: &Plane) -> Result<RgbImage> {
    colors
        .value
        .ensure_same_dims(enhanced_value, "regroup colors vs enhanced value")?;
    if let Some(bad) = enhanced_value
        .as_slice()
        .iter()
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidValue(format!(
            "enhanced value {bad} outside [0, 1]"
        )));
    }
    Ok(hsv_to_rgb(&HsvPlanes {
        hue: colors.hue.clone(),
        saturation: colors.saturation.clone(),
        value: enhanced_value.clone(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Textbook hexcone conversion in degrees, written independently of the
    // sector arithmetic above.
    fn reference_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
        let cmax = r.max(g).max(b);
        let cmin = r.min(g).min(b);
        let d = cmax - cmin;
        let h_deg = if d == 0.0 {
            0.0
        } else if cmax == r {
            60.0 * (((g - b) / d) % 6.0)
        } else if cmax == g {
            60.0 * ((b - r) / d + 2.0)
        } else {
            60.0 * ((r - g) / d + 4.0)
        };
        let h_deg = if h_deg < 0.0 { h_deg + 360.0 } else { h_deg };
        let s = if cmax == 0.0 { 0.0 } else { d / cmax };
        (h_deg / 360.0, s, cmax)
    }

    #[test]
    fn achromatic_and_primaries() {
        assert_eq!(rgb_to_hsv_pixel([0.5, 0.5, 0.5]), [0.0, 0.0, 0.5]);
        assert_eq!(rgb_to_hsv_pixel([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        assert_eq!(hsv_to_rgb_pixel([0.0, 0.0, 0.5]), [0.5, 0.5, 0.5]);
        let green = hsv_to_rgb_pixel([1.0 / 3.0, 1.0, 1.0]);
        for (got, want) in green.iter().zip([0.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_reference_on_blueish_pixel() {
        // (0.2, 0.4, 0.6): max is blue, d = 0.4, h = 60 * ((0.2 - 0.4) / 0.4 + 4) = 210 deg.
        let [h, s, v] = rgb_to_hsv_pixel([0.2, 0.4, 0.6]);
        let (rh, rs, rv) = reference_hsv(0.2, 0.4, 0.6);
        assert!((h - 210.0 / 360.0).abs() < 1e-12);
        assert!((h - rh).abs() < 1e-12);
        assert!((s - 2.0 / 3.0).abs() < 1e-12 && (s - rs).abs() < 1e-12);
        assert_eq!(v, rv);
    }

    #[test]
    fn quantization_endpoints_and_half() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn regroup_rejects_mismatch() {
        let img = RgbImage::from_fn(4, 3, |_, _| [0.1, 0.2, 0.3]);
        let hsv = rgb_to_hsv(&img);
        assert!(matches!(
            regroup(&hsv, &Plane::zeros(3, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn regroup_full_value_keeps_hues() {
        let img = RgbImage::from_fn(6, 1, |x, _| hsv_to_rgb_pixel([x as f64 / 6.0, 1.0, 0.3]));
        let hsv = rgb_to_hsv(&img);
        let out = regroup(&hsv, &Plane::filled(6, 1, 1.0)).unwrap();
        let back = rgb_to_hsv(&out);
        for x in 0..6 {
            assert!((back.value.get(x, 0) - 1.0).abs() < 1e-12);
            assert!((back.hue.get(x, 0) - x as f64 / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn byte_roundtrip_quantization_bound() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let img = RgbImage::from_fn(31, 17, |_, _| {
            [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]
        });
        let back = RgbImage::from_bytes(&img.to_bytes());
        let err = img
            .array()
            .iter()
            .zip(back.array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1.0 / 510.0 + 1e-12, "max error {err}");
    }

    #[test]
    fn from_array_validates_range() {
        let bad = Array3::from_elem((2, 2, 3), 1.5);
        assert!(RgbImage::from_array(bad).is_err());
    }

    proptest! {
        #[test]
        fn hsv_roundtrip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hsv = rgb_to_hsv_pixel([r, g, b]);
            prop_assert_eq!(hsv[2], r.max(g).max(b));
            prop_assert!((0.0..1.0).contains(&hsv[0]));
            let back = hsv_to_rgb_pixel(hsv);
            for (a, b) in back.iter().zip([r, g, b]) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn agrees_with_reference(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let [h, s, v] = rgb_to_hsv_pixel([r, g, b]);
            let (rh, rs, rv) = reference_hsv(r, g, b);
            let dh = (h - rh).abs();
            prop_assert!(dh < 1e-9 || (1.0 - dh) < 1e-9);
            prop_assert!((s - rs).abs() < 1e-12);
            prop_assert_eq!(v, rv);
        }
    }
}
