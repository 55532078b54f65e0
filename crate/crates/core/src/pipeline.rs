//! End-to-end inference: split HSV, enhance the value plane, regroup.

use std::time::{Duration, Instant};

use crate::color::{regroup, rgb_to_hsv, Plane, RgbImage};
use crate::error::{Error, Result};
use crate::network::{self, ForwardOutput, ModelParams, Real, SIZE_MULTIPLE};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub decompose: Duration,
    pub network: Duration,
    pub regroup: Duration,
}

#[derive(Clone, Debug)]
pub struct EnhanceResult {
    pub enhanced: RgbImage,
    /// Input value plane.
    pub value: Plane,
    /// Reflectance clamped to `[0, 1]`: the enhanced value plane.
    pub reflectance: Plane,
    pub inverse_illumination: Plane,
    pub timings: StageTimings,
}

/// Mirror index without repeating the edge sample, valid for any offset.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads on the right and bottom up to the next multiple.
pub fn reflect_pad(p: &Plane, multiple: usize) -> Plane {
    let (w, h) = p.dims();
    let pw = w.div_ceil(multiple) * multiple;
    let ph = h.div_ceil(multiple) * multiple;
    if (pw, ph) == (w, h) {
        return p.clone();
    }
    Plane::from_fn(pw, ph, |x, y| {
        p.get(reflect_index(x as isize, w), reflect_index(y as isize, h))
    })
}

pub fn crop(p: &Plane, width: usize, height: usize) -> Plane {
    Plane::from_fn(width, height, |x, y| p.get(x, y))
}

/// Forward pass on a value plane of any size (pad, run, crop).
pub fn enhance_value<T: Real>(params: &ModelParams<T>, v: &Plane) -> Result<ForwardOutput> {
    let (w, h) = v.dims();
    let padded = reflect_pad(v, SIZE_MULTIPLE);
    let out = network::forward(params, &padded)?;
    Ok(ForwardOutput {
        inverse_illumination: crop(&out.inverse_illumination, w, h),
        reflectance: crop(&out.reflectance, w, h),
    })
}

pub fn enhance<T: Real>(img: &RgbImage, params: &ModelParams<T>) -> Result<EnhanceResult> {
    let t0 = Instant::now();
    let hsv = rgb_to_hsv(img);
    let t1 = Instant::now();
    let out = enhance_value(params, &hsv.value)?;
    let reflectance = out.reflectance.clamp_unit();
    let t2 = Instant::now();
    let enhanced = regroup(&hsv, &reflectance)?;
    let t3 = Instant::now();
    Ok(EnhanceResult {
        enhanced,
        value: hsv.value,
        reflectance,
        inverse_illumination: out.inverse_illumination,
        timings: StageTimings {
            decompose: t1 - t0,
            network: t2 - t1,
            regroup: t3 - t2,
        },
    })
}

/// Hue and saturation of `low` with the value plane of `normal`.
pub fn regroup_demo(low: &RgbImage, normal: &RgbImage) -> Result<RgbImage> {
    if low.dims() != normal.dims() {
        return Err(Error::mismatch("regroup demo", low.dims(), normal.dims()));
    }
    let colors = rgb_to_hsv(low);
    regroup(&colors, &normal.max_channel())
}
