//! Non-reference training losses and their analytic gradients.
//!
//! Every squared norm is a mean over the elements it covers, so the losses
//! do not scale with resolution. Spatial differences are forward differences
//! without padding; a plane of `H x W` yields `H x (W-1)` horizontal and
//! `(H-1) x W` vertical differences, each averaged over its own size.
//!
//! There is intentionally no reconstruction term comparing the input with a
//! product of reflectance and illumination.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::color::Plane;
use crate::error::{Error, Result};
use crate::network::ForwardOutput;

/// Pooling windows and exposure target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSpec {
    pub n_exposure: usize,
    pub m_structure: usize,
    pub e_target: f64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            n_exposure: 16,
            m_structure: 4,
            e_target: 0.7,
        }
    }
}

/// Which loss terms participate in the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    pub rc: bool,
    pub ec: bool,
    pub ss: bool,
    pub is: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            rc: true,
            ec: true,
            ss: true,
            is: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub pool: PoolSpec,
    pub w_is: f64,
    pub toggles: LossToggles,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            pool: PoolSpec::default(),
            w_is: 10.0,
            toggles: LossToggles::default(),
        }
    }
}

/// The four loss values and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rc: f64,
    pub l_ec: f64,
    pub l_ss: f64,
    pub l_is: f64,
    pub total: f64,
    pub w_is: f64,
}

impl LossBreakdown {
    pub fn from_components(l_rc: f64, l_ec: f64, l_ss: f64, l_is: f64, w_is: f64) -> Self {
        Self {
            l_rc,
            l_ec,
            l_ss,
            l_is,
            total: l_rc + l_ec + l_ss + w_is * l_is,
            w_is,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rc, self.l_ec, self.l_ss, self.l_is, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Componentwise mean of several breakdowns sharing one weight.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self::from_components(
            sum(|b| b.l_rc),
            sum(|b| b.l_ec),
            sum(|b| b.l_ss),
            sum(|b| b.l_is),
            items[0].w_is,
        )
    }
}

thread_local! {
    static EXPOSURE_CALLS: Cell<usize> = const { Cell::new(0) };
    static STRUCTURE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Per-thread evaluation counts of the exposure and structure terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CallCounts {
    pub exposure_control: usize,
    pub spatial_structure: usize,
}

pub fn call_counts() -> CallCounts {
    CallCounts {
        exposure_control: EXPOSURE_CALLS.with(Cell::get),
        spatial_structure: STRUCTURE_CALLS.with(Cell::get),
    }
}

pub fn reset_call_counts() {
    EXPOSURE_CALLS.with(|c| c.set(0));
    STRUCTURE_CALLS.with(|c| c.set(0));
}

fn bump(counter: &'static std::thread::LocalKey<Cell<usize>>) {
    counter.with(|c| c.set(c.get() + 1));
}

/// Non-overlapping `k x k` means; trailing partial windows are dropped.
pub fn avg_pool(p: &Plane, k: usize) -> Result<Plane> {
    if k == 0 || k > p.width().min(p.height()) {
        return Err(Error::WindowTooLarge {
            window: k,
            width: p.width(),
            height: p.height(),
        });
    }
    let (ow, oh) = (p.width() / k, p.height() / k);
    let scale = 1.0 / (k * k) as f64;
    let src = p.as_slice();
    let w = p.width();
    let mut out = Plane::zeros(ow, oh);
    let dst = out.as_mut_slice();
    for y in 0..oh * k {
        let row = &src[y * w..y * w + ow * k];
        let orow = &mut dst[(y / k) * ow..(y / k + 1) * ow];
        for (ox, cell) in orow.iter_mut().enumerate() {
            *cell += row[ox * k..(ox + 1) * k].iter().sum::<f64>();
        }
    }
    dst.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Adjoint of [`avg_pool`]: spreads each pooled gradient over its window.
pub fn avg_pool_backward(grad: &Plane, k: usize, width: usize, height: usize) -> Plane {
    let scale = 1.0 / (k * k) as f64;
    let mut out = Plane::zeros(width, height);
    for y in 0..grad.height() * k {
        for x in 0..grad.width() * k {
            out.set(x, y, grad.get(x / k, y / k) * scale);
        }
    }
    out
}

/// Horizontal and vertical forward differences.
pub fn grad_xy(p: &Plane) -> (Plane, Plane) {
    let (w, h) = p.dims();
    let gx = Plane::from_fn(w.saturating_sub(1), h, |x, y| p.get(x + 1, y) - p.get(x, y));
    let gy = Plane::from_fn(w, h.saturating_sub(1), |x, y| p.get(x, y + 1) - p.get(x, y));
    (gx, gy)
}

fn grad_xy_backward(dgx: &Plane, dgy: &Plane, width: usize, height: usize) -> Plane {
    let mut out = Plane::zeros(width, height);
    for y in 0..dgx.height() {
        for x in 0..dgx.width() {
            let g = dgx.get(x, y);
            out.set(x + 1, y, out.get(x + 1, y) + g);
            out.set(x, y, out.get(x, y) - g);
        }
    }
    for y in 0..dgy.height() {
        for x in 0..dgy.width() {
            let g = dgy.get(x, y);
            out.set(x, y + 1, out.get(x, y + 1) + g);
            out.set(x, y, out.get(x, y) - g);
        }
    }
    out
}

fn mean_square(p: &Plane) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.as_slice().iter().map(|v| v * v).sum::<f64>() / p.len() as f64
}

/// `d mean(p^2) / dp`.
fn mean_square_grad(p: &Plane) -> Plane {
    let n = p.len().max(1) as f64;
    p.map(|v| 2.0 * v / n)
}

fn diff(a: &Plane, b: &Plane) -> Plane {
    Plane::from_array(a.array() - b.array())
}

/// Mean squared difference of the two reflectances.
pub fn reflectance_consistency(r: &Plane, r_prime: &Plane) -> Result<f64> {
    Ok(reflectance_consistency_grad(r, r_prime)?.0)
}

/// Value and gradient with respect to `r`; the gradient for `r_prime` is its negation.
pub fn reflectance_consistency_grad(r: &Plane, r_prime: &Plane) -> Result<(f64, Plane)> {
    r.ensure_same_dims(r_prime, "reflectance consistency")?;
    let d = diff(r, r_prime);
    Ok((mean_square(&d), mean_square_grad(&d)))
}

/// Mean over `n x n` cells of `(cell mean - E)^2`.
pub fn exposure_control(r: &Plane, spec: &PoolSpec) -> Result<f64> {
    Ok(exposure_control_grad(r, spec)?.0)
}

pub fn exposure_control_grad(r: &Plane, spec: &PoolSpec) -> Result<(f64, Plane)> {
    bump(&EXPOSURE_CALLS);
    let pooled = avg_pool(r, spec.n_exposure)?;
    let off = pooled.map(|v| v - spec.e_target);
    let loss = mean_square(&off);
    let grad = avg_pool_backward(
        &mean_square_grad(&off),
        spec.n_exposure,
        r.width(),
        r.height(),
    );
    Ok((loss, grad))
}

/// Squared mismatch of signed pooled gradients between reflectance and input.
pub fn spatial_structure(r: &Plane, v: &Plane, spec: &PoolSpec) -> Result<f64> {
    Ok(spatial_structure_grad(r, v, spec)?.0)
}

/// Value and gradient with respect to `r` (the input `v` is data).
pub fn spatial_structure_grad(r: &Plane, v: &Plane, spec: &PoolSpec) -> Result<(f64, Plane)> {
    bump(&STRUCTURE_CALLS);
    r.ensure_same_dims(v, "spatial structure")?;
    let m = spec.m_structure;
    let rm = avg_pool(r, m)?;
    let vm = avg_pool(v, m)?;
    let (rx, ry) = grad_xy(&rm);
    let (vx, vy) = grad_xy(&vm);
    let dx = diff(&rx, &vx);
    let dy = diff(&ry, &vy);
    let loss = mean_square(&dx) + mean_square(&dy);
    let d_pooled = grad_xy_backward(
        &mean_square_grad(&dx),
        &mean_square_grad(&dy),
        rm.width(),
        rm.height(),
    );
    Ok((loss, avg_pool_backward(&d_pooled, m, r.width(), r.height())))
}

/// Squared total variation of one plane: `mean(dx^2) + mean(dy^2)`.
pub fn total_variation_sq(l: &Plane) -> f64 {
    total_variation_sq_grad(l).0
}

pub fn total_variation_sq_grad(l: &Plane) -> (f64, Plane) {
    let (gx, gy) = grad_xy(l);
    let loss = mean_square(&gx) + mean_square(&gy);
    let grad = grad_xy_backward(
        &mean_square_grad(&gx),
        &mean_square_grad(&gy),
        l.width(),
        l.height(),
    );
    (loss, grad)
}

/// Smoothness of both inverse-illumination maps.
pub fn illumination_smoothness(l: &Plane, l_prime: &Plane) -> Result<f64> {
    l.ensure_same_dims(l_prime, "illumination smoothness")?;
    Ok(total_variation_sq(l) + total_variation_sq(l_prime))
}

/// Gradients of the total loss with respect to every network output.
#[derive(Clone, Debug)]
pub struct OutputGradients {
    pub reflectance: Plane,
    pub inverse_illumination: Plane,
    /// One pair per disturbed input, in the order they were supplied.
    pub disturbed: Vec<OutputGradients>,
}

/// Total loss of one training sample.
///
/// `disturbed` holds the outputs for every disturbed copy of `v`; it may be
/// empty, which drops the consistency term. Exposure and structure terms are
/// evaluated on the original reflectance only.
pub fn total_loss(
    original: &ForwardOutput,
    disturbed: &[ForwardOutput],
    v: &Plane,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    Ok(total_loss_with_grad(original, disturbed, v, config)?.0)
}

pub fn total_loss_with_grad(
    original: &ForwardOutput,
    disturbed: &[ForwardOutput],
    v: &Plane,
    config: &LossConfig,
) -> Result<(LossBreakdown, OutputGradients)> {
    let toggles = config.toggles;
    let r = &original.reflectance;
    let l = &original.inverse_illumination;
    r.ensure_same_dims(v, "reflectance vs input")?;
    l.ensure_same_dims(v, "inverse illumination vs input")?;

    let (w, h) = v.dims();
    let mut d_r = Plane::zeros(w, h);
    let mut d_l = Plane::zeros(w, h);
    let mut disturbed_grads: Vec<OutputGradients> = disturbed
        .iter()
        .map(|_| OutputGradients {
            reflectance: Plane::zeros(w, h),
            inverse_illumination: Plane::zeros(w, h),
            disturbed: Vec::new(),
        })
        .collect();

    let mut l_rc = 0.0;
    if toggles.rc {
        for (out, grads) in disturbed.iter().zip(disturbed_grads.iter_mut()) {
            let (loss, g) = reflectance_consistency_grad(r, &out.reflectance)?;
            l_rc += loss;
            *d_r.array_mut() += g.array();
            *grads.reflectance.array_mut() -= g.array();
        }
    }

    let mut l_ec = 0.0;
    if toggles.ec {
        let (loss, g) = exposure_control_grad(r, &config.pool)?;
        l_ec = loss;
        *d_r.array_mut() += g.array();
    }

    let mut l_ss = 0.0;
    if toggles.ss {
        let (loss, g) = spatial_structure_grad(r, v, &config.pool)?;
        l_ss = loss;
        *d_r.array_mut() += g.array();
    }

    let mut l_is = 0.0;
    if toggles.is {
        let (loss, g) = total_variation_sq_grad(l);
        l_is += loss;
        *d_l.array_mut() += &(g.array() * config.w_is);
        for (out, grads) in disturbed.iter().zip(disturbed_grads.iter_mut()) {
            out.inverse_illumination
                .ensure_same_dims(v, "disturbed inverse illumination vs input")?;
            let (loss, g) = total_variation_sq_grad(&out.inverse_illumination);
            l_is += loss;
            *grads.inverse_illumination.array_mut() += &(g.array() * config.w_is);
        }
    }

    let breakdown = LossBreakdown::from_components(l_rc, l_ec, l_ss, l_is, config.w_is);
    Ok((
        breakdown,
        OutputGradients {
            reflectance: d_r,
            inverse_illumination: d_l,
            disturbed: disturbed_grads,
        },
    ))
}
