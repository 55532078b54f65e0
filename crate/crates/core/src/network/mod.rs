//! Reflectance-estimation U-Net.
//!
//! The network maps a value plane `V` to an inverse-illumination plane `L`
//! and the reflectance is the elementwise product `R = V * L`, so no
//! illumination is ever reconstructed.
//!
//! Layout: four encoder stages and a bottleneck (two 3x3 convs each, 2x2
//! max-pool between stages), four decoder stages (2x bilinear upsample,
//! concat with the matching encoder output, two 3x3 convs) and one linear
//! output conv: 19 convolutions, ReLU after all but the last, no
//! normalization. Channel widths double per stage from `base_channels`.

pub mod checkpoint;
pub mod ops;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::color::Plane;
use crate::error::{Error, Result};
use ops::FeatureMap;

/// Floating-point element type of the network (implemented for `f32` and `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub const DEPTH: usize = 4;
pub const CONV_LAYERS: usize = 4 * 2 + 2 + 4 * 2 + 1;
/// Spatial dimensions must be multiples of this.
pub const SIZE_MULTIPLE: usize = 1 << DEPTH;

/// How the final conv output becomes the (positive) inverse illumination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Softplus,
    /// `max * sigmoid(z)`, bounded in `(0, max]`.
    ScaledSigmoid { max: f64 },
}

impl OutputActivation {
    fn apply(&self, z: f64) -> f64 {
        match *self {
            OutputActivation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            OutputActivation::ScaledSigmoid { max } => max * sigmoid(z),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match *self {
            OutputActivation::Softplus => sigmoid(z),
            OutputActivation::ScaledSigmoid { max } => {
                let s = sigmoid(z);
                max * s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub base_channels: usize,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            base_channels: 16,
            output_activation: OutputActivation::Softplus,
        }
    }
}

/// Name and shape of one convolution in the plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu: bool,
}

impl ArchSpec {
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        if let OutputActivation::ScaledSigmoid { max } = self.output_activation {
            if !(max > 0.0 && max.is_finite()) {
                return Err(Error::Config(format!(
                    "scaled sigmoid bound must be positive, got {max}"
                )));
            }
        }
        Ok(())
    }

    /// The 19 convolutions in execution order.
    pub fn layer_plan(&self) -> Vec<LayerPlan> {
        let b = self.base_channels;
        let width = |stage: usize| b << stage;
        let mut plan = Vec::with_capacity(CONV_LAYERS);
        let mut push = |name: String, cin: usize, cout: usize, relu: bool| {
            plan.push(LayerPlan {
                name,
                in_channels: cin,
                out_channels: cout,
                relu,
            })
        };
        for s in 0..DEPTH {
            let cin = if s == 0 { 1 } else { width(s - 1) };
            push(format!("enc{s}.conv1"), cin, width(s), true);
            push(format!("enc{s}.conv2"), width(s), width(s), true);
        }
        push("mid.conv1".into(), width(DEPTH - 1), width(DEPTH), true);
        push("mid.conv2".into(), width(DEPTH), width(DEPTH), true);
        for s in (0..DEPTH).rev() {
            let up = width(s + 1);
            push(format!("dec{s}.conv1"), up + width(s), width(s), true);
            push(format!("dec{s}.conv2"), width(s), width(s), true);
        }
        push("out.conv".into(), b, 1, false);
        plan
    }
}

/// Weights `(out, in * 9)` and bias of a 3x3 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu: bool,
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn fan_in(&self) -> usize {
        self.in_channels * 9
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub spec: ArchSpec,
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().unwrap()).unwrap();
        ModelParams {
            spec: self.spec,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    relu: l.relu,
                    weight: l.weight.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
        }
    }

    pub fn zero_grads(&self) -> ParamGrads<T> {
        ParamGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }
}

/// Kaiming-normal weights (fan-in, ReLU gain) and zero biases.
pub fn init_params<T: Real, R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Result<ModelParams<T>> {
    spec.validate()?;
    let layers = spec
        .layer_plan()
        .into_iter()
        .map(|p| {
            let fan_in = p.in_channels * 9;
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let weight = Array2::from_shape_simple_fn((p.out_channels, fan_in), || {
                T::from_f64(normal.sample(rng)).unwrap()
            });
            ConvLayer {
                name: p.name,
                in_channels: p.in_channels,
                out_channels: p.out_channels,
                relu: p.relu,
                weight,
                bias: Array1::zeros(p.out_channels),
            }
        })
        .collect();
    Ok(ModelParams {
        spec: *spec,
        layers,
    })
}

#[derive(Clone, Debug)]
pub struct LayerGrad<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Parameter gradients laid out like [`ModelParams::layers`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }
}

/// Inverse illumination and reflectance for one input plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub inverse_illumination: Plane,
    pub reflectance: Plane,
}

struct ConvRecord<T> {
    cols: Array2<T>,
    output: Rc<FeatureMap<T>>,
    input_shape: (usize, usize, usize),
}

/// Intermediate values of one forward pass, consumed by [`backward`].
pub struct Tape<T> {
    input: Plane,
    convs: Vec<ConvRecord<T>>,
    pools: Vec<(Vec<u32>, usize, usize)>,
    pre_activation: Vec<f64>,
}

fn check_input(v: &Plane) -> Result<()> {
    let (w, h) = v.dims();
    if w == 0 || h == 0 || w % SIZE_MULTIPLE != 0 || h % SIZE_MULTIPLE != 0 {
        return Err(Error::NotDivisible {
            width: w,
            height: h,
            multiple: SIZE_MULTIPLE,
        });
    }
    Ok(())
}

fn run<T: Real>(
    params: &ModelParams<T>,
    v: &Plane,
    mut tape: Option<&mut Tape<T>>,
) -> Result<(ForwardOutput, Vec<f64>)> {
    check_input(v)?;
    if params.layers.len() != CONV_LAYERS {
        return Err(Error::Checkpoint(format!(
            "expected {CONV_LAYERS} conv layers, found {}",
            params.layers.len()
        )));
    }
    let (w, h) = v.dims();
    let input = FeatureMap {
        data: Array2::from_shape_vec(
            (1, w * h),
            v.as_slice().iter().map(|&x| T::from_f64(x).unwrap()).collect(),
        )
        .expect("one channel"),
        height: h,
        width: w,
    };

    let mut conv = |idx: usize, x: &FeatureMap<T>| -> Rc<FeatureMap<T>> {
        let layer = &params.layers[idx];
        let cols = ops::im2col(x);
        let mut out = ops::conv3x3(&layer.weight, &layer.bias, &cols, x.height, x.width);
        if layer.relu {
            ops::relu_inplace(&mut out);
        }
        let out = Rc::new(out);
        if let Some(t) = tape.as_deref_mut() {
            t.convs.push(ConvRecord {
                cols,
                output: Rc::clone(&out),
                input_shape: (x.channels(), x.height, x.width),
            });
        }
        out
    };

    let mut skips = Vec::with_capacity(DEPTH);
    let mut pools = Vec::with_capacity(DEPTH);
    let mut x = Rc::new(input);
    for s in 0..DEPTH {
        let a = conv(2 * s, &x);
        let e = conv(2 * s + 1, &a);
        let (p, argmax) = ops::max_pool2(&e);
        pools.push((argmax, e.height, e.width));
        skips.push(e);
        x = Rc::new(p);
    }
    let a = conv(2 * DEPTH, &x);
    x = conv(2 * DEPTH + 1, &a);
    for (i, s) in (0..DEPTH).rev().enumerate() {
        let up = ops::upsample2(&x);
        let cat = ops::concat(&up, &skips[s]);
        let a = conv(2 * DEPTH + 2 + 2 * i, &cat);
        x = conv(2 * DEPTH + 3 + 2 * i, &a);
    }
    let z = conv(CONV_LAYERS - 1, &x);

    let act = params.spec.output_activation;
    let pre: Vec<f64> = z.data.iter().map(|v| v.to_f64().unwrap()).collect();
    let l = Plane::from_vec(w, h, pre.iter().map(|&zz| act.apply(zz)).collect())?;
    let r = Plane::from_array(v.array() * l.array());
    if let Some(t) = tape {
        t.pools = pools;
    }
    Ok((
        ForwardOutput {
            inverse_illumination: l,
            reflectance: r,
        },
        pre,
    ))
}

/// Runs the network on `v`, whose sides must be multiples of 16.
pub fn forward<T: Real>(params: &ModelParams<T>, v: &Plane) -> Result<ForwardOutput> {
    Ok(run(params, v, None)?.0)
}

/// Like [`forward`], keeping what [`backward`] needs.
pub fn forward_with_tape<T: Real>(params: &ModelParams<T>, v: &Plane) -> Result<(ForwardOutput, Tape<T>)> {
    let mut tape = Tape {
        input: v.clone(),
        convs: Vec::with_capacity(CONV_LAYERS),
        pools: Vec::new(),
        pre_activation: Vec::new(),
    };
    let (out, pre) = run(params, v, Some(&mut tape))?;
    tape.pre_activation = pre;
    Ok((out, tape))
}

/// Two passes of one parameter set over an input and its disturbed copy.
pub fn forward_pair<T: Real>(
    params: &ModelParams<T>,
    v: &Plane,
    v_disturbed: &Plane,
) -> Result<(ForwardOutput, ForwardOutput)> {
    v.ensure_same_dims(v_disturbed, "forward pair")?;
    Ok((forward(params, v)?, forward(params, v_disturbed)?))
}

/// Accumulates into `grads` the parameter gradient of a scalar whose
/// gradients with respect to the forward outputs are `d_reflectance` and
/// `d_inverse_illumination`.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    tape: Tape<T>,
    d_reflectance: &Plane,
    d_inverse_illumination: &Plane,
    grads: &mut ParamGrads<T>,
) -> Result<()> {
    let v = &tape.input;
    v.ensure_same_dims(d_reflectance, "reflectance gradient")?;
    v.ensure_same_dims(d_inverse_illumination, "inverse illumination gradient")?;
    let (w, h) = v.dims();
    let act = params.spec.output_activation;

    // R = V * L, L = act(z)
    let dz: Vec<T> = d_inverse_illumination
        .as_slice()
        .iter()
        .zip(d_reflectance.as_slice())
        .zip(v.as_slice())
        .zip(&tape.pre_activation)
        .map(|(((&dl, &dr), &vv), &z)| T::from_f64((dl + dr * vv) * act.derivative(z)).unwrap())
        .collect();
    let mut g = FeatureMap {
        data: Array2::from_shape_vec((1, w * h), dz).expect("one channel"),
        height: h,
        width: w,
    };

    let mut records = tape.convs;
    let mut conv_back = |idx: usize, grad: FeatureMap<T>, need_input: bool| -> Option<FeatureMap<T>> {
        let rec = records.pop().expect("one record per conv");
        let layer = &params.layers[idx];
        let mut d = grad.data;
        if layer.relu {
            ops::relu_backward_inplace(&mut d, &rec.output.data);
        }
        let lg = &mut grads.layers[idx];
        ops::conv3x3_backward(
            &layer.weight,
            &rec.cols,
            &d,
            &mut lg.weight,
            &mut lg.bias,
            need_input.then_some(rec.input_shape),
        )
    };

    g = conv_back(CONV_LAYERS - 1, g, true).expect("input gradient");
    let mut skip_grads: Vec<Option<FeatureMap<T>>> = (0..DEPTH).map(|_| None).collect();
    for (i, s) in (0..DEPTH).enumerate() {
        let j = DEPTH - 1 - i;
        g = conv_back(2 * DEPTH + 3 + 2 * j, g, true).expect("input gradient");
        g = conv_back(2 * DEPTH + 2 + 2 * j, g, true).expect("input gradient");
        let up_channels = g.channels() - params.layers[2 * s + 1].out_channels;
        let (d_up, d_skip) = ops::split(g, up_channels);
        skip_grads[s] = Some(d_skip);
        g = ops::upsample2_backward(&d_up, d_up.height / 2, d_up.width / 2);
    }
    g = conv_back(2 * DEPTH + 1, g, true).expect("input gradient");
    g = conv_back(2 * DEPTH, g, true).expect("input gradient");
    for s in (0..DEPTH).rev() {
        let (argmax, ph, pw) = &tape.pools[s];
        let mut d_e = ops::max_pool2_backward(&g, argmax, *ph, *pw);
        d_e.data += &skip_grads[s].take().expect("skip gradient").data;
        g = conv_back(2 * s + 1, d_e, true).expect("input gradient");
        match conv_back(2 * s, g, s > 0) {
            Some(next) => g = next,
            None => return Ok(()),
        }
    }
    unreachable!("the first encoder conv ends the pass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plan_has_nineteen_convs() {
        let plan = ArchSpec::with_base(16).layer_plan();
        assert_eq!(plan.len(), 19);
        assert_eq!(plan.iter().filter(|p| !p.relu).count(), 1);
        assert_eq!(plan[8].in_channels, 128);
        assert_eq!(plan[9].out_channels, 256);
        assert_eq!(plan[10].in_channels, 256 + 128);
        assert_eq!(plan[16].in_channels, 32 + 16);
        assert_eq!(plan[18].out_channels, 1);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = ArchSpec::with_base(4);
        let a: ModelParams<f32> = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b: ModelParams<f32> = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        let c: ModelParams<f32> = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let spec = ArchSpec::with_base(2);
        let p: ModelParams<f64> = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            forward(&p, &Plane::zeros(24, 16)),
            Err(Error::NotDivisible { .. })
        ));
    }

    #[test]
    fn zero_input_gives_zero_reflectance() {
        let spec = ArchSpec::with_base(2);
        let p: ModelParams<f32> = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = forward(&p, &Plane::zeros(32, 16)).unwrap();
        assert_eq!(out.reflectance.dims(), (32, 16));
        assert!(out.reflectance.as_slice().iter().all(|&r| r == 0.0));
        assert!(out.inverse_illumination.as_slice().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn activations() {
        let sp = OutputActivation::Softplus;
        assert!((sp.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((sp.apply(50.0) - 50.0).abs() < 1e-12);
        assert!(sp.apply(-50.0) > 0.0);
        let sg = OutputActivation::ScaledSigmoid { max: 4.0 };
        assert!((sg.apply(0.0) - 2.0).abs() < 1e-15);
        for z in [-3.0, -0.2, 0.0, 0.7, 4.0] {
            for act in [sp, sg] {
                let fd = (act.apply(z + 1e-6) - act.apply(z - 1e-6)) / 2e-6;
                assert!((fd - act.derivative(z)).abs() < 1e-8);
            }
        }
    }
}
