//! Observation encoders: image (with augmentation and A-LIX), waypoints and
//! measurements, fused into one latent vector.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use rlad_tensor::{
    scoped, scoped_mut, Conv2d, Graph, LayerNorm, Linear, Mlp, Module, Param, SampleGrid, Tensor,
    Var,
};

use crate::error::{Error, Result};

pub const FRAME_STACK: usize = miniurban::FRAME_STACK;
pub const NUM_WAYPOINTS: usize = miniurban::NUM_WAYPOINTS;
/// Stacked RGB channels fed to the image encoder.
pub const IMAGE_CHANNELS: usize = 3 * FRAME_STACK;
pub const IMAGE_LATENT: usize = 256;
pub const WAYPOINT_LATENT: usize = 32;
pub const MEASUREMENT_LATENT: usize = 16;
pub const LATENT: usize = IMAGE_LATENT + WAYPOINT_LATENT + MEASUREMENT_LATENT;
/// Replicate padding used by the random-shift augmentation.
pub const AUG_PAD: usize = 8;

/// Spatial size at which the stride-1 stack starts.
const STRIDE1_INPUT: usize = 15;
const STRIDE1_LAYERS: usize = 5;
const KERNEL: usize = 3;

/// One convolution of the image encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

/// Convolution plan for a square input of side `resolution`.
///
/// At 256 px this is four 3x3 stride-2 convolutions (9→32→32→32→64) followed
/// by five 3x3 stride-1 convolutions at 64 channels, ending at 64x5x5. Smaller
/// inputs drop 32→32 stride-2 layers so the stride-1 stack still starts at
/// 15x15 and the flattened size stays 1600.
pub fn conv_plan(resolution: usize) -> Result<Vec<ConvSpec>> {
    let full_stride2 = [(IMAGE_CHANNELS, 32), (32, 32), (32, 32), (32, 64)];
    for dropped in 0..=2 {
        let n2 = full_stride2.len() - dropped;
        let mut size = resolution;
        for _ in 0..n2 {
            if size < KERNEL {
                break;
            }
            size = (size - KERNEL) / 2 + 1;
        }
        if size == STRIDE1_INPUT {
            let mut plan: Vec<ConvSpec> = full_stride2
                .iter()
                .enumerate()
                .filter(|(i, _)| !(1..=dropped).contains(i))
                .map(|(_, &(i, o))| ConvSpec {
                    in_channels: i,
                    out_channels: o,
                    stride: 2,
                })
                .collect();
            plan.extend((0..STRIDE1_LAYERS).map(|_| ConvSpec {
                in_channels: 64,
                out_channels: 64,
                stride: 1,
            }));
            return Ok(plan);
        }
    }
    Err(Error::Config(format!(
        "image resolution {resolution} is not supported (use 64, 128 or 256)"
    )))
}

/// Output `[C, H, W]` of every convolution for a square input.
pub fn conv_shapes(resolution: usize) -> Result<Vec<[usize; 3]>> {
    let mut size = resolution;
    Ok(conv_plan(resolution)?
        .into_iter()
        .map(|c| {
            size = (size - KERNEL) / c.stride + 1;
            [c.out_channels, size, size]
        })
        .collect())
}

/// Random sub-pixel shift regularizer applied to convolutional features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlixConfig {
    pub enabled: bool,
    /// Maximum shift in feature-map pixels.
    pub smoothness: f32,
    /// Keep the layer active for evaluation forward passes.
    pub at_eval: bool,
}

impl Default for AlixConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            smoothness: 0.5,
            at_eval: false,
        }
    }
}

/// Sampling grid that shifts every location of a `[batch, h, w]` map by an
/// independent uniform offset in `[-s, s]^2`.
pub fn alix_grid(
    batch: usize,
    height: usize,
    width: usize,
    s: f32,
    rng: &mut dyn RngCore,
) -> SampleGrid {
    let mut coords = Vec::with_capacity(batch * height * width);
    for _ in 0..batch {
        for i in 0..height {
            for j in 0..width {
                let (di, dj) = if s > 0.0 {
                    (rng.random_range(-s..=s), rng.random_range(-s..=s))
                } else {
                    (0.0, 0.0)
                };
                coords.push((i as f32 + di, j as f32 + dj));
            }
        }
    }
    SampleGrid {
        batch,
        height,
        width,
        coords,
    }
}

/// Mixes each feature with its spatial neighbours by bilinear resampling at
/// a randomly shifted location; one shift per location, shared by channels.
pub fn alix(g: &mut Graph, x: Var, smoothness: f32, rng: &mut dyn RngCore) -> Var {
    if smoothness <= 0.0 {
        return x;
    }
    let s = g.value(x).shape().to_vec();
    let grid = alix_grid(s[0], s[2], s[3], smoothness, rng);
    g.bilinear_sample(x, &grid)
}

/// Random shift of `[B, C, H, W]` images: replicate-pad by `pad`, crop an
/// `H x W` window at a continuous offset in `[0, 2 pad]^2`, resample
/// bilinearly. One offset per sample, shared by all channels.
pub fn augment(images: &Tensor, pad: usize, rng: &mut dyn RngCore) -> Tensor {
    let b = images.dim(0);
    let max = 2.0 * pad as f32;
    let offsets: Vec<(f32, f32)> = (0..b)
        .map(|_| (rng.random_range(0.0..=max), rng.random_range(0.0..=max)))
        .collect();
    augment_with_offsets(images, pad, &offsets)
}

/// [`augment`] with explicit `(row, col)` crop offsets in padded coordinates.
pub fn augment_with_offsets(images: &Tensor, pad: usize, offsets: &[(f32, f32)]) -> Tensor {
    let s = images.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert_eq!(offsets.len(), b, "one offset per sample");
    let plane = h * w;
    let mut out = vec![0.0f32; images.numel()];
    let src = images.data();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut taps = Vec::with_capacity(plane);
    for (bi, &(oy, ox)) in offsets.iter().enumerate() {
        taps.clear();
        for i in 0..h {
            let r = i as f32 + oy - pad as f32;
            let r0 = r.floor();
            let fr = r - r0;
            let (ra, rb) = (clamp(r0 as isize, h), clamp(r0 as isize + 1, h));
            for j in 0..w {
                let col = j as f32 + ox - pad as f32;
                let c0 = col.floor();
                let fc = col - c0;
                let (ca, cb) = (clamp(c0 as isize, w), clamp(c0 as isize + 1, w));
                taps.push((
                    [ra * w + ca, ra * w + cb, rb * w + ca, rb * w + cb],
                    [
                        (1.0 - fr) * (1.0 - fc),
                        (1.0 - fr) * fc,
                        fr * (1.0 - fc),
                        fr * fc,
                    ],
                ));
            }
        }
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            let x = &src[base..base + plane];
            for (p, (idx, wt)) in taps.iter().enumerate() {
                out[base + p] =
                    wt[0] * x[idx[0]] + wt[1] * x[idx[1]] + wt[2] * x[idx[2]] + wt[3] * x[idx[3]];
            }
        }
    }
    Tensor::from_parts(s, out)
}

/// Convolutional image encoder: conv stack with ReLU and A-LIX after every
/// convolution, then linear → layer norm → tanh.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub resolution: usize,
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    pub norm: LayerNorm,
}

impl ImageEncoder {
    pub fn new(resolution: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let plan = conv_plan(resolution)?;
        let convs = plan
            .iter()
            .map(|c| {
                Conv2d::new(
                    c.in_channels,
                    c.out_channels,
                    (KERNEL, KERNEL),
                    (c.stride, c.stride),
                    rng,
                )
            })
            .collect();
        let flat = 64 * 5 * 5;
        Ok(Self {
            resolution,
            convs,
            fc: Linear::new(flat, IMAGE_LATENT, rng),
            norm: LayerNorm::new(IMAGE_LATENT),
        })
    }

    /// Encodes `[B, 9, H, W]` images in `[0, 1]`. With `alix` set, the shift
    /// layer runs after every convolution.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        alix_rng: Option<(f32, &mut dyn RngCore)>,
    ) -> Result<Var> {
        self.forward_traced(g, x, alix_rng, &mut |_| {})
    }

    /// Like [`forward`](Self::forward), reporting the shape after every layer.
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        x: Var,
        mut alix_rng: Option<(f32, &mut dyn RngCore)>,
        trace: &mut dyn FnMut(&[usize]),
    ) -> Result<Var> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 4
            || s[1] != IMAGE_CHANNELS
            || s[2] != self.resolution
            || s[3] != self.resolution
        {
            return Err(Error::Shape(format!(
                "image encoder expects [B, {IMAGE_CHANNELS}, {r}, {r}], got {s:?}",
                r = self.resolution
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, h);
            h = g.relu(h);
            if let Some((smoothness, rng)) = alix_rng.as_mut() {
                h = alix(g, h, *smoothness, &mut **rng);
            }
            trace(g.value(h).shape());
        }
        let b = s[0];
        let flat = g.value(h).numel() / b;
        h = g.reshape(h, &[b, flat]);
        trace(g.value(h).shape());
        h = self.fc.forward(g, h);
        trace(g.value(h).shape());
        h = self.norm.forward(g, h);
        Ok(g.tanh(h))
    }
}

impl Module for ImageEncoder {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<_> = self
            .convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| scoped(&format!("conv{i}"), c.named_params()))
            .collect();
        out.extend(scoped("fc", self.fc.named_params()));
        out.extend(scoped("norm", self.norm.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<_> = self
            .convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, c)| scoped_mut(&format!("conv{i}"), c.named_params_mut()))
            .collect();
        out.extend(scoped_mut("fc", self.fc.named_params_mut()));
        out.extend(scoped_mut("norm", self.norm.named_params_mut()));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaypointEncoderKind {
    /// Kernel-2 convolution along the waypoint sequence, then an MLP.
    Wayconv1d,
    /// MLP on the flattened coordinates.
    FlatMlp,
}

const WAYCONV_CHANNELS: usize = 32;
const WAYPOINT_HIDDEN: usize = 64;

#[derive(Clone, Debug)]
pub struct WaypointEncoder {
    pub kind: WaypointEncoderKind,
    pub conv: Option<Conv2d>,
    pub mlp: Mlp,
}

impl WaypointEncoder {
    pub fn new(kind: WaypointEncoderKind, rng: &mut dyn RngCore) -> Self {
        match kind {
            WaypointEncoderKind::Wayconv1d => {
                let conv = Conv2d::new(2, WAYCONV_CHANNELS, (1, 2), (1, 1), rng);
                let flat = WAYCONV_CHANNELS * (NUM_WAYPOINTS - 1);
                Self {
                    kind,
                    conv: Some(conv),
                    mlp: Mlp::new(&[flat, WAYPOINT_HIDDEN, WAYPOINT_LATENT], rng),
                }
            }
            WaypointEncoderKind::FlatMlp => Self {
                kind,
                conv: None,
                mlp: Mlp::new(&[2 * NUM_WAYPOINTS, WAYPOINT_HIDDEN, WAYPOINT_LATENT], rng),
            },
        }
    }

    /// Sequence convolution output `[B, 32, 1, N-1]`, before the nonlinearity.
    pub fn conv_features(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let b = check_seq(g, w, NUM_WAYPOINTS, "waypoints")?;
        let conv = self
            .conv
            .as_ref()
            .ok_or_else(|| Error::Shape("flat-MLP waypoint encoder has no convolution".into()))?;
        let t = g.transpose_last2(w);
        let t = g.reshape(t, &[b, 2, 1, NUM_WAYPOINTS]);
        Ok(conv.forward(g, t))
    }

    /// Encodes `[B, N, 2]` ego-frame waypoints into `[B, 32]`.
    pub fn forward(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let b = check_seq(g, w, NUM_WAYPOINTS, "waypoints")?;
        let flat = match self.kind {
            WaypointEncoderKind::Wayconv1d => {
                let c = self.conv_features(g, w)?;
                let c = g.relu(c);
                g.reshape(c, &[b, WAYCONV_CHANNELS * (NUM_WAYPOINTS - 1)])
            }
            WaypointEncoderKind::FlatMlp => g.reshape(w, &[b, 2 * NUM_WAYPOINTS]),
        };
        Ok(self.mlp.forward(g, flat))
    }
}

impl Module for WaypointEncoder {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        if let Some(c) = &self.conv {
            out.extend(scoped("conv", c.named_params()));
        }
        out.extend(scoped("mlp", self.mlp.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        if let Some(c) = &mut self.conv {
            out.extend(scoped_mut("conv", c.named_params_mut()));
        }
        out.extend(scoped_mut("mlp", self.mlp.named_params_mut()));
        out
    }
}

fn check_seq(g: &Graph, x: Var, len: usize, what: &str) -> Result<usize> {
    let s = g.value(x).shape();
    if s.len() != 3 || s[1] != len || s[2] != 2 {
        return Err(Error::Shape(format!(
            "{what}: expected [B, {len}, 2], got {s:?}"
        )));
    }
    Ok(s[0])
}

/// MLP over the flattened `(speed, steering)` history.
#[derive(Clone, Debug)]
pub struct MeasurementEncoder {
    pub mlp: Mlp,
}

impl MeasurementEncoder {
    pub fn new(rng: &mut dyn RngCore) -> Self {
        Self {
            mlp: Mlp::new(&[2 * FRAME_STACK, 32, MEASUREMENT_LATENT], rng),
        }
    }

    /// Encodes `[B, K, 2]` measurements into `[B, 16]`.
    pub fn forward(&self, g: &mut Graph, v: Var) -> Result<Var> {
        let b = check_seq(g, v, FRAME_STACK, "measurements")?;
        let flat = g.reshape(v, &[b, 2 * FRAME_STACK]);
        Ok(self.mlp.forward(g, flat))
    }
}

impl Module for MeasurementEncoder {
    fn named_params(&self) -> Vec<(String, &Param)> {
        self.mlp.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.mlp.named_params_mut()
    }
}

/// `[i | w | v]` along the feature axis.
pub fn fuse(g: &mut Graph, i: Var, w: Var, v: Var) -> Result<Var> {
    for (var, dim, name) in [
        (i, IMAGE_LATENT, "image"),
        (w, WAYPOINT_LATENT, "waypoint"),
        (v, MEASUREMENT_LATENT, "measurement"),
    ] {
        if g.value(var).last_dim() != dim {
            return Err(Error::Shape(format!(
                "{name} latent has width {}, expected {dim}",
                g.value(var).last_dim()
            )));
        }
    }
    Ok(g.concat_last(&[i, w, v]))
}

/// Observation tensors for one batch.
#[derive(Clone, Debug)]
pub struct ObsBatch {
    /// `[B, 9, H, W]` in `[0, 1]`.
    pub images: Tensor,
    /// `[B, N, 2]`.
    pub waypoints: Tensor,
    /// `[B, K, 2]`.
    pub measurements: Tensor,
}

impl ObsBatch {
    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks observations; frames are scaled from 8-bit to `[0, 1]`.
    pub fn from_observations(obs: &[&miniurban::Observation]) -> Self {
        let b = obs.len();
        let res = obs.first().map_or(0, |o| o.resolution);
        let plane3 = 3 * res * res;
        let mut images = Vec::with_capacity(b * FRAME_STACK * plane3);
        let mut waypoints = Vec::with_capacity(b * NUM_WAYPOINTS * 2);
        let mut measurements = Vec::with_capacity(b * FRAME_STACK * 2);
        for o in obs {
            for f in &o.frames {
                images.extend(f.iter().map(|&p| p as f32 / 255.0));
            }
            waypoints.extend(o.waypoints.iter().flatten());
            measurements.extend(o.measurements.iter().flatten());
        }
        Self {
            images: Tensor::from_parts(&[b, IMAGE_CHANNELS, res, res], images),
            waypoints: Tensor::from_parts(&[b, NUM_WAYPOINTS, 2], waypoints),
            measurements: Tensor::from_parts(&[b, FRAME_STACK, 2], measurements),
        }
    }
}

/// The three encoders that make up the shared observation encoder.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub image: ImageEncoder,
    pub waypoints: WaypointEncoder,
    pub measurements: MeasurementEncoder,
}

/// Latent outputs of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub image: Var,
    pub fused: Var,
}

impl Encoders {
    pub fn new(
        resolution: usize,
        waypoint_kind: WaypointEncoderKind,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Self {
            image: ImageEncoder::new(resolution, rng)?,
            waypoints: WaypointEncoder::new(waypoint_kind, rng),
            measurements: MeasurementEncoder::new(rng),
        })
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        obs: &ObsBatch,
        alix_rng: Option<(f32, &mut dyn RngCore)>,
    ) -> Result<Latent> {
        let x = g.input(obs.images.clone());
        let w = g.input(obs.waypoints.clone());
        let v = g.input(obs.measurements.clone());
        let image = self.image.forward(g, x, alix_rng)?;
        let wl = self.waypoints.forward(g, w)?;
        let vl = self.measurements.forward(g, v)?;
        let fused = fuse(g, image, wl, vl)?;
        Ok(Latent { image, fused })
    }
}

impl Module for Encoders {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = scoped("image", self.image.named_params());
        out.extend(scoped("waypoints", self.waypoints.named_params()));
        out.extend(scoped("measurements", self.measurements.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = scoped_mut("image", self.image.named_params_mut());
        out.extend(scoped_mut("waypoints", self.waypoints.named_params_mut()));
        out.extend(scoped_mut(
            "measurements",
            self.measurements.named_params_mut(),
        ));
        out
    }
}
