//! A small residual convolutional network with six feature taps.
//!
//! Layout, for an input of `H`×`W` pixels scaled to `[0, 1]`:
//!
//! | stage   | op                                        | tap      |
//! |---------|-------------------------------------------|----------|
//! | stem    | 3×3 conv, stride 2, 16 ch, ReLU           |          |
//! | stage1  | residual block, 16 ch, stride 1           | `stage1` |
//! | stage2  | residual block, 32 ch, stride 2           | `stage2` |
//! | stage3  | residual block, 64 ch, stride 2           | `stage3` |
//! | stage4  | residual block, 128 ch, stride 2          | `stage4` |
//! | pool    | global average pool                       | `pool`   |
//! | fc      | fully connected 128 → 64                  | `fc`     |
//!
//! A residual block is `relu(conv3x3(relu(conv3x3(x))) + skip(x))`, where the
//! skip is a 1×1 projection whenever channels or stride change. Spatial taps
//! are flattened channel-major (`[C][H][W]`, row-major within a channel).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::imagecore::Tile;
use crate::metrics::{FeatureSet, FeatureVector};
use crate::rng::SplitMix64;

/// Anything that maps a tile to a [`FeatureSet`].
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, tile: &Tile) -> Result<FeatureSet>;
}

pub const TAP_IDS: [&str; 6] = ["stage1", "stage2", "stage3", "stage4", "pool", "fc"];
pub const MIN_INPUT_SIDE: u32 = 32;
pub const WEIGHTS_MAGIC: &[u8; 4] = b"PBWT";
pub const WEIGHTS_VERSION: u32 = 1;

/// Network shape. Only the standard layout is constructed by this crate, but
/// the shape is data so the tensor list and tap arithmetic derive from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub stage_strides: [usize; 4],
    pub fc_out: usize,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            stage_channels: [16, 32, 64, 128],
            stage_strides: [1, 2, 2, 2],
            fc_out: 64,
        }
    }
}

impl ExtractorSpec {
    fn needs_projection(&self, stage: usize) -> bool {
        let c_in = self.stage_input_channels(stage);
        c_in != self.stage_channels[stage] || self.stage_strides[stage] != 1
    }

    fn stage_input_channels(&self, stage: usize) -> usize {
        if stage == 0 {
            self.stem_channels
        } else {
            self.stage_channels[stage - 1]
        }
    }

    /// Every tensor with its shape, in serialization order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("stem.weight".to_string(), vec![self.stem_channels, 3, 3, 3]),
            ("stem.bias".to_string(), vec![self.stem_channels]),
        ];
        for s in 0..4 {
            let c_in = self.stage_input_channels(s);
            let c = self.stage_channels[s];
            let p = format!("stage{}", s + 1);
            out.push((format!("{p}.conv1.weight"), vec![c, c_in, 3, 3]));
            out.push((format!("{p}.conv1.bias"), vec![c]));
            out.push((format!("{p}.conv2.weight"), vec![c, c, 3, 3]));
            out.push((format!("{p}.conv2.bias"), vec![c]));
            if self.needs_projection(s) {
                out.push((format!("{p}.proj.weight"), vec![c, c_in, 1, 1]));
                out.push((format!("{p}.proj.bias"), vec![c]));
            }
        }
        let last = self.stage_channels[3];
        out.push(("fc.weight".to_string(), vec![self.fc_out, last]));
        out.push(("fc.bias".to_string(), vec![self.fc_out]));
        out
    }

    /// Flattened dimension of each tap for a `width`×`height` input.
    pub fn tap_dims(&self, width: usize, height: usize) -> [usize; 6] {
        let half = |n: usize| n.div_ceil(2);
        let (mut w, mut h) = (half(width), half(height));
        let mut dims = [0; 6];
        for ((d, &stride), &ch) in dims
            .iter_mut()
            .zip(&self.stage_strides)
            .zip(&self.stage_channels)
        {
            if stride == 2 {
                w = half(w);
                h = half(h);
            }
            *d = ch * w * h;
        }
        dims[4] = self.stage_channels[3];
        dims[5] = self.fc_out;
        dims
    }
}

/// A named tensor with row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub out_c: usize,
    pub in_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_c][in_c][k][k]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// A channel-major activation map.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Activation {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Conv {
    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Direct convolution with zero padding. Accumulation order per output is
    /// bias, then input channels, then kernel rows, then kernel columns.
    pub(crate) fn forward(&self, x: &Activation) -> Activation {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.output_size(x.h, x.w);
        let (ph, pw) = (x.h + 2 * self.pad, x.w + 2 * self.pad);
        let mut padded = vec![0.0f32; self.in_c * ph * pw];
        for c in 0..self.in_c {
            for y in 0..x.h {
                let src = &x.data[(c * x.h + y) * x.w..][..x.w];
                let dst = &mut padded[(c * ph + y + self.pad) * pw + self.pad..][..x.w];
                dst.copy_from_slice(src);
            }
        }
        let k = self.k;
        let s = self.stride;
        let mut out = vec![0.0f32; self.out_c * oh * ow];
        for (oc, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_c {
                let src = &padded[ic * ph * pw..][..ph * pw];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weight[((oc * self.in_c + ic) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let row = &src[(oy * s + ky) * pw + kx..];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                for (d, &v) in dst.iter_mut().zip(&row[..ow]) {
                                    *d += wv * v;
                                }
                            } else {
                                for (d, &v) in dst.iter_mut().zip(row.iter().step_by(s)) {
                                    *d += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Activation {
            c: self.out_c,
            h: oh,
            w: ow,
            data: out,
        }
    }
}

fn relu_in_place(a: &mut Activation) {
    for v in a.data.iter_mut() {
        *v = v.max(0.0);
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv,
    conv2: Conv,
    proj: Option<Conv>,
}

impl ResidualBlock {
    fn forward(&self, x: &Activation) -> Activation {
        let mut h = self.conv1.forward(x);
        relu_in_place(&mut h);
        let mut out = self.conv2.forward(&h);
        match &self.proj {
            Some(p) => {
                let skip = p.forward(x);
                for (o, s) in out.data.iter_mut().zip(&skip.data) {
                    *o += s;
                }
            }
            None => {
                for (o, s) in out.data.iter_mut().zip(&x.data) {
                    *o += s;
                }
            }
        }
        relu_in_place(&mut out);
        out
    }
}

/// The built-in feature extractor. Immutable once built.
#[derive(Debug, Clone)]
pub struct Extractor {
    name: String,
    spec: ExtractorSpec,
    tensors: Vec<Tensor>,
    stem: Conv,
    blocks: Vec<ResidualBlock>,
    fc_weight: Vec<f32>,
    fc_bias: Vec<f32>,
}

impl Extractor {
    /// He-uniform weights, `U(-√(6/fan_in), √(6/fan_in))`, drawn in tensor
    /// order from SplitMix64(`seed`); biases are zero.
    pub fn seeded(seed: u64) -> Self {
        let spec = ExtractorSpec::default();
        let mut rng = SplitMix64::new(seed);
        let tensors = spec
            .tensor_shapes()
            .into_iter()
            .map(|(name, dims)| {
                let len: usize = dims.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; len]
                } else {
                    let bound = he_bound(&dims);
                    (0..len)
                        .map(|_| ((2.0 * rng.next_f64() - 1.0) * bound) as f32)
                        .collect()
                };
                Tensor { name, dims, data }
            })
            .collect();
        Self::from_tensors(spec, tensors)
            .expect("seeded tensors match the spec")
            .with_name(format!("seeded-{seed}"))
    }

    pub fn from_tensors(spec: ExtractorSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let mut by_name: BTreeMap<&str, &Tensor> = BTreeMap::new();
        for t in &tensors {
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(Error::validation(format!("duplicate tensor {}", t.name)));
            }
        }
        let expected = spec.tensor_shapes();
        let expected_names: BTreeSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        if let Some(extra) = by_name.keys().find(|n| !expected_names.contains(*n)) {
            return Err(Error::validation(format!("unexpected tensor {extra}")));
        }
        for (name, dims) in &expected {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::validation(format!("missing tensor {name}")))?;
            if &t.dims != dims {
                return Err(Error::validation(format!(
                    "tensor {name} has shape {:?}, expected {dims:?}",
                    t.dims
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "tensor {name} has non-finite values"
                )));
            }
        }
        let get = |n: &str| by_name[n].data.clone();
        let conv = |prefix: &str, out_c: usize, in_c: usize, k: usize, stride: usize| Conv {
            out_c,
            in_c,
            k,
            stride,
            pad: k / 2,
            weight: get(&format!("{prefix}.weight")),
            bias: get(&format!("{prefix}.bias")),
        };
        let stem = conv("stem", spec.stem_channels, 3, 3, 2);
        let blocks = (0..4)
            .map(|s| {
                let c_in = spec.stage_input_channels(s);
                let c = spec.stage_channels[s];
                let stride = spec.stage_strides[s];
                let p = format!("stage{}", s + 1);
                ResidualBlock {
                    conv1: conv(&format!("{p}.conv1"), c, c_in, 3, stride),
                    conv2: conv(&format!("{p}.conv2"), c, c, 3, 1),
                    proj: spec
                        .needs_projection(s)
                        .then(|| conv(&format!("{p}.proj"), c, c_in, 1, stride)),
                }
            })
            .collect();
        let fc_weight = get("fc.weight");
        let fc_bias = get("fc.bias");
        // Keep tensors in canonical order regardless of input order.
        let tensors = expected
            .iter()
            .map(|(n, _)| by_name[n.as_str()].clone())
            .collect();
        Ok(Self {
            name: "builtin".to_string(),
            spec,
            tensors,
            stem,
            blocks,
            fc_weight,
            fc_bias,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    fn forward(&self, tile: &Tile) -> Result<Vec<FeatureVector>> {
        if tile.width() < MIN_INPUT_SIDE || tile.height() < MIN_INPUT_SIDE {
            return Err(Error::domain(format!(
                "extractor input {}x{} is below the {MIN_INPUT_SIDE}-pixel minimum",
                tile.width(),
                tile.height()
            )));
        }
        let (w, h) = (tile.width() as usize, tile.height() as usize);
        let mut data = vec![0.0f32; 3 * w * h];
        for (i, px) in tile.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c] as f32 / 255.0;
            }
        }
        let input = Activation { c: 3, h, w, data };
        let mut x = self.stem.forward(&input);
        relu_in_place(&mut x);
        let mut taps = Vec::with_capacity(6);
        for (block, id) in self.blocks.iter().zip(TAP_IDS) {
            x = block.forward(&x);
            taps.push(FeatureVector {
                tap_id: id.to_string(),
                values: x.data.clone(),
            });
        }
        let plane = (x.h * x.w) as f32;
        let pooled: Vec<f32> = x
            .data
            .chunks_exact(x.h * x.w)
            .map(|c| c.iter().sum::<f32>() / plane)
            .collect();
        let fc: Vec<f32> = self
            .fc_weight
            .chunks_exact(pooled.len())
            .zip(&self.fc_bias)
            .map(|(row, b)| b + row.iter().zip(&pooled).map(|(w, v)| w * v).sum::<f32>())
            .collect();
        taps.push(FeatureVector {
            tap_id: TAP_IDS[4].to_string(),
            values: pooled,
        });
        taps.push(FeatureVector {
            tap_id: TAP_IDS[5].to_string(),
            values: fc,
        });
        Ok(taps)
    }
}

impl FeatureExtractor for Extractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, tile: &Tile) -> Result<FeatureSet> {
        FeatureSet::new(self.forward(tile)?)
    }
}

fn he_bound(dims: &[usize]) -> f64 {
    let fan_in: usize = dims[1..].iter().product();
    (6.0 / fan_in as f64).sqrt()
}

pub fn seeded_extractor(seed: u64) -> Extractor {
    Extractor::seeded(seed)
}

/// Serializes every tensor in the `PBWT` layout.
pub fn save_weights(extractor: &Extractor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(extractor.tensors.len() as u32).to_le_bytes());
    for t in &extractor.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| {
                Error::format(format!(
                    "weights truncated reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }
}

/// Parses a `PBWT` file into an extractor with exactly its tensors.
pub fn load_weights(data: &[u8]) -> Result<Extractor> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.bytes(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::format("not a PBWT weights file"));
    }
    let version = cur.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!(
            "unsupported weights version {version}"
        )));
    }
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    let mut names = BTreeSet::new();
    for _ in 0..count {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.bytes(len, "tensor name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        if !names.insert(name.clone()) {
            return Err(Error::validation(format!("tensor name collision: {name}")));
        }
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::format(format!(
                "tensor {name} has implausible rank {rank}"
            )));
        }
        let dims = (0..rank)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(format!("tensor {name} size overflows")))?;
        let raw = cur.bytes(len, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    if cur.pos != data.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after the last tensor",
            data.len() - cur.pos
        )));
    }
    Extractor::from_tensors(ExtractorSpec::default(), tensors).map(|e| e.with_name("weights"))
}
