//! The completion network: a shared per-point MLP encoder with global average
//! pooling, followed by a fully connected decoder that emits `n_out` points.
//!
//! Forward passes can be recorded ([`EncoderTrace`], [`DecoderTrace`]) and
//! replayed backwards by [`param_gradients`].
//!
//! Two exact rewrites keep the encoder cheap and make permutation invariance
//! bit-exact:
//! - the input is sorted and deduplicated into a canonical weighted multiset,
//!   so pooling sums in the same order for every permutation and duplicated
//!   inputs give identical weights;
//! - the last encoder layer has no activation, so it commutes with the
//!   average and is applied once to the pooled vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud, SeededRng};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACLSPC01";
pub const ENCODER_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const DECODER_HIDDEN: [usize; 2] = [1024, 1024];

/// Layer widths. [`Architecture::standard`] is the production network; other
/// widths exist for small-scale numerical checks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder_widths: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub n_out: usize,
}

impl Architecture {
    pub fn standard(n_out: usize) -> Self {
        Architecture {
            encoder_widths: ENCODER_WIDTHS.to_vec(),
            decoder_hidden: DECODER_HIDDEN.to_vec(),
            n_out,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_out == 0 {
            return Err(Error::InvalidArgument("n_out must be >= 1".into()));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::InvalidArgument(
                "encoder needs at least one layer".into(),
            ));
        }
        if self
            .encoder_widths
            .iter()
            .chain(&self.decoder_hidden)
            .any(|&w| w == 0)
        {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// (out, in) per layer, encoder first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = 3;
        for &w in &self.encoder_widths {
            shapes.push((w, prev));
            prev = w;
        }
        for &w in self
            .decoder_hidden
            .iter()
            .chain(std::iter::once(&(3 * self.n_out)))
        {
            shapes.push((w, prev));
            prev = w;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(o, i)| o * i + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// out_dim × in_dim.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LayerParams {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// All learnable weights. Gradients and optimizer moments reuse this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        let n_enc = arch.encoder_widths.len();
        let mut layers = shapes.iter().map(|&(o, i)| LayerParams::zeros(o, i));
        let encoder = layers.by_ref().take(n_enc).collect();
        let decoder = layers.collect();
        Ok(ModelParams {
            arch,
            encoder,
            decoder,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, rng: &mut SeededRng) -> Result<Self> {
        let mut params = ModelParams::zeros(arch)?;
        for layer in params.layers_mut() {
            let (o, i) = layer.weight.dim();
            let bound = (6.0 / (o + i) as f64).sqrt();
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = rng.uniform(-bound, bound));
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.arch.clone()).expect("architecture already validated")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn n_out(&self) -> usize {
        self.arch.n_out
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// Flat views of every weight matrix and bias vector, in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers_mut() {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn check_shape(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }
}

pub fn init_params(n_out: usize, rng: &mut SeededRng) -> Result<ModelParams> {
    ModelParams::init(Architecture::standard(n_out), rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Array1<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }
}

/// Sorted distinct points with multiplicity weights summing to one.
#[derive(Clone, Debug)]
pub struct CanonicalInput {
    pub coords: Array2<f64>,
    pub weights: Array1<f64>,
}

pub fn canonicalize(points: &[Point3]) -> CanonicalInput {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut uniq: Vec<(Point3, usize)> = Vec::with_capacity(sorted.len());
    for p in sorted {
        match uniq.last_mut() {
            Some((q, c)) if q.total_cmp(&p).is_eq() => *c += 1,
            _ => uniq.push((p, 1)),
        }
    }
    let n = points.len() as f64;
    let mut coords = Array2::zeros((uniq.len(), 3));
    let mut weights = Array1::zeros(uniq.len());
    for (r, (p, c)) in uniq.iter().enumerate() {
        coords[[r, 0]] = p.x;
        coords[[r, 1]] = p.y;
        coords[[r, 2]] = p.z;
        weights[r] = *c as f64 / n;
    }
    CanonicalInput { coords, weights }
}

/// Recorded encoder forward pass for one cloud.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    input: CanonicalInput,
    /// Post-ReLU activations of every layer except the last.
    hidden: Vec<Array2<f64>>,
    pooled: Array1<f64>,
    pub feature: Array1<f64>,
}

fn affine_rows(input: &Array2<f64>, layer: &LayerParams) -> Array2<f64> {
    let mut out = Array2::zeros((input.nrows(), layer.out_dim()));
    out += &layer.bias;
    general_mat_mul(1.0, input, &layer.weight.t(), 1.0, &mut out);
    out
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

pub fn encode_traced(params: &ModelParams, points: &[Point3]) -> EncoderTrace {
    let input = canonicalize(points);
    let n_hidden = params.encoder.len() - 1;
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(n_hidden);
    for layer in &params.encoder[..n_hidden] {
        let prev = hidden.last().unwrap_or(&input.coords);
        let mut a = affine_rows(prev, layer);
        relu_inplace(&mut a);
        hidden.push(a);
    }
    let last_act = hidden.last().unwrap_or(&input.coords);
    let pooled = input.weights.dot(last_act);
    let head = &params.encoder[n_hidden];
    let feature = head.weight.dot(&pooled) + &head.bias;
    EncoderTrace {
        input,
        hidden,
        pooled,
        feature,
    }
}

pub fn encode(params: &ModelParams, cloud: &PointCloud) -> FeatureVector {
    FeatureVector(encode_traced(params, cloud.points()).feature)
}

/// Accumulates encoder parameter gradients for one pass given dL/dfeature.
pub fn encoder_backward(
    params: &ModelParams,
    trace: &EncoderTrace,
    d_feature: ArrayView1<f64>,
    grads: &mut [LayerParams],
) {
    let n_hidden = params.encoder.len() - 1;
    let head = &params.encoder[n_hidden];
    {
        let g = &mut grads[n_hidden];
        let d_col = d_feature.view().insert_axis(Axis(1));
        let p_row = trace.pooled.view().insert_axis(Axis(0));
        general_mat_mul(1.0, &d_col, &p_row, 1.0, &mut g.weight);
        g.bias += &d_feature;
    }
    if n_hidden == 0 {
        return;
    }
    let d_pooled = head.weight.t().dot(&d_feature);
    // d(mean)/d(row r) = weight_r.
    let mut d_act: Array2<f64> = trace
        .input
        .weights
        .view()
        .insert_axis(Axis(1))
        .dot(&d_pooled.view().insert_axis(Axis(0)));
    for k in (0..n_hidden).rev() {
        let act = &trace.hidden[k];
        ndarray::Zip::from(&mut d_act).and(act).for_each(|d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        let prev = if k == 0 {
            &trace.input.coords
        } else {
            &trace.hidden[k - 1]
        };
        let g = &mut grads[k];
        general_mat_mul(1.0, &d_act.t(), prev, 1.0, &mut g.weight);
        g.bias += &d_act.sum_axis(Axis(0));
        if k > 0 {
            d_act = d_act.dot(&params.encoder[k].weight);
        }
    }
}

/// Recorded decoder forward pass over a batch of feature rows.
#[derive(Clone, Debug)]
pub struct DecoderTrace {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl DecoderTrace {
    pub fn rows(&self) -> usize {
        self.output.nrows()
    }

    /// Output row `r` as points.
    pub fn points(&self, r: usize) -> Vec<Point3> {
        self.output
            .row(r)
            .as_slice()
            .expect("standard layout")
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect()
    }
}

pub fn decode_traced(params: &ModelParams, features: Array2<f64>) -> DecoderTrace {
    let n = params.decoder.len();
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(n - 1);
    for layer in &params.decoder[..n - 1] {
        let prev = hidden.last().unwrap_or(&features);
        let mut a = affine_rows(prev, layer);
        relu_inplace(&mut a);
        hidden.push(a);
    }
    let output = affine_rows(hidden.last().unwrap_or(&features), &params.decoder[n - 1]);
    DecoderTrace {
        input: features,
        hidden,
        output,
    }
}

/// Accumulates decoder gradients and returns dL/dfeatures (one row per input row).
pub fn decoder_backward(
    params: &ModelParams,
    trace: &DecoderTrace,
    d_output: &Array2<f64>,
    grads: &mut [LayerParams],
) -> Array2<f64> {
    let n = params.decoder.len();
    let mut d = d_output.clone();
    for k in (0..n).rev() {
        if k < n - 1 {
            ndarray::Zip::from(&mut d)
                .and(&trace.hidden[k])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
        }
        let prev = if k == 0 {
            &trace.input
        } else {
            &trace.hidden[k - 1]
        };
        let g = &mut grads[k];
        general_mat_mul(1.0, &d.t(), prev, 1.0, &mut g.weight);
        g.bias += &d.sum_axis(Axis(0));
        d = d.dot(&params.decoder[k].weight);
    }
    d
}

pub fn decode(params: &ModelParams, feat: &FeatureVector) -> Result<PointCloud> {
    let rows = feat.0.clone().insert_axis(Axis(0));
    let trace = decode_traced(params, rows);
    PointCloud::new(trace.points(0))
}

/// C = D(E(partial)).
pub fn forward_complete(params: &ModelParams, partial: &PointCloud) -> Result<PointCloud> {
    decode(params, &encode(params, partial))
}

/// Completes many partials with one batched decoder pass.
pub fn forward_complete_batch(
    params: &ModelParams,
    partials: &[&PointCloud],
) -> Result<Vec<PointCloud>> {
    if partials.is_empty() {
        return Ok(Vec::new());
    }
    let feats: Vec<Array1<f64>> = partials
        .par_iter()
        .map(|p| encode_traced(params, p.points()).feature)
        .collect();
    let trace = decode_traced(params, stack_rows(&feats));
    (0..trace.rows())
        .map(|r| PointCloud::new(trace.points(r)))
        .collect()
}

pub(crate) fn stack_rows(rows: &[Array1<f64>]) -> Array2<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(src);
    }
    out
}

/// A group of encoder passes decoded together, with the loss adjoint on the
/// decoder output. Row `r` of the decoder trace belongs to `encoders[r]`.
#[derive(Clone, Debug)]
pub struct GraphSegment {
    pub encoders: Vec<EncoderTrace>,
    pub decoder: DecoderTrace,
    pub output_adjoint: Array2<f64>,
}

/// A recorded forward computation of a scalar loss, ready for backprop.
/// Values that were detached in the forward pass never appear here.
#[derive(Clone, Debug, Default)]
pub struct LossGraph {
    pub segments: Vec<GraphSegment>,
}

/// Encoder passes whose gradients are summed together before the ordered
/// reduction; fixed so results do not depend on the thread count.
const ENCODER_GRAD_CHUNK: usize = 8;

/// Exact reverse-mode gradient of the recorded loss with respect to every
/// weight and bias.
pub fn param_gradients(params: &ModelParams, graph: &LossGraph) -> ModelParams {
    let mut grads = params.zeros_like();
    for seg in &graph.segments {
        let d_feat = decoder_backward(
            params,
            &seg.decoder,
            &seg.output_adjoint,
            &mut grads.decoder,
        );
        let partial: Vec<Vec<LayerParams>> = seg
            .encoders
            .par_chunks(ENCODER_GRAD_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g: Vec<LayerParams> = params
                    .encoder
                    .iter()
                    .map(|l| LayerParams::zeros(l.out_dim(), l.in_dim()))
                    .collect();
                for (j, trace) in chunk.iter().enumerate() {
                    let row = c * ENCODER_GRAD_CHUNK + j;
                    encoder_backward(params, trace, d_feat.row(row), &mut g);
                }
                g
            })
            .collect();
        for g in partial {
            for (dst, src) in grads.encoder.iter_mut().zip(&g) {
                dst.weight += &src.weight;
                dst.bias += &src.bias;
            }
        }
    }
    grads
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::CorruptCheckpoint("unexpected end of file".into())
    } else {
        Error::CorruptCheckpoint(e.to_string())
    }
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    for (v, b) in out.iter_mut().zip(buf.chunks_exact(8)) {
        *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
    }
    Ok(())
}

/// Header `ACLSPC01`, `n_out`, layer count, encoder layer count, `(out, in)`
/// per layer, then every weight matrix (row-major) and bias as little-endian f64.
pub fn write_params(w: &mut impl Write, params: &ModelParams) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u64(w, params.n_out() as u64)?;
    let shapes = params.arch.layer_shapes();
    write_u64(w, shapes.len() as u64)?;
    write_u64(w, params.encoder.len() as u64)?;
    for (o, i) in shapes {
        write_u64(w, o as u64)?;
        write_u64(w, i as u64)?;
    }
    for t in params.tensors() {
        write_f64s(w, t)?;
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        if magic[..6] == CHECKPOINT_MAGIC[..6] {
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(&magic[6..]).into_owned(),
                expected: String::from_utf8_lossy(&CHECKPOINT_MAGIC[6..]).into_owned(),
            });
        }
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let n_out = read_u64(r)? as usize;
    let n_layers = read_u64(r)? as usize;
    let n_enc = read_u64(r)? as usize;
    if n_layers > 64 || n_enc == 0 || n_enc >= n_layers {
        return Err(Error::CorruptCheckpoint(format!(
            "implausible layer table ({n_layers} layers, {n_enc} encoder)"
        )));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let o = read_u64(r)? as usize;
        let i = read_u64(r)? as usize;
        shapes.push((o, i));
    }
    let arch = Architecture {
        encoder_widths: shapes[..n_enc].iter().map(|s| s.0).collect(),
        decoder_hidden: shapes[n_enc..n_layers - 1].iter().map(|s| s.0).collect(),
        n_out,
    };
    arch.validate()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if arch.layer_shapes() != shapes {
        return Err(Error::CorruptCheckpoint("inconsistent layer table".into()));
    }
    let mut params = ModelParams::zeros(arch)?;
    for t in params.tensors_mut() {
        read_f64s(r, t)?;
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(&mut w, params)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads the parameter section of a model or training checkpoint file.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut BufReader::new(file))
}

/// Like [`load_params`], but rejects checkpoints whose architecture differs
/// from the standard network for `n_out`.
pub fn load_params_for(path: &Path, n_out: usize) -> Result<ModelParams> {
    let params = load_params(path)?;
    let expected = Architecture::standard(n_out);
    if params.arch != expected {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has n_out {} and layers {:?}, config expects n_out {} and layers {:?}",
            params.n_out(),
            params.arch.layer_shapes(),
            n_out,
            expected.layer_shapes()
        )));
    }
    Ok(params)
}
