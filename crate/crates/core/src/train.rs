//! Closed-loop self-supervised training.
//!
//! For each input partial `P0` the model predicts `C0`. `C0` is detached,
//! re-observed from `n_syn_views` random views, and each synthetic partial is
//! completed again. The consistency term pulls those completions onto the
//! detached `C0`; the weighted Chamfer term ties `C0` to `P0`. Gradients reach
//! the parameters through the synthetic-view completions and through `C0` in
//! the Chamfer term only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{Point3, PointCloud, SeededRng};
use crate::error::{Error, Result};
use crate::loss::{
    chamfer_terms, consistency_mse_grad, consistency_mse_points, total_loss, LossBreakdown,
    LossWeights,
};
use crate::model::{
    decode_traced, encode_traced, param_gradients, read_f64s, read_params, stack_rows, write_f64s,
    write_params, Architecture, GraphSegment, LossGraph, ModelParams,
};
use crate::spatial::NearestNeighborIndex;
use crate::view::{sample_view_with_resolution, synthesize_from, DEFAULT_GRID_RESOLUTION};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const ADAM_MAGIC: &[u8; 8] = b"ADAMST01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyMode {
    Mse,
    Chamfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_syn_views: usize,
    pub weights: LossWeights,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub n_out: usize,
    pub consistency_mode: ConsistencyMode,
    pub seed: u64,
    pub grid_resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            n_syn_views: 8,
            weights: LossWeights::default(),
            lr0: 0.001,
            decay_factor: 0.5,
            decay_every: 200,
            epochs: 1000,
            n_out: 2048,
            consistency_mode: ConsistencyMode::Mse,
            seed: 0,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        }
    }
}

impl TrainConfig {
    /// Defaults sized for a CPU: 2048 output points, 200 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 || self.n_syn_views == 0 || self.decay_every == 0 || self.n_out == 0
        {
            return bad("batch_size, n_syn_views, decay_every and n_out must be >= 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be > 0");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        if self.grid_resolution < 2 {
            return bad("grid_resolution must be >= 2");
        }
        self.weights.validate()
    }

    /// Hash of every field that affects the training trajectory. `epochs` is
    /// excluded so a run can be resumed with a larger budget.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("epochs");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

/// lr0 · decay_factor^⌊epoch / decay_every⌋.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.decay_every) as i32;
    cfg.lr0 * cfg.decay_factor.powi(steps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update (β1 = 0.9, β2 = 0.999, ε = 1e-8).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    params.check_shape(grads)?;
    params.check_shape(&state.m)?;
    params.check_shape(&state.v)?;
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let g_all = grads.tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_all)
        .zip(m_all)
        .zip(v_all)
    {
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

/// Whether the consistency target `C0` passes gradient. Training always uses
/// `Detached`; `Live` exists to measure what detaching removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetBranch {
    Detached,
    Live,
}

/// One training input; the index over `partial` is reused across epochs.
#[derive(Clone, Copy, Debug)]
pub struct AclInput<'a> {
    pub partial: &'a PointCloud,
    pub index: Option<&'a NearestNeighborIndex>,
}

impl<'a> From<&'a PointCloud> for AclInput<'a> {
    fn from(partial: &'a PointCloud) -> Self {
        AclInput {
            partial,
            index: None,
        }
    }
}

/// Recorded closed-loop forward pass over a batch.
#[derive(Clone, Debug)]
pub struct AclForward {
    /// Backprop-ready record of the batch-mean total loss.
    pub graph: LossGraph,
    pub breakdowns: Vec<LossBreakdown>,
    /// `C0` per sample.
    pub completions: Vec<PointCloud>,
    /// The synthetic partials `P_v` per sample.
    pub synthetic_partials: Vec<Vec<PointCloud>>,
    /// The completions `C_v` of the synthetic partials per sample.
    pub view_completions: Vec<Vec<PointCloud>>,
}

impl AclForward {
    pub fn mean_breakdown(&self) -> LossBreakdown {
        mean_breakdown(&self.breakdowns)
    }
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut acc = LossBreakdown::default();
    for b in items {
        acc.cons += b.cons;
        acc.wcd += b.wcd;
        acc.total += b.total;
    }
    LossBreakdown {
        cons: acc.cons / n,
        wcd: acc.wcd / n,
        total: acc.total / n,
    }
}

/// Closed-loop forward for a single partial.
pub fn acl_forward(
    params: &ModelParams,
    partial: &PointCloud,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<AclForward> {
    acl_forward_batch(
        params,
        &[partial.into()],
        cfg,
        vec![rng.fork()],
        TargetBranch::Detached,
    )
}

/// Closed-loop forward over a batch; `rngs[i]` drives the views of sample `i`.
/// The recorded loss is the mean over the batch of λ_cons · cons + wcd.
pub fn acl_forward_batch(
    params: &ModelParams,
    inputs: &[AclInput<'_>],
    cfg: &TrainConfig,
    rngs: Vec<SeededRng>,
    branch: TargetBranch,
) -> Result<AclForward> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if rngs.len() != inputs.len() {
        return Err(Error::InvalidArgument("one rng per sample required".into()));
    }
    if params.n_out() != cfg.n_out {
        return Err(Error::ConfigMismatch(format!(
            "model emits {} points, config expects {}",
            params.n_out(),
            cfg.n_out
        )));
    }
    let batch = inputs.len();
    let n_views = cfg.n_syn_views;
    let w = cfg.weights;
    let inv_b = 1.0 / batch as f64;

    // C0 = f(P0), recorded.
    let enc0: Vec<_> = inputs
        .par_iter()
        .map(|i| encode_traced(params, i.partial.points()))
        .collect();
    let feats0: Vec<_> = enc0.iter().map(|t| t.feature.clone()).collect();
    let dec0 = decode_traced(params, stack_rows(&feats0));
    let c0: Vec<Vec<Point3>> = (0..batch).map(|r| dec0.points(r)).collect();
    let completions = c0
        .iter()
        .map(|c| PointCloud::new(c.clone()))
        .collect::<Result<Vec<_>>>()?;

    // P_v = g_v(detach(C0)); nothing below links back to dec0.
    let synthetic: Vec<Vec<PointCloud>> = inputs
        .par_iter()
        .zip(rngs)
        .zip(&c0)
        .map(|((input, mut rng), c)| {
            (0..n_views)
                .map(|_| {
                    let view = sample_view_with_resolution(&mut rng, cfg.grid_resolution);
                    synthesize_from(c, &view, input.partial.len(), &mut rng)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // C_v = f(P_v), recorded.
    let flat_syn: Vec<&PointCloud> = synthetic.iter().flatten().collect();
    let enc1: Vec<_> = flat_syn
        .par_iter()
        .map(|p| encode_traced(params, p.points()))
        .collect();
    let feats1: Vec<_> = enc1.iter().map(|t| t.feature.clone()).collect();
    let dec1 = decode_traced(params, stack_rows(&feats1));

    struct SampleGrad {
        breakdown: LossBreakdown,
        d_c0: Vec<Point3>,
        d_cv: Vec<Vec<Point3>>,
        cv: Vec<PointCloud>,
    }

    let per_sample: Vec<SampleGrad> = (0..batch)
        .into_par_iter()
        .map(|i| -> Result<SampleGrad> {
            let target = &c0[i];
            let cv: Vec<Vec<Point3>> = (0..n_views).map(|v| dec1.points(i * n_views + v)).collect();
            let mut d_c0 = vec![Point3::ORIGIN; target.len()];
            let cons_scale = w.lambda_cons * inv_b;
            let (cons, d_cv) = match cfg.consistency_mode {
                ConsistencyMode::Mse => {
                    let views: Vec<&[Point3]> = cv.iter().map(|v| v.as_slice()).collect();
                    let cons = consistency_mse_points(&views, target)?;
                    let d_cv: Vec<Vec<Point3>> = cv
                        .iter()
                        .map(|v| {
                            consistency_mse_grad(v, target, n_views)
                                .into_iter()
                                .map(|g| g * cons_scale)
                                .collect()
                        })
                        .collect();
                    if branch == TargetBranch::Live {
                        for g in &d_cv {
                            for (dst, &gk) in d_c0.iter_mut().zip(g) {
                                *dst += -gk;
                            }
                        }
                    }
                    (cons, d_cv)
                }
                ConsistencyMode::Chamfer => {
                    let target_index = NearestNeighborIndex::from_points(target)?;
                    let mut cons = 0.0;
                    let mut d_cv = Vec::with_capacity(n_views);
                    let s = cons_scale / n_views as f64;
                    for v in &cv {
                        let terms = chamfer_terms(v, target, Some(&target_index), None);
                        cons += terms.value(1.0, 1.0);
                        let mut g = vec![Point3::ORIGIN; v.len()];
                        terms.accumulate_source_grad(v, target, 1.0, 1.0, s, &mut g);
                        if branch == TargetBranch::Live {
                            terms.accumulate_reference_grad(v, target, 1.0, 1.0, s, &mut d_c0);
                        }
                        d_cv.push(g);
                    }
                    (cons / n_views as f64, d_cv)
                }
            };
            let partial = inputs[i].partial.points();
            let terms = chamfer_terms(target, partial, inputs[i].index, None);
            let wcd = terms.value(w.alpha, w.beta);
            terms.accumulate_source_grad(target, partial, w.alpha, w.beta, inv_b, &mut d_c0);
            let cv = cv
                .into_iter()
                .map(PointCloud::new)
                .collect::<Result<Vec<_>>>()?;
            Ok(SampleGrad {
                breakdown: total_loss(cons, wcd, &w),
                d_c0,
                d_cv,
                cv,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let width = 3 * cfg.n_out;
    let mut adj0 = Array2::zeros((batch, width));
    let mut adj1 = Array2::zeros((batch * n_views, width));
    for (i, s) in per_sample.iter().enumerate() {
        fill_row(&mut adj0, i, &s.d_c0);
        for (v, g) in s.d_cv.iter().enumerate() {
            fill_row(&mut adj1, i * n_views + v, g);
        }
    }

    let mut graph = LossGraph::default();
    if adj0.iter().any(|&v| v != 0.0) {
        graph.segments.push(GraphSegment {
            encoders: enc0,
            decoder: dec0,
            output_adjoint: adj0,
        });
    }
    if adj1.iter().any(|&v| v != 0.0) {
        graph.segments.push(GraphSegment {
            encoders: enc1,
            decoder: dec1,
            output_adjoint: adj1,
        });
    }

    let mut breakdowns = Vec::with_capacity(batch);
    let mut view_completions = Vec::with_capacity(batch);
    for s in per_sample {
        breakdowns.push(s.breakdown);
        view_completions.push(s.cv);
    }
    Ok(AclForward {
        graph,
        breakdowns,
        completions,
        synthetic_partials: synthetic,
        view_completions,
    })
}

fn fill_row(m: &mut Array2<f64>, r: usize, g: &[Point3]) {
    let mut row = m.row_mut(r);
    for (k, p) in g.iter().enumerate() {
        row[3 * k] = p.x;
        row[3 * k + 1] = p.y;
        row[3 * k + 2] = p.z;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl EpochRecord {
    /// `epoch,lr,cons,wcd,total` with shortest round-trip float formatting.
    pub fn log_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.lr, self.loss.cons, self.loss.wcd, self.loss.total
        )
    }
}

/// Training state plus the fingerprint of the config that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub fingerprint: [u8; 32],
}

impl Checkpoint {
    /// Model section followed by `ADAMST01`, step, epoch, fingerprint, m, v.
    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_params(w, &self.state.params)?;
        w.write_all(ADAM_MAGIC)?;
        w.write_all(&self.state.adam.t.to_le_bytes())?;
        w.write_all(&(self.state.epoch as u64).to_le_bytes())?;
        w.write_all(&self.fingerprint)?;
        for t in self
            .state
            .adam
            .m
            .tensors()
            .into_iter()
            .chain(self.state.adam.v.tensors())
        {
            write_f64s(w, t)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let params = read_params(r)?;
        let mut tag = [0u8; 8];
        r.read_exact(&mut tag)
            .map_err(|_| Error::CorruptCheckpoint("missing optimizer state".into()))?;
        if &tag != ADAM_MAGIC {
            return Err(Error::CorruptCheckpoint("bad optimizer state tag".into()));
        }
        let mut word = [0u8; 8];
        let mut read_word = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut word)
                .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
            Ok(u64::from_le_bytes(word))
        };
        let t = read_word(r)?;
        let epoch = read_word(r)? as usize;
        let mut fingerprint = [0u8; 32];
        r.read_exact(&mut fingerprint)
            .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
        let mut adam = AdamState::new(&params);
        adam.t = t;
        for dst in adam.m.tensors_mut() {
            read_f64s(r, dst)?;
        }
        for dst in adam.v.tensors_mut() {
            read_f64s(r, dst)?;
        }
        Ok(Checkpoint {
            state: TrainState {
                params,
                adam,
                epoch,
            },
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read(&mut BufReader::new(file))
    }
}

struct PreparedSample {
    cloud: PointCloud,
    index: NearestNeighborIndex,
}

/// Epoch-at-a-time driver. Epoch `e` draws all of its randomness from the
/// stream `(seed, e + 1)`, so resuming from a checkpoint replays exactly.
pub struct Trainer {
    cfg: TrainConfig,
    samples: Vec<PreparedSample>,
    state: TrainState,
}

impl Trainer {
    /// Fresh parameters drawn from `cfg.seed`.
    pub fn new(dataset: &[PointCloud], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(
            Architecture::standard(cfg.n_out),
            &mut SeededRng::new(cfg.seed),
        )?;
        Trainer::from_params(dataset, cfg, params)
    }

    /// Starts from existing parameters with a fresh optimizer.
    pub fn from_params(
        dataset: &[PointCloud],
        cfg: TrainConfig,
        params: ModelParams,
    ) -> Result<Self> {
        let adam = AdamState::new(&params);
        Trainer::from_state(
            dataset,
            cfg,
            TrainState {
                params,
                adam,
                epoch: 0,
            },
        )
    }

    pub fn resume(
        dataset: &[PointCloud],
        cfg: TrainConfig,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        if checkpoint.fingerprint != cfg.fingerprint() {
            return Err(Error::ConfigMismatch(
                "checkpoint was written under a different training config".into(),
            ));
        }
        Trainer::from_state(dataset, cfg, checkpoint.state)
    }

    fn from_state(dataset: &[PointCloud], cfg: TrainConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if state.params.n_out() != cfg.n_out {
            return Err(Error::ConfigMismatch(format!(
                "model emits {} points, config expects {}",
                state.params.n_out(),
                cfg.n_out
            )));
        }
        let samples = dataset
            .par_iter()
            .map(|c| PreparedSample {
                cloud: c.clone(),
                index: NearestNeighborIndex::build(c),
            })
            .collect();
        Ok(Trainer {
            cfg,
            samples,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn params(&self) -> &ModelParams {
        &self.state.params
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            fingerprint: self.cfg.fingerprint(),
        }
    }

    /// Runs one epoch: seeded shuffle, batches of `batch_size`, one Adam step
    /// per batch. Returns the per-sample mean loss over the epoch.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epoch;
        let lr = lr_at_epoch(&self.cfg, epoch);
        let mut rng = SeededRng::with_stream(self.cfg.seed, epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        rng.shuffle(&mut order);

        let mut all = Vec::with_capacity(order.len());
        for chunk in order.chunks(self.cfg.batch_size) {
            let inputs: Vec<AclInput<'_>> = chunk
                .iter()
                .map(|&k| AclInput {
                    partial: &self.samples[k].cloud,
                    index: Some(&self.samples[k].index),
                })
                .collect();
            let rngs = chunk.iter().map(|_| rng.fork()).collect();
            let fwd = acl_forward_batch(
                &self.state.params,
                &inputs,
                &self.cfg,
                rngs,
                TargetBranch::Detached,
            )?;
            let grads = param_gradients(&self.state.params, &fwd.graph);
            adam_step(&mut self.state.params, &grads, &mut self.state.adam, lr)?;
            all.extend(fwd.breakdowns);
        }
        self.state.epoch += 1;
        if !self.state.params.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameters diverged to non-finite values in epoch {epoch}"
            )));
        }
        Ok(EpochRecord {
            epoch,
            lr,
            loss: mean_breakdown(&all),
        })
    }

    /// Runs until `cfg.epochs` epochs have completed.
    pub fn run(&mut self) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::new();
        while !self.is_done() {
            history.push(self.run_epoch()?);
        }
        Ok(history)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Trains fresh parameters for `cfg.epochs` epochs.
pub fn train(dataset: &[PointCloud], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, cfg.clone())?;
    let history = trainer.run()?;
    Ok(TrainOutcome {
        params: trainer.into_state().params,
        history,
    })
}

/// Continues self-supervised training on test partials from pretrained weights
/// with a fresh optimizer.
pub fn test_time_adapt(
    pretrained: &ModelParams,
    test_partials: &[PointCloud],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::from_params(test_partials, cfg.clone(), pretrained.clone())?;
    let history = trainer.run()?;
    Ok(TrainOutcome {
        params: trainer.into_state().params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureVector, ModelParams};

    fn scalar_params(value: f64) -> ModelParams {
        let arch = Architecture {
            encoder_widths: vec![1],
            decoder_hidden: vec![],
            n_out: 1,
        };
        let mut p = ModelParams::zeros(arch).unwrap();
        p.encoder[0].bias[0] = value;
        p
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 199), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 200), 0.0005);
        assert_eq!(lr_at_epoch(&cfg, 399), 0.0005);
        assert_eq!(lr_at_epoch(&cfg, 400), 0.00025);
    }

    #[test]
    fn adam_single_scalar_step() {
        let mut p = scalar_params(0.0);
        let mut g = p.zeros_like();
        g.encoder[0].bias[0] = 1.0;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        let expected = -0.001 * (1.0 / (1.0 + 1e-8));
        assert!((p.encoder[0].bias[0] - expected).abs() < 1e-18);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr_are_no_ops() {
        let p0 = ModelParams::init(
            Architecture {
                encoder_widths: vec![3, 4],
                decoder_hidden: vec![5],
                n_out: 2,
            },
            &mut SeededRng::new(1),
        )
        .unwrap();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &p0.zeros_like(), &mut st, 0.01).unwrap();
        assert_eq!(p, p0);
        assert_eq!(st.t, 1);

        let mut g = p0.clone();
        g.scale(3.0);
        adam_step(&mut p, &g, &mut st, 0.0).unwrap();
        assert_eq!(p, p0);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = scalar_params(0.0);
        let other = ModelParams::zeros(Architecture::standard(1)).unwrap();
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &other, &mut st, 0.1).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_consistency() {
        let mut params = ModelParams::init(
            Architecture {
                encoder_widths: vec![4, 6],
                decoder_hidden: vec![8],
                n_out: 5,
            },
            &mut SeededRng::new(2),
        )
        .unwrap();
        let last = params.decoder.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let partial = PointCloud::new(vec![
            Point3::new(0.1, 0.2, 0.3),
            Point3::new(-0.2, 0.0, 0.1),
        ])
        .unwrap();
        let cfg = TrainConfig {
            n_out: 5,
            n_syn_views: 3,
            ..TrainConfig::default()
        };
        let fwd = acl_forward(&params, &partial, &cfg, &mut SeededRng::new(0)).unwrap();
        assert!(fwd.completions[0].iter().all(|p| *p == Point3::ORIGIN));
        for pv in &fwd.synthetic_partials[0] {
            assert!(pv.iter().all(|p| *p == Point3::ORIGIN));
        }
        assert_eq!(fwd.breakdowns[0].cons, 0.0);
        assert_eq!(
            crate::model::decode(&params, &FeatureVector(ndarray::Array1::zeros(6)))
                .unwrap()
                .len(),
            5
        );
    }

    #[test]
    fn fingerprint_ignores_epochs_only() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            epochs: 5,
            ..a.clone()
        };
        let c = TrainConfig {
            seed: 1,
            ..a.clone()
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"batch_size": 4, "consistency_mode": "chamfer"}"#).unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.consistency_mode, ConsistencyMode::Chamfer);
        assert_eq!(cfg.n_syn_views, 8);
        let bad = TrainConfig {
            decay_factor: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr0: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
