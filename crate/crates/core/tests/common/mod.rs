//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is written with plain loops over the
//! original point order and shares no numerical code with the library.

#![allow(dead_code)]

use pcc_core::model::ModelParams;
use pcc_core::{Point3, PointCloud, SeededRng};

pub fn random_points(n: usize, rng: &mut SeededRng, half: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.uniform(-half, half),
                rng.uniform(-half, half),
                rng.uniform(-half, half),
            )
        })
        .collect()
}

pub fn random_cloud(n: usize, rng: &mut SeededRng, half: f64) -> PointCloud {
    PointCloud::new(random_points(n, rng, half)).unwrap()
}

fn dist(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Nearest point of `to` with the lowest index among exact ties.
pub fn brute_nearest(q: Point3, to: &[Point3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, &p) in to.iter().enumerate() {
        let d = dist(q, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn brute_directed_mean(from: &[Point3], to: &[Point3]) -> f64 {
    from.iter().map(|&q| brute_nearest(q, to).1).sum::<f64>() / from.len() as f64
}

pub fn brute_directed_max(from: &[Point3], to: &[Point3]) -> f64 {
    from.iter()
        .map(|&q| brute_nearest(q, to).1)
        .fold(0.0, f64::max)
}

pub fn brute_weighted_chamfer(c: &[Point3], p: &[Point3], alpha: f64, beta: f64) -> f64 {
    alpha * brute_directed_mean(c, p) + beta * brute_directed_mean(p, c)
}

pub fn mean_pairwise_distance(points: &[Point3]) -> f64 {
    let n = points.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += dist(points[i], points[j]);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Dense copy of the network as nested vectors.
#[derive(Clone, Debug)]
pub struct Net {
    /// (weight rows, bias) per layer, encoder first.
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    pub n_encoder: usize,
}

/// Sign pattern of every ReLU pre-activation; equal patterns mean no kink
/// was crossed.
pub type Pattern = Vec<bool>;

impl Net {
    pub fn from_params(params: &ModelParams) -> Self {
        let layers = params
            .layers()
            .map(|l| {
                let rows = l.weight.rows().into_iter().map(|r| r.to_vec()).collect();
                (rows, l.bias.to_vec())
            })
            .collect();
        Net {
            layers,
            n_encoder: params.encoder.len(),
        }
    }

    /// Number of tensors, ordered weight then bias per layer.
    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn tensor_len(&self, t: usize) -> usize {
        let (w, b) = &self.layers[t / 2];
        if t % 2 == 0 {
            w.len() * w[0].len()
        } else {
            b.len()
        }
    }

    pub fn entry_mut(&mut self, t: usize, k: usize) -> &mut f64 {
        let (w, b) = &mut self.layers[t / 2];
        if t % 2 == 0 {
            let cols = w[0].len();
            &mut w[k / cols][k % cols]
        } else {
            &mut b[k]
        }
    }

    fn apply(&self, layer: usize, x: &[f64], relu: bool, pattern: &mut Pattern) -> Vec<f64> {
        let (w, b) = &self.layers[layer];
        w.iter()
            .zip(b)
            .map(|(row, &bias)| {
                let mut s = bias;
                for (a, v) in row.iter().zip(x) {
                    s += a * v;
                }
                if relu {
                    pattern.push(s > 0.0);
                    if s > 0.0 {
                        s
                    } else {
                        0.0
                    }
                } else {
                    s
                }
            })
            .collect()
    }

    /// Per-point encoder, average pooling, decoder.
    pub fn complete(&self, points: &[Point3], pattern: &mut Pattern) -> Vec<Point3> {
        let width = self.layers[self.n_encoder - 1].1.len();
        let mut pooled = vec![0.0; width];
        for p in points {
            let mut h = vec![p.x, p.y, p.z];
            for l in 0..self.n_encoder {
                h = self.apply(l, &h, l + 1 < self.n_encoder, pattern);
            }
            for (acc, v) in pooled.iter_mut().zip(&h) {
                *acc += v;
            }
        }
        let mut h: Vec<f64> = pooled.iter().map(|v| v / points.len() as f64).collect();
        let n_layers = self.layers.len();
        for l in self.n_encoder..n_layers {
            h = self.apply(l, &h, l + 1 < n_layers, pattern);
        }
        h.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
    }
}

/// How the consistency target enters the reference loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// A constant captured at the base parameters.
    Frozen,
    /// Recomputed from the perturbed parameters.
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Consistency {
    Mse,
    Chamfer,
}

/// The closed-loop loss with synthetic partials held fixed.
pub struct ReferenceLoss {
    pub partial: Vec<Point3>,
    pub synthetic: Vec<Vec<Point3>>,
    pub frozen_target: Vec<Point3>,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub target: Target,
    pub consistency: Consistency,
}

/// Loss value plus everything whose change would make it non-smooth.
pub struct Evaluation {
    pub loss: f64,
    pub pattern: Pattern,
    pub correspondences: Vec<usize>,
}

impl ReferenceLoss {
    pub fn eval(&self, net: &Net) -> Evaluation {
        let mut pattern = Vec::new();
        let mut corr = Vec::new();
        let c0 = net.complete(&self.partial, &mut pattern);
        let target = match self.target {
            Target::Frozen => self.frozen_target.clone(),
            Target::Live => c0.clone(),
        };
        let n_views = self.synthetic.len() as f64;
        let mut cons = 0.0;
        for pv in &self.synthetic {
            let cv = net.complete(pv, &mut pattern);
            match self.consistency {
                Consistency::Mse => {
                    let mut s = 0.0;
                    for (a, b) in cv.iter().zip(&target) {
                        let d = dist(*a, *b);
                        s += d * d;
                    }
                    cons += s / (cv.len() as f64 * n_views);
                }
                Consistency::Chamfer => {
                    cons += self.directed(&cv, &target, &mut corr) / n_views;
                    cons += self.directed(&target, &cv, &mut corr) / n_views;
                }
            }
        }
        let wcd = self.alpha * self.directed(&c0, &self.partial, &mut corr)
            + self.beta * self.directed(&self.partial, &c0, &mut corr);
        Evaluation {
            loss: self.lambda * cons + wcd,
            pattern,
            correspondences: corr,
        }
    }

    fn directed(&self, from: &[Point3], to: &[Point3], corr: &mut Vec<usize>) -> f64 {
        let mut s = 0.0;
        for &q in from {
            let (j, d) = brute_nearest(q, to);
            corr.push(j);
            s += d;
        }
        s / from.len() as f64
    }
}

/// Outcome of comparing analytic gradient entries against central differences.
#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Entries compared absolutely because both gradients fell below the floor.
    pub below_floor: usize,
    /// A perturbation crossed a ReLU kink or changed a nearest-neighbor match.
    pub non_smooth: bool,
}

pub const FD_STEP: f64 = 1e-5;
/// Entries where both gradients are below this are compared absolutely:
/// central differences carry about 1e-11 of roundoff at this step size, so a
/// relative error of 1e-4 is only resolvable above about 1e-7.
pub const FD_ABS_FLOOR: f64 = 1e-7;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < FD_ABS_FLOOR {
        diff / FD_ABS_FLOOR
    } else {
        diff / scale
    }
}

/// Central-difference check of `grads` at the listed `(tensor, index)` entries.
pub fn fd_check(
    params: &ModelParams,
    grads: &ModelParams,
    loss: &ReferenceLoss,
    entries: impl IntoIterator<Item = (usize, usize)>,
) -> FdReport {
    let base_net = Net::from_params(params);
    let base = loss.eval(&base_net);
    let analytic = grads.tensors();
    let mut report = FdReport::default();
    let mut net = base_net.clone();
    for (t, k) in entries {
        let orig = *net.entry_mut(t, k);
        *net.entry_mut(t, k) = orig + FD_STEP;
        let plus = loss.eval(&net);
        *net.entry_mut(t, k) = orig - FD_STEP;
        let minus = loss.eval(&net);
        *net.entry_mut(t, k) = orig;
        for e in [&plus, &minus] {
            if e.pattern != base.pattern || e.correspondences != base.correspondences {
                report.non_smooth = true;
                return report;
            }
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * FD_STEP);
        let a = analytic[t][k];
        let err = rel_err(a, numeric);
        report.checked += 1;
        report.below_floor += (a.abs().max(numeric.abs()) < FD_ABS_FLOOR) as usize;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((t, k, a, numeric));
        }
    }
    report
}

pub fn all_entries(net: &Net) -> Vec<(usize, usize)> {
    (0..net.tensor_count())
        .flat_map(|t| (0..net.tensor_len(t)).map(move |k| (t, k)))
        .collect()
}

/// `per_tensor` random entries of every tensor plus the largest-magnitude
/// analytic entry of each.
pub fn sampled_entries(
    grads: &ModelParams,
    per_tensor: usize,
    rng: &mut SeededRng,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (t, g) in grads.tensors().into_iter().enumerate() {
        let argmax = (0..g.len())
            .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()))
            .unwrap();
        out.push((t, argmax));
        for _ in 0..per_tensor {
            out.push((t, rng.below(g.len())));
        }
    }
    out
}

use pcc_core::model::{param_gradients, Architecture};
use pcc_core::train::{acl_forward_batch, AclForward, ConsistencyMode, TargetBranch, TrainConfig};

/// Widths small enough for an exhaustive finite-difference sweep, with the
/// same layer structure as the standard network.
pub fn reduced_architecture(n_out: usize) -> Architecture {
    Architecture {
        encoder_widths: vec![8, 12, 16, 20],
        decoder_hidden: vec![24, 24],
        n_out,
    }
}

pub fn tiny_config(consistency_mode: ConsistencyMode) -> TrainConfig {
    TrainConfig {
        n_out: 8,
        n_syn_views: 2,
        consistency_mode,
        ..TrainConfig::default()
    }
}

/// A randomly drawn closed-loop instance with its analytic gradients.
pub struct Instance {
    pub params: ModelParams,
    pub forward: AclForward,
    pub grads: ModelParams,
    pub reference: ReferenceLoss,
}

pub fn draw_instance(
    arch: &Architecture,
    cfg: &TrainConfig,
    n_partial: usize,
    branch: TargetBranch,
    seed: u64,
) -> Instance {
    let mut rng = SeededRng::new(seed);
    let mut params = ModelParams::init(arch.clone(), &mut rng).unwrap();
    for layer in params.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.uniform(-0.1, 0.1));
    }
    let partial = random_cloud(n_partial, &mut rng, 0.5);
    let forward =
        acl_forward_batch(&params, &[(&partial).into()], cfg, vec![rng.fork()], branch).unwrap();
    let grads = param_gradients(&params, &forward.graph);
    let w = cfg.weights;
    let reference = ReferenceLoss {
        partial: partial.points().to_vec(),
        synthetic: forward.synthetic_partials[0]
            .iter()
            .map(|p| p.points().to_vec())
            .collect(),
        frozen_target: forward.completions[0].points().to_vec(),
        alpha: w.alpha,
        beta: w.beta,
        lambda: w.lambda_cons,
        target: match branch {
            TargetBranch::Detached => Target::Frozen,
            TargetBranch::Live => Target::Live,
        },
        consistency: match cfg.consistency_mode {
            ConsistencyMode::Mse => Consistency::Mse,
            ConsistencyMode::Chamfer => Consistency::Chamfer,
        },
    };
    Instance {
        params,
        forward,
        grads,
        reference,
    }
}

/// Draws instances from `first_seed` upward, skipping any whose
/// perturbations are non-smooth, until `count` have been checked. Returns the
/// reports and the number of redraws.
pub fn fd_sweep(
    count: usize,
    first_seed: u64,
    mut make: impl FnMut(u64) -> Instance,
    mut entries: impl FnMut(&Instance, u64) -> Vec<(usize, usize)>,
) -> (Vec<FdReport>, usize) {
    let mut reports = Vec::new();
    let mut redraws = 0;
    let mut seed = first_seed;
    while reports.len() < count {
        let inst = make(seed);
        let list = entries(&inst, seed);
        let report = fd_check(&inst.params, &inst.grads, &inst.reference, list);
        seed += 1;
        if report.non_smooth {
            redraws += 1;
            assert!(redraws < 10 * count, "too many non-smooth instances");
            continue;
        }
        reports.push(report);
    }
    (reports, redraws)
}

/// Front hemisphere of a sphere at the origin, up to `tolerance`.
pub fn sphere_front_facing(p: Point3, toward_camera: Point3, tolerance: f64) -> bool {
    p.x * toward_camera.x + p.y * toward_camera.y + p.z * toward_camera.z > -tolerance
}

/// True if the ray `p + t·dir`, `t > 0`, passes through the open box
/// `(-half, half)^3` (slab test).
pub fn ray_hits_box(p: Point3, dir: Point3, half: f64) -> bool {
    let o = [p.x, p.y, p.z];
    let d = [dir.x, dir.y, dir.z];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] <= -half || o[k] >= half {
                return false;
            }
            continue;
        }
        let a = (-half - o[k]) / d[k];
        let b = (half - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    t0 < t1
}

/// A point on the surface of the cube `[-half, half]^3` counts as visible if
/// its ray toward the camera misses the cube shrunk by `tolerance`.
pub fn cube_front_facing(p: Point3, half: f64, toward_camera: Point3, tolerance: f64) -> bool {
    !ray_hits_box(p, toward_camera, half - tolerance)
}
