//! Completion quality metrics and dataset-level reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::model::{forward_complete_batch, ModelParams};
use crate::spatial::NearestNeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamferEval {
    pub precision: f64,
    pub coverage: f64,
    pub cd: f64,
}

fn directed_mean(from: &PointCloud, to: &NearestNeighborIndex) -> f64 {
    from.iter().map(|&p| to.query(p).distance).sum::<f64>() / from.len() as f64
}

fn directed_max(from: &PointCloud, to: &NearestNeighborIndex) -> f64 {
    from.iter()
        .map(|&p| to.query(p).distance)
        .fold(0.0, f64::max)
}

/// precision = mean distance from completion to GT, coverage = mean distance
/// from GT to completion, cd = precision + coverage.
pub fn chamfer_eval(completion: &PointCloud, gt: &PointCloud) -> ChamferEval {
    let precision = directed_mean(completion, &NearestNeighborIndex::build(gt));
    let coverage = directed_mean(gt, &NearestNeighborIndex::build(completion));
    ChamferEval {
        precision,
        coverage,
        cd: precision + coverage,
    }
}

/// Mean distance from each partial point to the completion.
pub fn ucd(partial: &PointCloud, completion: &PointCloud) -> f64 {
    directed_mean(partial, &NearestNeighborIndex::build(completion))
}

/// Largest distance from a partial point to the completion.
pub fn uhd(partial: &PointCloud, completion: &PointCloud) -> f64 {
    directed_max(partial, &NearestNeighborIndex::build(completion))
}

/// Metric values for one sample or a dataset mean. Fields are `None` where the
/// metric was not computed (no ground truth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub coverage: Option<f64>,
    pub cd: Option<f64>,
    pub ucd: Option<f64>,
    pub uhd: Option<f64>,
    pub sample_count: usize,
    /// Multiplier already applied to every value (1 = raw units).
    pub scale: f64,
}

impl MetricsReport {
    pub fn for_sample(
        partial: &PointCloud,
        completion: &PointCloud,
        gt: Option<&PointCloud>,
    ) -> Self {
        let ce = gt.map(|g| chamfer_eval(completion, g));
        let index = NearestNeighborIndex::build(completion);
        MetricsReport {
            precision: ce.map(|c| c.precision),
            coverage: ce.map(|c| c.coverage),
            cd: ce.map(|c| c.cd),
            ucd: Some(directed_mean(partial, &index)),
            uhd: Some(directed_max(partial, &index)),
            sample_count: 1,
            scale: 1.0,
        }
    }

    /// Unweighted mean per field over the samples that carry it.
    pub fn mean(reports: &[MetricsReport]) -> Self {
        fn avg(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let (s, n) = vals
                .flatten()
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            (n > 0).then(|| s / n as f64)
        }
        MetricsReport {
            precision: avg(reports.iter().map(|r| r.precision)),
            coverage: avg(reports.iter().map(|r| r.coverage)),
            cd: avg(reports.iter().map(|r| r.cd)),
            ucd: avg(reports.iter().map(|r| r.ucd)),
            uhd: avg(reports.iter().map(|r| r.uhd)),
            sample_count: reports.iter().map(|r| r.sample_count).sum(),
            scale: reports.first().map_or(1.0, |r| r.scale),
        }
    }

    /// Multiplies every value by `factor` (e.g. 100 for CD tables).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: Option<f64>| v.map(|x| x * factor);
        MetricsReport {
            precision: s(self.precision),
            coverage: s(self.coverage),
            cd: s(self.cd),
            ucd: s(self.ucd),
            uhd: s(self.uhd),
            sample_count: self.sample_count,
            scale: self.scale * factor,
        }
    }
}

/// One evaluation input: a partial and, when available, its complete shape.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub id: String,
    pub partial: PointCloud,
    pub gt: Option<PointCloud>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub samples: Vec<SampleReport>,
    pub aggregate: MetricsReport,
}

impl DatasetReport {
    pub fn scaled(&self, factor: f64) -> Self {
        DatasetReport {
            samples: self
                .samples
                .iter()
                .map(|s| SampleReport {
                    id: s.id.clone(),
                    metrics: s.metrics.scaled(factor),
                })
                .collect(),
            aggregate: self.aggregate.scaled(factor),
        }
    }

    /// Header, one row per sample, then a `mean` row. Absent values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,precision,coverage,cd,ucd,uhd,sample_count,scale\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = |id: &str, m: &MetricsReport| {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                id,
                cell(m.precision),
                cell(m.coverage),
                cell(m.cd),
                cell(m.ucd),
                cell(m.uhd),
                m.sample_count,
                m.scale
            );
        };
        for s in &self.samples {
            row(&s.id, &s.metrics);
        }
        row("mean", &self.aggregate);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Completes every partial and reports per-sample metrics plus their mean.
pub fn evaluate_dataset(params: &ModelParams, samples: &[EvalSample]) -> Result<DatasetReport> {
    const CHUNK: usize = 32;
    let mut reports = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let partials: Vec<&PointCloud> = chunk.iter().map(|s| &s.partial).collect();
        let completions = forward_complete_batch(params, &partials)?;
        let batch: Vec<SampleReport> = chunk
            .par_iter()
            .zip(&completions)
            .map(|(s, c)| SampleReport {
                id: s.id.clone(),
                metrics: MetricsReport::for_sample(&s.partial, c, s.gt.as_ref()),
            })
            .collect();
        reports.extend(batch);
    }
    let metrics: Vec<MetricsReport> = reports.iter().map(|r| r.metrics.clone()).collect();
    Ok(DatasetReport {
        aggregate: MetricsReport::mean(&metrics),
        samples: reports,
    })
}
