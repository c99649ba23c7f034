use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricReport};
use crate::corpus::{split, Dataset, SplitDataset, Stats};

/// One k of the density sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityPoint {
    pub k: u32,
    pub stats: Stats,
    pub reports: Vec<MetricReport>,
}

/// One masking percentage of the masking sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskPoint {
    pub pct: f64,
    pub reports: Vec<MetricReport>,
}

/// Walks k = 0, 1, 2, … over k-core subsets until the core is empty,
/// re-splitting every core with the same split seed and handing each
/// (k, split) to `run_point` for preprocessing + training + scoring.
pub fn density_sweep<F, E>(
    data: &Arc<Dataset>,
    split_seed: u64,
    mut run_point: F,
) -> Result<Vec<DensityPoint>, E>
where
    F: FnMut(u32, &SplitDataset) -> Result<Vec<MetricReport>, E>,
    E: From<crate::corpus::CorpusError>,
{
    let mut points = Vec::new();
    for k in 0u32.. {
        let core = data.k_core(k);
        if core.is_empty() {
            break;
        }
        let stats = core.stats();
        let core_split = split(Arc::new(core), split_seed)?;
        let reports = run_point(k, &core_split)?;
        points.push(DensityPoint { k, stats, reports });
    }
    Ok(points)
}

/// Runs `run_point` once per masking percentage, each time on a copy
/// of the split whose training reviews are masked at that rate.
/// Split membership is identical across points.
pub fn mask_sweep<F, E>(
    base: &SplitDataset,
    pcts: &[f64],
    mask_seed: u64,
    mut run_point: F,
) -> Result<Vec<MaskPoint>, E>
where
    F: FnMut(f64, &SplitDataset) -> Result<Vec<MetricReport>, E>,
    E: From<EvalError>,
{
    if pcts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::UnorderedSweep(pcts.to_vec()).into());
    }
    let mut points = Vec::new();
    for &pct in pcts {
        let masked = base.mask_reviews(pct, mask_seed);
        let reports = run_point(pct, &masked)?;
        points.push(MaskPoint { pct, reports });
    }
    Ok(points)
}
