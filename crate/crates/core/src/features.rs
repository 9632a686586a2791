//! Per-point features: the element-wise maximum of the final top-layer GRU
//! states over the `m` sequences ending at each point.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::model::{MortonNet, SeqBatch};
use crate::morton::QuantSpec;
use crate::neighborhood::SpatialIndex;
use crate::sequence::{generate_ranked, normalize_sequence, order_ranks, SequenceGenConfig, TrainingSample};

/// `N × H` features with a validity flag per row. Invalid rows are zero and
/// must not be consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub valid: Vec<bool>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Indices of valid rows, ascending.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid[i]).collect()
    }
}

/// Element-wise maximum over the rows of an `m × H` state matrix.
pub fn pool_states(states: &ArrayView2<f64>) -> Result<Array1<f64>> {
    if states.nrows() == 0 {
        return Err(Error::ShapeMismatch("cannot pool zero states".into()));
    }
    Ok(states.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b)))
}

/// Points per forward batch during extraction. Batches are formed from
/// consecutive point indices, so results do not depend on the thread count.
const POINTS_PER_BATCH: usize = 64;

pub fn extract_features(
    model: &MortonNet,
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    index: &SpatialIndex<'_>,
    spec: &QuantSpec,
) -> Result<FeatureMatrix> {
    extract_features_with(model, cloud, cfg, index, spec, Execution::Parallel)
}

pub fn extract_features_with(
    model: &MortonNet,
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    index: &SpatialIndex<'_>,
    spec: &QuantSpec,
    exec: Execution,
) -> Result<FeatureMatrix> {
    if model.config.k != cfg.k {
        return Err(Error::InvalidConfig(format!(
            "model was trained with k = {}, extraction asked for k = {}",
            model.config.k, cfg.k
        )));
    }
    cfg.validate()?;
    cloud.validate()?;
    if index.cloud().len() != cloud.len() {
        return Err(Error::ShapeMismatch("index was built over a different cloud".into()));
    }
    let rank = order_ranks(cloud, cfg.scheme, spec)?;
    let n = cloud.len();
    let hidden = model.hidden();
    let mut data = Array2::zeros((n, hidden));
    let mut valid = vec![false; n];
    let chunks = n.div_ceil(POINTS_PER_BATCH);
    let parts = map_range(exec, chunks, |c| -> Result<Vec<(usize, Array1<f64>)>> {
        let centers: Vec<usize> = (c * POINTS_PER_BATCH..((c + 1) * POINTS_PER_BATCH).min(n)).collect();
        let set = generate_ranked(cloud, cfg, index, &rank, &centers, Execution::Sequential)?;
        if set.sequences.is_empty() {
            return Ok(Vec::new());
        }
        let samples: Vec<TrainingSample> = set
            .sequences
            .iter()
            .map(|s| normalize_sequence(cloud, s))
            .collect::<Result<_>>()?;
        let refs: Vec<&TrainingSample> = samples.iter().collect();
        let batch = SeqBatch::from_samples(&refs)?;
        let states = model.hidden_states(&batch.inputs.view(), batch.batch)?;
        let mut out = Vec::new();
        let mut start = 0;
        while start < samples.len() {
            let center = samples[start].center_index;
            let mut end = start + 1;
            while end < samples.len() && samples[end].center_index == center {
                end += 1;
            }
            let pooled = pool_states(&states.slice(ndarray::s![start..end, ..]))?;
            out.push((center, pooled));
            start = end;
        }
        Ok(out)
    });
    for part in parts {
        for (i, row) in part? {
            data.row_mut(i).assign(&row);
            valid[i] = true;
        }
    }
    Ok(FeatureMatrix { data, valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pooling_hand_cases() {
        assert_eq!(pool_states(&array![[1.0, -2.0], [0.0, 5.0]].view()).unwrap(), array![1.0, 5.0]);
        assert_eq!(pool_states(&array![[0.3, -0.7]].view()).unwrap(), array![0.3, -0.7]);
        assert_eq!(pool_states(&array![[1.0, 5.0], [1.0, 5.0]].view()).unwrap(), array![1.0, 5.0]);
        assert!(pool_states(&Array2::<f64>::zeros((0, 2)).view()).is_err());
    }
}
