use serde::{Deserialize, Serialize};

use super::{ceil_tol, PairError, TestVerdict};

/// Block layout and threshold offsets of the majority-of-means test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmParams {
    pub kappa: f64,
    /// Observations per block.
    pub m: u64,
    /// Number of blocks.
    pub j: u64,
    pub k: u64,
    /// Threshold sits this far below the mean potential at the first hypothesis.
    pub offset_below: f64,
    /// ...and this far above the mean potential at the second.
    pub offset_above: f64,
}

impl MmParams {
    /// Block threshold from the mean potential value at the nearest point of
    /// the first set.
    pub fn threshold(&self, mean_at_first: f64) -> f64 {
        mean_at_first - self.offset_below
    }
}

/// Parameters for partial risks `eps1 ≤ eps2` and mean separation `varrho`.
pub fn mm_params(eps1: f64, eps2: f64, varrho: f64) -> Result<MmParams, PairError> {
    if !(eps1 > 0.0 && eps2 < 1.0 && eps1 <= eps2) {
        return Err(PairError::InvalidArgument(format!("need 0 < ε1 ≤ ε2 < 1, got {eps1}, {eps2}")));
    }
    if !(varrho > 0.0) {
        return Err(PairError::InvalidArgument(format!("separation must be positive, got {varrho}")));
    }
    let l1 = (1.0 / eps1).ln();
    let kappa = 0.5 * (1.0 - (1.0 / eps2).ln() / l1);
    let e = std::f64::consts::E;
    let m = ceil_tol(4.0 * e * ((-kappa).exp() + 1.0).powi(2) / (varrho * varrho)).max(1);
    let j = ceil_tol(2.0 * l1).max(1);
    let ek = kappa.exp();
    Ok(MmParams { kappa, m, j, k: j * m, offset_below: ek * varrho / (1.0 + ek), offset_above: varrho / (1.0 + ek) })
}

/// Means of consecutive blocks of `m` values; a trailing partial block is dropped.
pub fn block_means(values: &[f64], m: usize) -> Vec<f64> {
    if m == 0 {
        return vec![];
    }
    values.chunks_exact(m).map(|b| b.iter().sum::<f64>() / m as f64).collect()
}

/// Accept `H1` iff at least half of the block means reach `c_star`.
pub fn mm_decide(blocks: &[f64], c_star: f64) -> Result<TestVerdict, PairError> {
    if blocks.is_empty() {
        return Err(PairError::InvalidArgument("no blocks".into()));
    }
    let count = blocks.iter().filter(|&&b| b >= c_star).count();
    Ok(TestVerdict::from_comparison(count as f64, 0.5 * blocks.len() as f64))
}
