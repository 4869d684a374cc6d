use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{macro_accuracy, Dataset, Forest, LearnError};
use crate::numeric::{derive_seed, mean, sample_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    /// Source feature column.
    pub feature: usize,
    /// Mean drop in out-of-bag macro-accuracy when the column is shuffled.
    pub mean: f64,
    pub sd: f64,
}

/// Out-of-bag permutation importance on the model's own training data.
pub fn permutation_importance(
    model: &Forest,
    data: &Dataset,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>, LearnError> {
    if data.d != model.n_features() {
        return Err(LearnError::Params("dataset and model feature counts differ".into()));
    }
    let base = macro_accuracy(&data.y, &model.oob_predict(data))?;
    (0..data.d)
        .map(|j| {
            let drops: Vec<f64> = (0..n_repeats)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (j * n_repeats + r) as u64));
                    let mut col: Vec<f64> = (0..data.n).map(|i| data.value(i, j)).collect();
                    col.shuffle(&mut rng);
                    let mut shuffled = data.clone();
                    for (i, v) in col.into_iter().enumerate() {
                        shuffled.x[i * data.d + j] = v;
                    }
                    macro_accuracy(&data.y, &model.oob_predict(&shuffled)).map(|a| base - a)
                })
                .collect::<Result<_, _>>()?;
            Ok(FeatureImportance {
                feature: data.columns[j],
                mean: mean(&drops),
                sd: sample_sd(&drops),
            })
        })
        .collect()
}
