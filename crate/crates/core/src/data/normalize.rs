use crate::data::{DatasetSplits, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Population mean and standard deviation of one sensor channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        ChannelStats { mean, std: var.sqrt() }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Statistics of every row of `(N, 1, H, W)` windows, pooled over windows and time.
pub fn channel_stats(x: &Tensor4<f32>, names: &[String]) -> Result<Vec<ChannelStats>> {
    let d = x.dims();
    (0..d.h)
        .map(|ch| {
            let values: Vec<f64> = (0..d.n)
                .flat_map(|n| x.item(n)[ch * d.w..(ch + 1) * d.w].iter().map(|&v| v as f64))
                .collect();
            let stats = ChannelStats::from_values(&values);
            if !(stats.std > 0.0) || !stats.mean.is_finite() {
                let name = names.get(ch).map_or("?", String::as_str);
                return Err(Error::Preprocess(format!(
                    "channel {ch} ({name}) has zero variance or non-finite values in the training split"
                )));
            }
            Ok(stats)
        })
        .collect()
}

fn apply(ds: &mut WindowedDataset, stats: &[ChannelStats]) {
    let d = ds.x.dims();
    for (i, v) in ds.x.as_mut_slice().iter_mut().enumerate() {
        let ch = (i / d.w) % d.h;
        *v = stats[ch].apply(*v as f64) as f32;
    }
    ds.channel_stats = stats.to_vec();
}

/// Normalizes every split with statistics of the training split only.
pub fn normalize_splits(mut splits: DatasetSplits) -> Result<DatasetSplits> {
    let stats = channel_stats(&splits.train.x, &splits.train.channel_names)?;
    apply(&mut splits.train, &stats);
    apply(&mut splits.validation, &stats);
    apply(&mut splits.test, &stats);
    Ok(splits)
}
