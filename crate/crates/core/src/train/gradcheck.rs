use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{softmax_xent, Mode};
use crate::model::{Gradients, Head, ModelConfig, PerceptionNet};
use crate::tensor::{Precision, Tensor4};

/// Small network that still has every layer kind of the full model.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        input_height: 6,
        input_width: 32,
        num_classes: 3,
        conv_channels: [4, 8, 8],
        filter_width: 3,
        fusion_layer: 3,
        head: Head::Gap,
        dropout_rate: 0.0,
        precision: Precision::F64,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    /// At most 4.
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    /// Feed an all-zero batch instead of random windows.
    pub zero_input: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { model: toy_config(), samples: 4, step: 1e-5, seed: 0, zero_input: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over the block.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    /// One line per parameter block.
    pub fn render(&self) -> String {
        self.blocks
            .iter()
            .map(|b| {
                let verdict = if b.passed { "ok" } else { "FAIL" };
                format!("{:<18} n={:<5} max_rel_error={:.3e} {verdict}\n", b.name, b.len, b.max_rel_error)
            })
            .collect()
    }
}

pub fn grad_check(cfg: &GradCheckConfig, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(cfg, tolerance, |net, x, labels| {
        let (logits, cache) = net.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))?;
        net.backward(&softmax_xent(&logits, labels)?.grad, &cache)
    })
}

/// Compares `analytic` against central differences of the mean cross-entropy,
/// element by element for every parameter block.
pub fn grad_check_with(
    cfg: &GradCheckConfig,
    tolerance: f64,
    analytic: impl Fn(&PerceptionNet<f64>, &Tensor4<f64>, &[usize]) -> Result<Gradients<f64>>,
) -> Result<GradCheckReport> {
    if cfg.model.precision != Precision::F64 || cfg.model.dropout_rate != 0.0 {
        return Err(Error::Config("gradient checks need 64-bit precision and no dropout".into()));
    }
    if !(1..=4).contains(&cfg.samples) {
        return Err(Error::Config(format!("gradient checks use 1 to 4 samples, got {}", cfg.samples)));
    }
    let mut net = PerceptionNet::<f64>::init(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    // Nonzero biases keep ReLUs off their kink when the input is all zero.
    let names = net.param_names();
    for (name, block) in names.iter().zip(net.param_blocks_mut()) {
        if name.ends_with(".bias") {
            block.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
        }
    }
    let m = &cfg.model;
    let x = Tensor4::from_fn((cfg.samples, 1, m.input_height, m.input_width), |_, _, _, _| {
        if cfg.zero_input { 0.0 } else { rng.gen_range(-1.0..1.0) }
    })?;
    let labels: Vec<usize> = (0..cfg.samples).map(|_| rng.gen_range(0..m.num_classes)).collect();
    let grads = analytic(&net, &x, &labels)?;
    if grads.blocks.len() != names.len() {
        return Err(Error::InvalidShape(format!("{} gradient blocks for {} parameter blocks", grads.blocks.len(), names.len())));
    }

    let loss = |net: &PerceptionNet<f64>| -> Result<f64> { Ok(softmax_xent(&net.logits(&x)?, &labels)?.loss) };
    let mut blocks = Vec::with_capacity(names.len());
    for (b, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..grads.blocks[b].len() {
            let orig = net.param_blocks()[b][i];
            net.param_blocks_mut()[b][i] = orig + cfg.step;
            let plus = loss(&net)?;
            net.param_blocks_mut()[b][i] = orig - cfg.step;
            let minus = loss(&net)?;
            net.param_blocks_mut()[b][i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grads.blocks[b][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
        }
        blocks.push(BlockReport {
            name: name.clone(),
            len: grads.blocks[b].len(),
            max_rel_error: worst,
            passed: worst <= tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_network_passes() {
        let report = grad_check(&GradCheckConfig::default(), 1e-4).unwrap();
        assert_eq!(report.blocks.len(), 8);
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.render().lines().count(), 8);
        assert!(report.render().starts_with("conv1.weight"));
    }

    #[test]
    fn zero_input_still_checks_biases() {
        let cfg = GradCheckConfig { zero_input: true, ..Default::default() };
        let report = grad_check(&cfg, 1e-4).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn sign_flipped_conv_gradient_is_caught() {
        let report = grad_check_with(&GradCheckConfig::default(), 1e-4, |net, x, labels| {
            let (logits, cache) = net.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))?;
            let mut g = net.backward(&softmax_xent(&logits, labels)?.grad, &cache)?;
            g.blocks[2].iter_mut().for_each(|v| *v = -*v);
            Ok(g)
        })
        .unwrap();
        assert!(!report.passed());
        let bad: Vec<&str> = report.blocks.iter().filter(|b| !b.passed).map(|b| b.name.as_str()).collect();
        assert_eq!(bad, vec!["conv2.weight"]);
        assert!(report.blocks[2].max_rel_error > 1.0);
    }

    #[test]
    fn tight_tolerance_reports_failures() {
        let report = grad_check(&GradCheckConfig::default(), 1e-12).unwrap();
        assert!(!report.passed());
        assert!(report.render().contains("FAIL"));
    }

    #[test]
    fn rejects_unsuitable_configs() {
        let cfg = GradCheckConfig { model: ModelConfig { dropout_rate: 0.4, ..toy_config() }, ..Default::default() };
        assert!(grad_check(&cfg, 1e-4).is_err());
        assert!(grad_check(&GradCheckConfig { samples: 5, ..Default::default() }, 1e-4).is_err());
    }
}
