use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoder::GruParams;
use super::routing::TransformMatrices;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub forward: GruParams,
    pub backward: GruParams,
}

/// Speaker projection `W_s` (`n × M`) and optional bias (`1 × M`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerHeadParams {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

impl SpeakerHeadParams {
    pub fn zeros(dim: usize, speakers: usize, bias: bool) -> Self {
        SpeakerHeadParams {
            weight: Matrix::zeros(dim, speakers),
            bias: bias.then(|| Matrix::zeros(1, speakers)),
        }
    }

    pub fn speakers(&self) -> usize {
        self.weight.cols()
    }
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsNetParams {
    pub encoder: Vec<EncoderLayer>,
    /// `P·d_p × 2H`
    pub projection: Matrix,
    /// `1 × P·d_p`
    pub projection_bias: Matrix,
    pub transforms: TransformMatrices,
    pub speaker: Option<SpeakerHeadParams>,
}

impl CapsNetParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.encoder_hidden;
        let encoder = (0..config.encoder_layers)
            .map(|l| {
                let input = if l == 0 { config.feat_dim } else { 2 * h };
                EncoderLayer {
                    forward: GruParams::zeros(input, h),
                    backward: GruParams::zeros(input, h),
                }
            })
            .collect();
        CapsNetParams {
            encoder,
            projection: Matrix::zeros(config.projection_size(), 2 * h),
            projection_bias: Matrix::zeros(1, config.projection_size()),
            transforms: TransformMatrices::zeros(
                config.num_primary,
                config.num_output,
                config.output_dim,
                config.primary_dim,
            ),
            speaker: config.multitask.then(|| {
                SpeakerHeadParams::zeros(
                    config.output_dim,
                    config.speaker_count,
                    config.speaker_bias,
                )
            }),
        }
    }

    /// Seeded initialization. Encoder and projection weights are uniform in
    /// `±1/√fan_in`; each `W_ij` entry is Gaussian with the configured
    /// standard deviation. The speaker head is drawn last so that the core
    /// parameters do not depend on whether it exists.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.encoder_hidden;
        let mut p = Self::zeros(config);
        for (l, layer) in p.encoder.iter_mut().enumerate() {
            let input = if l == 0 { config.feat_dim } else { 2 * h };
            layer.forward = GruParams::init(input, h, config.update_gate_bias, &mut rng);
            layer.backward = GruParams::init(input, h, config.update_gate_bias, &mut rng);
        }
        let a = 1.0 / ((2 * h) as f64).sqrt();
        p.projection
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-a..=a));
        let normal = Normal::new(0.0, config.transform_init_std)
            .map_err(|e| Error::Usage(format!("model.transform_init_std: {e}")))?;
        p.transforms
            .data
            .iter_mut()
            .for_each(|v| *v = normal.sample(&mut rng));
        if let Some(head) = p.speaker.as_mut() {
            let a = 1.0 / (config.output_dim as f64).sqrt();
            head.weight
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-a..=a));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    pub fn add_assign(&mut self, other: &Self) {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |_, v| {
            for (a, b) in v.iter_mut().zip(&flat[offset..]) {
                *a += b;
            }
            offset += v.len();
        });
        assert_eq!(offset, flat.len(), "parameter layouts differ");
    }

    pub fn scale(&mut self, alpha: f64) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x *= alpha));
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// Named tensors with their shapes, in visiting order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            for (dir, g) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                let base = format!("encoder.l{l}.{dir}");
                out.push((format!("{base}.w_in"), vec![g.w_in.rows(), g.w_in.cols()]));
                out.push((
                    format!("{base}.w_rec"),
                    vec![g.w_rec.rows(), g.w_rec.cols()],
                ));
                out.push((format!("{base}.bias"), vec![g.bias.cols()]));
            }
        }
        out.push((
            "primary.weight".into(),
            vec![self.projection.rows(), self.projection.cols()],
        ));
        out.push(("primary.bias".into(), vec![self.projection_bias.cols()]));
        let t = &self.transforms;
        out.push((
            "transforms".into(),
            vec![t.num_in, t.num_out, t.out_dim, t.in_dim],
        ));
        if let Some(head) = &self.speaker {
            out.push((
                "speaker.weight".into(),
                vec![head.weight.rows(), head.weight.cols()],
            ));
            if let Some(b) = &head.bias {
                out.push(("speaker.bias".into(), vec![b.cols()]));
            }
        }
        out
    }

    /// Checks that tensor shapes agree with `config`.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(config).shapes();
        let actual = self.shapes();
        if expected != actual {
            return Err(Error::Contract(format!(
                "parameter shapes do not match the model config (expected {expected:?}, found {actual:?})"
            )));
        }
        Ok(())
    }
}

impl ParamSet for CapsNetParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (l, layer) in self.encoder.iter().enumerate() {
            for (dir, g) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                f(&format!("encoder.l{l}.{dir}.w_in"), g.w_in.as_slice());
                f(&format!("encoder.l{l}.{dir}.w_rec"), g.w_rec.as_slice());
                f(&format!("encoder.l{l}.{dir}.bias"), g.bias.as_slice());
            }
        }
        f("primary.weight", self.projection.as_slice());
        f("primary.bias", self.projection_bias.as_slice());
        f("transforms", &self.transforms.data);
        if let Some(head) = &self.speaker {
            f("speaker.weight", head.weight.as_slice());
            if let Some(b) = &head.bias {
                f("speaker.bias", b.as_slice());
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            for (dir, g) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                f(&format!("encoder.l{l}.{dir}.w_in"), g.w_in.as_mut_slice());
                f(&format!("encoder.l{l}.{dir}.w_rec"), g.w_rec.as_mut_slice());
                f(&format!("encoder.l{l}.{dir}.bias"), g.bias.as_mut_slice());
            }
        }
        f("primary.weight", self.projection.as_mut_slice());
        f("primary.bias", self.projection_bias.as_mut_slice());
        f("transforms", &mut self.transforms.data);
        if let Some(head) = &mut self.speaker {
            f("speaker.weight", head.weight.as_mut_slice());
            if let Some(b) = &mut head.bias {
                f("speaker.bias", b.as_mut_slice());
            }
        }
    }
}
