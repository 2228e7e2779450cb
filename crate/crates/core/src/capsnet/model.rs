//! Composition of the encoder, primary capsules, predictions and routing.

use super::encoder::{gru_backward, gru_forward, GruTrace};
use super::params::CapsNetParams;
use super::routing::{
    dynamic_routing_backward, dynamic_routing_traced, predict_capsules, predict_capsules_backward,
    squash, squash_backward, OutputCapsuleSet, PredictionTensor, PrimaryCapsuleSet, RoutingTrace,
};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::Matrix;

/// Gradients share the parameter layout.
pub type CoreGradients = CapsNetParams;

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input sequence of each encoder layer, `T × In`.
    pub layer_inputs: Vec<Matrix>,
    /// Forward and backward direction passes of each layer.
    pub layer_passes: Vec<(GruTrace, GruTrace)>,
    /// Final states of both directions of the top layer.
    pub readout: Vec<f64>,
    /// Projection output before squashing, `P × d_p`.
    pub primary_pre: Matrix,
    pub primary: PrimaryCapsuleSet,
    pub predictions: PredictionTensor,
    pub routing: RoutingTrace,
}

impl ForwardTrace {
    pub fn outputs(&self) -> OutputCapsuleSet {
        OutputCapsuleSet::new(self.routing.iterations.last().unwrap().outputs.clone())
    }
}

struct Encoded {
    layer_inputs: Vec<Matrix>,
    layer_passes: Vec<(GruTrace, GruTrace)>,
    readout: Vec<f64>,
    primary_pre: Matrix,
    primary: PrimaryCapsuleSet,
}

fn run_encoder(f: &FeatureMatrix, params: &CapsNetParams, config: &ModelConfig) -> Result<Encoded> {
    if f.dim() != config.feat_dim {
        return Err(Error::Shape(format!(
            "features have {} coefficients, model expects {}",
            f.dim(),
            config.feat_dim
        )));
    }
    if f.frames() == 0 {
        return Err(Error::Data("utterance has no frames".into()));
    }
    let h = config.encoder_hidden;
    let mut layer_inputs = Vec::with_capacity(params.encoder.len());
    let mut layer_passes = Vec::with_capacity(params.encoder.len());
    let mut input = f.values().clone();
    for layer in &params.encoder {
        let fwd = gru_forward(&layer.forward, &input, false);
        let bwd = gru_forward(&layer.backward, &input, true);
        let frames = input.rows();
        let mut next = Matrix::zeros(frames, 2 * h);
        for t in 0..frames {
            let row = next.row_mut(t);
            row[..h].copy_from_slice(fwd.outputs.row(t));
            row[h..].copy_from_slice(bwd.outputs.row(t));
        }
        layer_inputs.push(std::mem::replace(&mut input, next));
        layer_passes.push((fwd, bwd));
    }
    let (top_f, top_b) = layer_passes.last().expect("encoder has at least one layer");
    let mut readout = Vec::with_capacity(2 * h);
    readout.extend_from_slice(top_f.final_state());
    readout.extend_from_slice(top_b.final_state());

    let mut pre = params.projection_bias.as_slice().to_vec();
    params.projection.matvec_into(&readout, &mut pre);
    let primary_pre = Matrix::from_vec(config.num_primary, config.primary_dim, pre)?;
    let mut primary = Matrix::zeros(config.num_primary, config.primary_dim);
    for i in 0..config.num_primary {
        primary
            .row_mut(i)
            .copy_from_slice(&squash(primary_pre.row(i)));
    }
    Ok(Encoded {
        layer_inputs,
        layer_passes,
        readout,
        primary_pre,
        primary: PrimaryCapsuleSet { vectors: primary },
    })
}

/// Bidirectional recurrent pass, readout of both final states, affine
/// projection to `P·d_p` values, reshaped and squashed into primary capsules.
pub fn encode(
    f: &FeatureMatrix,
    params: &CapsNetParams,
    config: &ModelConfig,
) -> Result<PrimaryCapsuleSet> {
    Ok(run_encoder(f, params, config)?.primary)
}

pub fn forward(
    f: &FeatureMatrix,
    params: &CapsNetParams,
    config: &ModelConfig,
) -> Result<(OutputCapsuleSet, ForwardTrace)> {
    let enc = run_encoder(f, params, config)?;
    let predictions = predict_capsules(&enc.primary, &params.transforms)?;
    let routing = dynamic_routing_traced(&predictions, config.routing_iters);
    let trace = ForwardTrace {
        layer_inputs: enc.layer_inputs,
        layer_passes: enc.layer_passes,
        readout: enc.readout,
        primary_pre: enc.primary_pre,
        primary: enc.primary,
        predictions,
        routing,
    };
    Ok((trace.outputs(), trace))
}

fn check_trace(trace: &ForwardTrace, params: &CapsNetParams, grad_v: &Matrix) -> Result<()> {
    let t = &params.transforms;
    let consistent = trace.layer_inputs.len() == params.encoder.len()
        && trace
            .layer_inputs
            .iter()
            .zip(&params.encoder)
            .all(|(x, l)| x.cols() == l.forward.input())
        && trace.readout.len() == params.projection.cols()
        && trace.primary.vectors.shape() == (t.num_in, t.in_dim)
        && trace.predictions.num_out == t.num_out
        && trace.predictions.dim == t.out_dim
        && grad_v.shape() == (t.num_out, t.out_dim);
    if consistent {
        Ok(())
    } else {
        Err(Error::Contract(
            "forward trace does not match the parameters it is paired with".into(),
        ))
    }
}

/// Backpropagates `dL/dv` through routing, predictions, primary capsules and
/// the encoder. Speaker-head parameters are left untouched.
pub fn backward(
    trace: &ForwardTrace,
    params: &CapsNetParams,
    grad_v: &Matrix,
) -> Result<CoreGradients> {
    let mut grads = params.zeros_like();
    backward_into(trace, params, grad_v, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but accumulates into existing gradients.
pub fn backward_into(
    trace: &ForwardTrace,
    params: &CapsNetParams,
    grad_v: &Matrix,
    grads: &mut CoreGradients,
) -> Result<()> {
    check_trace(trace, params, grad_v)?;
    let grad_pred = dynamic_routing_backward(&trace.predictions, &trace.routing, grad_v);
    let grad_u = predict_capsules_backward(
        &trace.primary,
        &params.transforms,
        &grad_pred,
        &mut grads.transforms,
    );

    let (p, d_p) = trace.primary_pre.shape();
    let mut grad_pre = Vec::with_capacity(p * d_p);
    for i in 0..p {
        grad_pre.extend(squash_backward(trace.primary_pre.row(i), grad_u.row(i)));
    }
    grads.projection.add_outer(&grad_pre, &trace.readout);
    for (b, g) in grads
        .projection_bias
        .as_mut_slice()
        .iter_mut()
        .zip(&grad_pre)
    {
        *b += g;
    }
    let mut grad_readout = vec![0.0; trace.readout.len()];
    params
        .projection
        .matvec_t_into(&grad_pre, &mut grad_readout);

    let h = grad_readout.len() / 2;
    let frames = trace.layer_inputs[0].rows();
    let mut grad_out = Matrix::zeros(frames, 2 * h);
    {
        let (top_f, top_b) = trace.layer_passes.last().unwrap();
        grad_out.row_mut(top_f.final_index())[..h].copy_from_slice(&grad_readout[..h]);
        let row = grad_out.row_mut(top_b.final_index());
        for (r, g) in row[h..].iter_mut().zip(&grad_readout[h..]) {
            *r += g;
        }
    }
    for (l, layer) in params.encoder.iter().enumerate().rev() {
        let input = &trace.layer_inputs[l];
        let (fwd, bwd) = &trace.layer_passes[l];
        let mut g_f = Matrix::zeros(frames, h);
        let mut g_b = Matrix::zeros(frames, h);
        for t in 0..frames {
            g_f.row_mut(t).copy_from_slice(&grad_out.row(t)[..h]);
            g_b.row_mut(t).copy_from_slice(&grad_out.row(t)[h..]);
        }
        let gl = &mut grads.encoder[l];
        let mut gx = gru_backward(&layer.forward, input, fwd, &g_f, &mut gl.forward);
        let gx_b = gru_backward(&layer.backward, input, bwd, &g_b, &mut gl.backward);
        gx.add_scaled(1.0, &gx_b);
        grad_out = gx;
    }
    Ok(())
}
