use super::{Batch, Classifier, HeadInit, ModelConfig, ModelError, SampleInput};
use crate::autodiff::{grad_check, AutodiffError, GradCheckOptions, GradCheckReport};

/// Finite-difference check of the full classifier in float64 on one sample.
///
/// The head is Glorot-initialised so that gradients reach every layer; with
/// the zero head used for training everything upstream of it has zero
/// gradient and the check would be vacuous.
pub fn check_gradients(
    config: &ModelConfig,
    sample: &SampleInput,
    seed: u64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    let model = Classifier::<f64>::new(config.clone(), seed, HeadInit::Glorot)?;
    sample.validate(config.text_dim)?;
    let batch = Batch::<f64>::new(&[sample], config.text_dim, config.edge_features)?;
    let mut params = model.params().to_vec();
    let report = grad_check(
        |tape, vars| {
            let out = model.forward(tape, vars, &batch).map_err(|e| match e {
                ModelError::Autodiff(a) => a,
                other => AutodiffError::Shape(other.to_string()),
            })?;
            tape.bce_loss(out.scores, &batch.labels, 1e-7)
        },
        &mut params,
        opts,
    )?;
    Ok(report)
}
