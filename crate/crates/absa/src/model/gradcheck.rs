//! Full-model gradient verification: compares analytic backward gradients
//! against central finite differences over every parameter coordinate,
//! embedding rows included, with dropout masks frozen by re-seeding the rng
//! per evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{LabelVector, Polarity};
use crate::tensor::{self, Mode, Tensor};

use super::{
    e2e_backward, e2e_forward_loss, pipeline_backward, pipeline_forward_loss, GradBundle,
    ModelParams, Result, TrainedModel,
};

/// One loss term to differentiate: a whole-document joint instance for the
/// end-to-end models or a (document, aspect, polarity) instance for the
/// pipelines.
#[derive(Debug, Clone)]
pub enum CheckInstance {
    Joint {
        tokens: Vec<String>,
        gold: LabelVector,
    },
    Aspect {
        tokens: Vec<String>,
        aspect: usize,
        polarity: Polarity,
    },
}

/// Outcome of a gradient check over all coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub p95: f64,
    pub max: f64,
}

/// Relative error with both-near-zero agreement treated as exact.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn flatten_state(model: &TrainedModel) -> Vec<Tensor> {
    let mut flat: Vec<Tensor> = model
        .params
        .params()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let table = &model.table;
    flat.push(Tensor::from_parts(
        vec![table.vocab().len(), table.dim()],
        table.words_flat().to_vec(),
    ));
    if table.bucket_count() > 0 {
        flat.push(Tensor::from_parts(
            vec![table.bucket_count(), table.dim()],
            table.buckets_flat().to_vec(),
        ));
    }
    flat
}

fn write_state(model: &mut TrainedModel, flat: &[Tensor]) {
    let mut targets = model.params.params_mut();
    let n = targets.len();
    for (target, source) in targets.iter_mut().zip(&flat[..n]) {
        target.data_mut().copy_from_slice(source.data());
    }
    model
        .table
        .words_flat_mut()
        .copy_from_slice(flat[n].data());
    if model.table.bucket_count() > 0 {
        model
            .table
            .buckets_flat_mut()
            .copy_from_slice(flat[n + 1].data());
    }
}

fn total_loss(model: &TrainedModel, instances: &[CheckInstance], mask_seed: u64) -> Result<f64> {
    // Fresh rng per evaluation: identical dropout masks across perturbations.
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut total = 0.0;
    for instance in instances {
        total += match (&model.params, instance) {
            (ModelParams::E2eCnn(p), CheckInstance::Joint { tokens, gold }) => e2e_forward_loss(
                p,
                tokens,
                gold,
                &model.table,
                &model.config,
                Mode::Train,
                &mut rng,
            )?
            .loss_value(),
            (ModelParams::E2eLstm(p), CheckInstance::Joint { tokens, gold }) => e2e_forward_loss(
                p,
                tokens,
                gold,
                &model.table,
                &model.config,
                Mode::Train,
                &mut rng,
            )?
            .loss_value(),
            (
                ModelParams::Pipeline(p),
                CheckInstance::Aspect {
                    tokens,
                    aspect,
                    polarity,
                },
            ) => pipeline_forward_loss(
                p,
                tokens,
                *aspect,
                *polarity,
                &model.table,
                &model.config,
                Mode::Train,
                &mut rng,
            )?
            .loss_value(),
            _ => {
                return Err(super::ModelError::Invalid(
                    "check instance kind does not match architecture".into(),
                ))
            }
        };
    }
    Ok(total)
}

fn analytic_gradients(
    model: &TrainedModel,
    instances: &[CheckInstance],
    mask_seed: u64,
) -> Result<Vec<Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut total: Option<GradBundle> = None;
    for instance in instances {
        let bundle = match (&model.params, instance) {
            (ModelParams::E2eCnn(p), CheckInstance::Joint { tokens, gold }) => {
                let fw = e2e_forward_loss(
                    p,
                    tokens,
                    gold,
                    &model.table,
                    &model.config,
                    Mode::Train,
                    &mut rng,
                )?;
                e2e_backward(&fw)?
            }
            (ModelParams::E2eLstm(p), CheckInstance::Joint { tokens, gold }) => {
                let fw = e2e_forward_loss(
                    p,
                    tokens,
                    gold,
                    &model.table,
                    &model.config,
                    Mode::Train,
                    &mut rng,
                )?;
                e2e_backward(&fw)?
            }
            (
                ModelParams::Pipeline(p),
                CheckInstance::Aspect {
                    tokens,
                    aspect,
                    polarity,
                },
            ) => {
                let fw = pipeline_forward_loss(
                    p,
                    tokens,
                    *aspect,
                    *polarity,
                    &model.table,
                    &model.config,
                    Mode::Train,
                    &mut rng,
                )?;
                pipeline_backward(&fw)?
            }
            _ => {
                return Err(super::ModelError::Invalid(
                    "check instance kind does not match architecture".into(),
                ))
            }
        };
        match &mut total {
            Some(acc) => acc.add_assign(&bundle),
            None => total = Some(bundle),
        }
    }
    let total = total.ok_or_else(|| super::ModelError::Invalid("no check instances".into()))?;

    // Densify into the flatten_state layout.
    let mut flat = total.params;
    let table = &model.table;
    let dim = table.dim();
    let mut words = vec![0.0; table.vocab().len() * dim];
    for (idx, g) in &total.embedding.words {
        words[idx * dim..(idx + 1) * dim].copy_from_slice(g);
    }
    flat.push(Tensor::from_parts(
        vec![table.vocab().len(), dim],
        words,
    ));
    if table.bucket_count() > 0 {
        let mut buckets = vec![0.0; table.bucket_count() * dim];
        for (idx, g) in &total.embedding.buckets {
            buckets[idx * dim..(idx + 1) * dim].copy_from_slice(g);
        }
        flat.push(Tensor::from_parts(
            vec![table.bucket_count(), dim],
            buckets,
        ));
    }
    Ok(flat)
}

/// Runs the full check: analytic backward vs central differences (step
/// `eps`) on every coordinate of every parameter tensor and the embedding
/// matrices. Returns the relative-error summary.
pub fn gradient_check(
    model: &TrainedModel,
    instances: &[CheckInstance],
    mask_seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, instances, mask_seed)?;
    let state = flatten_state(model);

    let mut probe = model.clone();
    let numeric = tensor::finite_diff_gradient(
        |flat| {
            write_state(&mut probe, flat);
            total_loss(&probe, instances, mask_seed).expect("forward pass failed during check")
        },
        &state,
        eps,
    )?;

    let mut errors: Vec<f64> = Vec::new();
    for (a, n) in analytic.iter().zip(&numeric) {
        for (av, nv) in a.data().iter().zip(n.data()) {
            errors.push(relative_error(*av, *nv));
        }
    }
    let coordinates = errors.len();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = errors[((coordinates as f64 * 0.95) as usize).min(coordinates - 1)];
    let max = *errors.last().unwrap();
    Ok(GradCheckReport {
        coordinates,
        p95,
        max,
    })
}
