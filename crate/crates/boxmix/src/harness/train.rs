//! The training loop: four supervision modes over one shared batch engine.
//!
//! Per step, every batch element is augmented independently, then turned into
//! one training example according to the mode:
//! - baseline: the element itself with its matched targets;
//! - mixup: blend with a random partner from the batch, one Beta-distributed
//!   weight per pair, targets blended anchor-wise;
//! - boxstack: blend pixels, concatenate the two annotations, match the union;
//! - perlevel: two forward passes — the blended example supervises one anchor
//!   level only, the clean example supervises all the others.
//!
//! Per-item gradients are computed in parallel but reduced in batch order, so
//! results are bit-identical at any worker count. Every random decision draws
//! from its own derived stream; enabling mixing does not shift augmentation.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TrainMode};
use crate::data::LoadedDataset;
use crate::detector::{
    adam_step, backward, forward, init_params, save_checkpoint, AdamHyper, AdamState,
    DetectorSpec, ParamSet,
};
use crate::error::{Error, Result};
use crate::geometry::{build_anchor_set, AnchorSet};
use crate::harness::augment::{augment, AugmentParams};
use crate::image::ImageTensor;
use crate::loss::detection_loss_gradients;
use crate::matching::{match_targets, GroundTruth};
use crate::mixing::{box_mix, box_stack, mix_images, sample_lambda, MixWeight};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
}

/// Persisted summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub seed: u64,
    pub epoch_losses: Vec<EpochStats>,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

/// In-memory training result.
pub struct TrainedModel {
    pub spec: DetectorSpec,
    pub params: ParamSet,
    pub epoch_losses: Vec<EpochStats>,
}

/// Detector architecture implied by a run configuration.
pub fn detector_spec_for(config: &RunConfig) -> DetectorSpec {
    DetectorSpec {
        anchors: config.anchors.clone(),
        num_classes: config.num_classes,
        stem_channels: vec![8, 16],
        level_channels: (0..config.anchors.levels.len())
            .map(|l| 16usize << l.min(2))
            .collect(),
    }
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))
}

struct StepOutcome {
    total: f64,
    cls: f64,
    reg: f64,
    grads: ParamSet,
}

fn mix_weight_for<R: Rng + ?Sized>(config: &RunConfig, rng: &mut R) -> Result<MixWeight> {
    match config.lambda_override {
        Some(l) => Ok(MixWeight::pinned(l)),
        None => sample_lambda(config.alpha, rng),
    }
}

/// One training example's loss and gradients.
#[allow(clippy::too_many_arguments)]
fn item_step(
    config: &RunConfig,
    spec: &DetectorSpec,
    anchors: &AnchorSet,
    params: &ParamSet,
    batch: &[(ImageTensor, GroundTruth)],
    offset_in_batch: usize,
    epoch: usize,
    position: usize,
    level_masks: Option<&(Vec<bool>, Vec<bool>)>,
) -> Result<StepOutcome> {
    let (image, gt) = &batch[offset_in_batch];
    let targets = match_targets(gt, anchors, config.num_classes, config.tau)?;

    let needs_partner = matches!(
        config.mode,
        TrainMode::Mixup | TrainMode::BoxStack | TrainMode::PerLevel
    );
    let (partner, lam) = if needs_partner {
        let mut rng = crate::rng::stream(config.seed, "mix", &[epoch as u64, position as u64]);
        let r = rng.random_range(0..batch.len() - 1);
        let j = if r >= offset_in_batch { r + 1 } else { r };
        let lam = mix_weight_for(config, &mut rng)?;
        (Some(j), Some(lam))
    } else {
        (None, None)
    };

    match config.mode {
        TrainMode::Baseline => {
            let (preds, cache) = forward(spec, params, image)?;
            let (breakdown, dlogits, doffsets) =
                detection_loss_gradients(&targets, &preds, config.mining_ratio, None)?;
            let grads = backward(spec, params, &cache, &dlogits, &doffsets)?;
            Ok(StepOutcome {
                total: breakdown.total,
                cls: breakdown.cls,
                reg: breakdown.reg,
                grads,
            })
        }
        TrainMode::Mixup => {
            let j = partner.expect("partner drawn above");
            let lam = lam.expect("weight drawn above");
            let (p_image, p_gt) = &batch[j];
            let mixed_image = mix_images(image, p_image, lam)?;
            let p_targets = match_targets(p_gt, anchors, config.num_classes, config.tau)?;
            let mixed_targets = box_mix(&targets, &p_targets, lam)?;
            let (preds, cache) = forward(spec, params, &mixed_image)?;
            let (breakdown, dlogits, doffsets) =
                detection_loss_gradients(&mixed_targets, &preds, config.mining_ratio, None)?;
            let grads = backward(spec, params, &cache, &dlogits, &doffsets)?;
            Ok(StepOutcome {
                total: breakdown.total,
                cls: breakdown.cls,
                reg: breakdown.reg,
                grads,
            })
        }
        TrainMode::BoxStack => {
            let j = partner.expect("partner drawn above");
            let lam = lam.expect("weight drawn above");
            let (p_image, p_gt) = &batch[j];
            let mixed_image = mix_images(image, p_image, lam)?;
            let stacked = box_stack(gt, p_gt);
            let stacked_targets =
                match_targets(&stacked, anchors, config.num_classes, config.tau)?;
            let (preds, cache) = forward(spec, params, &mixed_image)?;
            let (breakdown, dlogits, doffsets) =
                detection_loss_gradients(&stacked_targets, &preds, config.mining_ratio, None)?;
            let grads = backward(spec, params, &cache, &dlogits, &doffsets)?;
            Ok(StepOutcome {
                total: breakdown.total,
                cls: breakdown.cls,
                reg: breakdown.reg,
                grads,
            })
        }
        TrainMode::PerLevel => {
            let (mixed_mask, other_mask) =
                level_masks.expect("per-level masks precomputed");
            let j = partner.expect("partner drawn above");
            let lam = lam.expect("weight drawn above");
            let (p_image, p_gt) = &batch[j];
            let mixed_image = mix_images(image, p_image, lam)?;
            let p_targets = match_targets(p_gt, anchors, config.num_classes, config.tau)?;
            let mixed_targets = box_mix(&targets, &p_targets, lam)?;

            // blended pass supervises only the chosen level
            let (m_preds, m_cache) = forward(spec, params, &mixed_image)?;
            let (m_break, m_dlogits, m_doffsets) = detection_loss_gradients(
                &mixed_targets,
                &m_preds,
                config.mining_ratio,
                Some(mixed_mask),
            )?;
            let mut grads = backward(spec, params, &m_cache, &m_dlogits, &m_doffsets)?;

            // clean pass supervises everything else
            let (o_preds, o_cache) = forward(spec, params, image)?;
            let (o_break, o_dlogits, o_doffsets) = detection_loss_gradients(
                &targets,
                &o_preds,
                config.mining_ratio,
                Some(other_mask),
            )?;
            let o_grads = backward(spec, params, &o_cache, &o_dlogits, &o_doffsets)?;
            grads.add_assign(&o_grads)?;

            Ok(StepOutcome {
                total: m_break.total + o_break.total,
                cls: m_break.cls + o_break.cls,
                reg: m_break.reg + o_break.reg,
                grads,
            })
        }
    }
}

/// Train against an in-memory dataset. Deterministic for a given config.
pub fn train_in_memory(config: &RunConfig, dataset: &LoadedDataset) -> Result<TrainedModel> {
    train_with_callback(config, dataset, |_, _| Ok(()))
}

/// Like [`train_in_memory`], invoking `on_epoch` with the parameters after
/// every epoch (checkpointing hook).
pub fn train_with_callback(
    config: &RunConfig,
    dataset: &LoadedDataset,
    mut on_epoch: impl FnMut(usize, &ParamSet) -> Result<()>,
) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.manifest.num_classes() != config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, configuration expects {}",
            dataset.manifest.num_classes(),
            config.num_classes
        )));
    }
    let spec = detector_spec_for(config);
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let anchors = build_anchor_set(&config.anchors)?;
    let mut params = init_params(&spec, crate::rng::derive_seed(config.seed, "init", &[]))?;
    let hyper = AdamHyper {
        lr: config.lr,
        beta1: config.momentum,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: config.weight_decay,
    };
    let mut state = AdamState::new(&params);
    let pool = thread_pool(config.threads)?;
    let aug_params = AugmentParams::default();

    let level_masks = if config.mode == TrainMode::PerLevel {
        let range = anchors.level_range(config.perlevel_level);
        let mixed: Vec<bool> = (0..anchors.len()).map(|a| range.contains(&a)).collect();
        let other: Vec<bool> = mixed.iter().map(|m| !m).collect();
        Some((mixed, other))
    } else {
        None
    };

    let n = dataset.images.len();
    if n == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let ground_truths: Vec<GroundTruth> =
        dataset.manifest.items.iter().map(|i| i.ground_truth()).collect();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr_scale = config.lr_decay.powi(epoch as i32);
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = crate::rng::stream(config.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut sum_total = 0.0;
        let mut sum_cls = 0.0;
        let mut sum_reg = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 && config.mode != TrainMode::Baseline {
                continue; // a trailing singleton has no partner to blend with
            }
            let base = batch_idx * config.batch_size;
            // phase 1: independent augmentation
            let batch: Vec<(ImageTensor, GroundTruth)> = pool.install(|| {
                chunk
                    .par_iter()
                    .enumerate()
                    .map(|(off, &item)| {
                        if config.augment {
                            let mut rng = crate::rng::stream(
                                config.seed,
                                "augment",
                                &[epoch as u64, (base + off) as u64],
                            );
                            augment(&dataset.images[item], &ground_truths[item], &aug_params, &mut rng)
                        } else {
                            (dataset.images[item].clone(), ground_truths[item].clone())
                        }
                    })
                    .collect()
            });
            // phase 2: per-item losses and gradients
            let outcomes: Vec<Result<StepOutcome>> = pool.install(|| {
                (0..batch.len())
                    .into_par_iter()
                    .map(|off| {
                        item_step(
                            config,
                            &spec,
                            &anchors,
                            &params,
                            &batch,
                            off,
                            epoch,
                            base + off,
                            level_masks.as_ref(),
                        )
                    })
                    .collect()
            });
            // fixed-order reduction
            let mut grads = ParamSet::zeros_like(&params);
            let mut count = 0usize;
            for outcome in outcomes {
                let o = outcome?;
                grads.add_assign(&o.grads)?;
                sum_total += o.total;
                sum_cls += o.cls;
                sum_reg += o.reg;
                count += 1;
            }
            grads.scale(1.0 / count as f64);
            adam_step(&mut params, &grads, &mut state, &hyper, lr_scale)?;
        }
        epoch_losses.push(EpochStats {
            epoch,
            total: sum_total / n as f64,
            cls: sum_cls / n as f64,
            reg: sum_reg / n as f64,
        });
        on_epoch(epoch, &params)?;
    }
    Ok(TrainedModel { spec, params, epoch_losses })
}

/// Train from disk, writing the run directory: config copy, loss table,
/// per-epoch checkpoints and the final checkpoint.
pub fn train(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let dataset = crate::data::load_dataset(&config.data_dir, &config.train_split)?;
    std::fs::create_dir_all(config.out_dir.join("checkpoints"))?;

    let digest = config.digest();
    std::fs::write(
        config.out_dir.join("config.txt"),
        format!("# digest = {digest}\n{}", config.to_text()),
    )?;

    let spec_digest = detector_spec_for(config).digest();
    let ckpt_dir = config.out_dir.join("checkpoints");
    // epochs=0 still yields a valid (initialized) checkpoint
    let model = train_with_callback(config, &dataset, |epoch, params| {
        save_checkpoint(&ckpt_dir.join(format!("epoch_{epoch:03}.ckpt")), params, &spec_digest)
    })?;
    let mut csv = String::from("epoch,total,cls,reg\n");
    for s in &model.epoch_losses {
        csv.push_str(&format!("{},{},{},{}\n", s.epoch, s.total, s.cls, s.reg));
    }
    std::fs::write(config.out_dir.join("losses.csv"), csv)?;

    let final_path = config.out_dir.join("final.ckpt");
    save_checkpoint(&final_path, &model.params, &spec_digest)?;

    let record = RunRecord {
        config_digest: digest,
        seed: config.seed,
        epoch_losses: model.epoch_losses,
        checkpoint: final_path,
        out_dir: config.out_dir.clone(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Internal(format!("record serialization: {e}")))?;
    std::fs::write(config.out_dir.join("record.json"), json + "\n")?;
    Ok(record)
}
