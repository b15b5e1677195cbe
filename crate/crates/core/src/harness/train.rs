use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::decoder::Vocabulary;
use crate::error::{Error, Result};
use crate::ggnn::GgnnDims;
use crate::harness::config::{Regime, RunConfig, Task};
use crate::harness::model::{AffordanceModel, HeadSet, Unit};
use crate::harness::prepare::{build_vocabularies, prepare_all, PreparedScene};
use crate::labels::{Action, Relationship, NUM_RELATIONSHIPS};
use crate::metrics::{mean_accuracy, AccuracyMode};
use crate::numeric::ops::cross_entropy_slice;
use crate::numeric::{adam_step, rng, ParamStore};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub epoch: u32,
    pub split: String,
    /// `"{unit}/{name}"`.
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UnitStatus {
    Completed,
    /// A non-finite loss or gradient stopped training; the unit holds its
    /// best parameters from before that epoch.
    Diverged {
        epoch: u32,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOutcome {
    pub unit: String,
    pub status: UnitStatus,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub selected_epoch: u32,
    /// `"val/mAcc-E"` or `"val/token_loss"`.
    pub selection_metric: String,
    pub selection_value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AffordanceModel,
    pub log: Vec<LogEvent>,
    pub units: Vec<UnitOutcome>,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.units
            .iter()
            .any(|u| matches!(u.status, UnitStatus::Diverged { .. }))
    }
}

fn needs_vocabulary(config: &RunConfig) -> bool {
    config.task != Task::Relationship || config.regime != Regime::Independent
}

/// Builds a model for `dataset` and trains it on the dataset's train split,
/// selecting each unit's epoch on the val split.
pub fn train(config: &RunConfig, dataset: &Dataset, on_event: impl FnMut(&LogEvent)) -> Result<TrainOutcome> {
    config.validate()?;
    let split = dataset.split()?;
    let train_scenes = dataset.select(&split.train)?;
    if train_scenes.is_empty() {
        return Err(Error::Validation("train split is empty".into()));
    }
    let val_scenes = dataset.select(&split.val)?;
    let vocabularies: BTreeMap<Action, Vocabulary> = if needs_vocabulary(config) {
        build_vocabularies(&train_scenes, &config.actions, config.min_word_frequency)?
    } else {
        BTreeMap::new()
    };
    let m = &dataset.manifest;
    let dims = GgnnDims::new(config.hidden, m.class_names.len(), m.feature_dim, m.global_dim);
    let model = AffordanceModel::new(config, dims, m.class_names.clone(), vocabularies)?;
    let train = prepare_all(&train_scenes, config, &model.vocabularies)?;
    let val = prepare_all(&val_scenes, config, &model.vocabularies)?;
    train_prepared(model, &train, &val, on_event)
}

/// Trains every unit of `model` in turn.
pub fn train_prepared(
    mut model: AffordanceModel,
    train: &[PreparedScene],
    val: &[PreparedScene],
    mut on_event: impl FnMut(&LogEvent),
) -> Result<TrainOutcome> {
    let mut log = Vec::new();
    let mut outcomes = Vec::new();
    let config = model.config.clone();
    for unit in &mut model.units {
        let mut emit = |e: LogEvent| {
            on_event(&e);
            log.push(e);
        };
        outcomes.push(train_unit(unit, &config, train, val, &mut emit)?);
    }
    Ok(TrainOutcome {
        model,
        log,
        units: outcomes,
    })
}

/// Loss weights of one unit's three tasks.
#[derive(Debug, Clone, Copy)]
struct UnitWeights {
    relationship: f64,
    explanation: f64,
    consequence: f64,
}

impl UnitWeights {
    fn of(unit: &Unit, config: &RunConfig) -> Self {
        let shared = config.regime != Regime::Independent;
        let w = |on: bool, weight: f64| match (on, shared) {
            (false, _) => 0.0,
            (true, true) => weight,
            (true, false) => 1.0,
        };
        UnitWeights {
            relationship: w(unit.tasks.relationship, config.task_weights.relationship),
            explanation: w(unit.tasks.explanation, config.task_weights.explanation),
            consequence: w(unit.tasks.consequence, config.task_weights.consequence),
        }
    }

    fn trains_decoder(&self) -> bool {
        self.explanation > 0.0 || self.consequence > 0.0
    }
}

/// Inverse-frequency weights per relationship, normalized so a class with
/// average frequency gets weight 1. Classes absent from training get 0.
fn class_weights(train: &[PreparedScene], action: Action) -> [f64; NUM_RELATIONSHIPS] {
    let mut counts = [0u64; NUM_RELATIONSHIPS];
    for s in train {
        if let Some(t) = s.targets.get(&action) {
            for r in t.labels.iter().flatten() {
                counts[r.index()] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let mut w = [0.0; NUM_RELATIONSHIPS];
    for (wi, &c) in w.iter_mut().zip(&counts) {
        if c > 0 {
            *wi = total as f64 / (present as f64 * c as f64);
        }
    }
    w
}

struct BatchTotals {
    relationship: f64,
    explanation: f64,
    consequence: f64,
}

fn samples(unit: &Unit, scene: &PreparedScene) -> usize {
    unit.heads
        .iter()
        .map(|h| {
            if unit.tasks.relationship {
                scene.num_labels(h.action)
            } else {
                scene.num_sentences(h.action, unit.tasks.explanation)
            }
        })
        .sum()
}

/// Scenes packed in order until each batch holds at least `batch_size`
/// samples; scenes without samples are dropped.
fn pack_batches(unit: &Unit, scenes: &[&PreparedScene], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut filled = 0;
    for (i, s) in scenes.iter().enumerate() {
        let n = samples(unit, s);
        if n == 0 {
            continue;
        }
        current.push(i);
        filled += n;
        if filled >= batch_size {
            batches.push(std::mem::take(&mut current));
            filled = 0;
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

fn batch_totals(
    unit: &Unit,
    batch: &[&PreparedScene],
    weights: &BTreeMap<Action, [f64; NUM_RELATIONSHIPS]>,
    class_weighting: bool,
) -> BatchTotals {
    let mut t = BatchTotals {
        relationship: 0.0,
        explanation: 0.0,
        consequence: 0.0,
    };
    for s in batch {
        for h in &unit.heads {
            if unit.tasks.relationship {
                if let Some(targets) = s.targets.get(&h.action) {
                    for r in targets.labels.iter().flatten() {
                        t.relationship += if class_weighting {
                            weights[&h.action][r.index()]
                        } else {
                            1.0
                        };
                    }
                }
            }
            if unit.tasks.explanation {
                t.explanation += s.num_sentences(h.action, true) as f64;
            }
            if unit.tasks.consequence {
                t.consequence += s.num_sentences(h.action, false) as f64;
            }
        }
    }
    t
}

/// Loss of one scene under `unit`, scaled by the batch normalizers, with
/// gradients accumulated into the unit's store. Returns the unscaled
/// weighted loss contribution.
#[allow(clippy::too_many_arguments)]
fn scene_loss_and_backward(
    store: &mut ParamStore,
    unit_view: &UnitView<'_>,
    scene: &PreparedScene,
    config: &RunConfig,
    w: UnitWeights,
    totals: &BatchTotals,
    class_w: &BTreeMap<Action, [f64; NUM_RELATIONSHIPS]>,
) -> Result<f64> {
    let trunk = unit_view.trunk;
    let trace = trunk.propagate(
        store,
        &scene.graph,
        &scene.nodes,
        config.ablation,
        config.effective_steps(),
    )?;
    let hidden = trunk.dims().hidden;
    let mut loss = 0.0;
    for head in unit_view.heads {
        let Some(targets) = scene.targets.get(&head.action) else {
            continue;
        };
        let fusion = trunk.fuse(store, &trace, &scene.global, config.ablation, head.embed_index)?;
        let mut d_h_o = vec![vec![0.0; hidden]; fusion.h_o.len()];
        let mut touched = false;
        if let (Some(rel), true) = (&head.relation, w.relationship > 0.0 && totals.relationship > 0.0) {
            for (v, label) in targets.labels.iter().enumerate() {
                let Some(label) = label else { continue };
                let cw = if config.class_weighting {
                    class_w[&head.action][label.index()]
                } else {
                    1.0
                };
                if cw == 0.0 {
                    continue;
                }
                let scale = w.relationship * cw / totals.relationship;
                let pass = rel.forward(store, &fusion.h_o[v]);
                let mut grad = vec![0.0; pass.logits.len()];
                loss += scale * cross_entropy_slice(&pass.logits, label.index(), &mut grad);
                grad.iter_mut().for_each(|g| *g *= scale);
                let d = rel.backward(store, &fusion.h_o[v], &pass, &grad);
                crate::numeric::ops::add_assign(&mut d_h_o[v], &d);
                touched = true;
            }
        }
        for (explanation, dec, weight, total) in [
            (true, &head.explanation, w.explanation, totals.explanation),
            (false, &head.consequence, w.consequence, totals.consequence),
        ] {
            let Some(dec) = dec else { continue };
            if weight == 0.0 || total == 0.0 {
                continue;
            }
            for (v, refs) in targets.sentences.iter().enumerate() {
                let Some(refs) = refs else { continue };
                let ids = if explanation {
                    &refs.explanation_ids
                } else {
                    &refs.consequence_ids
                };
                for target in ids.iter().filter(|t| !t.is_empty()) {
                    let scale = weight / total;
                    let (l, d) = dec.loss_and_backward(store, &fusion.h_o[v], target, scale)?;
                    loss += scale * l;
                    crate::numeric::ops::add_assign(&mut d_h_o[v], &d);
                    touched = true;
                }
            }
        }
        if touched {
            trunk.backward(
                store,
                &scene.graph,
                &scene.nodes,
                config.ablation,
                &trace,
                &fusion,
                head.embed_index,
                &d_h_o,
            );
        }
    }
    Ok(loss)
}

/// Borrowed structure of a unit, so its store can be mutated alongside.
struct UnitView<'a> {
    trunk: &'a crate::ggnn::Trunk,
    heads: &'a [HeadSet],
}

fn train_unit(
    unit: &mut Unit,
    config: &RunConfig,
    train: &[PreparedScene],
    val: &[PreparedScene],
    emit: &mut impl FnMut(LogEvent),
) -> Result<UnitOutcome> {
    let weights = UnitWeights::of(unit, config);
    let (opt, epochs) = if unit.tasks.relationship {
        (&config.relationship_optimizer, config.epochs)
    } else {
        (&config.decoder_optimizer, config.decoder_epochs)
    };
    let class_w: BTreeMap<Action, [f64; NUM_RELATIONSHIPS]> = unit
        .heads
        .iter()
        .map(|h| (h.action, class_weights(train, h.action)))
        .collect();
    let selection_metric = if unit.tasks.relationship {
        "val/mAcc-E"
    } else {
        "val/token_loss"
    };
    let name = unit.name.clone();
    let mut best: Option<(f64, u32, crate::numeric::StoreSnapshot)> = None;
    let mut status = UnitStatus::Completed;
    let mut order: Vec<&PreparedScene> = train.iter().collect();
    let init = unit.store.snapshot();

    'epochs: for epoch in 1..=epochs {
        order.shuffle(&mut rng::derived(config.seed, &format!("{}/shuffle/{epoch}", unit.key)));
        let batches = pack_batches(unit, &order, opt.batch_size);
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let scenes: Vec<&PreparedScene> = batch.iter().map(|&i| order[i]).collect();
            let totals = batch_totals(unit, &scenes, &class_w, config.class_weighting);
            let view = UnitView {
                trunk: &unit.trunk,
                heads: &unit.heads,
            };
            for s in &scenes {
                epoch_loss += scene_loss_and_backward(&mut unit.store, &view, s, config, weights, &totals, &class_w)?;
            }
            if weights.trains_decoder() {
                unit.store.clip_grad_norm(config.decoder_grad_clip);
            }
            let step = if epoch_loss.is_finite() {
                adam_step(&mut unit.store, &opt.adam, epoch)
            } else {
                Err(Error::NonFinite(format!("loss of unit `{name}`")))
            };
            if let Err(e) = step {
                match e {
                    Error::Divergence { .. } | Error::NonFinite(_) => {
                        status = UnitStatus::Diverged {
                            epoch,
                            detail: e.to_string(),
                        };
                        break 'epochs;
                    }
                    other => return Err(other),
                }
            }
        }
        let mean_loss = epoch_loss / batches.len().max(1) as f64;
        emit(LogEvent {
            epoch,
            split: "train".into(),
            metric: format!("{name}/loss"),
            value: mean_loss,
        });
        if val.is_empty() {
            best = Some((0.0, epoch, unit.store.snapshot()));
            continue;
        }
        let score = if unit.tasks.relationship {
            let (macc, macc_e) = val_accuracy(unit, config, val)?;
            emit(LogEvent {
                epoch,
                split: "val".into(),
                metric: format!("{name}/mAcc"),
                value: macc,
            });
            macc_e
        } else {
            -val_token_loss(unit, config, val)?
        };
        if !score.is_finite() {
            status = UnitStatus::Diverged {
                epoch,
                detail: format!("non-finite {selection_metric}"),
            };
            break;
        }
        emit(LogEvent {
            epoch,
            split: "val".into(),
            metric: format!("{name}/{}", &selection_metric[4..]),
            value: if unit.tasks.relationship { score } else { -score },
        });
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, unit.store.snapshot()));
        }
    }

    let (selected_epoch, selection_value) = match best {
        Some((score, epoch, snap)) => {
            unit.store.load_snapshot(&snap)?;
            let value = if val.is_empty() {
                None
            } else if unit.tasks.relationship {
                Some(score)
            } else {
                Some(-score)
            };
            (epoch, value)
        }
        None => {
            // Diverged in the first epoch: fall back to the initialization.
            unit.store.load_snapshot(&init)?;
            (0, None)
        }
    };
    Ok(UnitOutcome {
        unit: name,
        status,
        selected_epoch,
        selection_metric: selection_metric.to_string(),
        selection_value,
    })
}

/// Collapsed and full mean accuracy on `scenes`, averaged over the unit's
/// actions that have labels there.
fn val_accuracy(unit: &Unit, config: &RunConfig, scenes: &[PreparedScene]) -> Result<(f64, f64)> {
    let mut per_action = Vec::new();
    for head in &unit.heads {
        let rel = head.relation.as_ref().expect("relationship unit");
        let (mut preds, mut gts) = (Vec::new(), Vec::new());
        for s in scenes {
            let Some(t) = s.targets.get(&head.action) else { continue };
            if t.labels.iter().all(Option::is_none) {
                continue;
            }
            let trace = unit.propagate(s, config)?;
            let fusion = unit.fuse(&trace, s, head, config)?;
            for (v, label) in t.labels.iter().enumerate() {
                if let Some(label) = label {
                    preds.push(rel.distribution(&unit.store, &fusion.h_o[v]).argmax());
                    gts.push(*label);
                }
            }
        }
        if !gts.is_empty() {
            per_action.push((
                mean_accuracy(&preds, &gts, AccuracyMode::Collapsed)?,
                mean_accuracy(&preds, &gts, AccuracyMode::Full)?,
            ));
        }
    }
    if per_action.is_empty() {
        return Err(Error::Validation("val split has no relationship labels".into()));
    }
    let n = per_action.len() as f64;
    Ok((
        per_action.iter().map(|p| p.0).sum::<f64>() / n,
        per_action.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Mean per-sentence token loss over every reference of the unit's
/// decoders on `scenes`.
fn val_token_loss(unit: &Unit, config: &RunConfig, scenes: &[PreparedScene]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in scenes {
        for head in &unit.heads {
            let Some(t) = s.targets.get(&head.action) else { continue };
            if t.sentences.iter().all(Option::is_none) {
                continue;
            }
            let trace = unit.propagate(s, config)?;
            let fusion = unit.fuse(&trace, s, head, config)?;
            for (explanation, dec) in [(true, &head.explanation), (false, &head.consequence)] {
                let Some(dec) = dec else { continue };
                for (v, refs) in t.sentences.iter().enumerate() {
                    let Some(refs) = refs else { continue };
                    let ids = if explanation {
                        &refs.explanation_ids
                    } else {
                        &refs.consequence_ids
                    };
                    for target in ids.iter().filter(|t| !t.is_empty()) {
                        sum += dec.teacher_forced(&unit.store, &fusion.h_o[v], target)?.loss;
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Validation("val split has no reference sentences".into()));
    }
    Ok(sum / count as f64)
}

/// Train-split relationship accuracy of `model` for `action`, used by
/// overfitting checks.
pub fn relationship_accuracy(
    model: &AffordanceModel,
    action: Action,
    scenes: &[PreparedScene],
    mode: AccuracyMode,
) -> Result<f64> {
    let (mut preds, mut gts): (Vec<Relationship>, Vec<Relationship>) = (Vec::new(), Vec::new());
    for s in scenes {
        let Some(dists) = model.relationships(action, s)? else {
            return Err(Error::Config(format!("model has no relationship head for {action}")));
        };
        if let Some(t) = s.targets.get(&action) {
            for (d, label) in dists.iter().zip(&t.labels) {
                if let Some(label) = label {
                    preds.push(d.argmax());
                    gts.push(*label);
                }
            }
        }
    }
    mean_accuracy(&preds, &gts, mode)
}
