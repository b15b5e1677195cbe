use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Scene};
use crate::error::{Error, Result};
use crate::harness::model::AffordanceModel;
use crate::harness::prepare::{prepare_all, prepare_scene, PreparedScene};
use crate::kb::AffordanceKb;
use crate::labels::{Action, Relationship, NUM_RELATIONSHIPS};
use crate::metrics::{bleu4, multi_reference_average, rouge_l, AccuracyMode, CiderCorpus, ConfusionMatrix};
use crate::numeric::rng::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn ids(self, dataset: &Dataset) -> Result<&[String]> {
        let s = dataset.split()?;
        Ok(match self {
            SplitName::Train => &s.train,
            SplitName::Val => &s.val,
            SplitName::Test => &s.test,
        })
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    /// What produced the predictions: `"model"`, `"kb"`, or a caller label.
    pub predictor: String,
    pub split: SplitName,
    pub config_fingerprint: Option<String>,
    pub seed: Option<u64>,
    pub data_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipReport {
    pub macc: f64,
    pub macc_e: f64,
    /// Recall of each of the seven relationships; `None` where the class
    /// does not occur in the ground truth.
    pub recall: Vec<Option<f64>>,
    /// Rows are ground truth, columns predictions, in relationship order.
    pub confusion: Vec<Vec<u64>>,
    pub instances: usize,
}

impl RelationshipReport {
    pub fn from_labels(preds: &[Relationship], gts: &[Relationship]) -> Result<Self> {
        let full = ConfusionMatrix::from_labels(preds, gts, AccuracyMode::Full)?;
        let collapsed = ConfusionMatrix::from_labels(preds, gts, AccuracyMode::Collapsed)?;
        Ok(RelationshipReport {
            macc: collapsed.mean_accuracy()?,
            macc_e: full.mean_accuracy()?,
            recall: full.recalls(),
            confusion: full.counts().to_vec(),
            instances: gts.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    /// Ground-truth exception instances scored.
    pub items: usize,
    /// Of those, instances for which a sentence was generated.
    pub generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: EvalMetadata,
    pub relationship: BTreeMap<Action, RelationshipReport>,
    pub explanation: BTreeMap<Action, CaptionReport>,
    pub consequence: BTreeMap<Action, CaptionReport>,
}

/// Hash over the manifest, every scene's record, pixels and features, the
/// KB and the splits.
pub fn data_version(dataset: &Dataset) -> String {
    let mut bytes = serde_json::to_vec(&dataset.manifest).expect("manifest serializes");
    for s in &dataset.scenes {
        bytes.extend(serde_json::to_vec(&s.record).expect("record serializes"));
        bytes.extend(s.map.pixels().iter().flat_map(|p| p.to_le_bytes()));
        for id in s.features.ids() {
            bytes.extend(
                s.features
                    .get(id)
                    .unwrap_or_default()
                    .iter()
                    .flat_map(|v| v.to_le_bytes()),
            );
        }
        bytes.extend(s.features.global().iter().flat_map(|v| v.to_le_bytes()));
    }
    bytes.extend(serde_json::to_vec(&dataset.kb.to_names(&dataset.manifest.class_names)).expect("kb serializes"));
    bytes.extend(serde_json::to_vec(&dataset.splits).expect("splits serialize"));
    format!("{:016x}", fnv1a(&bytes))
}

fn split_scenes(dataset: &Dataset, split: SplitName) -> Result<Vec<&Scene>> {
    let scenes = dataset.select(split.ids(dataset)?)?;
    if scenes.is_empty() {
        return Err(Error::EmptyInput("evaluation split has no scenes"));
    }
    Ok(scenes)
}

/// Scores an arbitrary per-instance relationship predictor.
pub fn evaluate_predictions<F>(
    dataset: &Dataset,
    split: SplitName,
    actions: &[Action],
    predictor_name: &str,
    mut predict: F,
) -> Result<EvalReport>
where
    F: FnMut(&Scene, Action) -> Result<BTreeMap<u32, Relationship>>,
{
    let scenes = split_scenes(dataset, split)?;
    let mut relationship = BTreeMap::new();
    for &action in actions {
        let (mut preds, mut gts) = (Vec::new(), Vec::new());
        for scene in &scenes {
            let Some(labels) = scene.record.annotations.get(&action) else {
                continue;
            };
            let predicted = predict(scene, action)?;
            for (inst, ann) in labels {
                let p = predicted.get(inst).ok_or_else(|| {
                    Error::Contract(format!(
                        "{predictor_name} gave no prediction for instance {inst} of `{}`",
                        scene.id()
                    ))
                })?;
                preds.push(*p);
                gts.push(ann.relationship);
            }
        }
        if !gts.is_empty() {
            relationship.insert(action, RelationshipReport::from_labels(&preds, &gts)?);
        }
    }
    Ok(EvalReport {
        metadata: EvalMetadata {
            predictor: predictor_name.to_string(),
            split,
            config_fingerprint: None,
            seed: None,
            data_version: data_version(dataset),
        },
        relationship,
        explanation: BTreeMap::new(),
        consequence: BTreeMap::new(),
    })
}

pub fn kb_predictions(kb: &AffordanceKb, scene: &Scene, action: Action) -> BTreeMap<u32, Relationship> {
    scene
        .record
        .instances
        .iter()
        .map(|(&inst, &class)| (inst, kb.predict(action, class)))
        .collect()
}

/// The KB lookup baseline on one split.
pub fn evaluate_kb(dataset: &Dataset, split: SplitName, actions: &[Action]) -> Result<EvalReport> {
    evaluate_predictions(dataset, split, actions, "kb", |scene, action| {
        Ok(kb_predictions(&dataset.kb, scene, action))
    })
}

fn check_dims(model: &AffordanceModel, scene: &Scene) -> Result<()> {
    let (d, g) = (scene.features.dim(), scene.features.global_dim());
    if d != model.dims.feature_dim || g != model.dims.global_dim {
        return Err(Error::dim(
            "scene features",
            format!(
                "scene `{}` has object/global feature sizes {d}/{g}, model expects {}/{}",
                scene.id(),
                model.dims.feature_dim,
                model.dims.global_dim
            ),
        ));
    }
    if scene.record.instances.values().any(|&c| c >= model.dims.num_classes) {
        return Err(Error::Validation(format!(
            "scene `{}` uses a class outside the model's {} classes",
            scene.id(),
            model.dims.num_classes
        )));
    }
    Ok(())
}

/// Relationship and sentence metrics of `model` on one split. Sentences are
/// scored over ground-truth exception instances; when the model also
/// predicts relationships, an instance it does not call an exception gets
/// no sentence and scores 0.
pub fn evaluate(model: &AffordanceModel, dataset: &Dataset, split: SplitName) -> Result<EvalReport> {
    let scenes = split_scenes(dataset, split)?;
    for s in &scenes {
        check_dims(model, s)?;
    }
    let prepared = prepare_all(&scenes, &model.config, &model.vocabularies)?;
    let mut report = EvalReport {
        metadata: EvalMetadata {
            predictor: "model".into(),
            split,
            config_fingerprint: Some(model.config.fingerprint()),
            seed: Some(model.config.seed),
            data_version: data_version(dataset),
        },
        relationship: BTreeMap::new(),
        explanation: BTreeMap::new(),
        consequence: BTreeMap::new(),
    };
    for &action in &model.config.actions {
        let mut predicted: Vec<Option<Vec<Relationship>>> = Vec::with_capacity(prepared.len());
        let (mut preds, mut gts) = (Vec::new(), Vec::new());
        for s in &prepared {
            let dists = model.relationships(action, s)?;
            let labels = dists.map(|d| d.iter().map(|p| p.argmax()).collect::<Vec<_>>());
            if let (Some(labels), Some(t)) = (&labels, s.targets.get(&action)) {
                for (p, gt) in labels.iter().zip(&t.labels) {
                    if let Some(gt) = gt {
                        preds.push(*p);
                        gts.push(*gt);
                    }
                }
            }
            predicted.push(labels);
        }
        if !gts.is_empty() {
            report
                .relationship
                .insert(action, RelationshipReport::from_labels(&preds, &gts)?);
        }
        let (expl, cons) = caption_reports(model, action, &prepared, &predicted)?;
        if let Some(r) = expl {
            report.explanation.insert(action, r);
        }
        if let Some(r) = cons {
            report.consequence.insert(action, r);
        }
    }
    Ok(report)
}

struct CaptionItem {
    candidate: Vec<String>,
    references: Vec<Vec<String>>,
    generated: bool,
}

fn score_items(items: &[CaptionItem]) -> Option<CaptionReport> {
    if items.is_empty() {
        return None;
    }
    let corpus = CiderCorpus::new(&items.iter().map(|i| i.references.clone()).collect::<Vec<_>>());
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&CaptionItem) -> f64| items.iter().map(f).sum::<f64>() / n;
    Some(CaptionReport {
        bleu4: mean(&|i| multi_reference_average(bleu4, &i.candidate, &i.references)),
        rouge_l: mean(&|i| multi_reference_average(rouge_l, &i.candidate, &i.references)),
        cider_d: mean(&|i| corpus.score(&i.candidate, &i.references)),
        items: items.len(),
        generated: items.iter().filter(|i| i.generated).count(),
    })
}

fn caption_reports(
    model: &AffordanceModel,
    action: Action,
    prepared: &[PreparedScene],
    predicted: &[Option<Vec<Relationship>>],
) -> Result<(Option<CaptionReport>, Option<CaptionReport>)> {
    let has_expl = model.explanation_unit(action).is_some();
    let has_cons = model.consequence_unit(action).is_some();
    if !has_expl && !has_cons {
        return Ok((None, None));
    }
    let (mut expl, mut cons) = (Vec::new(), Vec::new());
    for (s, labels) in prepared.iter().zip(predicted) {
        let Some(t) = s.targets.get(&action) else { continue };
        let nodes: Vec<usize> = (0..t.sentences.len()).filter(|&v| t.sentences[v].is_some()).collect();
        let gated: Vec<usize> = nodes
            .iter()
            .copied()
            .filter(|&v| labels.as_ref().is_none_or(|l| l[v].is_exception()))
            .collect();
        let generated = model.sentences(action, s, &gated)?;
        let by_node: BTreeMap<usize, _> = gated.iter().copied().zip(generated).collect();
        for &v in &nodes {
            let refs = t.sentences[v].as_ref().expect("filtered");
            let out = by_node.get(&v);
            if has_expl && !refs.explanation_tokens.is_empty() {
                let cand = out.and_then(|o| o.0.clone());
                expl.push(CaptionItem {
                    generated: cand.is_some(),
                    candidate: cand.unwrap_or_default(),
                    references: refs.explanation_tokens.clone(),
                });
            }
            if has_cons && !refs.consequence_tokens.is_empty() {
                let cand = out.and_then(|o| o.1.clone());
                cons.push(CaptionItem {
                    generated: cand.is_some(),
                    candidate: cand.unwrap_or_default(),
                    references: refs.consequence_tokens.clone(),
                });
            }
        }
    }
    Ok((score_items(&expl), score_items(&cons)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub instance: u32,
    pub class: String,
    pub relationship: Option<Relationship>,
    pub probabilities: Option<[f64; NUM_RELATIONSHIPS]>,
    pub explanation: Option<String>,
    pub consequence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub scene: String,
    pub actions: BTreeMap<Action, Vec<InstancePrediction>>,
}

/// Affordance triples for every instance of `scene`, ordered by instance
/// id. Sentences are produced only for predicted exceptions, or for every
/// instance when the model has no relationship head.
pub fn predict(model: &AffordanceModel, scene: &Scene) -> Result<ScenePrediction> {
    check_dims(model, scene)?;
    let prepared = prepare_scene(scene, &model.config, &model.vocabularies)?;
    let ids: Vec<u32> = prepared.instance_ids().collect();
    let mut actions = BTreeMap::new();
    for &action in &model.config.actions {
        let dists = model.relationships(action, &prepared)?;
        let gated: Vec<usize> = (0..ids.len())
            .filter(|&v| dists.as_ref().is_none_or(|d| d[v].argmax().is_exception()))
            .collect();
        let sentences = model.sentences(action, &prepared, &gated)?;
        let mut by_node: BTreeMap<usize, _> = gated.into_iter().zip(sentences).collect();
        let mut out: Vec<InstancePrediction> = ids
            .iter()
            .enumerate()
            .map(|(v, &instance)| {
                let (e, c) = by_node.remove(&v).unwrap_or((None, None));
                let class = prepared.graph.nodes()[v].class_id;
                InstancePrediction {
                    instance,
                    class: model.class_names[class].clone(),
                    relationship: dists.as_ref().map(|d| d[v].argmax()),
                    probabilities: dists.as_ref().map(|d| d[v].probs),
                    explanation: e.map(|w| w.join(" ")),
                    consequence: c.map(|w| w.join(" ")),
                }
            })
            .collect();
        out.sort_by_key(|p| p.instance);
        actions.insert(action, out);
    }
    Ok(ScenePrediction {
        scene: scene.id().to_string(),
        actions,
    })
}
