//! Synthetic scenes whose labels follow explicit adjacency rules.
//!
//! A scene is a set of isolated horizontal groups of touching rectangles.
//! Inside a group the members form a path, so graph distances are known by
//! construction. Object features are noisy functions of the class alone and
//! the whole-image feature encodes only the scene type, so per-object
//! models cannot see the neighbors that decide exceptions.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::features::FeatureTable;
use crate::dataset::record::{Annotation, SceneRecord};
use crate::dataset::store::{Dataset, Manifest, Scene, DATASET_FORMAT};
use crate::decoder::Vocabulary;
use crate::error::{Error, Result};
use crate::graph::InstanceMap;
use crate::kb::AffordanceKb;
use crate::labels::{Action, Relationship, NUM_RELATIONSHIPS};
use crate::metrics::AccuracyMode;
use crate::numeric::rng::{self, Rng};

pub const EXHIBIT: &str = "exhibit";
pub const NORMAL: &str = "normal";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Seat,
    Occupier,
    Barrier,
    Surface,
    Hazard,
    Graspable,
    Filler,
}

pub const CLASSES: [(&str, Role); 18] = [
    ("chair", Role::Seat),
    ("sofa", Role::Seat),
    ("bench", Role::Seat),
    ("person", Role::Occupier),
    ("dog", Role::Occupier),
    ("rope", Role::Barrier),
    ("floor", Role::Surface),
    ("grass", Role::Surface),
    ("fire", Role::Hazard),
    ("ice", Role::Hazard),
    ("bottle", Role::Graspable),
    ("cup", Role::Graspable),
    ("book", Role::Graspable),
    ("wall", Role::Filler),
    ("table", Role::Filler),
    ("plant", Role::Filler),
    ("lamp", Role::Filler),
    ("window", Role::Filler),
];

const FIRE: usize = 8;

fn classes_with(role: Role) -> Vec<usize> {
    (0..CLASSES.len()).filter(|&c| CLASSES[c].1 == role).collect()
}

pub fn role_of(class: usize) -> Role {
    CLASSES[class].1
}

pub fn class_names() -> Vec<String> {
    CLASSES.iter().map(|(n, _)| n.to_string()).collect()
}

fn class_id(name: &str) -> usize {
    CLASSES
        .iter()
        .position(|(n, _)| *n == name)
        .expect("known synthetic class")
}

/// KB of the synthetic world: seats and floor afford sitting, floor and
/// grass running, small objects grasping.
pub fn knowledge_base() -> AffordanceKb {
    let entries = [
        (Action::Sit, ["chair", "sofa", "bench", "floor"].as_slice()),
        (Action::Run, &["floor", "grass"]),
        (Action::Grasp, &["bottle", "cup", "book"]),
    ];
    let pairs = entries
        .iter()
        .flat_map(|(a, names)| names.iter().map(move |n| (*a, class_id(n))));
    AffordanceKb::new(pairs, CLASSES.len()).expect("static KB is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupWeights {
    pub seat: f64,
    pub surface: f64,
    pub graspable: f64,
    pub filler: f64,
}

impl Default for GroupWeights {
    fn default() -> Self {
        GroupWeights {
            seat: 0.35,
            surface: 0.25,
            graspable: 0.25,
            filler: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub band_height: usize,
    pub min_member_width: usize,
    pub max_member_width: usize,
    pub min_groups: usize,
    pub max_groups: usize,
    pub group_weights: GroupWeights,
    /// Chance that a seat, surface or graspable has an occupier next to it
    /// (for seats: at `occupancy_radius` hops).
    pub p_occupied: f64,
    /// Chance that a surface or graspable has a hazard next to it.
    pub p_hazard: f64,
    /// Chance that a scene is an exhibit, where every seat is roped off.
    pub p_exhibit: f64,
    /// Chance that an unused group end still gets a filler object.
    pub p_filler: f64,
    /// Hops within which an occupier blocks sitting on a seat.
    pub occupancy_radius: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub global_dim: usize,
    pub global_noise: f64,
    pub min_word_frequency: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 500,
            width: 40,
            height: 23,
            band_height: 5,
            min_member_width: 3,
            max_member_width: 5,
            min_groups: 4,
            max_groups: 6,
            group_weights: GroupWeights::default(),
            p_occupied: 0.3,
            p_hazard: 0.3,
            p_exhibit: 0.3,
            p_filler: 0.5,
            occupancy_radius: 1,
            feature_dim: 32,
            feature_noise: 1.5,
            global_dim: 8,
            global_noise: 0.3,
            min_word_frequency: 2,
        }
    }
}

impl SynthConfig {
    /// Seats blocked by an occupier two hops away, with a filler between;
    /// only seat and filler groups, no exhibits.
    pub fn radius_two() -> Self {
        SynthConfig {
            occupancy_radius: 2,
            p_exhibit: 0.0,
            group_weights: GroupWeights {
                seat: 0.6,
                surface: 0.0,
                graspable: 0.0,
                filler: 0.4,
            },
            ..Self::default()
        }
    }

    fn longest_group(&self) -> usize {
        let seat = if self.group_weights.seat > 0.0 {
            self.occupancy_radius + 2
        } else {
            0
        };
        let other = if self.group_weights.surface + self.group_weights.graspable > 0.0 {
            3
        } else {
            2
        };
        seat.max(other) * self.max_member_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let w = &self.group_weights;
        let probs = [self.p_occupied, self.p_hazard, self.p_exhibit, self.p_filler];
        if self.scenes == 0 {
            return bad("scene count must be positive".into());
        }
        if self.min_groups == 0 || self.min_groups > self.max_groups {
            return bad(format!(
                "group range {}..={} is empty",
                self.min_groups, self.max_groups
            ));
        }
        if self.min_member_width == 0 || self.min_member_width > self.max_member_width {
            return bad("member width range is empty".into());
        }
        if self.band_height == 0 || self.band_height > self.height {
            return bad(format!(
                "band height {} does not fit height {}",
                self.band_height, self.height
            ));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        let weights = [w.seat, w.surface, w.graspable, w.filler];
        if weights.iter().any(|x| *x < 0.0 || !x.is_finite()) || weights.iter().sum::<f64>() <= 0.0 {
            return bad("group weights must be non-negative with a positive sum".into());
        }
        if self.occupancy_radius == 0 {
            return bad("occupancy radius must be at least 1".into());
        }
        if self.feature_dim == 0 || self.global_dim == 0 {
            return bad("feature dimensions must be positive".into());
        }
        if !(self.feature_noise >= 0.0 && self.global_noise >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if self.longest_group() > self.width {
            return bad(format!(
                "a group can be {} pixels wide but scenes are {} wide, so no instance is placeable",
                self.longest_group(),
                self.width
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum GroupKind {
    Seat,
    Surface,
    Graspable,
    Filler,
}

struct Generator<'a> {
    config: &'a SynthConfig,
    seats: Vec<usize>,
    occupiers: Vec<usize>,
    surfaces: Vec<usize>,
    hazards: Vec<usize>,
    graspables: Vec<usize>,
    fillers: Vec<usize>,
    rope: usize,
}

fn pick(rng: &mut Rng, from: &[usize]) -> usize {
    from[rng.random_range(0..from.len())]
}

impl Generator<'_> {
    fn kind(&self, rng: &mut Rng) -> GroupKind {
        let w = &self.config.group_weights;
        let table = [
            (GroupKind::Seat, w.seat),
            (GroupKind::Surface, w.surface),
            (GroupKind::Graspable, w.graspable),
            (GroupKind::Filler, w.filler),
        ];
        let mut u = rng.random::<f64>() * table.iter().map(|t| t.1).sum::<f64>();
        for (k, weight) in table {
            if u < weight {
                return k;
            }
            u -= weight;
        }
        table.iter().rev().find(|t| t.1 > 0.0).expect("positive weight").0
    }

    fn maybe_filler(&self, rng: &mut Rng) -> Option<usize> {
        (rng.random::<f64>() < self.config.p_filler).then(|| pick(rng, &self.fillers))
    }

    fn occupier_or_filler(&self, rng: &mut Rng) -> Option<usize> {
        if rng.random::<f64>() < self.config.p_occupied {
            Some(pick(rng, &self.occupiers))
        } else {
            self.maybe_filler(rng)
        }
    }

    fn group(&self, rng: &mut Rng, exhibit: bool) -> Vec<usize> {
        let c = self.config;
        let mut members = Vec::new();
        match self.kind(rng) {
            GroupKind::Seat => {
                let left = if exhibit {
                    Some(self.rope)
                } else {
                    self.maybe_filler(rng)
                };
                members.extend(left);
                members.push(pick(rng, &self.seats));
                for _ in 1..c.occupancy_radius {
                    members.push(pick(rng, &self.fillers));
                }
                members.extend(self.occupier_or_filler(rng));
            }
            kind @ (GroupKind::Surface | GroupKind::Graspable) => {
                let graspable = matches!(kind, GroupKind::Graspable);
                let hazard = if rng.random::<f64>() < c.p_hazard {
                    Some(if graspable { FIRE } else { pick(rng, &self.hazards) })
                } else {
                    self.maybe_filler(rng)
                };
                members.extend(hazard);
                members.push(pick(rng, if graspable { &self.graspables } else { &self.surfaces }));
                members.extend(self.occupier_or_filler(rng));
            }
            GroupKind::Filler => {
                let n = rng.random_range(1..=2);
                for _ in 0..n {
                    members.push(pick(rng, &self.fillers));
                }
            }
        }
        members
    }

    fn scene(
        &self,
        index: usize,
        seed: u64,
        kb: &AffordanceKb,
        means: &ClassMeans,
    ) -> Result<(SceneRecord, InstanceMap, FeatureTable)> {
        let c = self.config;
        let mut rng = rng::derived(seed, &format!("scene-{index}"));
        let exhibit = rng.random::<f64>() < c.p_exhibit;
        let n_groups = rng.random_range(c.min_groups..=c.max_groups);
        let groups: Vec<Vec<(usize, usize)>> = (0..n_groups)
            .map(|_| {
                let members = self.group(&mut rng, exhibit);
                members
                    .into_iter()
                    .map(|m| (m, rng.random_range(c.min_member_width..=c.max_member_width)))
                    .collect()
            })
            .collect();

        let bands = (c.height + 1) / (c.band_height + 1);
        let mut pixels = vec![0u32; c.width * c.height];
        let mut instances = BTreeMap::new();
        let mut placed: Vec<Vec<u32>> = Vec::new();
        let (mut band, mut x) = (0, 0);
        let mut next_id = 1u32;
        for group in &groups {
            let width: usize = group.iter().map(|m| m.1).sum();
            if x + width > c.width {
                band += 1;
                x = 0;
            }
            if band >= bands {
                break;
            }
            let y0 = band * (c.band_height + 1);
            let mut ids = Vec::new();
            for &(class, w) in group {
                for y in y0..y0 + c.band_height {
                    pixels[y * c.width + x..y * c.width + x + w].fill(next_id);
                }
                instances.insert(next_id, class);
                ids.push(next_id);
                next_id += 1;
                x += w;
            }
            x += 1;
            placed.push(ids);
        }

        let id = format!("s{index:05}");
        let mut record = SceneRecord::new(id, instances.clone());
        record.scene_type = Some(if exhibit { EXHIBIT } else { NORMAL }.to_string());
        for action in Action::ALL {
            let mut labels = BTreeMap::new();
            for ids in &placed {
                let classes: Vec<usize> = ids.iter().map(|i| instances[i]).collect();
                for (k, &inst) in ids.iter().enumerate() {
                    labels.insert(inst, path_annotation(&classes, k, action, c.occupancy_radius, kb));
                }
            }
            record.annotations.insert(action, labels);
        }

        let mut rows = BTreeMap::new();
        for (&inst, &class) in &instances {
            rows.insert(inst, noisy(&means.class[class], c.feature_noise, &mut rng));
        }
        let global = noisy(&means.scene[usize::from(exhibit)], c.global_noise, &mut rng);
        let map = InstanceMap::new(c.width, c.height, pixels, instances)?;
        let features = FeatureTable::new(c.feature_dim, rows, global)?;
        Ok((record, map, features))
    }
}

struct ClassMeans {
    class: Vec<Vec<f64>>,
    scene: [Vec<f64>; 2],
}

fn uniform_vectors(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..2.0)).collect())
        .collect()
}

fn noisy(mean: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f32> {
    mean.iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            (m + sigma * z).max(0.0) as f32
        })
        .collect()
}

/// Label and sentences of member `k` of a group path under the synthetic
/// rules. Precedence: sit checks occupiers within `radius`, then a rope,
/// then a hazard next to it; run checks hazards, then occupiers; grasp
/// checks fire, then occupiers.
fn path_annotation(classes: &[usize], k: usize, action: Action, radius: usize, kb: &AffordanceKb) -> Annotation {
    let me = classes[k];
    if !kb.contains(action, me) {
        return Annotation::plain(Relationship::FirmlyNegative);
    }
    let within = |hops: usize, role: Role| -> Option<usize> {
        (1..=hops).find_map(|d| {
            [k.checked_sub(d), Some(k + d)]
                .into_iter()
                .flatten()
                .filter_map(|j| classes.get(j).copied())
                .find(|&c| role_of(c) == role)
        })
    };
    let fire_next = || {
        [k.checked_sub(1), Some(k + 1)]
            .into_iter()
            .flatten()
            .any(|j| classes.get(j) == Some(&FIRE))
    };
    let name = |c: usize| CLASSES[c].0;
    let obj = name(me);
    let (rel, expl, cons) = match action {
        Action::Sit => {
            if let Some(o) = within(radius, Role::Occupier) {
                let o = name(o);
                (
                    Relationship::PhysicalObstacle,
                    format!("the {obj} is occupied by a {o}"),
                    format!("you would sit on the {o}"),
                )
            } else if within(1, Role::Barrier).is_some() {
                (
                    Relationship::SociallyForbidden,
                    format!("the {obj} is roped off for display"),
                    "the guard would ask you to leave".to_string(),
                )
            } else if let Some(h) = within(1, Role::Hazard) {
                let h = name(h);
                (
                    Relationship::Dangerous,
                    format!("the {obj} is next to the {h}"),
                    format!("you would get hurt by the {h}"),
                )
            } else {
                return Annotation::plain(Relationship::Positive);
            }
        }
        Action::Run => {
            if let Some(h) = within(1, Role::Hazard) {
                let h = name(h);
                (
                    Relationship::Dangerous,
                    format!("the {obj} is next to the {h}"),
                    format!("you would get hurt by the {h}"),
                )
            } else if let Some(o) = within(1, Role::Occupier) {
                let o = name(o);
                (
                    Relationship::PhysicalObstacle,
                    format!("a {o} is in the way on the {obj}"),
                    format!("you would bump into the {o}"),
                )
            } else {
                return Annotation::plain(Relationship::Positive);
            }
        }
        Action::Grasp => {
            if fire_next() {
                (
                    Relationship::Dangerous,
                    format!("the {obj} is next to the fire"),
                    "you would burn your hand".to_string(),
                )
            } else if let Some(o) = within(1, Role::Occupier) {
                let o = name(o);
                (
                    Relationship::SociallyAwkward,
                    format!("the {obj} belongs to the {o}"),
                    format!("the {o} would be upset"),
                )
            } else {
                return Annotation::plain(Relationship::Positive);
            }
        }
    };
    Annotation {
        relationship: rel,
        explanations: vec![expl],
        consequences: vec![cons],
    }
}

/// Generates a complete dataset: scenes, features, KB and the sentence
/// vocabulary. The output is a pure function of `(config, seed)`.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let kb = knowledge_base();
    let gen = Generator {
        config,
        seats: classes_with(Role::Seat),
        occupiers: classes_with(Role::Occupier),
        surfaces: classes_with(Role::Surface),
        hazards: classes_with(Role::Hazard),
        graspables: classes_with(Role::Graspable),
        fillers: classes_with(Role::Filler),
        rope: class_id("rope"),
    };
    let mut mean_rng = rng::derived(seed, "class-means");
    let means = ClassMeans {
        class: uniform_vectors(&mut mean_rng, CLASSES.len(), config.feature_dim),
        scene: {
            let v = uniform_vectors(&mut mean_rng, 2, config.global_dim);
            [v[0].clone(), v[1].clone()]
        },
    };
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        class_names: class_names(),
        feature_dim: config.feature_dim,
        global_dim: config.global_dim,
        scenes: Vec::new(),
    };
    let mut scenes = Vec::with_capacity(config.scenes);
    for i in 0..config.scenes {
        let (record, map, features) = gen.scene(i, seed, &kb, &means)?;
        scenes.push(Scene::new(record, map, features, &manifest)?);
    }
    let sentences: Vec<&str> = scenes
        .iter()
        .flat_map(|s| s.record.annotations.values())
        .flat_map(|labels| labels.values())
        .flat_map(|a| a.explanations.iter().chain(&a.consequences))
        .map(String::as_str)
        .collect();
    let vocabulary = if sentences.is_empty() {
        None
    } else {
        Some(Vocabulary::build(sentences, config.min_word_frequency)?)
    };
    let mut manifest = manifest;
    manifest.scenes = scenes.iter().map(|s| s.id().to_string()).collect();
    Ok(Dataset {
        manifest,
        scenes,
        kb,
        splits: None,
        vocabulary,
    })
}

/// Label distribution of an instance of `class` for `action`, given only
/// its class and the scene type, derived from the generator probabilities.
pub fn label_distribution(
    config: &SynthConfig,
    action: Action,
    class: usize,
    exhibit: bool,
) -> [f64; NUM_RELATIONSHIPS] {
    use Relationship::*;
    let mut d = [0.0; NUM_RELATIONSHIPS];
    let (po, ph) = (config.p_occupied, config.p_hazard);
    if !knowledge_base().contains(action, class) {
        d[FirmlyNegative.index()] = 1.0;
        return d;
    }
    match (role_of(class), action) {
        (Role::Seat, _) => {
            d[PhysicalObstacle.index()] = po;
            d[if exhibit { SociallyForbidden } else { Positive }.index()] = 1.0 - po;
        }
        (Role::Surface, Action::Sit) => {
            d[PhysicalObstacle.index()] = po;
            d[Dangerous.index()] = (1.0 - po) * ph;
            d[Positive.index()] = (1.0 - po) * (1.0 - ph);
        }
        (Role::Surface, _) => {
            d[Dangerous.index()] = ph;
            d[PhysicalObstacle.index()] = (1.0 - ph) * po;
            d[Positive.index()] = (1.0 - ph) * (1.0 - po);
        }
        (Role::Graspable, _) => {
            d[Dangerous.index()] = ph;
            d[SociallyAwkward.index()] = (1.0 - ph) * po;
            d[Positive.index()] = (1.0 - ph) * (1.0 - po);
        }
        _ => d[Positive.index()] = 1.0,
    }
    d
}

/// The best context-free decision: the most probable label given class
/// and scene type (ties to the lower label index).
pub fn bayes_rule(config: &SynthConfig, action: Action, class: usize, exhibit: bool) -> Relationship {
    let d = label_distribution(config, action, class, exhibit);
    let mut best = 0;
    for k in 1..NUM_RELATIONSHIPS {
        if d[k] > d[best] {
            best = k;
        }
    }
    Relationship::ALL[best]
}

/// Applies [`bayes_rule`] to every labeled instance of a scene.
pub fn bayes_predictions(config: &SynthConfig, scene: &Scene, action: Action) -> BTreeMap<u32, Relationship> {
    let exhibit = scene.record.scene_type.as_deref() == Some(EXHIBIT);
    scene
        .record
        .annotations
        .get(&action)
        .into_iter()
        .flat_map(|labels| labels.keys())
        .map(|&inst| (inst, bayes_rule(config, action, scene.record.instances[&inst], exhibit)))
        .collect()
}

/// Expected mean accuracy of [`bayes_rule`], in closed form from the
/// generator probabilities. Classes are weighted by how often their group
/// kind is drawn; placement truncation is ignored.
pub fn expected_bayes_accuracy(config: &SynthConfig, action: Action, mode: AccuracyMode) -> f64 {
    let w = &config.group_weights;
    let kb = knowledge_base();
    let k = mode.num_classes();
    let mut mass = vec![0.0; k];
    let mut hit = vec![0.0; k];
    for class in 0..CLASSES.len() {
        let role = role_of(class);
        let kind_weight = match role {
            Role::Seat => w.seat,
            Role::Surface => w.surface,
            Role::Graspable => w.graspable,
            _ => 0.0,
        } / classes_with(role).len() as f64;
        if !kb.contains(action, class) || kind_weight == 0.0 {
            continue;
        }
        for (exhibit, p_type) in [(false, 1.0 - config.p_exhibit), (true, config.p_exhibit)] {
            let d = label_distribution(config, action, class, exhibit);
            let pred = mode.class_of(bayes_rule(config, action, class, exhibit));
            for (r, p) in Relationship::ALL.iter().zip(d) {
                let m = kind_weight * p_type * p;
                mass[mode.class_of(*r)] += m;
                if mode.class_of(*r) == pred {
                    hit[mode.class_of(*r)] += m;
                }
            }
        }
    }
    // Non-KB classes are always firmly negative and always predicted so.
    let fneg = mode.class_of(Relationship::FirmlyNegative);
    mass[fneg] += 1.0;
    hit[fneg] += 1.0;
    let recalls: Vec<f64> = (0..k).filter(|&c| mass[c] > 1e-15).map(|c| hit[c] / mass[c]).collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}
