//! Concept deletion and insertion curves.
//!
//! Every image gets a [`FlipPlan`]: its segments are embedded, assigned to
//! concepts of the image's class, and the concepts are ranked by the mean
//! local relevance of their segments. Deletion masks the ranked concepts one
//! per step, insertion starts from nothing visible and reveals them in the
//! same order. Accuracy is tracked against the mean occluded pixel fraction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_model::{
    activation_scores, assign_from_activations, decompose, local_relevance, Assignment, ClassHead,
    ConceptSpace,
};
use crate::embedding::{embed_segments, DatasetItem, SegmentEmbedding};
use crate::error::{Error, Result};
use crate::model::{forward, masked_forward_or_bias, MaskingMode, ModelGraph};
use crate::segment_ingest::LabelMap;
use crate::tensor::{Mask, Planes};

/// `(class, concept index within that class's space)`
pub type ConceptKey = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScore {
    pub segment_id: u32,
    pub assignment: Assignment,
    /// `aₗ` per block, complement last; empty when `φ = 0`.
    pub activations: Vec<f64>,
    /// `rˡ` per block, complement last.
    pub relevance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipPlan {
    pub image_id: String,
    pub class: usize,
    /// Concept indices, most important first.
    pub order: Vec<usize>,
    /// Mean relevance of the member segments, aligned with `order`.
    pub importance: Vec<f64>,
    /// Member segment ids, aligned with `order`.
    pub segments: Vec<Vec<u32>>,
    /// Union of the member segments, aligned with `order`.
    pub masks: Vec<Mask>,
    pub residual_segments: Vec<u32>,
    pub scores: Vec<SegmentScore>,
    /// No segment was assigned to a concept.
    pub skipped: bool,
}

/// Scores every segment against `space` and ranks the concepts.
pub fn build_flip_plan(
    g: &ModelGraph,
    item: &DatasetItem,
    space: &ConceptSpace,
    head: &ClassHead,
    mode: MaskingMode,
) -> Result<FlipPlan> {
    let class = item.class_label.ok_or_else(|| {
        Error::InvalidArgument(format!("image {} has no class label", item.image_id))
    })?;
    let emb = embed_segments(
        g,
        &item.image_id,
        Some(class),
        &item.image,
        &item.label_map,
        mode,
    )?;
    plan_from_embeddings(&item.image_id, class, &item.label_map, &emb, space, head)
}

/// [`build_flip_plan`] from precomputed segment embeddings of one image.
pub fn plan_from_embeddings(
    image_id: &str,
    class: usize,
    label_map: &LabelMap,
    embeddings: &[SegmentEmbedding],
    space: &ConceptSpace,
    head: &ClassHead,
) -> Result<FlipPlan> {
    if head.class != class {
        return Err(Error::InvalidArgument(format!(
            "image {image_id} is class {class} but the head is class {}",
            head.class
        )));
    }
    let n = space.n_concepts();
    let mut scores = Vec::with_capacity(embeddings.len());
    let mut members: BTreeMap<usize, (Vec<u32>, f64)> = BTreeMap::new();
    let mut residual_segments = Vec::new();
    for e in embeddings {
        let dec = decompose(&e.phi, space)?;
        let relevance = local_relevance(&dec, head)?;
        let (assignment, activations) = match activation_scores(&dec, &e.phi) {
            Ok(a) => (assign_from_activations(&a), a),
            Err(_) => (Assignment::Residual, Vec::new()),
        };
        match assignment {
            Assignment::Concept(l) => {
                let entry = members.entry(l).or_default();
                entry.0.push(e.segment_id);
                entry.1 += relevance[l];
            }
            Assignment::Residual => residual_segments.push(e.segment_id),
        }
        scores.push(SegmentScore {
            segment_id: e.segment_id,
            assignment,
            activations,
            relevance,
        });
    }
    debug_assert!(members.keys().all(|&l| l < n));
    let mut ranked: Vec<(usize, f64, Vec<u32>)> = members
        .into_iter()
        .map(|(l, (segs, sum))| (l, sum / segs.len() as f64, segs))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(FlipPlan {
        image_id: image_id.to_string(),
        class,
        order: ranked.iter().map(|r| r.0).collect(),
        importance: ranked.iter().map(|r| r.1).collect(),
        masks: ranked.iter().map(|r| label_map.union_mask(&r.2)).collect(),
        segments: ranked.into_iter().map(|r| r.2).collect(),
        skipped: scores.iter().all(|s| s.assignment == Assignment::Residual),
        residual_segments,
        scores,
    })
}

/// Concepts present in at least `presence_threshold` of their class's images.
pub fn filter_common_concepts(
    plans: &[FlipPlan],
    presence_threshold: f64,
) -> Result<BTreeSet<ConceptKey>> {
    if plans.is_empty() {
        return Err(Error::InvalidArgument("no flip plans to filter".into()));
    }
    if !(0.0..=1.0).contains(&presence_threshold) {
        return Err(Error::Config(format!(
            "presence threshold must lie in [0, 1], got {presence_threshold}"
        )));
    }
    let mut images: BTreeMap<usize, usize> = BTreeMap::new();
    let mut present: BTreeMap<ConceptKey, usize> = BTreeMap::new();
    for p in plans {
        *images.entry(p.class).or_default() += 1;
        for &l in &p.order {
            *present.entry((p.class, l)).or_default() += 1;
        }
    }
    let kept: BTreeSet<ConceptKey> = present
        .into_iter()
        .filter(|&((class, _), count)| count as f64 / images[&class] as f64 >= presence_threshold)
        .map(|(k, _)| k)
        .collect();
    if kept.is_empty() {
        return Err(Error::NoCommonConcepts {
            threshold: presence_threshold,
        });
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Deletion,
    Insertion,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Deletion => "deletion",
            Direction::Insertion => "insertion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub occluded_fraction: f64,
    pub logits: Vec<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTrace {
    pub image_id: String,
    pub class: usize,
    /// Concepts flipped, in order.
    pub concepts: Vec<usize>,
    /// Step 0 is the unflipped state.
    pub steps: Vec<StepRecord>,
}

impl ImageTrace {
    /// State after `t` flips; images with fewer concepts stay at their last
    /// state.
    pub fn at(&self, t: usize) -> &StepRecord {
        &self.steps[t.min(self.steps.len() - 1)]
    }

    /// First step at which the prediction is wrong.
    pub fn steps_to_misclassification(&self) -> Option<usize> {
        self.steps.iter().position(|s| !s.correct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub occluded_fraction: f64,
    pub accuracy: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipCurve {
    pub direction: Direction,
    pub mode: MaskingMode,
    /// Along deletion the occluded fraction never decreases; along insertion
    /// it never increases.
    pub points: Vec<CurvePoint>,
    pub auc: Option<f64>,
    /// Sorted by image id.
    pub traces: Vec<ImageTrace>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn predict(g: &ModelGraph, image: &Planes, visible: &Mask, mode: MaskingMode) -> Result<Vec<f64>> {
    let out = if visible.all() {
        forward(g, image)?
    } else {
        masked_forward_or_bias(g, image, visible, mode)?
    };
    Ok(out.logits)
}

/// Logits after each cumulative flip of `masks`. Deletion hides the union of
/// the first `t` masks; insertion shows only that union.
pub fn flip_trace(
    g: &ModelGraph,
    image: &Planes,
    class: usize,
    masks: &[Mask],
    direction: Direction,
    mode: MaskingMode,
) -> Result<Vec<StepRecord>> {
    let (h, w) = (image.height, image.width);
    let mut flipped = Mask::filled(h, w, false);
    let mut steps = Vec::with_capacity(masks.len() + 1);
    for t in 0..=masks.len() {
        if t > 0 {
            flipped = flipped.or(&masks[t - 1]);
        }
        let visible = match direction {
            Direction::Deletion => flipped.not(),
            Direction::Insertion => flipped.clone(),
        };
        let logits = predict(g, image, &visible, mode)?;
        steps.push(StepRecord {
            occluded_fraction: 1.0 - visible.area_fraction(),
            correct: argmax(&logits) == class,
            logits,
        });
    }
    Ok(steps)
}

fn run_curve(
    g: &ModelGraph,
    items: &[DatasetItem],
    plans: &[FlipPlan],
    concept_set: &BTreeSet<ConceptKey>,
    mode: MaskingMode,
    direction: Direction,
) -> Result<FlipCurve> {
    let by_id: HashMap<&str, &FlipPlan> = plans.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let mut jobs: Vec<(&DatasetItem, &FlipPlan)> = Vec::with_capacity(items.len());
    for item in items {
        let plan = by_id.get(item.image_id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("no flip plan for image {}", item.image_id))
        })?;
        jobs.push((item, plan));
    }
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no images to flip".into()));
    }
    jobs.sort_by(|a, b| a.0.image_id.cmp(&b.0.image_id));

    let traces: Vec<Result<ImageTrace>> = jobs
        .par_iter()
        .map(|(item, plan)| {
            let chosen: Vec<usize> = (0..plan.order.len())
                .filter(|&i| concept_set.contains(&(plan.class, plan.order[i])))
                .collect();
            let masks: Vec<Mask> = chosen.iter().map(|&i| plan.masks[i].clone()).collect();
            let steps = flip_trace(g, &item.image, plan.class, &masks, direction, mode)
                .map_err(|e| Error::item("flip", &item.image_id, e))?;
            Ok(ImageTrace {
                image_id: item.image_id.clone(),
                class: plan.class,
                concepts: chosen.iter().map(|&i| plan.order[i]).collect(),
                steps,
            })
        })
        .collect();
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;

    let horizon = traces.iter().map(|t| t.steps.len() - 1).max().unwrap_or(0);
    let n = traces.len();
    let points: Vec<CurvePoint> = (0..=horizon)
        .map(|t| {
            let mut occluded = 0.0;
            let mut correct = 0usize;
            for tr in &traces {
                let s = tr.at(t);
                occluded += s.occluded_fraction;
                correct += s.correct as usize;
            }
            CurvePoint {
                step: t,
                occluded_fraction: occluded / n as f64,
                accuracy: correct as f64 / n as f64,
                n_images: n,
            }
        })
        .collect();
    let auc = curve_auc(&points).ok();
    Ok(FlipCurve {
        direction,
        mode,
        points,
        auc,
        traces,
    })
}

/// Cumulatively masks the selected concepts of every image, most important
/// first. Every image counts at every step; an image out of concepts keeps
/// its last state.
pub fn c_deletion(
    g: &ModelGraph,
    items: &[DatasetItem],
    plans: &[FlipPlan],
    concept_set: &BTreeSet<ConceptKey>,
    mode: MaskingMode,
) -> Result<FlipCurve> {
    run_curve(g, items, plans, concept_set, mode, Direction::Deletion)
}

/// Starts with nothing visible and reveals the selected concepts, most
/// important first. Segments outside the selected concepts stay hidden.
pub fn c_insertion(
    g: &ModelGraph,
    items: &[DatasetItem],
    plans: &[FlipPlan],
    concept_set: &BTreeSet<ConceptKey>,
    mode: MaskingMode,
) -> Result<FlipCurve> {
    run_curve(g, items, plans, concept_set, mode, Direction::Insertion)
}

/// Trapezoidal area under accuracy over the occluded-fraction axis.
pub fn curve_auc(points: &[CurvePoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "area needs at least 2 points, got {}",
            points.len()
        )));
    }
    Ok(points
        .windows(2)
        .map(|w| {
            (w[1].occluded_fraction - w[0].occluded_fraction).abs()
                * (w[0].accuracy + w[1].accuracy)
                / 2.0
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> CurvePoint {
        CurvePoint {
            step: 0,
            occluded_fraction: x,
            accuracy: y,
            n_images: 1,
        }
    }

    fn plan(class: usize, order: &[usize]) -> FlipPlan {
        FlipPlan {
            image_id: String::new(),
            class,
            order: order.to_vec(),
            importance: vec![0.0; order.len()],
            segments: vec![Vec::new(); order.len()],
            masks: vec![Mask::filled(1, 1, false); order.len()],
            residual_segments: Vec::new(),
            scores: Vec::new(),
            skipped: order.is_empty(),
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(curve_auc(&[pt(0.0, 1.0), pt(1.0, 1.0)]).unwrap(), 1.0);
        assert_eq!(curve_auc(&[pt(0.0, 1.0), pt(1.0, 0.0)]).unwrap(), 0.5);
        assert_eq!(curve_auc(&[pt(1.0, 0.0), pt(0.0, 1.0)]).unwrap(), 0.5);
        assert!(curve_auc(&[pt(0.0, 1.0)]).is_err());
    }

    #[test]
    fn presence_filter() {
        let mut plans: Vec<FlipPlan> = (0..8).map(|_| plan(0, &[0, 1])).collect();
        plans.extend((0..2).map(|_| plan(0, &[1])));
        // Concept 0 in 8/10, concept 1 in 10/10.
        let kept = filter_common_concepts(&plans, 0.75).unwrap();
        assert_eq!(kept, BTreeSet::from([(0, 0), (0, 1)]));

        let mut plans: Vec<FlipPlan> = (0..7).map(|_| plan(0, &[0, 1])).collect();
        plans.extend((0..3).map(|_| plan(0, &[1])));
        let kept = filter_common_concepts(&plans, 0.75).unwrap();
        assert_eq!(kept, BTreeSet::from([(0, 1)]));

        let mut plans = vec![plan(0, &[2]), plan(0, &[]), plan(1, &[0])];
        plans.push(plan(1, &[]));
        assert_eq!(filter_common_concepts(&plans, 0.0).unwrap().len(), 2);
        assert!(matches!(
            filter_common_concepts(&plans, 0.9),
            Err(Error::NoCommonConcepts { .. })
        ));
    }

    #[test]
    fn presence_is_per_class() {
        // Concept (1, 0) is in every class-1 image even though class 1 has
        // far fewer images than class 0.
        let mut plans: Vec<FlipPlan> = (0..9).map(|_| plan(0, &[])).collect();
        plans.push(plan(1, &[0]));
        assert_eq!(
            filter_common_concepts(&plans, 0.75).unwrap(),
            BTreeSet::from([(1, 0)])
        );
    }
}
