use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{
    load_space, palette, read_csv, write_csv, write_indexed_png, ClassCompleteness, ClusterRow,
    CompletenessRow, CurveRow, ScoreRow, SpaceHeader, SPACE_FORMAT,
};
use super::Context;
use crate::concept_model::{
    activation_scores, assign_from_activations, build_space, concept_prototypes, decompose,
    fit_basis, fit_basis_centered, global_relevance, local_relevance, Assignment, ClassHead,
    ConceptSpace, PrototypeCandidate,
};
use crate::embedding::{
    embed_dataset, embed_segments, load_segment_table, save_segment_table, with_pool, DatasetItem,
    SegmentEmbedding, SegmentFailure, SegmentTable,
};
use crate::error::{Error, Result};
use crate::faithfulness_bench::{
    c_deletion, c_insertion, filter_common_concepts, plan_from_embeddings, ConceptKey, FlipCurve,
    FlipPlan,
};
use crate::io::{load_matrix, save_image, save_matrix, write_json};
use crate::model::{forward, MaskingMode};
use crate::subspace_clustering::{
    build_affinity, choose_cluster_count, filter_clusters, spectral_cluster, ssc_self_expression,
};
use crate::tensor::Planes;

const SEGMENTS_CSV: &str = "segments.csv";
const SEGMENTS_F32: &str = "segments.f32";
const RESIDUAL: &str = "residual";

fn clusters_file(group: &str) -> String {
    format!("clusters_{group}.csv")
}

fn space_file(group: &str) -> String {
    format!("space_{group}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupClusters {
    pub group: String,
    pub classes: Vec<usize>,
    pub images: usize,
    pub rows: usize,
    pub mean_segments_per_image: f64,
    /// Clusters requested from spectral clustering.
    pub k: usize,
    /// Member count of every retained cluster, in concept order.
    pub counts: Vec<usize>,
    /// Spectral cluster behind every retained cluster.
    pub source_clusters: Vec<usize>,
    pub residual_rows: usize,
    /// Rows without any affinity, placed by embedding distance.
    pub isolated_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverReport {
    pub mode: MaskingMode,
    pub images: usize,
    pub segments: usize,
    pub failures: Vec<SegmentFailure>,
    pub groups: Vec<GroupClusters>,
}

/// Embeds every segment of the selected classes, clusters them by sparse
/// subspace clustering and drops small clusters.
pub fn discover(ctx: &Context) -> Result<DiscoverReport> {
    let cfg = &ctx.config;
    let items: Vec<DatasetItem> = ctx.selected_items().into_iter().cloned().collect();
    info!("embedding the segments of {} images", items.len());
    let mut emb = embed_dataset(&ctx.model, &items, cfg.mode, cfg.parallelism)?;
    // Later stages read f32 files; cluster the same values they will see.
    for row in &mut emb.table.rows {
        for v in &mut row.phi {
            *v = *v as f32 as f64;
        }
    }
    save_segment_table(&ctx.out(SEGMENTS_CSV), &ctx.out(SEGMENTS_F32), &emb.table)?;

    let ssc = cfg.ssc_config();
    let mut groups = Vec::new();
    for (tag, classes) in ctx.groups() {
        let in_group = |c: Option<usize>| c.is_some_and(|c| classes.contains(&c));
        let rows: Vec<usize> = (0..emb.table.len())
            .filter(|&r| in_group(emb.table.rows[r].class_label))
            .collect();
        let (images, segments) = items
            .iter()
            .zip(&emb.segment_counts)
            .filter(|(i, _)| in_group(i.class_label))
            .fold((0usize, 0usize), |(n, s), (_, &c)| (n + 1, s + c));
        let run = || -> Result<GroupClusters> {
            let mean = segments as f64 / images as f64;
            let k = choose_cluster_count(mean, rows.len())?;
            info!(
                "{tag}: self-expression of {} segments, {k} clusters",
                rows.len()
            );
            let phi = emb.table.feature_matrix(&rows);
            let c = with_pool(cfg.parallelism, || ssc_self_expression(&phi, &ssc))??;
            let sc = spectral_cluster(&build_affinity(&c)?, k, ssc.seed, ssc.restarts)?;
            let assignment = filter_clusters(&sc.labels, cfg.min_cluster_size)?;
            let out: Vec<ClusterRow> = rows
                .iter()
                .zip(&assignment.labels)
                .map(|(&r, label)| ClusterRow {
                    row_id: r,
                    image_id: emb.table.rows[r].image_id.clone(),
                    segment_id: emb.table.rows[r].segment_id,
                    cluster: label.map_or_else(|| RESIDUAL.to_string(), |l| l.to_string()),
                })
                .collect();
            write_csv(&ctx.out(&clusters_file(&tag)), out)?;
            Ok(GroupClusters {
                group: tag.clone(),
                classes: classes.clone(),
                images,
                rows: rows.len(),
                mean_segments_per_image: mean,
                k,
                counts: assignment.counts.clone(),
                source_clusters: assignment.source_clusters.clone(),
                residual_rows: assignment.residual_pool.len(),
                isolated_rows: sc.isolated.len(),
            })
        };
        groups.push(run().map_err(|e| Error::item("discover", &tag, e))?);
    }
    let report = DiscoverReport {
        mode: cfg.mode,
        images: items.len(),
        segments: emb.table.len(),
        failures: emb.failures,
        groups,
    };
    write_json(&ctx.out("discover.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub completeness: Vec<CompletenessRow>,
    pub spaces: Vec<SpaceHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConceptPrototypes {
    group: String,
    concept: usize,
    members: usize,
    truncated: bool,
    prototypes: Vec<PrototypeCandidate>,
}

/// Fits one basis per concept, assembles the concept spaces, and scores every
/// segment and class head against them.
pub fn score(ctx: &Context) -> Result<ScoreReport> {
    let cfg = &ctx.config;
    let table = load_segment_table(&ctx.out(SEGMENTS_CSV), &ctx.out(SEGMENTS_F32))?;
    let mut completeness = Vec::new();
    let mut spaces = Vec::new();
    let mut scores = Vec::new();
    let mut prototypes = Vec::new();
    for (tag, classes) in ctx.groups() {
        let mut run = || -> Result<()> {
            let members = read_members(ctx, &tag, &table)?;
            let bases = members
                .iter()
                .enumerate()
                .map(|(l, rows)| {
                    let m = table.feature_matrix(rows);
                    if cfg.centered {
                        fit_basis_centered(l, &m, cfg.var_threshold)
                    } else {
                        fit_basis(l, &m, cfg.var_threshold)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let built = build_space(bases, table.dim, cfg.cond_cap)?;
            // Score against the stored (f32) basis so that every later stage
            // sees exactly the same space.
            let basis_name = format!("space_{tag}_basis.f32");
            save_matrix(&ctx.out(&basis_name), &built.full)?;
            let full = load_matrix(&ctx.out(&basis_name))?;
            let meta = built
                .bases
                .iter()
                .enumerate()
                .map(|(l, b)| (l, b.captured_variance))
                .collect();
            let mut space =
                ConceptSpace::from_parts(meta, full, built.owner.clone(), built.dropped.clone())?;
            for (b, src) in space.bases.iter_mut().zip(&built.bases) {
                b.mean = src.mean.clone();
            }

            let mut class_scores = Vec::new();
            for &c in &classes {
                let head = ClassHead::from_model(&ctx.model, c)?;
                let g = global_relevance(&space, &head)?;
                completeness.push(CompletenessRow {
                    class: ctx.class_name(c).to_string(),
                    clusters: space.n_concepts(),
                    completeness: g.completeness,
                });
                class_scores.push(ClassCompleteness {
                    class: c,
                    completeness: g.completeness,
                    per_concept: g.per_concept,
                });
            }
            let n = space.n_concepts();
            let mut candidates: Vec<Vec<PrototypeCandidate>> = vec![Vec::new(); n];
            let heads: BTreeMap<usize, ClassHead> = classes
                .iter()
                .map(|&c| Ok((c, ClassHead::from_model(&ctx.model, c)?)))
                .collect::<Result<_>>()?;
            for e in &table.rows {
                let Some(c) = e.class_label.filter(|c| classes.contains(c)) else {
                    continue;
                };
                let s = score_segment(&e.phi, &space, &heads[&c])?;
                if let Some(a) = &s.activations {
                    for (l, cand) in candidates.iter_mut().enumerate() {
                        cand.push(PrototypeCandidate {
                            image_id: e.image_id.clone(),
                            segment_id: e.segment_id,
                            activation: a[l],
                        });
                    }
                }
                scores.push(s.row(e, c));
            }
            for (l, cand) in candidates.iter().enumerate() {
                let p = concept_prototypes(cand, cfg.top_k)?;
                prototypes.push(ConceptPrototypes {
                    group: tag.clone(),
                    concept: l,
                    members: members[l].len(),
                    truncated: p.truncated,
                    prototypes: p.ranked,
                });
            }
            let header = SpaceHeader {
                format: SPACE_FORMAT.into(),
                group: tag.clone(),
                classes: classes.clone(),
                dim: space.dim,
                n_concepts: n,
                concept_dims: space.concept_dims(),
                complement_dim: space.complement.ncols(),
                captured_variance: space.bases.iter().map(|b| b.captured_variance).collect(),
                condition: space.condition,
                dropped: space.dropped.clone(),
                owner: space.owner.clone(),
                means: cfg.centered.then(|| {
                    space
                        .bases
                        .iter()
                        .map(|b| {
                            b.mean
                                .as_ref()
                                .map_or_else(Vec::new, |m| m.as_slice().to_vec())
                        })
                        .collect()
                }),
                basis: basis_name,
                completeness: class_scores,
            };
            write_json(&ctx.out(&space_file(&tag)), &header)?;
            spaces.push(header);
            Ok(())
        };
        run().map_err(|e| Error::item("score", &tag, e))?;
    }
    write_csv(&ctx.out("completeness.csv"), &completeness)?;
    write_csv(&ctx.out("scores.csv"), &scores)?;
    write_json(&ctx.out("prototypes.json"), &prototypes)?;
    Ok(ScoreReport {
        completeness,
        spaces,
    })
}

/// Rows of every retained cluster of `group`, in concept order.
fn read_members(ctx: &Context, group: &str, table: &SegmentTable) -> Result<Vec<Vec<usize>>> {
    let path = ctx.out(&clusters_file(group));
    let rows: Vec<ClusterRow> = read_csv(&path)?;
    let bad = |reason: String| Error::Image {
        path: path.clone(),
        reason,
    };
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in rows {
        let e = table
            .rows
            .get(r.row_id)
            .ok_or_else(|| bad(format!("row {} is not in {SEGMENTS_CSV}", r.row_id)))?;
        if e.image_id != r.image_id || e.segment_id != r.segment_id {
            return Err(bad(format!(
                "row {} does not match {SEGMENTS_CSV}",
                r.row_id
            )));
        }
        if r.cluster == RESIDUAL {
            continue;
        }
        let l: usize = r.cluster.parse().map_err(|_| {
            bad(format!(
                "cluster {:?} is neither an index nor {RESIDUAL:?}",
                r.cluster
            ))
        })?;
        members.entry(l).or_default().push(r.row_id);
    }
    if members.keys().enumerate().any(|(i, &l)| i != l) {
        return Err(bad("concept indices are not dense".into()));
    }
    Ok(members.into_values().collect())
}

struct SegmentScores {
    assignment: Assignment,
    /// `None` when `φ = 0`.
    activations: Option<Vec<f64>>,
    relevance: Vec<f64>,
}

impl SegmentScores {
    /// Block reported for this segment: its concept, or the complement.
    fn block(&self) -> usize {
        match self.assignment {
            Assignment::Concept(l) => l,
            Assignment::Residual => self.relevance.len() - 1,
        }
    }

    fn concept_id(&self) -> String {
        match self.assignment {
            Assignment::Concept(l) => l.to_string(),
            Assignment::Residual => RESIDUAL.into(),
        }
    }

    fn row(&self, e: &SegmentEmbedding, class: usize) -> ScoreRow {
        let b = self.block();
        ScoreRow {
            image_id: e.image_id.clone(),
            segment_id: e.segment_id,
            class,
            concept_id: self.concept_id(),
            activation: self.activations.as_ref().map(|a| a[b]),
            relevance: self.relevance[b],
        }
    }
}

fn score_segment(phi: &[f64], space: &ConceptSpace, head: &ClassHead) -> Result<SegmentScores> {
    let dec = decompose(phi, space)?;
    let relevance = local_relevance(&dec, head)?;
    let activations = activation_scores(&dec, phi).ok();
    let assignment = activations
        .as_deref()
        .map_or(Assignment::Residual, assign_from_activations);
    Ok(SegmentScores {
        assignment,
        activations,
        relevance,
    })
}

fn load_group_space(ctx: &Context, class: usize) -> Result<ConceptSpace> {
    Ok(load_space(&ctx.out(&space_file(&ctx.group_of(class))))?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSegment {
    pub segment_id: u32,
    pub concept_id: String,
    pub activation: Option<f64>,
    pub relevance: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub image_id: String,
    pub class: usize,
    pub class_name: String,
    pub height: usize,
    pub width: usize,
    /// Map files, relative to this legend. Pixels of residual segments hold 0
    /// in both maps and palette index 0 in the overlay.
    pub activation_map: String,
    pub relevance_map: String,
    pub overlay: String,
    /// Overlay color of palette index `i`; index `l + 1` is concept `l`.
    pub palette: Vec<[u8; 3]>,
    pub segments: Vec<ExplainSegment>,
    pub residual_segments: Vec<u32>,
}

/// Per-pixel activation and relevance maps of one image.
pub fn explain(ctx: &Context, image_id: &str) -> Result<ExplainReport> {
    let item = ctx
        .items
        .iter()
        .find(|i| i.image_id == image_id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown image id {image_id:?}")))?;
    let class = item.class_label.expect("dataset items carry labels");
    if !ctx.classes().contains(&class) {
        return Err(Error::InvalidArgument(format!(
            "image {image_id} is class {class}, which is not selected"
        )));
    }
    let run = || -> Result<ExplainReport> {
        let space = load_group_space(ctx, class)?;
        let head = ClassHead::from_model(&ctx.model, class)?;
        let table = load_segment_table(&ctx.out(SEGMENTS_CSV), &ctx.out(SEGMENTS_F32))?;
        let map = &item.label_map;
        let (h, w) = (map.height, map.width);
        let mut activation = Planes::zeros(1, h, w);
        let mut relevance = Planes::zeros(1, h, w);
        let mut overlay = vec![0u8; h * w];
        let mut segments = Vec::new();
        let mut residual_segments = Vec::new();
        for e in table.rows.iter().filter(|e| e.image_id == image_id) {
            let s = score_segment(&e.phi, &space, &head)?;
            let b = s.block();
            let a = s.activations.as_ref().map(|a| a[b]);
            let pixels = map.labels.iter().filter(|&&v| v == e.segment_id).count();
            segments.push(ExplainSegment {
                segment_id: e.segment_id,
                concept_id: s.concept_id(),
                activation: a,
                relevance: s.relevance[b],
                pixels,
            });
            match s.assignment {
                Assignment::Concept(l) => {
                    let idx = u8::try_from(l + 1).unwrap_or(u8::MAX);
                    for (p, &v) in map.labels.iter().enumerate() {
                        if v == e.segment_id {
                            activation.data[p] = a.unwrap_or(0.0) as f32;
                            relevance.data[p] = s.relevance[b] as f32;
                            overlay[p] = idx;
                        }
                    }
                }
                Assignment::Residual => residual_segments.push(e.segment_id),
            }
        }
        let dir = PathBuf::from("explain").join(image_id);
        let out = |name: &str| ctx.out(&dir.join(name).to_string_lossy());
        save_image(&out("activation.f32"), &activation)?;
        save_image(&out("relevance.f32"), &relevance)?;
        let colors = palette(space.n_concepts().min(254));
        write_indexed_png(&out("overlay.png"), w, h, &overlay, &colors)?;
        let report = ExplainReport {
            image_id: image_id.to_string(),
            class,
            class_name: ctx.class_name(class).to_string(),
            height: h,
            width: w,
            activation_map: "activation.f32".into(),
            relevance_map: "relevance.f32".into(),
            overlay: "overlay.png".into(),
            palette: colors,
            segments,
            residual_segments,
        };
        write_json(&out("legend.json"), &report)?;
        Ok(report)
    };
    run().map_err(|e| Error::item("explain", image_id, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub auc: Option<f64>,
    pub steps: usize,
    pub final_accuracy: f64,
    pub final_occluded_fraction: f64,
}

impl CurveSummary {
    fn of(curve: &FlipCurve) -> Self {
        let last = curve.points.last().expect("curves have a baseline point");
        Self {
            auc: curve.auc,
            steps: curve.points.len() - 1,
            final_accuracy: last.accuracy,
            final_occluded_fraction: last.occluded_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: MaskingMode,
    pub images: usize,
    /// Images without any concept-assigned segment.
    pub skipped_images: Vec<String>,
    pub common_concepts: Vec<ConceptKey>,
    /// Accuracy of the unmasked model on the benchmarked images.
    pub baseline_accuracy: f64,
    pub deletion: CurveSummary,
    pub insertion: CurveSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub presence_threshold: f64,
    pub modes: Vec<ModeReport>,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    mode: MaskingMode,
    deletion: &'a FlipCurve,
    insertion: &'a FlipCurve,
}

/// Concept deletion and insertion curves for every benchmarked mode.
pub fn bench(ctx: &Context) -> Result<BenchReport> {
    let cfg = &ctx.config;
    let items: Vec<DatasetItem> = ctx.selected_items().into_iter().cloned().collect();
    let mut spaces: BTreeMap<usize, ConceptSpace> = BTreeMap::new();
    let mut heads: BTreeMap<usize, ClassHead> = BTreeMap::new();
    for c in ctx.classes() {
        spaces.insert(c, load_group_space(ctx, c)?);
        heads.insert(c, ClassHead::from_model(&ctx.model, c)?);
    }
    let table = load_segment_table(&ctx.out(SEGMENTS_CSV), &ctx.out(SEGMENTS_F32))?;
    let mut by_image: HashMap<&str, Vec<SegmentEmbedding>> = HashMap::new();
    for e in &table.rows {
        by_image
            .entry(e.image_id.as_str())
            .or_default()
            .push(e.clone());
    }

    let correct = with_pool(cfg.parallelism, || {
        items
            .par_iter()
            .map(|i| {
                let out = forward(&ctx.model, &i.image)
                    .map_err(|e| Error::item("bench", &i.image_id, e))?;
                let pred = argmax(&out.logits);
                Ok(Some(pred) == i.class_label)
            })
            .collect::<Result<Vec<bool>>>()
    })??;
    let baseline = correct.iter().filter(|&&b| b).count() as f64 / items.len() as f64;

    let mut modes = Vec::new();
    for mode in cfg.bench_modes() {
        info!("bench: {mode}");
        let plans = with_pool(cfg.parallelism, || {
            items
                .par_iter()
                .map(|item| {
                    let class = item.class_label.expect("dataset items carry labels");
                    let fresh;
                    let emb: &[SegmentEmbedding] = if mode == cfg.mode {
                        by_image
                            .get(item.image_id.as_str())
                            .map_or(&[], Vec::as_slice)
                    } else {
                        fresh = embed_segments(
                            &ctx.model,
                            &item.image_id,
                            Some(class),
                            &item.image,
                            &item.label_map,
                            mode,
                        )?;
                        &fresh
                    };
                    plan_from_embeddings(
                        &item.image_id,
                        class,
                        &item.label_map,
                        emb,
                        &spaces[&class],
                        &heads[&class],
                    )
                })
                .collect::<Vec<Result<FlipPlan>>>()
        })?;
        let plans = plans
            .into_iter()
            .zip(&items)
            .map(|(p, i)| p.map_err(|e| Error::item("bench", &i.image_id, e)))
            .collect::<Result<Vec<_>>>()?;
        let concept_set = filter_common_concepts(&plans, cfg.presence_threshold)?;
        let (deletion, insertion) =
            with_pool(cfg.parallelism, || -> Result<(FlipCurve, FlipCurve)> {
                Ok((
                    c_deletion(&ctx.model, &items, &plans, &concept_set, mode)?,
                    c_insertion(&ctx.model, &items, &plans, &concept_set, mode)?,
                ))
            })??;
        let rows = [&deletion, &insertion].into_iter().flat_map(|c| {
            c.points.iter().map(|p| CurveRow {
                direction: c.direction.as_str().into(),
                step: p.step,
                mean_occluded_fraction: p.occluded_fraction,
                accuracy: p.accuracy,
                n_images: p.n_images,
            })
        });
        write_csv(&ctx.out(&format!("curves_{mode}.csv")), rows)?;
        if cfg.per_image_detail {
            write_json(
                &ctx.out(&format!("traces_{mode}.json")),
                &TraceFile {
                    mode,
                    deletion: &deletion,
                    insertion: &insertion,
                },
            )?;
        }
        modes.push(ModeReport {
            mode,
            images: items.len(),
            skipped_images: plans
                .iter()
                .filter(|p| p.skipped)
                .map(|p| p.image_id.clone())
                .collect(),
            common_concepts: concept_set.into_iter().collect(),
            baseline_accuracy: baseline,
            deletion: CurveSummary::of(&deletion),
            insertion: CurveSummary::of(&insertion),
        });
    }
    let report = BenchReport {
        presence_threshold: cfg.presence_threshold,
        modes,
    };
    write_json(&ctx.out("bench.json"), &report)?;
    Ok(report)
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

/// Images explained by `all`: the configured list, or the first image of
/// every selected class.
fn explain_targets(ctx: &Context) -> Vec<String> {
    if !ctx.config.explain_images.is_empty() {
        return ctx.config.explain_images.clone();
    }
    ctx.classes()
        .into_iter()
        .filter_map(|c| {
            ctx.items
                .iter()
                .find(|i| i.class_label == Some(c))
                .map(|i| i.image_id.clone())
        })
        .collect()
}

/// `discover`, `score`, `explain` and `bench` in order.
pub fn run_all(
    ctx: &Context,
) -> Result<(DiscoverReport, ScoreReport, Vec<ExplainReport>, BenchReport)> {
    let d = discover(ctx)?;
    let s = score(ctx)?;
    let e = explain_targets(ctx)
        .iter()
        .map(|id| explain(ctx, id))
        .collect::<Result<Vec<_>>>()?;
    let b = bench(ctx)?;
    Ok((d, s, e, b))
}
