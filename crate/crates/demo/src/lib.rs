//! Three interactive views over the `conceptspace` library. The exports
//! return JSON; the plain Rust functions behind them return typed views.

use std::collections::BTreeSet;

use conceptspace::concept_model::{
    activation_scores, build_space, decompose, global_relevance, local_relevance, ClassHead,
    ConceptBasis,
};
use conceptspace::faithfulness_bench::{
    build_flip_plan, c_deletion, c_insertion, filter_common_concepts, FlipCurve,
};
use conceptspace::model::{layer_masks, MaskingMode};
use conceptspace::numerics::{Matrix, Vector};
use conceptspace::synthetic::{planted_flip_setup, zoo_graph, ZooArch};
use conceptspace::tensor::Mask;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerView {
    pub kind: String,
    pub height: usize,
    pub width: usize,
    /// Row-major validity, 1 = valid.
    pub bits: Vec<u8>,
    pub valid: usize,
}

fn arch(name: &str) -> Result<ZooArch, String> {
    ZooArch::ALL
        .into_iter()
        .find(|a| format!("{a:?}").eq_ignore_ascii_case(name))
        .ok_or_else(|| format!("unknown architecture {name:?}"))
}

/// Input side length of the zoo graphs.
pub fn input_size() -> usize {
    zoo_graph(ZooArch::Plain, 0).input_shape[1]
}

/// Validity mask after every layer when `bits` (row-major, input size
/// squared) is the visible region.
pub fn mask_layers(arch_name: &str, bits: &[u8]) -> Result<Vec<LayerView>, String> {
    let g = zoo_graph(arch(arch_name)?, 0);
    let [_, h, w] = g.input_shape;
    if bits.len() != h * w {
        return Err(format!(
            "expected {} mask entries, got {}",
            h * w,
            bits.len()
        ));
    }
    let mask = Mask::from_fn(h, w, |y, x| bits[y * w + x] != 0);
    let trace = layer_masks(&g, &mask).map_err(|e| e.to_string())?;
    Ok(trace
        .into_iter()
        .map(|(kind, m)| LayerView {
            kind: kind.to_string(),
            height: m.height,
            width: m.width,
            bits: m.bits.iter().map(|&b| b as u8).collect(),
            valid: m.count(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionView {
    /// `φˡ` for both concepts and the complement.
    pub components: Vec<[f64; 3]>,
    pub activations: Vec<f64>,
    pub relevance: Vec<f64>,
    /// `φ·w`
    pub logit: f64,
    pub completeness: f64,
    /// `‖wˡ‖²/‖w‖²`
    pub weight_shares: Vec<f64>,
    pub condition: f64,
}

/// Two one-dimensional concepts in the `xy` plane of ℝ³, at `angle1` and
/// `angle2` degrees from the x axis; the complement is the z axis.
pub fn decompose_view(
    angle1: f64,
    angle2: f64,
    phi: [f64; 3],
    w: [f64; 3],
) -> Result<DecompositionView, String> {
    let dir = |deg: f64| {
        let r = deg.to_radians();
        Matrix::from_column_slice(3, 1, &[r.cos(), r.sin(), 0.0])
    };
    let bases = vec![
        ConceptBasis {
            concept_id: 0,
            basis: dir(angle1),
            captured_variance: 1.0,
            mean: None,
        },
        ConceptBasis {
            concept_id: 1,
            basis: dir(angle2),
            captured_variance: 1.0,
            mean: None,
        },
    ];
    let space = build_space(bases, 3, 1e8).map_err(|e| e.to_string())?;
    if space.n_concepts() != 2 || !space.dropped.is_empty() {
        return Err("the two concept directions coincide".into());
    }
    let dec = decompose(&phi, &space).map_err(|e| e.to_string())?;
    let head = ClassHead {
        class: 0,
        w: Vector::from_column_slice(&w),
        bias: 0.0,
    };
    let relevance = local_relevance(&dec, &head).map_err(|e| e.to_string())?;
    let activations = activation_scores(&dec, &phi).unwrap_or_default();
    let global = global_relevance(&space, &head).map_err(|e| e.to_string())?;
    Ok(DecompositionView {
        components: dec.components.iter().map(|c| [c[0], c[1], c[2]]).collect(),
        activations,
        relevance,
        logit: phi.iter().zip(&w).map(|(a, b)| a * b).sum(),
        completeness: global.completeness,
        weight_shares: global.per_concept,
        condition: space.condition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveView {
    /// `(mean occluded fraction, accuracy)` per step.
    pub points: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

impl From<&FlipCurve> for CurveView {
    fn from(c: &FlipCurve) -> Self {
        Self {
            points: c
                .points
                .iter()
                .map(|p| (p.occluded_fraction, p.accuracy))
                .collect(),
            auc: c.auc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedView {
    pub deletion: CurveView,
    pub insertion: CurveView,
    pub concepts: usize,
    pub images: usize,
}

/// C-Deletion and C-Insertion on a planted problem with the space and head
/// it was built with.
pub fn planted_curves(
    n_concepts: usize,
    n_images: usize,
    seed: u64,
) -> Result<PlantedView, String> {
    if !(1..=5).contains(&n_concepts) || n_images == 0 {
        return Err("choose 1 to 5 concepts and at least one image".into());
    }
    let s = planted_flip_setup(n_concepts, n_images, seed).map_err(|e| e.to_string())?;
    let mode = MaskingMode::InpaintOriginalScale;
    let plans = s
        .items
        .iter()
        .map(|item| build_flip_plan(&s.model, item, &s.space, &s.head, mode))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let all: BTreeSet<_> = filter_common_concepts(&plans, 0.0).map_err(|e| e.to_string())?;
    let del = c_deletion(&s.model, &s.items, &plans, &all, mode).map_err(|e| e.to_string())?;
    let ins = c_insertion(&s.model, &s.items, &plans, &all, mode).map_err(|e| e.to_string())?;
    Ok(PlantedView {
        deletion: (&del).into(),
        insertion: (&ins).into(),
        concepts: n_concepts,
        images: n_images,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = inputSize)]
pub fn input_size_js() -> usize {
    input_size()
}

#[wasm_bindgen(js_name = maskLayers)]
pub fn mask_layers_js(arch_name: &str, bits: &[u8]) -> Result<String, JsError> {
    to_js(mask_layers(arch_name, bits))
}

#[wasm_bindgen(js_name = decompose)]
pub fn decompose_js(angle1: f64, angle2: f64, phi: &[f64], w: &[f64]) -> Result<String, JsError> {
    let three = |v: &[f64]| -> Result<[f64; 3], String> {
        v.try_into().map_err(|_| "expected 3 values".to_string())
    };
    to_js(three(phi).and_then(|p| decompose_view(angle1, angle2, p, three(w)?)))
}

#[wasm_bindgen(js_name = plantedCurves)]
pub fn planted_curves_js(n_concepts: usize, n_images: usize, seed: u32) -> Result<String, JsError> {
    to_js(planted_curves(n_concepts, n_images, seed as u64))
}
