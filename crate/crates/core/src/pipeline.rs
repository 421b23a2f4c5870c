//! End-to-end stages: deform, render, refine and evaluate.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::arap::{arap_solve_with_progress, SolveError};
use crate::camera::Camera;
use crate::config::PipelineConfig;
use crate::drag::{DragDefect, DragSpec};
use crate::image::{ImageBuffer, ImageError};
use crate::metrics::{dai, project_handles, DaiReport, DaiView, EvalConfig, MetricError};
use crate::neighborhood::{assign_constraints, build_graph, sample_subset, ConstraintSummary, DeformGraph, GraphError, SubsetSample};
use crate::propagation::{propagate, PropagationError, PropagationStats, SubsetTransform};
use crate::refine::{displacement_mask, refine_with_progress, RefineError, RefineResult, View, ViewDataset};
use crate::render::render;
use crate::scene::GaussianScene;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("drag spec {pointer}: {defect}")]
    Drag { pointer: String, defect: DragDefect },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("view {view}: {message}")]
    View { view: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeformReport {
    pub seed: u64,
    pub gaussians: usize,
    pub subset_size: usize,
    pub graph_edges: usize,
    pub mean_knn_distance: f64,
    pub handle_snap_distances: Vec<f64>,
    pub anchor_snap_distances: Vec<f64>,
    pub constraints: ConstraintSummary,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
    pub final_energy: f64,
    pub propagation: PropagationStats,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformOutput {
    pub scene: GaussianScene,
    pub report: DeformReport,
}

/// Sampled and constrained deformation graph, ready to solve. Building it
/// surfaces every input error before any expensive work starts.
#[derive(Debug, Clone)]
pub struct DeformPlan {
    pub sample: SubsetSample,
    pub graph: DeformGraph,
    pub constraints: ConstraintSummary,
    timings_ms: BTreeMap<String, f64>,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

impl DeformPlan {
    pub fn prepare(scene: &GaussianScene, drag: &DragSpec, config: &PipelineConfig) -> Result<Self, PipelineError> {
        drag.check().map_err(|(pointer, defect)| PipelineError::Drag { pointer, defect })?;
        let mut timings_ms = BTreeMap::new();
        let start = Instant::now();
        let sample = sample_subset(scene, drag, config.sampling.n_sub, config.seed)?;
        timings_ms.insert("sample".into(), elapsed_ms(start));

        let start = Instant::now();
        let positions = sample.indices.iter().map(|&i| scene.center(i)).collect();
        let mut graph = build_graph(sample.indices.clone(), positions, config.graph.k, config.arap.weight_mode)?;
        let constraints = assign_constraints(&mut graph, &sample, drag)?;
        timings_ms.insert("graph".into(), elapsed_ms(start));
        Ok(Self {
            sample,
            graph,
            constraints,
            timings_ms,
        })
    }

    /// Solves and propagates; `progress` receives `(iteration, energy)`.
    pub fn execute(
        self,
        scene: &GaussianScene,
        drag: &DragSpec,
        config: &PipelineConfig,
        progress: impl FnMut(usize, f64),
    ) -> Result<DeformOutput, PipelineError> {
        let mut timings_ms = self.timings_ms;
        let start = Instant::now();
        let state = arap_solve_with_progress(&self.graph, &config.arap, progress)?;
        timings_ms.insert("solve".into(), elapsed_ms(start));

        let start = Instant::now();
        let transform = SubsetTransform::from_solution(&self.graph, &state);
        let (deformed, stats) = propagate(scene, &transform, drag.region.as_ref(), &config.propagation)?;
        timings_ms.insert("propagate".into(), elapsed_ms(start));

        Ok(DeformOutput {
            scene: deformed,
            report: DeformReport {
                seed: config.seed,
                gaussians: scene.len(),
                subset_size: self.graph.len(),
                graph_edges: self.graph.edge_count(),
                mean_knn_distance: self.graph.mean_knn_distance,
                handle_snap_distances: self.sample.handle_snap_distances,
                anchor_snap_distances: self.sample.anchor_snap_distances,
                constraints: self.constraints,
                iterations: state.iterations,
                final_energy: state.energy,
                energy_trace: state.energy_trace,
                propagation: stats,
                timings_ms,
            },
        })
    }
}

pub fn deform(scene: &GaussianScene, drag: &DragSpec, config: &PipelineConfig) -> Result<DeformOutput, PipelineError> {
    DeformPlan::prepare(scene, drag, config)?.execute(scene, drag, config, |_, _| {})
}

pub fn render_views(scene: &GaussianScene, cameras: &[Camera], background: [f32; 3]) -> Vec<ImageBuffer> {
    cameras.iter().map(|cam| render(scene, cam, background)).collect()
}

pub fn view_file_name(index: usize) -> String {
    format!("view_{index}.png")
}

/// Writes `view_{i}.png` for every image into `dir`.
pub fn write_views(images: &[ImageBuffer], dir: &Path) -> Result<(), ImageError> {
    for (i, img) in images.iter().enumerate() {
        img.write_png(dir.join(view_file_name(i)))?;
    }
    Ok(())
}

/// Views for refinement. Each camera's own image is the capture when it has
/// one; otherwise the render of the original scene stands in for it.
pub fn build_dataset(
    original: &GaussianScene,
    deformed: &GaussianScene,
    cameras: &[Camera],
    config: &PipelineConfig,
) -> Result<ViewDataset, PipelineError> {
    let tau_abs = config.refine.displacement_threshold * original.bbox_diagonal();
    let mut views = Vec::with_capacity(cameras.len());
    for (v, cam) in cameras.iter().enumerate() {
        let captured = match &cam.image_path {
            Some(path) => {
                let img = ImageBuffer::read_png(path)?;
                if (img.width, img.height) != (cam.width, cam.height) {
                    return Err(PipelineError::View {
                        view: v,
                        message: format!(
                            "image {} is {}x{}, camera is {}x{}",
                            path.display(),
                            img.width,
                            img.height,
                            cam.width,
                            cam.height
                        ),
                    });
                }
                img
            }
            None => render(original, cam, config.render.background),
        };
        let mask = displacement_mask(original, deformed, cam, tau_abs, config.refine.mask_dilation);
        views.push(View::new(cam.clone(), captured, mask));
    }
    Ok(ViewDataset { views })
}

/// Refines `deformed` against every camera; `progress` receives
/// `(steps done, total steps)`.
pub fn run_refine(
    original: &GaussianScene,
    deformed: &GaussianScene,
    cameras: &[Camera],
    config: &PipelineConfig,
    progress: impl FnMut(usize, usize),
) -> Result<RefineResult, PipelineError> {
    let mut dataset = build_dataset(original, deformed, cameras, config)?;
    Ok(refine_with_progress(
        original,
        deformed,
        &mut dataset,
        &config.refine,
        config.render.background,
        progress,
    )?)
}

/// DAI over the first `eval.views` cameras that see every handle point.
pub fn evaluate(
    original: &[ImageBuffer],
    edited: &[ImageBuffer],
    drag: &DragSpec,
    cameras: &[Camera],
    eval: &EvalConfig,
) -> Result<DaiReport, PipelineError> {
    let projected = project_handles(&drag.handles, cameras);
    let mut views = Vec::new();
    for (v, pairs) in projected.into_iter().enumerate() {
        if views.len() == eval.views {
            break;
        }
        let Some(pairs) = pairs else { continue };
        let (Some(o), Some(e)) = (original.get(v), edited.get(v)) else {
            return Err(PipelineError::View {
                view: v,
                message: "missing render".into(),
            });
        };
        views.push(DaiView {
            original: o.clone(),
            edited: e.clone(),
            pairs,
        });
    }
    Ok(dai(&views, &eval.gammas)?)
}
