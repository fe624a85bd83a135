//! Robustness experiments: the full pipeline run per variant against the
//! same scripted clicks, with exactly one stage input altered.
//!
//! Every variant is evaluated on the original full-resolution test grid so
//! that buffer radii mean the same thing across resolutions. Completeness
//! categories come from an automatic proxy (bidirectional buffer coverage),
//! labeled as such in every report. Reports contain no wall-clock values and
//! are byte-identical for identical inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    completeness_tally, correctness_report, overlay_confusion, session_stats, CompletenessPercent,
    CompletenessTally, CorrectnessReport, EvaluationError, SessionStats,
};
use crate::classifier::{predict_table, train_forest, ClassifierError, ForestParams};
use crate::delineation::{build_graph, CostParams, DelineationError, PathResult};
use crate::features::{
    auto_label, build_feature_table, likelihood_map, FeatureError, LabelSummary, DEFAULT_COVERAGE,
    DEFAULT_HALF_WIDTH, DEFAULT_LABEL_RADIUS,
};
use crate::formats::{read_lines, read_raster, FormatError, LineFeature};
use crate::geo::{buffer_mask, rasterize_lines, resample_nearest, GeoError, Point2, Polyline, RasterGrid};
use crate::segmentation::{extract_network, slic_segment, LineNetwork, SegParams, SegmentationError};
use crate::session::{EventKind, SessionLog};

pub const PROXY_METHOD: &str = "automatic proxy: bidirectional buffer coverage";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Delineation(#[from] DelineationError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Resolution,
    Input,
    Location,
    Parameters,
    Application,
}

impl Dimension {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dimension::Resolution => "resolution",
            Dimension::Input => "input",
            Dimension::Location => "location",
            Dimension::Parameters => "parameters",
            Dimension::Application => "application",
        }
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "resolution" => Ok(Dimension::Resolution),
            "input" => Ok(Dimension::Input),
            "location" => Ok(Dimension::Location),
            "parameters" => Ok(Dimension::Parameters),
            "application" => Ok(Dimension::Application),
            other => Err(format!(
                "unknown dimension {other:?} (expected resolution, input, location, parameters or application)"
            )),
        }
    }
}

/// One scripted object: clicks to snap and connect, as an operator would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickObject {
    #[serde(default)]
    pub reference_id: Option<i64>,
    pub clicks: Vec<[f64; 2]>,
    #[serde(default)]
    pub close: bool,
    /// Optional per-click timestamps for interaction statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ms: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClickFile {
    pub objects: Vec<ClickObject>,
}

impl ClickFile {
    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let file: ClickFile = serde_json::from_str(&text)
            .map_err(|e| FormatError::Parse { row: e.line(), detail: e.to_string() })?;
        for (i, o) in file.objects.iter().enumerate() {
            if o.clicks.iter().flatten().any(|v| !v.is_finite()) {
                return Err(FormatError::Parse {
                    row: 0,
                    detail: format!("object {i}: non-finite click coordinate"),
                });
            }
            if let Some(t) = &o.t_ms {
                if t.len() != o.clicks.len() {
                    return Err(FormatError::Parse {
                        row: 0,
                        detail: format!("object {i}: t_ms length differs from clicks"),
                    });
                }
            }
        }
        Ok(file)
    }
}

/// In-memory project: rasters, reference objects and scripted clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectData {
    pub name: String,
    pub rgb: RasterGrid,
    pub dsm: Option<RasterGrid>,
    pub reference: Vec<LineFeature>,
    pub clicks: ClickFile,
}

impl ProjectData {
    fn reference_lines(&self) -> Vec<Polyline> {
        self.reference.iter().map(|f| f.polyline.clone()).collect()
    }
}

/// On-disk locations of a project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub rgb: PathBuf,
    #[serde(default)]
    pub dsm: Option<PathBuf>,
    pub reference: PathBuf,
    #[serde(default)]
    pub clicks: Option<PathBuf>,
}

impl ProjectSpec {
    /// Relative paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<ProjectData, FormatError> {
        let at = |p: &Path| base.join(p);
        let rgb = read_raster(&at(&self.rgb))?;
        let dsm = self.dsm.as_ref().map(|p| read_raster(&at(p))).transpose()?;
        let reference = read_lines(&at(&self.reference))?.features;
        let clicks = match &self.clicks {
            Some(p) => ClickFile::read(&at(p))?,
            None => ClickFile::default(),
        };
        let name = self.name.clone().unwrap_or_else(|| {
            self.rgb
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        Ok(ProjectData {
            name,
            rgb,
            dsm,
            reference,
            clicks,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub seed: u64,
    pub segmentation: SegParams,
    pub forest: ForestParams,
    pub cost: CostParams,
    pub half_width: f64,
    pub label_radius: f64,
    pub coverage_threshold: f64,
    pub snap_tolerance: f64,
    /// Evaluation buffer radii; the first is the primary one.
    pub radii: Vec<f64>,
    pub use_dsm: bool,
    /// Coverage both ways for the automatic "no edit" category.
    pub proxy_coverage: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            segmentation: SegParams::default(),
            forest: ForestParams::default(),
            cost: CostParams::default(),
            half_width: DEFAULT_HALF_WIDTH,
            label_radius: DEFAULT_LABEL_RADIUS,
            coverage_threshold: DEFAULT_COVERAGE,
            snap_tolerance: crate::delineation::DEFAULT_SNAP_TOLERANCE,
            radii: vec![0.30],
            use_dsm: true,
            proxy_coverage: 0.95,
        }
    }
}

impl PipelineSettings {
    fn validate(&self) -> Result<(), ExperimentError> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(ExperimentError::Config("radii must be a non-empty list of positive values".into()));
        }
        if !(0.0..=1.0).contains(&self.proxy_coverage) {
            return Err(ExperimentError::Config("proxy_coverage must lie in [0, 1]".into()));
        }
        self.segmentation.validate()?;
        Ok(())
    }
}

/// Experiment description as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub test: ProjectSpec,
    #[serde(default)]
    pub train: Option<ProjectSpec>,
    #[serde(default)]
    pub settings: PipelineSettings,
}

impl ExperimentConfig {
    pub fn load(&self, base: &Path) -> Result<ExperimentInputs, FormatError> {
        Ok(ExperimentInputs {
            test: self.test.load(base)?,
            train: self.train.as_ref().map(|t| t.load(base)).transpose()?,
            settings: self.settings.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentInputs {
    pub test: ProjectData,
    /// Training project; `None` trains on the test project itself.
    pub train: Option<ProjectData>,
    pub settings: PipelineSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Alteration {
    /// Nearest-neighbour downsampling of every input raster.
    Resolution { factor: usize },
    /// Train and predict with or without the DSM gradient feature.
    Input { with_dsm: bool },
    /// Train on a different project.
    Location { train: Box<ProjectData> },
    /// Segmentation-scale grid.
    Parameters { scales: Vec<f64> },
    /// Different reference object set (and its clicks) for labels and
    /// evaluation.
    Application {
        name: String,
        reference: Vec<LineFeature>,
        clicks: ClickFile,
    },
}

impl Alteration {
    pub fn dimension(&self) -> Dimension {
        match self {
            Alteration::Resolution { .. } => Dimension::Resolution,
            Alteration::Input { .. } => Dimension::Input,
            Alteration::Location { .. } => Dimension::Location,
            Alteration::Parameters { .. } => Dimension::Parameters,
            Alteration::Application { .. } => Dimension::Application,
        }
    }

    fn describe(&self) -> Value {
        match self {
            Alteration::Resolution { factor } => json!({ "factor": factor }),
            Alteration::Input { with_dsm } => json!({ "with_dsm": with_dsm }),
            Alteration::Location { train } => json!({ "train": train.name }),
            Alteration::Parameters { scales } => json!({ "scales": scales }),
            Alteration::Application { name, .. } => json!({ "reference": name }),
        }
    }
}

/// What a single variant runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub label: String,
    pub factor: usize,
    pub use_dsm: bool,
    pub seg_scale: f64,
    pub transferred: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectCategory {
    NoEdit,
    Edit,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Only objects in the "no edit" category.
    NoEdit,
    /// Every delineated object.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessEntry {
    pub radius: f64,
    pub scope: Scope,
    pub report: Option<CorrectnessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub index: usize,
    pub reference_id: Option<i64>,
    pub category: ObjectCategory,
    /// Correctness per evaluation radius against the object's own reference.
    pub correctness: Vec<Option<f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub label: String,
    pub extent: String,
    pub rows: usize,
    pub cols: usize,
    pub gsd_m: f64,
    pub dsm: bool,
    pub transferred: bool,
    pub seg_scale: f64,
    pub network_edges: usize,
    pub training_lines: usize,
    pub training_boundary: usize,
    pub feature_names: Vec<String>,
    pub likelihood_min: f64,
    pub likelihood_max: f64,
    pub likelihood_mean: f64,
    pub correctness: Vec<CorrectnessEntry>,
    pub completeness: CompletenessTally,
    pub completeness_percent: Option<CompletenessPercent>,
    pub completeness_method: String,
    pub interaction: SessionStats,
    pub objects: Vec<ObjectResult>,
}

impl VariantReport {
    pub fn correctness_at(&self, radius: f64, scope: Scope) -> Option<&CorrectnessReport> {
        self.correctness
            .iter()
            .find(|e| e.radius == radius && e.scope == scope)
            .and_then(|e| e.report.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dimension: Dimension,
    pub config: Value,
    pub variants: Vec<VariantReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned text table: one row per variant with extent, GSD, DSM use,
    /// transfer, commission (no-edit scope at the primary radius), the three
    /// completeness categories, and correctness of all delineations per radius.
    pub fn to_table(&self) -> String {
        let radii: Vec<f64> = self
            .variants
            .first()
            .map(|v| {
                let mut r: Vec<f64> = v.correctness.iter().map(|e| e.radius).collect();
                r.dedup();
                r
            })
            .unwrap_or_default();
        let mut header: Vec<String> = [
            "label",
            "extent",
            "GSD [cm]",
            "DSM",
            "transferred",
            "commission",
            "no edit",
            "edit",
            "manual",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(radii.iter().map(|r| format!("correctness@{r:.2}m")));

        let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
        let cat = |count: u64, pct: Option<f64>| match pct {
            Some(p) => format!("{count} ({p:.1}%)"),
            None => count.to_string(),
        };
        let rows: Vec<Vec<String>> = self
            .variants
            .iter()
            .map(|v| {
                let primary = radii.first().copied().unwrap_or(0.0);
                let commission = v
                    .correctness_at(primary, Scope::NoEdit)
                    .map_or("-".to_string(), |r| format!("{:.1}", r.commission));
                let pct = v.completeness_percent;
                let mut row = vec![
                    v.label.clone(),
                    v.extent.clone(),
                    format!("{:.1}", v.gsd_m * 100.0),
                    yes_no(v.dsm),
                    yes_no(v.transferred),
                    commission,
                    cat(v.completeness.no_edit, pct.map(|p| p.no_edit)),
                    cat(v.completeness.edit, pct.map(|p| p.edit)),
                    cat(v.completeness.manual, pct.map(|p| p.manual)),
                ];
                row.extend(radii.iter().map(|r| {
                    v.correctness_at(*r, Scope::All)
                        .map_or("-".to_string(), |c| format!("{:.1}", c.correctness))
                }));
                row
            })
            .collect();

        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i == 0 {
                    let _ = write!(s, "{:<w$}", c, w = widths[i]);
                } else {
                    let _ = write!(s, "{:>w$}", c, w = widths[i]);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = format!("dimension: {}\n", self.dimension.as_str());
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "commission: no-edit objects at {:.2} m; completeness: {PROXY_METHOD}",
            radii.first().copied().unwrap_or(0.0)
        );
        out
    }
}

/// Artifacts of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub network: LineNetwork,
    pub likelihoods: BTreeMap<u64, f64>,
    pub feature_names: Vec<String>,
    pub training: LabelSummary,
    /// Per click object: the suggested path, or why none was produced.
    pub delineations: Vec<Result<PathResult, String>>,
}

fn prepared(data: &ProjectData, factor: usize, use_dsm: bool) -> Result<(RasterGrid, Option<RasterGrid>), ExperimentError> {
    let dsm = match (&data.dsm, use_dsm) {
        (Some(d), true) => Some(d),
        (None, true) => {
            return Err(ExperimentError::Config(format!("project {} has no DSM", data.name)))
        }
        (_, false) => None,
    };
    let rgb = resample_nearest(&data.rgb, factor)?;
    let dsm = dsm.map(|d| resample_nearest(d, factor)).transpose()?;
    Ok((rgb, dsm))
}

fn segment(rgb: &RasterGrid, settings: &PipelineSettings, scale: f64) -> Result<LineNetwork, ExperimentError> {
    let seg = SegParams {
        scale,
        ..settings.segmentation.clone()
    };
    let labels = slic_segment(rgb, &seg, settings.seed)?;
    let tol = seg.simplify_tol_for(rgb.georef().gsd());
    Ok(extract_network(&labels, rgb.georef(), tol))
}

/// Segment → features → auto-label → train → predict → scripted suggestions.
pub fn run_pipeline(
    test: &ProjectData,
    train: Option<&ProjectData>,
    settings: &PipelineSettings,
    variant: &VariantSpec,
) -> Result<PipelineOutput, ExperimentError> {
    let (rgb, dsm) = prepared(test, variant.factor, variant.use_dsm)?;
    let network = segment(&rgb, settings, variant.seg_scale)?;
    let table = build_feature_table(&network, &rgb, dsm.as_ref(), settings.half_width)?;

    let labeled = match train {
        None => {
            let refs = test.reference_lines();
            auto_label(
                &table,
                &network,
                &refs,
                settings.label_radius,
                settings.coverage_threshold,
                rgb.georef(),
                rgb.rows(),
                rgb.cols(),
            )?
        }
        Some(tr) => {
            let (trgb, tdsm) = prepared(tr, variant.factor, variant.use_dsm)?;
            let tnet = segment(&trgb, settings, variant.seg_scale)?;
            let ttable = build_feature_table(&tnet, &trgb, tdsm.as_ref(), settings.half_width)?;
            auto_label(
                &ttable,
                &tnet,
                &tr.reference_lines(),
                settings.label_radius,
                settings.coverage_threshold,
                trgb.georef(),
                trgb.rows(),
                trgb.cols(),
            )?
        }
    };
    let model = train_forest(&labeled, &settings.forest, settings.seed)?;
    let predicted = predict_table(&model, &table)?;
    let likelihoods = likelihood_map(&predicted);
    let graph = build_graph(&network, &likelihoods, &settings.cost)?;

    let delineations = test
        .clicks
        .objects
        .iter()
        .map(|o| {
            let mut nodes: Vec<u64> = Vec::with_capacity(o.clicks.len());
            for (i, c) in o.clicks.iter().enumerate() {
                let n = graph
                    .snap_node(Point2::new(c[0], c[1]), settings.snap_tolerance)
                    .map_err(|e| format!("click {i}: {e}"))?;
                if nodes.last() != Some(&n) {
                    nodes.push(n);
                }
            }
            if o.close && nodes.len() > 1 && nodes.first() == nodes.last() {
                nodes.pop();
            }
            graph.connect_sequence(&nodes, o.close).map_err(|e| e.to_string())
        })
        .collect();

    Ok(PipelineOutput {
        network,
        likelihoods,
        feature_names: model.feature_names.clone(),
        training: LabelSummary::of(&labeled),
        delineations,
    })
}

fn coverage(a: &[Polyline], b: &[Polyline], radius: f64, test: &RasterGrid) -> f64 {
    let g = test.georef();
    let pixels = rasterize_lines(a, g, test.rows(), test.cols());
    let total = pixels.count();
    if total == 0 {
        return 0.0;
    }
    let buffer = buffer_mask(b, radius, g, test.rows(), test.cols());
    pixels.intersection_count(&buffer) as f64 / total as f64
}

fn evaluate_variant(
    test: &ProjectData,
    settings: &PipelineSettings,
    variant: &VariantSpec,
    out: &PipelineOutput,
) -> Result<VariantReport, ExperimentError> {
    let grid = &test.rgb;
    let (g, rows, cols) = (grid.georef(), grid.rows(), grid.cols());
    let reference = test.reference_lines();
    let primary = settings.radii[0];

    let mut objects = Vec::new();
    let mut log = SessionLog::new();
    for (index, (obj, result)) in test.clicks.objects.iter().zip(&out.delineations).enumerate() {
        let t = |i: usize| obj.t_ms.as_ref().map_or(0, |t| t[i]);
        for (i, c) in obj.clicks.iter().enumerate() {
            log.record(t(i), EventKind::Click, json!({ "object": index, "point": c }));
        }
        let last_t = obj.clicks.len().checked_sub(1).map_or(0, t);
        let own_ref: Vec<Polyline> = match obj.reference_id {
            Some(id) => test
                .reference
                .iter()
                .filter(|f| f.properties.id == Some(id))
                .map(|f| f.polyline.clone())
                .collect(),
            None => reference.clone(),
        };
        let (category, correctness, failure) = match result {
            Err(reason) => (ObjectCategory::Manual, vec![None; settings.radii.len()], Some(reason.clone())),
            Ok(path) => {
                log.record(last_t, EventKind::Suggest, json!({ "object": index }));
                log.record(last_t, EventKind::Accept, json!({ "object": index }));
                let d = std::slice::from_ref(&path.polyline);
                let mut per_radius = Vec::new();
                for &r in &settings.radii {
                    let c = overlay_confusion(d, &own_ref, r, g, rows, cols)?;
                    per_radius.push(correctness_report(c, r, g.gsd()).ok().map(|c| c.correctness));
                }
                let both_ways = !own_ref.is_empty()
                    && coverage(d, &own_ref, primary, grid) >= settings.proxy_coverage
                    && coverage(&own_ref, d, primary, grid) >= settings.proxy_coverage;
                let cat = if both_ways { ObjectCategory::NoEdit } else { ObjectCategory::Edit };
                (cat, per_radius, None)
            }
        };
        objects.push(ObjectResult {
            index,
            reference_id: obj.reference_id,
            category,
            correctness,
            failure,
        });
    }

    let delineated = |only_no_edit: bool| -> Vec<Polyline> {
        out.delineations
            .iter()
            .zip(&objects)
            .filter(|(_, o)| !only_no_edit || o.category == ObjectCategory::NoEdit)
            .filter_map(|(d, _)| d.as_ref().ok().map(|p| p.polyline.clone()))
            .collect()
    };
    let mut correctness = Vec::new();
    for &r in &settings.radii {
        for scope in [Scope::NoEdit, Scope::All] {
            let lines = delineated(scope == Scope::NoEdit);
            let c = overlay_confusion(&lines, &reference, r, g, rows, cols)?;
            correctness.push(CorrectnessEntry {
                radius: r,
                scope,
                report: correctness_report(c, r, g.gsd()).ok(),
            });
        }
    }

    let count = |c: ObjectCategory| objects.iter().filter(|o| o.category == c).count() as u64;
    let completeness = CompletenessTally {
        no_edit: count(ObjectCategory::NoEdit),
        edit: count(ObjectCategory::Edit),
        manual: count(ObjectCategory::Manual),
        denominator: test.reference.len() as u64,
    };
    let lk: Vec<f64> = out.likelihoods.values().copied().collect();
    let gsd_m = g.gsd() * variant.factor as f64;
    Ok(VariantReport {
        label: variant.label.clone(),
        extent: format!(
            "{:.2} x {:.2} m",
            cols as f64 * g.gsd(),
            rows as f64 * g.gsd()
        ),
        rows: rows / variant.factor,
        cols: cols / variant.factor,
        gsd_m,
        dsm: variant.use_dsm,
        transferred: variant.transferred,
        seg_scale: variant.seg_scale,
        network_edges: out.network.edge_count(),
        training_lines: out.training.lines,
        training_boundary: out.training.boundary,
        feature_names: out.feature_names.clone(),
        likelihood_min: lk.iter().copied().fold(f64::INFINITY, f64::min),
        likelihood_max: lk.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        likelihood_mean: if lk.is_empty() { 0.0 } else { lk.iter().sum::<f64>() / lk.len() as f64 },
        correctness,
        completeness,
        completeness_percent: completeness_tally(&completeness).ok(),
        completeness_method: format!("{PROXY_METHOD} >= {:.0}% at {primary:.2} m", settings.proxy_coverage * 100.0),
        interaction: session_stats(&log),
        objects,
    })
}

/// Runs the baseline and every altered variant of one robustness dimension.
pub fn run_experiment(
    dim: Dimension,
    inputs: &ExperimentInputs,
    alteration: &Alteration,
) -> Result<ExperimentReport, ExperimentError> {
    if alteration.dimension() != dim {
        return Err(ExperimentError::Config(format!(
            "alteration for {} does not match dimension {}",
            alteration.dimension().as_str(),
            dim.as_str()
        )));
    }
    let s = &inputs.settings;
    s.validate()?;
    let baseline = VariantSpec {
        label: "baseline".into(),
        factor: 1,
        use_dsm: s.use_dsm && inputs.test.dsm.is_some(),
        seg_scale: s.segmentation.scale,
        transferred: inputs.train.is_some(),
    };

    // (variant, test project, training project)
    let mut runs: Vec<(VariantSpec, ProjectData, Option<ProjectData>)> =
        vec![(baseline.clone(), inputs.test.clone(), inputs.train.clone())];
    match alteration {
        Alteration::Resolution { factor } => {
            if *factor == 0 {
                return Err(ExperimentError::Config("resample factor must be >= 1".into()));
            }
            let gsd_cm = inputs.test.rgb.georef().gsd() * 100.0 * *factor as f64;
            runs.push((
                VariantSpec {
                    label: format!("x{factor} ({gsd_cm:.0} cm)"),
                    factor: *factor,
                    ..baseline.clone()
                },
                inputs.test.clone(),
                inputs.train.clone(),
            ));
        }
        Alteration::Input { with_dsm } => {
            if *with_dsm && inputs.test.dsm.is_none() {
                return Err(ExperimentError::Config("input alteration adds a DSM the test project lacks".into()));
            }
            runs.push((
                VariantSpec {
                    label: if *with_dsm { "with DSM" } else { "without DSM" }.into(),
                    use_dsm: *with_dsm,
                    ..baseline.clone()
                },
                inputs.test.clone(),
                inputs.train.clone(),
            ));
        }
        Alteration::Location { train } => {
            runs.push((
                VariantSpec {
                    label: format!("trained on {}", train.name),
                    transferred: true,
                    use_dsm: baseline.use_dsm && train.dsm.is_some(),
                    ..baseline.clone()
                },
                inputs.test.clone(),
                Some((**train).clone()),
            ));
        }
        Alteration::Parameters { scales } => {
            if scales.is_empty() {
                return Err(ExperimentError::Config("parameter grid is empty".into()));
            }
            for &scale in scales {
                if !(0.0..=1.0).contains(&scale) {
                    return Err(ExperimentError::Config(format!("scale {scale} outside [0, 1]")));
                }
                runs.push((
                    VariantSpec {
                        label: format!("scale {scale}"),
                        seg_scale: scale,
                        ..baseline.clone()
                    },
                    inputs.test.clone(),
                    inputs.train.clone(),
                ));
            }
        }
        Alteration::Application { name, reference, clicks } => {
            if reference.is_empty() {
                return Err(ExperimentError::Config("application reference set is empty".into()));
            }
            let test = ProjectData {
                reference: reference.clone(),
                clicks: clicks.clone(),
                ..inputs.test.clone()
            };
            runs.push((
                VariantSpec {
                    label: format!("application: {name}"),
                    ..baseline.clone()
                },
                test,
                inputs.train.clone(),
            ));
        }
    }

    let variants = runs
        .par_iter()
        .map(|(spec, test, train)| {
            let out = run_pipeline(test, train.as_ref(), s, spec)?;
            evaluate_variant(test, s, spec, &out)
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    let config = json!({
        "test": inputs.test.name,
        "train": inputs.train.as_ref().map(|t| t.name.clone()),
        "settings": s,
        "alteration": alteration.describe(),
    });
    Ok(ExperimentReport {
        dimension: dim,
        config,
        variants,
    })
}
