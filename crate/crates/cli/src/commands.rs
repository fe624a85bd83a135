use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use delinkit_core::classifier::{predict_table, train_forest, ForestParams};
use delinkit_core::delineation::{build_graph, CostParams};
use delinkit_core::evaluation::{
    correctness_report, overlay_confusion, run_experiment, Alteration, ClickFile, Dimension,
    ExperimentConfig, ProjectSpec,
};
use delinkit_core::features::{auto_label, build_feature_table, likelihood_map, LabelSummary};
use delinkit_core::formats::{
    lines_to_string, meta_path, model_to_string, read_feature_table, read_lines, read_model,
    read_raster, table_to_string, write_files_atomic, write_raster, HeightEncoding, LineFeature,
    RasterEncoding,
};
use delinkit_core::geo::{resample_nearest, AffineGeoref, Point2, Polyline};
use delinkit_core::segmentation::{extract_network, imported_likelihoods, slic_segment, LineNetwork, SegParams};
use delinkit_core::synthetic::{generate_scene, SceneParams};
use delinkit_service::{Project, ProjectRequest, Store};

use crate::{Cli, Command};

/// Caps rayon's pool from `DELINKIT_THREADS` (0 or unset = automatic).
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("DELINKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("DELINKIT_THREADS must be a non-negative integer, got {v:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Segment(a) => {
            let rgb = read_raster(&a.rgb)?;
            let p = SegParams {
                scale: a.scale,
                compactness: a.compactness,
                iterations: a.iterations,
                simplify_tol: a.simplify_tol,
            };
            let labels = slic_segment(&rgb, &p, seed)?;
            let net = extract_network(&labels, rgb.georef(), p.simplify_tol_for(rgb.georef().gsd()));
            log::info!("{} regions, {} nodes, {} edges", labels.region_count(), net.node_count(), net.edge_count());
            write(&a.out, lines_to_string(&net.to_features(None)))
        }
        Command::Network(a) => {
            let lines = read_lines(&a.lines)?;
            let net = LineNetwork::from_lines(&lines)?;
            let lk = imported_likelihoods(&lines)?;
            eprintln!("{} nodes, {} edges", net.node_count(), net.edge_count());
            write(&a.out, lines_to_string(&net.to_features(lk.as_ref())))
        }
        Command::Features(a) => {
            let net = load_network(&a.network)?;
            let rgb = read_raster(&a.rgb)?;
            let dsm = a.dsm.as_deref().map(read_raster).transpose()?;
            let table = build_feature_table(&net, &rgb, dsm.as_ref(), a.half_width)?;
            write(&a.out, table_to_string(&table))
        }
        Command::Autolabel(a) => {
            let table = read_feature_table(&a.table)?;
            let net = load_network(&a.network)?;
            let reference = read_lines(&a.reference)?.polylines();
            let rgb = read_raster(&a.rgb)?;
            let labeled = auto_label(&table, &net, &reference, a.radius, a.coverage, rgb.georef(), rgb.rows(), rgb.cols())?;
            eprintln!("{}", LabelSummary::of(&labeled));
            write(&a.out, table_to_string(&labeled))
        }
        Command::Train(a) => {
            let table = read_feature_table(&a.table)?;
            let params = ForestParams {
                n_trees: a.trees,
                max_depth: a.max_depth,
                min_samples_leaf: a.min_samples_leaf,
                features_per_split: a.features_per_split,
                bootstrap: !a.no_bootstrap,
                allow_single_class: a.allow_single_class,
            };
            let model = train_forest(&table, &params, seed)?;
            write(&a.out, model_to_string(&model))
        }
        Command::Predict(a) => {
            let model = read_model(&a.model)?;
            let table = read_feature_table(&a.table)?;
            let net = load_network(&a.network)?;
            let predicted = predict_table(&model, &table)?;
            let lk = likelihood_map(&predicted);
            if let Some(missing) = net.edges().keys().find(|id| !lk.contains_key(id)) {
                bail!("table has no record for network edge {missing}");
            }
            let network = lines_to_string(&net.to_features(Some(&lk)));
            match &a.table_out {
                Some(t) => {
                    let table = table_to_string(&predicted);
                    write_files_atomic(&[(a.out.as_path(), network.as_bytes()), (t.as_path(), table.as_bytes())])?;
                    Ok(())
                }
                None => write(&a.out, network),
            }
        }
        Command::Suggest(a) => {
            let lines = read_lines(&a.network)?;
            let net = LineNetwork::from_lines(&lines)?;
            let lk = imported_likelihoods(&lines)?.unwrap_or_default();
            let graph = build_graph(&net, &lk, &CostParams { epsilon: a.epsilon })?;
            let clicks = ClickFile::read(&a.clicks)?;
            let mut out = Vec::new();
            for (i, o) in clicks.objects.iter().enumerate() {
                let nodes: Result<Vec<u64>, _> = o
                    .clicks
                    .iter()
                    .map(|c| graph.snap_node(Point2::new(c[0], c[1]), a.snap_tolerance))
                    .collect();
                match nodes.and_then(|n| graph.connect_sequence(&n, o.close)) {
                    Ok(path) => {
                        let mut f = LineFeature::new(path.polyline);
                        f.properties.id = Some(o.reference_id.unwrap_or(i as i64));
                        f.properties.kind = Some("suggestion".into());
                        out.push(f);
                    }
                    Err(e) => log::warn!("object {i}: {e}"),
                }
            }
            eprintln!("delineated {} of {} objects", out.len(), clicks.objects.len());
            write(&a.out, lines_to_string(&out))
        }
        Command::Evaluate(a) => {
            let delineation = read_lines(&a.delineation)?.polylines();
            let reference = read_lines(&a.reference)?.polylines();
            let (g, rows, cols) = match (&a.rgb, a.gsd) {
                (Some(path), _) => {
                    let r = read_raster(path)?;
                    (*r.georef(), r.rows(), r.cols())
                }
                (None, Some(gsd)) => {
                    let pad = a.radii.iter().copied().fold(0.0, f64::max) + gsd;
                    grid_covering(delineation.iter().chain(&reference), gsd, pad)?
                }
                (None, None) => unreachable!("clap requires --gsd or --rgb"),
            };
            let mut reports = Vec::new();
            for &r in &a.radii {
                let c = overlay_confusion(&delineation, &reference, r, &g, rows, cols)?;
                reports.push(correctness_report(c, r, g.gsd())?);
            }
            let mut text = serde_json::to_string_pretty(&reports)?;
            text.push('\n');
            print!("{text}");
            match &a.out {
                Some(p) => write(p, text),
                None => Ok(()),
            }
        }
        Command::Resample(a) => {
            let r = read_raster(&a.input)?;
            let out = resample_nearest(&r, a.factor)?;
            let enc = if meta_path(&a.input).exists() {
                RasterEncoding::Height(HeightEncoding::fit(&out))
            } else {
                RasterEncoding::Byte
            };
            write_raster(&out, &a.out, enc)?;
            Ok(())
        }
        Command::Experiment(a) => experiment(a, seed),
        Command::Synth(a) => {
            let scene = generate_scene(&SceneParams {
                rows: a.size,
                cols: a.size,
                seed,
                ..Default::default()
            })?;
            let spec = scene.write(&a.out_dir, &a.name)?;
            let config = ExperimentConfig {
                test: spec,
                train: None,
                settings: Default::default(),
            };
            let path = a.out_dir.join(format!("{}_experiment.json", a.name));
            write(&path, format!("{}\n", serde_json::to_string_pretty(&config)?))?;
            eprintln!("wrote {} buildings; experiment file {}", scene.buildings.len(), path.display());
            Ok(())
        }
        Command::Serve(a) => {
            let store = Arc::new(Store::new());
            for path in &a.project {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let req: ProjectRequest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let p = store.insert(Project::load(store.next_id(), &req)?);
                eprintln!("project {} loaded from {}", p.id, path.display());
            }
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(delinkit_service::serve(a.addr, store))?;
            Ok(())
        }
    }
}

fn experiment(a: crate::ExperimentArgs, seed: u64) -> Result<()> {
    let dim: Dimension = a.dim.parse().map_err(anyhow::Error::msg)?;
    let text = std::fs::read_to_string(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.file.display()))?;
    config.settings.seed = seed;
    let base = parent(&a.file);
    let inputs = config.load(&base)?;

    let alteration = match dim {
        Dimension::Resolution => Alteration::Resolution {
            factor: a.factor.context("--dim resolution needs --factor")?,
        },
        Dimension::Input => Alteration::Input {
            with_dsm: match a.dsm.as_deref() {
                Some("yes") => true,
                Some("no") => false,
                None => !(inputs.settings.use_dsm && inputs.test.dsm.is_some()),
                Some(other) => bail!("--dsm must be yes or no, got {other:?}"),
            },
        },
        Dimension::Location => {
            let path = a.train_project.as_ref().context("--dim location needs --train-project")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec: ProjectSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            Alteration::Location {
                train: Box::new(spec.load(&parent(path))?),
            }
        }
        Dimension::Parameters => {
            if a.scales.is_empty() {
                bail!("--dim parameters needs --scales");
            }
            Alteration::Parameters { scales: a.scales.clone() }
        }
        Dimension::Application => {
            let reference = a.reference.as_ref().context("--dim application needs --reference")?;
            let clicks = a.clicks.as_ref().context("--dim application needs --clicks")?;
            Alteration::Application {
                name: a.name.clone().unwrap_or_else(|| {
                    reference.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
                }),
                reference: read_lines(reference)?.features,
                clicks: ClickFile::read(clicks)?,
            }
        }
    };
    let report = run_experiment(dim, &inputs, &alteration)?;
    let table = report.to_table();
    print!("{table}");
    match &a.json {
        Some(j) => write_files_atomic(&[(a.out.as_path(), table.as_bytes()), (j.as_path(), report.to_json().as_bytes())])?,
        None => write(&a.out, table)?,
    }
    Ok(())
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write(path: &Path, text: String) -> Result<()> {
    delinkit_core::formats::write_file_atomic(path, text.as_bytes())?;
    Ok(())
}

fn load_network(path: &Path) -> Result<LineNetwork> {
    Ok(LineNetwork::from_lines(&read_lines(path)?)?)
}

/// North-up grid aligned to multiples of `gsd` covering every vertex with
/// `pad` meters to spare.
fn grid_covering<'a>(
    lines: impl Iterator<Item = &'a Polyline>,
    gsd: f64,
    pad: f64,
) -> Result<(AffineGeoref, usize, usize)> {
    if !(gsd > 0.0 && gsd.is_finite()) {
        bail!("--gsd must be positive, got {gsd}");
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in lines.flat_map(|l| l.vertices()) {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if !x0.is_finite() {
        bail!("no line geometry to evaluate");
    }
    let left = ((x0 - pad) / gsd).floor() * gsd;
    let top = ((y1 + pad) / gsd).ceil() * gsd;
    let cols = ((x1 + pad - left) / gsd).ceil() as usize;
    let rows = ((top - (y0 - pad)) / gsd).ceil() as usize;
    if rows.saturating_mul(cols) > 400_000_000 {
        bail!("evaluation grid of {rows}x{cols} pixels is too large; raise --gsd");
    }
    let g = AffineGeoref::north_up(left + gsd / 2.0, top - gsd / 2.0, gsd)?;
    Ok((g, rows, cols))
}
