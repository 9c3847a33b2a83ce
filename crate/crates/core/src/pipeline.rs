//! Stage orchestration: simulate, filter, invert, fuse, validate, plot.
//!
//! Each stage reads the artifacts of earlier stages from the output
//! directory and records a cumulative configuration hash in
//! `manifest.json`; a stage refuses to run on artifacts produced under a
//! different configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{section_hash, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::AcquisitionGeometry;
use crate::heightfusion::fuse_objects;
use crate::inversion::{invert_stack, InversionReport, Method, Scatterer, ScattererSet};
use crate::io;
use crate::nonlocal::{wmle_filter, FilteredStack};
use crate::plot::{plot_file, PlotKind};
use crate::raster::Raster;
use crate::simulator::{elevation_to_height, make_urban_scene, simulate_stack_with_spacing, BuildingTruth};
use crate::stack::PixelSpacing;
use crate::validation::{compare_heights, coregister, Point3, Provenance, ReferenceModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Filter,
    Invert,
    Fuse,
    Validate,
    Plot,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Filter,
        Stage::Invert,
        Stage::Fuse,
        Stage::Validate,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Filter => "filter",
            Stage::Invert => "invert",
            Stage::Fuse => "fuse",
            Stage::Validate => "validate",
            Stage::Plot => "plot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose artifacts this stage reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Simulate => &[],
            Stage::Filter => &[Stage::Simulate],
            Stage::Invert => &[Stage::Filter],
            Stage::Fuse => &[Stage::Simulate, Stage::Invert],
            Stage::Validate => &[Stage::Simulate, Stage::Invert, Stage::Fuse],
            Stage::Plot => &[Stage::Fuse, Stage::Validate],
        }
    }

    /// Files this stage produces, relative to the output directory.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Simulate => &[
                "stack.json",
                "stack.bin",
                "footprints.json",
                "footprints.bin",
                "truth_scatterers.json",
                "truth_scatterers.bin",
                "truth.json",
            ],
            Stage::Filter => &["filtered.json", "filtered.bin", "filter_stats.json", "filter_stats.bin"],
            Stage::Invert => &["scatterers.json", "scatterers.bin", "inversion_report.json"],
            Stage::Fuse => &["heights.csv", "height_raster.json", "height_raster.bin"],
            Stage::Validate => &["report.json", "histogram.csv"],
            Stage::Plot => &["histogram.svg", "heights.svg"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a comma-separated stage list (or `all`) into pipeline order.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "all" {
            stages.extend(Stage::ALL);
            continue;
        }
        stages.push(Stage::parse(item).ok_or_else(|| Error::InvalidArgument(format!("unknown stage {item:?}")))?);
    }
    if stages.is_empty() {
        return Err(Error::InvalidArgument("empty stage list".into()));
    }
    stages.sort();
    stages.dedup();
    Ok(stages)
}

/// Cumulative hash of the configuration sections a stage depends on.
pub fn stage_hash(config: &PipelineConfig, stage: Stage) -> String {
    let own = match stage {
        Stage::Simulate => section_hash(&(
            config.seed,
            &config.geometry,
            config.pixel_spacing(),
            &config.scene,
            &config.noise,
        )),
        Stage::Filter => section_hash(&config.filter),
        Stage::Invert => section_hash(&(&config.grid, &config.inversion)),
        Stage::Fuse => section_hash(&config.fusion),
        Stage::Validate => section_hash(&config.validation),
        Stage::Plot => String::new(),
    };
    let parent = match stage {
        Stage::Simulate => String::new(),
        Stage::Filter => stage_hash(config, Stage::Simulate),
        Stage::Invert => stage_hash(config, Stage::Filter),
        Stage::Fuse => stage_hash(config, Stage::Invert),
        Stage::Validate => stage_hash(config, Stage::Fuse),
        Stage::Plot => stage_hash(config, Stage::Validate),
    };
    io::sha256_hex(format!("{}:{parent}:{own}", stage.name()).as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if path.exists() {
            io::read_json(&path)
        } else {
            Ok(Self::default())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub incidence_angle_deg: f64,
    pub elevation_bounds: (f64, f64),
    pub buildings: Vec<BuildingTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub stages: Vec<(Stage, f64)>,
    pub manifest: Manifest,
}

/// Runs `stages` in pipeline order, writing artifacts under `out`. Parallel
/// stages use `config.workers` threads (0 = all cores); results do not
/// depend on the worker count.
pub fn run_pipeline(config: &PipelineConfig, stages: &[Stage], out: &Path) -> Result<RunSummary> {
    config.validate()?;
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(|| {
        std::fs::create_dir_all(out)?;
        let mut manifest = Manifest::load(out)?;
        manifest.config_hash = config.hash();
        let mut timings = Vec::new();
        for stage in ordered {
            check_dependencies(config, stage, out, &manifest)?;
            log::info!("running stage {stage}");
            let start = Instant::now();
            run_stage(config, stage, out)?;
            let seconds = start.elapsed().as_secs_f64();
            log::info!("stage {stage} finished in {seconds:.2} s");
            manifest.stages.insert(
                stage.name().into(),
                StageRecord {
                    config_hash: stage_hash(config, stage),
                    seconds,
                },
            );
            io::write_json(&out.join(MANIFEST), &manifest)?;
            timings.push((stage, seconds));
        }
        Ok(RunSummary {
            out: out.to_path_buf(),
            stages: timings,
            manifest,
        })
    })
}

fn check_dependencies(config: &PipelineConfig, stage: Stage, out: &Path, manifest: &Manifest) -> Result<()> {
    for &required in stage.requires() {
        for file in required.artifacts() {
            if !out.join(file).exists() {
                return Err(Error::MissingDependency {
                    stage: stage.name().into(),
                    required: required.name().into(),
                    detail: format!("{} not found", out.join(file).display()),
                });
            }
        }
        let expected = stage_hash(config, required);
        match manifest.stages.get(required.name()) {
            None => {
                return Err(Error::MissingDependency {
                    stage: stage.name().into(),
                    required: required.name().into(),
                    detail: "no manifest entry".into(),
                })
            }
            Some(rec) if rec.config_hash != expected => {
                return Err(Error::ConfigMismatch {
                    stage: required.name().into(),
                    expected,
                    found: rec.config_hash.clone(),
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn run_stage(config: &PipelineConfig, stage: Stage, out: &Path) -> Result<()> {
    match stage {
        Stage::Simulate => simulate(config, out),
        Stage::Filter => filter(config, out),
        Stage::Invert => invert(config, out).map(|_| ()),
        Stage::Fuse => fuse(config, out),
        Stage::Validate => validate(config, out),
        Stage::Plot => plot(out),
    }
}

fn truth_sets(scene: &crate::simulator::Scene) -> Raster<ScattererSet> {
    scene.scatterers().map(|v| {
        let mut scatterers: Vec<Scatterer> = v
            .iter()
            .map(|s| Scatterer {
                elevation: s.elevation,
                power: s.power,
            })
            .collect();
        scatterers.sort_by(|a, b| a.elevation.total_cmp(&b.elevation));
        ScattererSet {
            scatterers,
            score: 0.0,
            method: Method::None,
            converged: true,
        }
    })
}

fn simulate(config: &PipelineConfig, out: &Path) -> Result<()> {
    let geometry = config.geometry()?;
    let scene = make_urban_scene(&config.scene, config.seed)?;
    let (_, stack) = simulate_stack_with_spacing(&scene, &geometry, &config.noise, config.seed, config.pixel_spacing())?;
    io::write_stack(&out.join("stack"), &stack, Some(config.seed))?;
    let footprints = scene
        .footprints()
        .cloned()
        .unwrap_or_else(|| Raster::filled(scene.width(), scene.height(), 0));
    io::write_labels(&out.join("footprints"), &footprints)?;
    io::write_scatterers(&out.join("truth_scatterers"), &truth_sets(&scene))?;
    io::write_json(
        &out.join("truth.json"),
        &Truth {
            seed: config.seed,
            incidence_angle_deg: config.scene.incidence_angle_deg,
            elevation_bounds: scene.elevation_bounds(),
            buildings: scene.buildings().to_vec(),
        },
    )
}

fn check_geometry(found: &AcquisitionGeometry, expected: &AcquisitionGeometry) -> Result<()> {
    if found != expected {
        return Err(Error::GeometryMismatch("stack file geometry differs from the configuration".into()));
    }
    Ok(())
}

fn filter(config: &PipelineConfig, out: &Path) -> Result<()> {
    let (stack, _) = io::read_stack(&out.join("stack"))?;
    check_geometry(stack.geometry(), &config.geometry()?)?;
    let filtered = wmle_filter(&stack, &config.filter)?;
    io::write_stack(&out.join("filtered"), &filtered.stack, Some(config.seed))?;
    let names: Vec<String> = (0..filtered.variance.len()).map(|k| format!("variance_{k}")).collect();
    let mut bands: Vec<(&str, &Raster<f32>)> = vec![("enl", &filtered.enl)];
    bands.extend(names.iter().map(String::as_str).zip(filtered.variance.iter()));
    io::write_bands(&out.join("filter_stats"), &bands)
}

fn read_filtered(out: &Path) -> Result<FilteredStack> {
    let (stack, _) = io::read_stack(&out.join("filtered"))?;
    let mut bands = io::read_bands(&out.join("filter_stats"))?.into_iter();
    let enl = match bands.next() {
        Some((name, r)) if name == "enl" => r,
        _ => {
            return Err(Error::Format {
                path: out.join("filter_stats.json"),
                message: "first band must be enl".into(),
            })
        }
    };
    let variance: Vec<Raster<f32>> = bands.map(|(_, r)| r).collect();
    if variance.len() != stack.len() || !enl.same_shape(&stack.layers()[0].interferogram) {
        return Err(Error::Format {
            path: out.join("filter_stats.json"),
            message: "filter statistics do not match the filtered stack".into(),
        });
    }
    Ok(FilteredStack { stack, variance, enl })
}

fn invert(config: &PipelineConfig, out: &Path) -> Result<InversionReport> {
    let geometry = config.geometry()?;
    let filtered = read_filtered(out)?;
    check_geometry(filtered.stack.geometry(), &geometry)?;
    let grid = config.grid(&geometry)?;
    let result = invert_stack(&filtered, &geometry, &grid, &config.inversion)?;
    io::write_scatterers(&out.join("scatterers"), &result.scatterers)?;
    io::write_json(&out.join("inversion_report.json"), &result.report)?;
    Ok(result.report)
}

fn fuse(config: &PipelineConfig, out: &Path) -> Result<()> {
    let geometry = config.geometry()?;
    let grid = config.grid(&geometry)?;
    let scatterers = io::read_scatterers(&out.join("scatterers"))?;
    let footprints = io::read_labels(&out.join("footprints"))?;
    let heights = fuse_objects(&scatterers, &footprints, &config.fusion, grid.spacing())?;
    io::write_heights_csv(&out.join("heights.csv"), &heights)?;
    let inc = config.fusion.incidence_angle_deg;
    let top = scatterers.map(|s| {
        s.highest()
            .map_or(f32::NAN, |s| elevation_to_height(s.elevation, inc) as f32)
    });
    let order = scatterers.map(|s| s.order() as f32);
    io::write_bands(&out.join("height_raster"), &[("top_height", &top), ("order", &order)])
}

/// `(col * range spacing, row * azimuth spacing, height)` of every scatterer.
pub fn point_cloud(sets: &Raster<ScattererSet>, spacing: PixelSpacing, incidence_deg: f64) -> Vec<Point3> {
    let mut points = Vec::new();
    for row in 0..sets.height() {
        for col in 0..sets.width() {
            for s in &sets.get(row, col).scatterers {
                points.push(Point3::new(
                    col as f64 * spacing.range,
                    row as f64 * spacing.azimuth,
                    elevation_to_height(s.elevation, incidence_deg),
                ));
            }
        }
    }
    points
}

fn validate(config: &PipelineConfig, out: &Path) -> Result<()> {
    let heights = io::read_heights_csv(&out.join("heights.csv"))?;
    let truth: Truth = io::read_json(&out.join("truth.json"))?;
    let reference = ReferenceModel::new(
        truth.buildings.iter().map(|b| (b.id, b.height)).collect(),
        None,
        Provenance::SimulatorTruth,
    )?;
    let mut report = compare_heights(&heights, &reference, &config.validation.comparison())?;
    if config.validation.coregister {
        let spacing = config.pixel_spacing();
        let inc = truth.incidence_angle_deg;
        let estimated = point_cloud(&io::read_scatterers(&out.join("scatterers"))?, spacing, inc);
        let reference = point_cloud(&io::read_scatterers(&out.join("truth_scatterers"))?, spacing, inc);
        match coregister(&estimated, &reference, &config.validation.registration) {
            Ok(reg) => report.registration = Some(reg),
            Err(e) => log::warn!("co-registration skipped: {e}"),
        }
    }
    io::write_json(&out.join("report.json"), &report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lower", "upper", "count"]).map_err(|e| Error::Internal(e.to_string()))?;
    for b in &report.histogram {
        w.write_record([b.lower.to_string(), b.upper.to_string(), b.count.to_string()])
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    io::write_atomic(&out.join("histogram.csv"), &bytes)?;
    log::info!(
        "{} objects compared: {:.1}% within 1 m, {:.1}% within 2 m, std {:.2} m",
        report.compared,
        100.0 * report.fraction_within_1m,
        100.0 * report.fraction_within_2m,
        report.std
    );
    Ok(())
}

fn plot(out: &Path) -> Result<()> {
    plot_file(&out.join("report.json"), PlotKind::Histogram, &out.join("histogram.svg"))?;
    plot_file(&out.join("height_raster.json"), PlotKind::HeightRaster, &out.join("heights.svg"))
}
