//! Run configuration files and lens loading.

use lensforge_core::io::{parse_prescription, standard_lens, Prescription, StandardLens};
use lensforge_core::loss::{calibrate_temperature, field_points, LossConfig, LossModel};
use lensforge_core::paraxial::focal_length;
use lensforge_core::restore::{ClassRates, Landscape, LensLandscape, RestoreConfig};
use lensforge_core::LensSystem;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::CliError;

/// Settings shared by the optimizing subcommands. Every field has a
/// default, so a config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Target focal length, mm. Defaults to the prescription's, then to
    /// the lens's own.
    pub focal_length: Option<f64>,
    /// Sampling temperature. Defaults to the value giving the starting
    /// lens a density of 0.5.
    pub temperature: Option<f64>,
    pub gamma: f64,
    pub c: f64,
    pub reservoir: usize,
    pub projection: bool,
    pub mutations: bool,
    pub field_points: usize,
    pub rays_per_point: usize,
    /// Spot weight; defaults to `1/T0`.
    pub w_spot: Option<f64>,
    pub w_throughput: f64,
    pub w_focal: f64,
    pub w_thickness: f64,
    pub rates: ClassRates,
    /// Langevin step scale of the MH baseline.
    pub eta: f64,
    /// Probability that an MH proposal is a perturbation.
    pub perturb_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            seed: 0,
            focal_length: None,
            temperature: None,
            gamma: 0.02,
            c: 2.0,
            reservoir: 5,
            projection: true,
            mutations: true,
            field_points: 4,
            rays_per_point: 64,
            w_spot: None,
            w_throughput: 1.0,
            w_focal: 1.0,
            w_thickness: 1.0,
            rates: ClassRates::default(),
            eta: 1.0,
            perturb_weight: 0.9,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// A bundled lens by name, or a prescription file.
pub fn load_lens(spec: &str) -> Result<(Prescription, LensSystem), CliError> {
    if let Some(l) = StandardLens::from_name(spec) {
        let lens = standard_lens(spec).expect("bundled name");
        return Ok((
            Prescription::from_lens(l.name(), &lens, Some(l.focal_length())),
            lens,
        ));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Input(format!(
            "{spec}: not a file and not a bundled lens ({})",
            StandardLens::ALL.map(|l| l.name()).join(", ")
        )));
    }
    parse_prescription(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Everything an optimizer run needs.
pub struct Setup {
    pub lens: LensSystem,
    pub landscape: LensLandscape,
    pub restore: RestoreConfig,
}

impl Setup {
    pub fn new(p: &Prescription, lens: LensSystem, cfg: &RunConfig) -> Result<Self, CliError> {
        let model = loss_model(p, &lens, cfg)?;
        let mut landscape = LensLandscape::new(model);
        landscape.rates = cfg.rates;
        landscape.mutation.project = cfg.projection;
        landscape.mutations = cfg.mutations;
        let initial = landscape
            .assess(&lens)
            .ok_or_else(|| CliError::Input("the starting lens has no finite loss".into()))?;
        let temperature = cfg
            .temperature
            .unwrap_or_else(|| calibrate_temperature(initial.total));
        let mut restore = RestoreConfig::new(temperature);
        restore.gamma = cfg.gamma;
        restore.c = cfg.c;
        restore.reservoir_capacity = cfg.reservoir;
        if !(temperature > 0.0) || cfg.c < 1.0 || cfg.reservoir == 0 || !(0.0..=1.0).contains(&cfg.gamma) {
            return Err(CliError::Input(
                "need temperature > 0, c >= 1, reservoir >= 1 and gamma in [0, 1]".into(),
            ));
        }
        Ok(Self {
            lens,
            landscape,
            restore,
        })
    }
}

pub fn loss_model(p: &Prescription, lens: &LensSystem, cfg: &RunConfig) -> Result<LossModel, CliError> {
    let input = |e: &dyn std::fmt::Display| CliError::Input(e.to_string());
    let f = match cfg.focal_length.or(p.focal_length) {
        Some(f) => f,
        None => focal_length(lens).ok_or_else(|| CliError::Input("the lens has no optical power".into()))?,
    };
    let mut lc = LossConfig::for_lens(lens, f).map_err(|e| input(&e))?;
    lc.field_points =
        field_points(lens, f, cfg.field_points, p.sensor_diagonal).map_err(|e| input(&e))?;
    lc.rays_per_point = cfg.rays_per_point;
    if let Some(w) = cfg.w_spot {
        lc.w_spot = w;
    }
    lc.w_throughput = cfg.w_throughput;
    lc.w_focal = cfg.w_focal;
    lc.w_thickness = cfg.w_thickness;
    LossModel::new(lc).map_err(|e| input(&e))
}
