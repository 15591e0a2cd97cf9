use std::path::Path;

use cmcloop::delaunay::DelaunayResidue;
use cmcloop::dressing::SimpleFactor;
use cmcloop::io::{complex_from_pair, matrix_from_json, FactorJson, LoopJson, Pair};
use cmcloop::potential::Potential;
use cmcloop::scalar::C;
use cmcloop::surface::Grid;
use serde::{Deserialize, Serialize};

use crate::CmdError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidueConfig {
    pub a_re: f64,
    #[serde(default)]
    pub a_im: f64,
    pub b_re: f64,
    #[serde(default)]
    pub b_im: f64,
    #[serde(default)]
    pub c: f64,
}

/// Missing `x_min`/`x_max` default to one period `[0, ρ]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    #[serde(default = "d_nx")]
    pub nx: usize,
    #[serde(default = "d_ny")]
    pub ny: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { x_min: None, x_max: None, nx: d_nx(), ny: d_ny() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "d_obj")]
    pub obj: String,
    #[serde(default = "d_csv")]
    pub csv: String,
    #[serde(default = "d_json")]
    pub json: String,
    #[serde(default = "d_tau")]
    pub tau_csv: String,
    #[serde(default = "d_ends")]
    pub ends_csv: String,
    #[serde(default = "d_conv")]
    pub convergence_csv: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { obj: d_obj(), csv: d_csv(), json: d_json(), tau_csv: d_tau(), ends_csv: d_ends(), convergence_csv: d_conv() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed shortfall of fitted decay slopes below the predicted floor.
    #[serde(default = "d_slope")]
    pub slope_margin: f64,
    /// Largest deviation allowed at the deepest window.
    #[serde(default = "d_deepest")]
    pub deepest_window: f64,
    #[serde(default = "d_growth")]
    pub growth_margin: f64,
    #[serde(default = "d_unitarity")]
    pub unitarity: f64,
    #[serde(default = "d_extraction")]
    pub extraction: f64,
    /// Normals must be unit to this.
    #[serde(default = "d_normal")]
    pub normal: f64,
    /// Bound on the frame relation residual at sampled vertices.
    #[serde(default = "d_conformality")]
    pub conformality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            slope_margin: d_slope(),
            deepest_window: d_deepest(),
            growth_margin: d_growth(),
            unitarity: d_unitarity(),
            extraction: d_extraction(),
            normal: d_normal(),
            conformality: d_conformality(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "d_windows")]
    pub windows: usize,
    #[serde(default = "d_wnx")]
    pub window_nx: usize,
    #[serde(default = "d_wny")]
    pub window_ny: usize,
    #[serde(default)]
    pub x_top: f64,
    #[serde(default = "d_order")]
    pub zap_order: usize,
    /// Order `n` of the perturbation; the lowest perturbing power when absent.
    pub n: Option<usize>,
    #[serde(default = "d_zmin")]
    pub z_min: f64,
    #[serde(default = "d_zmax")]
    pub z_max: f64,
    #[serde(default = "d_zpoints")]
    pub z_points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            windows: d_windows(),
            window_nx: d_wnx(),
            window_ny: d_wny(),
            x_top: 0.0,
            zap_order: d_order(),
            n: None,
            z_min: d_zmin(),
            z_max: d_zmax(),
            z_points: d_zpoints(),
        }
    }
}

/// Forward-built `C₊ = g₁⋯g_k` on `C_r`, then split again.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    pub r: f64,
    #[serde(default = "d_ext_samples")]
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub residue: ResidueConfig,
    #[serde(default = "d_r")]
    pub r: f64,
    #[serde(default = "d_samples")]
    pub samples: usize,
    /// `(k, loop)`: `ξ_k(λ) z^k dz` added to `A dz/z`.
    #[serde(default)]
    pub perturbation: Vec<(usize, LoopJson)>,
    #[serde(default = "d_zradius")]
    pub z_radius: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "d_lsym")]
    pub lambda_sym: Pair,
    #[serde(rename = "H", default = "d_h")]
    pub h: f64,
    #[serde(default)]
    pub factors: Vec<FactorJson>,
    #[serde(default)]
    pub extraction: Option<ExtractionConfig>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn d_nx() -> usize {
    64
}
fn d_ny() -> usize {
    48
}
fn d_obj() -> String {
    "mesh.obj".into()
}
fn d_csv() -> String {
    "mesh.csv".into()
}
fn d_json() -> String {
    "report.json".into()
}
fn d_tau() -> String {
    "tau.csv".into()
}
fn d_ends() -> String {
    "ends.csv".into()
}
fn d_conv() -> String {
    "convergence.csv".into()
}
fn d_slope() -> f64 {
    0.1
}
fn d_deepest() -> f64 {
    1e-3
}
fn d_growth() -> f64 {
    0.05
}
fn d_unitarity() -> f64 {
    1e-9
}
fn d_extraction() -> f64 {
    1e-7
}
fn d_normal() -> f64 {
    1e-9
}
fn d_conformality() -> f64 {
    1e-6
}
fn d_windows() -> usize {
    10
}
fn d_wnx() -> usize {
    8
}
fn d_wny() -> usize {
    16
}
fn d_order() -> usize {
    32
}
fn d_zmin() -> f64 {
    1e-4
}
fn d_zmax() -> f64 {
    1e-1
}
fn d_zpoints() -> usize {
    10
}
fn d_ext_samples() -> usize {
    512
}
fn d_r() -> f64 {
    0.5
}
fn d_samples() -> usize {
    256
}
fn d_zradius() -> f64 {
    1e3
}
fn d_lsym() -> Pair {
    [1.0, 0.0]
}
fn d_h() -> f64 {
    1.0
}

fn bad(msg: impl Into<String>) -> CmdError {
    CmdError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CmdError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CmdError> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(bad(format!("r = {} outside (0, 1]", self.r)));
        }
        if !self.samples.is_power_of_two() || self.samples < 16 {
            return Err(bad("samples must be a power of two, at least 16"));
        }
        if !(self.h.is_finite() && self.h != 0.0) {
            return Err(bad("H must be finite and nonzero"));
        }
        let l = complex_from_pair::<f64>(self.lambda_sym);
        if (l.norm() - 1.0).abs() > 1e-12 {
            return Err(bad("lambda_sym must lie on the unit circle"));
        }
        if self.grid.nx < 2 || self.grid.ny < 3 {
            return Err(bad("grid needs nx ≥ 2 and ny ≥ 3"));
        }
        if let (Some(a), Some(b)) = (self.grid.x_min, self.grid.x_max) {
            if !(a < b) {
                return Err(bad("grid x_min must be below x_max"));
            }
        }
        let v = &self.verify;
        if !(v.z_min > 0.0 && v.z_min < v.z_max && v.z_points >= 2) {
            return Err(bad("verify needs 0 < z_min < z_max and z_points ≥ 2"));
        }
        if v.windows == 0 || v.window_nx == 0 || v.window_ny < 3 {
            return Err(bad("verify needs windows ≥ 1, window_nx ≥ 1, window_ny ≥ 3"));
        }
        if let Some(e) = &self.extraction {
            if !(e.r > 0.0 && e.r < 1.0) || !e.samples.is_power_of_two() {
                return Err(bad("extraction needs 0 < r < 1 and a power-of-two sample count"));
            }
        }
        self.residue()?;
        Ok(())
    }

    pub fn residue(&self) -> Result<DelaunayResidue<f64>, CmdError> {
        let r = &self.residue;
        DelaunayResidue::new(C::new(r.a_re, r.a_im), C::new(r.b_re, r.b_im), r.c).map_err(|e| bad(e.to_string()))
    }

    pub fn potential(&self) -> Result<Potential<f64>, CmdError> {
        let terms = self.perturbation.iter().map(|(k, l)| (*k, l.to_loop())).collect();
        Potential::new(self.residue()?, terms, self.z_radius).map_err(|e| bad(e.to_string()))
    }

    pub fn lambda_sym(&self) -> C<f64> {
        complex_from_pair(self.lambda_sym)
    }

    /// The grid, with a missing `x` range filled in from the period.
    pub fn grid(&self, rho: f64) -> Result<Grid<f64>, CmdError> {
        let g = &self.grid;
        Grid::new(g.x_min.unwrap_or(0.0), g.x_max.unwrap_or(rho), g.nx, g.ny).map_err(|e| bad(e.to_string()))
    }

    /// Order `n` of the perturbation.
    pub fn order_n(&self) -> usize {
        self.verify.n.unwrap_or_else(|| self.perturbation.iter().map(|t| t.0).min().unwrap_or(0))
    }

    /// Scenario factors; the unitary prefactor is the identity when absent.
    pub fn factors(&self) -> Result<Vec<SimpleFactor<f64>>, CmdError> {
        self.factors
            .iter()
            .map(|f| {
                let l0 = complex_from_pair(f.lambda0);
                let line = [complex_from_pair(f.line[0]), complex_from_pair(f.line[1])];
                match &f.w {
                    Some(w) => SimpleFactor::general(l0, line, matrix_from_json(w)),
                    None => SimpleFactor::unnormalized(l0, line),
                }
                .map_err(|e| bad(e.to_string()))
            })
            .collect()
    }

    /// The factors in their normalized form, for the forward-built extraction input.
    pub fn normalized_factors(&self) -> Result<Vec<SimpleFactor<f64>>, CmdError> {
        self.factors
            .iter()
            .map(|f| {
                let line = [complex_from_pair(f.line[0]), complex_from_pair(f.line[1])];
                SimpleFactor::normalized(complex_from_pair(f.lambda0), line).map_err(|e| bad(e.to_string()))
            })
            .collect()
    }
}
