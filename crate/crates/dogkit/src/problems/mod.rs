//! Built-in problem definitions, output maps, and defaults.

pub mod rlv;
pub mod zermelo;

use crate::desensitize::OutputMap;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::ocp::OcpDefinition;
use nalgebra::DMatrix;

/// A terminal quantity reported in summaries: state index plus a display
/// scale (e.g. radians to degrees).
#[derive(Debug, Clone)]
pub struct ReportQuantity {
    pub name: String,
    pub state_index: usize,
    pub display_scale: f64,
}

/// Problem-specific defaults consumed by the CLI and the campaign runner.
#[derive(Clone)]
pub struct ProblemDefaults {
    pub mesh: Mesh,
    pub beta: f64,
    pub xi: f64,
    pub covariance: DMatrix<f64>,
    /// Guidance cycle duration in the problem's time units.
    pub guidance_dt: f64,
    pub mesh_tolerance: f64,
    pub max_refinements: usize,
    /// First entry is the headline quantity of trade-study rows.
    pub report: Vec<ReportQuantity>,
}

/// A ready-to-run problem: definition, output map, defaults.
#[derive(Clone)]
pub struct ProblemBundle {
    pub ocp: OcpDefinition,
    pub output: OutputMap,
    pub defaults: ProblemDefaults,
}

/// Resolve a registered problem by CLI name.
pub fn by_name(name: &str) -> Result<ProblemBundle> {
    match name {
        "zermelo" => Ok(zermelo::zermelo_ocp()),
        "rlv-entry" => Ok(rlv::rlv_ocp()),
        other => Err(Error::invalid(format!(
            "unknown problem '{other}' (available: zermelo, rlv-entry)"
        ))),
    }
}

/// Great-circle downrange/crossrange (km) from longitude/latitude (rad) for
/// an equatorial eastbound start.
pub fn downrange_crossrange(theta: f64, phi: f64) -> (f64, f64) {
    let re_km = rlv::EARTH_RADIUS_M / 1000.0;
    (re_km * theta, re_km * phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_known_names() {
        assert!(by_name("zermelo").is_ok());
        assert!(by_name("rlv-entry").is_ok());
        assert!(by_name("unknown").is_err());
    }

    #[test]
    fn range_mapping_examples() {
        let (d, c) = downrange_crossrange(0.0, 0.0);
        assert_eq!((d, c), (0.0, 0.0));
        let (d, _) = downrange_crossrange(75.0f64.to_radians(), 0.0);
        assert!((d - 8349.0).abs() < 1.0, "{d}");
        let (_, c) = downrange_crossrange(0.0, 34.24f64.to_radians());
        assert!((c - 3812.0).abs() < 1.5, "{c}");
    }
}
